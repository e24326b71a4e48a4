#pragma once

// Conditional Gaussian mixture density network q(target | condition).
//
// Batches are feature-major: a batch of B samples is a (dim x B) matrix whose
// columns are samples. All network weights live in one flat vector
// (EstimatorParams) described by a named layout.

#include "mlsbi/rng.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mlsbi {

struct MdnConfig {
  std::size_t condition_dim = 1;
  std::size_t target_dim = 1;
  std::vector<std::size_t> hidden_layers{50, 50};
  std::size_t n_components = 2;
  std::string activation = "tanh";

  void validate() const;
  std::size_t head_dim() const { return n_components * (1 + 2 * target_dim); }
};

struct TensorSlot {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t offset = 0;
};

struct EstimatorParams {
  Vector values;
  std::vector<TensorSlot> layout;

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  const TensorSlot& slot(const std::string& name) const;
  /// Column-major view of a named tensor.
  Eigen::Map<Matrix> tensor(const std::string& name);
  Eigen::Map<const Matrix> tensor(const std::string& name) const;
};

/// Fixed affine maps applied to conditions and targets before the network.
/// Log-densities are always reported in the original target units.
struct Standardizer {
  Vector condition_shift, condition_scale;
  Vector target_shift, target_scale;

  static Standardizer identity(std::size_t condition_dim, std::size_t target_dim);
  /// Column-wise mean / std of feature-major data; zero spread maps to scale 1.
  static Standardizer fit(const Matrix& conditions, const Matrix& targets);
  double log_target_jacobian() const { return target_scale.array().log().sum(); }
};

struct LogDensityBatch {
  Vector values;    // log q per sample
  Vector grad_phi;  // gradient of the batch mean of log q
};

struct MixtureComponents {
  Vector weights;  // K
  Matrix means;    // target_dim x K, original units
  Matrix sds;      // target_dim x K, original units
};

/// Minimal interface every conditional density estimator implements.
class ConditionalEstimator {
 public:
  virtual ~ConditionalEstimator() = default;
  virtual std::size_t condition_dim() const = 0;
  virtual std::size_t target_dim() const = 0;
  virtual EstimatorParams init(const SeedKey& key) const = 0;
  virtual Vector logpdf(const EstimatorParams& phi, const Matrix& conditions, const Matrix& targets) const = 0;
  virtual LogDensityBatch logpdf_grad(const EstimatorParams& phi, const Matrix& conditions,
                                      const Matrix& targets) const = 0;
  /// n draws for one condition, returned as a (target_dim x n) matrix.
  virtual Matrix sample(const EstimatorParams& phi, const Vector& condition, std::size_t n,
                        const SeedKey& key) const = 0;
};

class MixtureDensityNetwork final : public ConditionalEstimator {
 public:
  static constexpr double kSigmaFloor = 1e-4;
  /// Columns per reduction chunk; chunk boundaries never depend on thread count.
  static constexpr Eigen::Index kChunk = 1024;

  explicit MixtureDensityNetwork(MdnConfig config, Standardizer standardizer = {});

  const MdnConfig& config() const { return config_; }
  const Standardizer& standardizer() const { return standardizer_; }
  void set_standardizer(Standardizer s);

  std::size_t condition_dim() const override { return config_.condition_dim; }
  std::size_t target_dim() const override { return config_.target_dim; }

  /// Empty parameter vector with the layout filled in.
  EstimatorParams make_layout() const;

  /// Glorot-uniform weights, zero biases, zero mixture logits, and scale
  /// biases chosen so every component starts with unit standard deviation.
  EstimatorParams init(const SeedKey& key) const override;

  Vector logpdf(const EstimatorParams& phi, const Matrix& conditions, const Matrix& targets) const override;
  double logpdf(const EstimatorParams& phi, const Vector& condition, const Vector& target) const;
  LogDensityBatch logpdf_grad(const EstimatorParams& phi, const Matrix& conditions,
                              const Matrix& targets) const override;
  Matrix sample(const EstimatorParams& phi, const Vector& condition, std::size_t n,
                const SeedKey& key) const override;

  MixtureComponents components(const EstimatorParams& phi, const Vector& condition) const;

 private:
  struct Pass;
  void check_inputs(const EstimatorParams& phi, const Matrix& conditions, const Matrix& targets) const;
  void forward(const EstimatorParams& phi, const Matrix& cond_std, Pass& pass) const;
  double chunk_eval(const EstimatorParams& phi, const Matrix& cond_std, const Matrix& target_std,
                    Vector* values, Eigen::Index value_offset, Vector* grad, double grad_scale) const;

  MdnConfig config_;
  Standardizer standardizer_;
};

// ---- checkpoints ----------------------------------------------------------

/// Unreadable, unwritable or malformed files (checkpoints, datasets, outputs).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  MdnConfig config;
  Standardizer standardizer;
  EstimatorParams params;
  std::string metadata_json = "{}";
};

/// Writes a one-line JSON header followed by the parameters as a
/// little-endian IEEE-754 float64 blob.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mlsbi
