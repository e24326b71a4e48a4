#pragma once

// Monte Carlo and multilevel Monte Carlo estimates of the negative expected
// log-density objective, with every positive / negative level component and
// its gradient reported separately.

#include "mlsbi/mdn.hpp"
#include "mlsbi/simulators.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mlsbi {

enum class Task { nle, npe };

Task parse_task(const std::string& name);
const char* to_string(Task task);

struct LevelBatch {
  std::size_t level = 0;
  std::vector<CoupledLevelSample> samples;

  std::size_t n() const { return samples.size(); }
};

/// Estimator inputs for one generator output: feature-major (dim x n) matrices.
struct TrainingPairs {
  Matrix conditions;
  Matrix targets;

  Eigen::Index size() const { return conditions.cols(); }
};

/// A level batch reduced to estimator inputs. `lo` holds the pairs built from
/// the coupled lower-level outputs and is absent at level 0.
struct LevelData {
  std::size_t level = 0;
  TrainingPairs hi;
  std::optional<TrainingPairs> lo;
};

/// NLE pairs each observation x_j with theta (condition theta, target x_j);
/// NPE pairs the summary s(x_{1:m}) with theta (condition s, target theta).
LevelData prepare_level(const LevelBatch& batch, Task task, SummaryScheme scheme);
TrainingPairs make_pairs(const std::vector<Vector>& thetas, const std::vector<Matrix>& data, Task task,
                         SummaryScheme scheme);

struct LossReport {
  double total = 0.0;
  std::vector<double> h;        // h_0..h_L
  std::vector<double> f_plus;   // f^{l,+}, l = 0..L
  std::vector<double> f_minus;  // f^{l,-}, l = 0..L-1
  std::vector<Vector> grad_f_plus;
  std::vector<Vector> grad_f_minus;

  std::size_t top_level() const { return h.empty() ? 0 : h.size() - 1; }
  bool has_gradients() const { return !grad_f_plus.empty(); }
  Vector grad_h(std::size_t level) const;
  /// Sum of every component gradient, i.e. the plain gradient of `total`.
  Vector grad_total() const;
  /// Loss values and gradient norms as a JSON object (one training-log line).
  std::string to_json() const;
};

/// -(1/n) sum log q over a single top-level batch.
LossReport mc_loss(const ConditionalEstimator& est, const EstimatorParams& phi, const LevelData& batch,
                   bool with_gradients = true);

/// Telescoping estimator over batches for levels 0..L (index = level).
/// Throws std::invalid_argument for a missing level, an empty batch, or a
/// level >= 1 batch without lower-level pairs.
LossReport mlmc_loss(const ConditionalEstimator& est, const EstimatorParams& phi,
                     const std::vector<LevelData>& batches, bool with_gradients = true);

/// Per-sample terms of level `level`: f^0 at level 0, f^l - f^{l-1} above.
Vector level_terms(const ConditionalEstimator& est, const EstimatorParams& phi, const LevelData& pilot);

struct LevelVariance {
  double per_sample = 0.0;  // unbiased sample variance of the terms
  double of_mean = 0.0;     // per_sample / n_l, the estimated Var[h_l]
};

/// Requires at least two pilot samples.
LevelVariance level_variance(const ConditionalEstimator& est, const EstimatorParams& phi, const LevelData& pilot);

}  // namespace mlsbi
