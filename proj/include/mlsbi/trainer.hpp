#pragma once

#include "mlsbi/mlmc_loss.hpp"

#include <functional>
#include <stdexcept>

namespace mlsbi {

struct AdamState {
  Vector m1;
  Vector m2;
  long step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(std::size_t n, double lr = 1e-4);
};

struct TrainConfig {
  std::size_t epochs = 1000;
  SeedKey seed;
  bool adjust_gradients = true;
  double weight_decay = 1e-5;
  double lr = 1e-4;
  /// epsilon in the rescaling denominator of the gradient adjustment.
  double adjust_eps = 1e-8;

  void validate() const;
};

/// Diagnostics from one call to adjust_gradients.
struct AdjustInfo {
  bool conflict = false;  // surgery branch taken
  Vector g_h0;            // after surgery (== input when no conflict)
  Vector g_c;             // summed correction gradient after rescaling / surgery
  Vector g_c_raw;         // summed correction gradient before surgery
};

/// MLMC gradient adjustment on loss gradients. g_plus[l-1] is the gradient of
/// f^{l,+} and g_minus[l-1] that of f^{l-1,-}, for l = 1..L:
///  1. rescale each g_minus to the norm of its paired g_plus,
///  2. sum the corrections into g_c,
///  3. if g_h0 . g_c < 0, project each of g_h0, g_c onto the normal plane of
///     the other;
/// and return the sum of the two. Throws std::invalid_argument on length
/// mismatch.
Vector adjust_gradients(const Vector& g_h0, const std::vector<Vector>& g_plus, std::vector<Vector> g_minus,
                        double eps = 1e-8, AdjustInfo* info = nullptr);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Bias-corrected Adam step. Weight decay is added to the gradient before the
/// moment updates. A non-finite gradient throws TrainingDiverged.
void adam_step(AdamState& state, EstimatorParams& phi, const Vector& grad, double weight_decay = 0.0);

struct EpochRecord {
  std::size_t epoch = 0;
  LossReport loss;  // without the gradient vectors
  double grad_norm = 0.0;
  std::vector<double> grad_norm_f_plus;
  std::vector<double> grad_norm_f_minus;
  bool surgery = false;

  std::string to_json() const;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  EstimatorParams params;
  TrainingLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Full-batch training for `epochs` iterations. One batch means plain MC
/// training; several batches (index = level) use the MLMC objective, with the
/// gradient adjustment applied when enabled. Throws TrainingDiverged with the
/// epoch index if the loss becomes non-finite.
TrainResult train(const ConditionalEstimator& est, EstimatorParams init, const std::vector<LevelData>& batches,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace mlsbi
