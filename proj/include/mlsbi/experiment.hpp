#pragma once

// Experiment orchestration: config parsing and validation, dataset
// generation, training, evaluation and results emission.

#include "mlsbi/allocation.hpp"
#include "mlsbi/evaluation.hpp"
#include "mlsbi/reference.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mlsbi {

enum class ExperimentKind { gk_nle, gk_npe, ou_npe, toggle_nle, lingauss_calibration };
enum class Method { mc_low, mc_mid, mc_high, mlmc };

ExperimentKind parse_experiment(const std::string& s);
const char* to_string(ExperimentKind k);
Method parse_method(const std::string& s);
const char* to_string(Method m);

struct EvalOptions {
  std::size_t n_test = 20;           // test parameters / datasets
  std::size_t n_posterior_draws = 2000;
  std::size_t mmd_samples = 500;
  std::size_t coverage_levels = 101;
  EvalGrid grid;
  std::size_t reference_n = 10000;   // ou_npe reference posterior
  std::size_t reference_epochs = 0;  // 0: same as training
};

struct SimulatorOptions {
  GkLowVariant gk_low_variant = GkLowVariant::taylor3;
  bool ou_drift_dt = false;
  std::vector<std::size_t> toggle_steps{50, 80, 300};
  std::vector<double> costs;  // empty: simulator default
  std::size_t lingauss_dim = 2;
  double lingauss_noise_sd = 1.0;
  double lingauss_prior_sd = 1.0;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::gk_nle;
  Method method = Method::mlmc;
  std::vector<std::size_t> n_per_level;
  /// MLMC counts whose cost single-level baselines should match.
  std::vector<std::size_t> match_budget;
  std::size_t m = 1;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  bool full = false;
  double lr = 0.0;
  double weight_decay = 1e-5;
  bool adjust_gradients = true;
  std::size_t replicates = 1;
  std::vector<std::size_t> sweep_n1;
  MdnConfig estimator;
  std::vector<std::string> metrics;
  EvalOptions eval;
  SimulatorOptions simulator;
  std::filesystem::path output_dir = "mlsbi_out";
  bool write_datasets = true;
  std::size_t log_every = 1;

  Task task() const;
  SummaryScheme scheme() const;
  std::size_t full_epochs() const;
  std::string to_json() const;
};

/// Schema and cross-field checks on a JSON config. Each diagnostic names the
/// offending field path. Empty when the config is valid.
std::vector<std::string> validate_config(const std::string& config_json);

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> diagnostics);
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

/// Validates, then resolves every default. Throws ConfigError.
ExperimentConfig parse_config(const std::string& config_json);

std::unique_ptr<Simulator> make_experiment_simulator(const ExperimentConfig& cfg);

/// Generator levels used by the configured method, one per training batch.
std::vector<std::size_t> method_levels(const ExperimentConfig& cfg, const Simulator& sim);

/// Simulation cost of the configured dataset.
double dataset_cost(const ExperimentConfig& cfg, const Simulator& sim);

/// Simulated level batches for one replicate (noise retained).
std::vector<LevelBatch> simulate_datasets(const ExperimentConfig& cfg, const Simulator& sim, std::size_t replicate);

FittedEstimator fit(const ExperimentConfig& cfg, const std::vector<LevelBatch>& batches, std::size_t replicate,
                    const EpochCallback& on_epoch = {});

struct EvalReport {
  std::map<std::string, double> metrics;
  std::optional<CoverageCurve> coverage;
  std::map<std::string, std::vector<double>> per_item;  // e.g. kld per test parameter
};

/// `reference` is required only for the kld_ref metric.
EvalReport evaluate(const ExperimentConfig& cfg, const Simulator& sim, const MixtureDensityNetwork& net,
                    const EstimatorParams& phi, const FittedEstimator* reference = nullptr);

/// Reference posterior for kld_ref, trained on top-level simulations.
FittedEstimator train_reference(const ExperimentConfig& cfg, const Simulator& sim);

/// Full pipeline; writes every output file and returns results.json content.
std::string run_experiment(const ExperimentConfig& cfg);

/// simulate verb: writes the dataset of replicate 0, returns the sidecar JSON.
std::string simulate_experiment(const ExperimentConfig& cfg);
/// train verb: trains replicate 0 (optionally from a dataset CSV), writes the
/// checkpoint and training log, returns a JSON summary.
std::string train_experiment(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& dataset);
/// evaluate verb: evaluates a checkpoint, returns the metrics JSON.
std::string evaluate_experiment(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint);

/// plan verb: {"costs": [...], "budget": B, "norms": [...] | "pilot_variances": [...],
/// "kernel": "lower"|"upper"} -> plan JSON.
std::string plan_allocation(const std::string& request_json);

const char* version_string();

}  // namespace mlsbi
