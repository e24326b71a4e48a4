#pragma once

// Multi-fidelity simulators (theta, u) -> x. Each simulator is a pure function
// of its parameter vector and a noise block; consecutive levels are coupled by
// feeding them the same theta and the shared prefix of the noise columns.

#include "mlsbi/rng.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mlsbi {

using ParamVector = Vector;

struct PriorBox {
  Vector lower;
  Vector upper;

  PriorBox() = default;
  PriorBox(Vector lo, Vector hi);

  Eigen::Index dim() const { return lower.size(); }
  bool contains(const Vector& theta) const;
  /// Uniform log-density: -log(volume) inside the box, -inf outside.
  double log_density(const Vector& theta) const;
  Vector sample(RandomStream& rs) const;
};

struct FidelityLevel {
  std::string generator;  // e.g. "gk_low", "toggle_T80"
  std::size_t noise_dim = 1;
  double unit_cost = 1.0;
};

struct FidelityLadder {
  std::vector<FidelityLevel> levels;

  /// Throws std::invalid_argument unless costs strictly increase and noise
  /// dimensions never decrease with the level index.
  void validate() const;
  std::size_t size() const { return levels.size(); }
  std::vector<double> costs() const;
};

class Simulator {
 public:
  virtual ~Simulator() = default;

  virtual std::string name() const = 0;
  virtual std::size_t param_dim() const = 0;
  /// Dimension of one observation x_j.
  virtual std::size_t obs_dim() const = 0;
  virtual NoiseKind noise_kind() const = 0;
  virtual const FidelityLadder& ladder() const = 0;

  virtual Vector sample_prior(RandomStream& rs) const = 0;
  virtual double prior_log_density(const Vector& theta) const = 0;
  /// Box used for MCMC proposals and as the support of the prior.
  virtual PriorBox prior_support() const = 0;

  /// Runs generator `level` on theta with an m x d noise block where
  /// d >= ladder().levels[level].noise_dim; extra columns are ignored.
  /// Returns an m x obs_dim() matrix (one observation per noise row).
  virtual Matrix simulate(std::size_t level, const Vector& theta, const NoiseBlock& noise) const = 0;

  std::size_t num_levels() const { return ladder().size(); }
  std::size_t top_level() const { return ladder().size() - 1; }
};

// ---- g-and-k -------------------------------------------------------------

enum class GkLowVariant { taylor3, pi_over_2 };

/// Noise clamp applied to high-fidelity uniforms.
inline constexpr double kGkUniformClamp = 1e-9;

/// The g-and-k quantile function written in terms of the normal score z.
double gk_quantile_z(std::span<const double> theta, double z);

/// One g-and-k draw from a uniform u. Throws std::invalid_argument if
/// u is not in (0, 1) or theta[3] <= 0.
double gk_draw(std::span<const double> theta, double u, bool high_fidelity,
               GkLowVariant variant = GkLowVariant::taylor3);

/// Maps a uniform noise block (m x >=1, column 0 used) to m g-and-k draws.
Vector gk_simulate(std::span<const double> theta, const NoiseBlock& noise, bool high_fidelity,
                   GkLowVariant variant = GkLowVariant::taylor3);

PriorBox gk_prior();

class GkSimulator final : public Simulator {
 public:
  explicit GkSimulator(GkLowVariant variant = GkLowVariant::taylor3,
                       std::vector<double> costs = {1.0, 10.0});

  std::string name() const override { return "gk"; }
  std::size_t param_dim() const override { return 4; }
  std::size_t obs_dim() const override { return 1; }
  NoiseKind noise_kind() const override { return NoiseKind::uniform01; }
  const FidelityLadder& ladder() const override { return ladder_; }
  Vector sample_prior(RandomStream& rs) const override { return prior_.sample(rs); }
  double prior_log_density(const Vector& theta) const override { return prior_.log_density(theta); }
  PriorBox prior_support() const override { return prior_; }
  Matrix simulate(std::size_t level, const Vector& theta, const NoiseBlock& noise) const override;

 private:
  GkLowVariant variant_;
  PriorBox prior_;
  FidelityLadder ladder_;
};

// ---- Ornstein-Uhlenbeck ----------------------------------------------------

struct OuOptions {
  double horizon = 10.0;
  double dt = 0.1;
  double x0 = 2.0;
  std::size_t steps = 100;
  /// Multiply the drift by dt (textbook Euler-Maruyama). Off reproduces the
  /// update x_{t+1} = x_t + gamma (mu - x_t) + sigma u_t sqrt(dt).
  bool drift_dt = false;
};

/// theta = (gamma, mu, sigma); noise 1 x steps standard normals.
Vector ou_simulate(std::span<const double> theta, std::span<const double> noise, bool high_fidelity,
                   const OuOptions& opts = {});

PriorBox ou_prior();

class OuSimulator final : public Simulator {
 public:
  explicit OuSimulator(OuOptions opts = {}, std::vector<double> costs = {1.0, 10.0});

  std::string name() const override { return "ou"; }
  std::size_t param_dim() const override { return 3; }
  std::size_t obs_dim() const override { return opts_.steps; }
  NoiseKind noise_kind() const override { return NoiseKind::std_normal; }
  const FidelityLadder& ladder() const override { return ladder_; }
  Vector sample_prior(RandomStream& rs) const override { return prior_.sample(rs); }
  double prior_log_density(const Vector& theta) const override { return prior_.log_density(theta); }
  PriorBox prior_support() const override { return prior_; }
  Matrix simulate(std::size_t level, const Vector& theta, const NoiseBlock& noise) const override;

 private:
  OuOptions opts_;
  PriorBox prior_;
  FidelityLadder ladder_;
};

// ---- toggle switch ---------------------------------------------------------

/// Noise column layout for one toggle-switch run of T steps: column 0 drives
/// the final observation, columns 1 + 2t and 2 + 2t drive the u and v updates
/// of step t. Runs with fewer steps therefore use a column prefix.
inline constexpr std::size_t toggle_noise_dim(std::size_t steps) { return 2 * steps + 1; }

/// theta = (alpha1, alpha2, beta1, beta2, mu, sigma, gamma); uniform noise of
/// length >= 2T + 1. Throws std::invalid_argument for T < 1.
double toggle_simulate(std::span<const double> theta, std::span<const double> noise, std::size_t steps);

/// Location of the next u state given the current (u, v) state.
double toggle_u_location(std::span<const double> theta, double u, double v);

PriorBox toggle_prior();

class ToggleSimulator final : public Simulator {
 public:
  explicit ToggleSimulator(std::vector<std::size_t> steps = {50, 80, 300}, double unit_cost = 1.0);

  std::string name() const override { return "toggle"; }
  std::size_t param_dim() const override { return 7; }
  std::size_t obs_dim() const override { return 1; }
  NoiseKind noise_kind() const override { return NoiseKind::uniform01; }
  const FidelityLadder& ladder() const override { return ladder_; }
  Vector sample_prior(RandomStream& rs) const override { return prior_.sample(rs); }
  double prior_log_density(const Vector& theta) const override { return prior_.log_density(theta); }
  PriorBox prior_support() const override { return prior_; }
  Matrix simulate(std::size_t level, const Vector& theta, const NoiseBlock& noise) const override;

  const std::vector<std::size_t>& steps() const { return steps_; }

 private:
  std::vector<std::size_t> steps_;
  PriorBox prior_;
  FidelityLadder ladder_;
};

// ---- linear Gaussian (calibration oracle) -----------------------------------

struct GaussianPosterior {
  Vector mean;
  Vector variance;  // diagonal
};

/// x_j = theta + noise_sd * eps_j under the prior N(0, prior_sd^2 I).
class LinearGaussianSimulator final : public Simulator {
 public:
  LinearGaussianSimulator(std::size_t dim, double noise_sd, double prior_sd = 1.0);

  std::string name() const override { return "lingauss"; }
  std::size_t param_dim() const override { return dim_; }
  std::size_t obs_dim() const override { return dim_; }
  NoiseKind noise_kind() const override { return NoiseKind::std_normal; }
  const FidelityLadder& ladder() const override { return ladder_; }
  Vector sample_prior(RandomStream& rs) const override;
  double prior_log_density(const Vector& theta) const override;
  PriorBox prior_support() const override;
  Matrix simulate(std::size_t level, const Vector& theta, const NoiseBlock& noise) const override;

  /// Conjugate posterior given m observations stacked as rows.
  GaussianPosterior posterior(const Matrix& observations) const;
  double noise_sd() const { return noise_sd_; }
  double prior_sd() const { return prior_sd_; }

 private:
  std::size_t dim_;
  double noise_sd_;
  double prior_sd_;
  FidelityLadder ladder_;
};

// ---- summaries -------------------------------------------------------------

enum class SummaryScheme { gk_quantiles4, ou_logspace5, identity };

SummaryScheme parse_summary_scheme(const std::string& name);
const char* to_string(SummaryScheme scheme);

/// Summary of one dataset (m x d_X). Throws std::invalid_argument when the
/// dataset is empty or its shape does not fit the scheme.
Vector summarize(const Matrix& dataset, SummaryScheme scheme);

std::size_t summary_dim(SummaryScheme scheme, std::size_t m, std::size_t obs_dim);

// ---- coupled sampling ------------------------------------------------------

struct CoupledLevelSample {
  ParamVector theta;
  NoiseBlock noise;
  Matrix x_hi;                  // m x d_X from generator `level`
  std::optional<Matrix> x_lo;   // m x d_X from generator `level - 1`
};

enum class Coupling { seed_matched, independent };

/// Draws n coupled samples at `level` with m observations each. Sample i uses
/// the streams derive(derive(key, level), i); the lower generator reuses the
/// theta and the leading noise columns unless coupling is independent, in
/// which case it gets fresh noise from a disjoint stream.
std::vector<CoupledLevelSample> simulate_level(const Simulator& sim, std::size_t level, std::size_t n,
                                               std::size_t m, const SeedKey& key,
                                               Coupling coupling = Coupling::seed_matched);

/// Same as simulate_level but with caller-supplied parameters (one per sample).
std::vector<CoupledLevelSample> simulate_level_at(const Simulator& sim, std::size_t level,
                                                  const std::vector<Vector>& thetas, std::size_t m,
                                                  const SeedKey& key,
                                                  Coupling coupling = Coupling::seed_matched);

std::unique_ptr<Simulator> make_simulator(const std::string& name);

}  // namespace mlsbi
