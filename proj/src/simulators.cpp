#include "mlsbi/simulators.hpp"

#include "mlsbi/parallel.hpp"
#include "mlsbi/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mlsbi {

namespace {

constexpr double kSqrt2 = 1.41421356237309504880;

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

// Linear-interpolated empirical quantile of sorted data (numpy's default rule).
double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

// ---- PriorBox / FidelityLadder ---------------------------------------------

PriorBox::PriorBox(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
  require(lower.size() == upper.size() && lower.size() > 0, "PriorBox: bound size mismatch");
  for (Eigen::Index i = 0; i < lower.size(); ++i)
    require(lower[i] < upper[i], "PriorBox: lower must be < upper");
}

bool PriorBox::contains(const Vector& theta) const {
  if (theta.size() != lower.size()) return false;
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    if (!(theta[i] >= lower[i] && theta[i] <= upper[i])) return false;
  return true;
}

double PriorBox::log_density(const Vector& theta) const {
  if (!contains(theta)) return -std::numeric_limits<double>::infinity();
  return -(upper - lower).array().log().sum();
}

Vector PriorBox::sample(RandomStream& rs) const {
  Vector out(lower.size());
  for (Eigen::Index i = 0; i < lower.size(); ++i) out[i] = rs.uniform(lower[i], upper[i]);
  return out;
}

void FidelityLadder::validate() const {
  require(!levels.empty(), "FidelityLadder: at least one level required");
  for (std::size_t l = 0; l < levels.size(); ++l) {
    require(levels[l].unit_cost > 0.0, "FidelityLadder: costs must be positive");
    require(levels[l].noise_dim >= 1, "FidelityLadder: noise dimension must be >= 1");
    if (l > 0) {
      require(levels[l].unit_cost > levels[l - 1].unit_cost, "FidelityLadder: costs must strictly increase");
      require(levels[l].noise_dim >= levels[l - 1].noise_dim,
              "FidelityLadder: noise dimensions must not decrease");
    }
  }
}

std::vector<double> FidelityLadder::costs() const {
  std::vector<double> out;
  for (const auto& l : levels) out.push_back(l.unit_cost);
  return out;
}

// ---- g-and-k -----------------------------------------------------------------

double gk_quantile_z(std::span<const double> theta, double z) {
  const double a = theta[0], b = theta[1], g = theta[2], k = std::log(theta[3]);
  // (1 - e^{-gz}) / (1 + e^{-gz}) == tanh(gz / 2)
  return a + b * (1.0 + 0.8 * std::tanh(0.5 * g * z)) * std::pow(1.0 + z * z, k) * z;
}

double gk_draw(std::span<const double> theta, double u, bool high_fidelity, GkLowVariant variant) {
  require(theta.size() == 4, "gk: theta must have 4 components");
  require(theta[3] > 0.0, "gk: theta[3] must be positive");
  require(u > 0.0 && u < 1.0, "gk: u must lie in (0, 1)");
  double z;
  if (high_fidelity) {
    const double uc = std::clamp(u, kGkUniformClamp, 1.0 - kGkUniformClamp);
    z = kSqrt2 * erfinv(2.0 * uc - 1.0);
  } else {
    const double v = 2.0 * u - 1.0;
    z = kSqrt2 * (variant == GkLowVariant::taylor3 ? erfinv_taylor3(v) : erfinv_taylor3_pi_over_2(v));
  }
  return gk_quantile_z(theta, z);
}

Vector gk_simulate(std::span<const double> theta, const NoiseBlock& noise, bool high_fidelity,
                   GkLowVariant variant) {
  require(noise.kind == NoiseKind::uniform01, "gk: noise must be uniform01");
  Vector out(noise.rows());
  for (Eigen::Index i = 0; i < noise.rows(); ++i)
    out[i] = gk_draw(theta, noise.values(i, 0), high_fidelity, variant);
  return out;
}

PriorBox gk_prior() {
  Vector lo(4), hi(4);
  lo << 0.0, 0.0, 0.0, 0.0;
  hi << 3.0, 3.0, 3.0, std::exp(0.5);
  return {lo, hi};
}

GkSimulator::GkSimulator(GkLowVariant variant, std::vector<double> costs)
    : variant_(variant), prior_(gk_prior()) {
  require(costs.size() == 2, "gk: two level costs expected");
  ladder_.levels = {{"gk_low", 1, costs[0]}, {"gk_high", 1, costs[1]}};
  ladder_.validate();
}

Matrix GkSimulator::simulate(std::size_t level, const Vector& theta, const NoiseBlock& noise) const {
  require(level < 2, "gk: level out of range");
  return gk_simulate(as_span(theta), noise, level == 1, variant_);
}

// ---- Ornstein-Uhlenbeck --------------------------------------------------------

Vector ou_simulate(std::span<const double> theta, std::span<const double> noise, bool high_fidelity,
                   const OuOptions& opts) {
  require(theta.size() == 3, "ou: theta must have 3 components");
  require(noise.size() >= opts.steps, "ou: noise shorter than the number of steps");
  const double gamma = theta[0], mu = theta[1], sigma = theta[2];
  require(gamma > 0.0, "ou: gamma must be positive");
  Vector x(static_cast<Eigen::Index>(opts.steps));
  if (high_fidelity) {
    const double drift_scale = opts.drift_dt ? opts.dt : 1.0;
    const double sqdt = std::sqrt(opts.dt);
    double state = opts.x0;
    for (std::size_t t = 0; t < opts.steps; ++t) {
      state = state + gamma * (mu - state) * drift_scale + sigma * noise[t] * sqdt;
      x[static_cast<Eigen::Index>(t)] = state;
    }
  } else {
    const double scale = sigma / std::sqrt(2.0 * gamma);
    for (std::size_t t = 0; t < opts.steps; ++t) x[static_cast<Eigen::Index>(t)] = noise[t] * scale + mu;
  }
  return x;
}

PriorBox ou_prior() {
  Vector lo(3), hi(3);
  lo << 0.1, 0.1, 0.1;
  hi << 1.0, 3.0, 0.6;
  return {lo, hi};
}

OuSimulator::OuSimulator(OuOptions opts, std::vector<double> costs) : opts_(opts), prior_(ou_prior()) {
  require(costs.size() == 2, "ou: two level costs expected");
  ladder_.levels = {{"ou_stationary", opts_.steps, costs[0]}, {"ou_euler", opts_.steps, costs[1]}};
  ladder_.validate();
}

Matrix OuSimulator::simulate(std::size_t level, const Vector& theta, const NoiseBlock& noise) const {
  require(level < 2, "ou: level out of range");
  require(noise.kind == NoiseKind::std_normal, "ou: noise must be std_normal");
  Matrix out(noise.rows(), static_cast<Eigen::Index>(opts_.steps));
  std::vector<double> row(static_cast<std::size_t>(noise.dim()));
  for (Eigen::Index i = 0; i < noise.rows(); ++i) {
    for (Eigen::Index j = 0; j < noise.dim(); ++j) row[static_cast<std::size_t>(j)] = noise.values(i, j);
    out.row(i) = ou_simulate(as_span(theta), row, level == 1, opts_).transpose();
  }
  return out;
}

// ---- toggle switch --------------------------------------------------------------

double toggle_u_location(std::span<const double> theta, double u, double v) {
  return u + theta[0] / (1.0 + std::pow(v, theta[2])) - (1.0 + 0.03 * u);
}

namespace {
double toggle_v_location(std::span<const double> theta, double u, double v) {
  return v + theta[1] / (1.0 + std::pow(u, theta[3])) - (1.0 + 0.03 * v);
}
}  // namespace

double toggle_simulate(std::span<const double> theta, std::span<const double> noise, std::size_t steps) {
  require(steps >= 1, "toggle: T must be >= 1");
  require(theta.size() == 7, "toggle: theta must have 7 components");
  require(noise.size() >= toggle_noise_dim(steps), "toggle: noise shorter than 2T + 1");
  constexpr double kStateSd = 0.5;
  double u = 10.0, v = 10.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double mu_u = toggle_u_location(theta, u, v);
    const double mu_v = toggle_v_location(theta, u, v);
    u = truncated_normal_positive_quantile(mu_u, kStateSd, noise[1 + 2 * t]);
    v = truncated_normal_positive_quantile(mu_v, kStateSd, noise[2 + 2 * t]);
  }
  const double mu = theta[4], sigma = theta[5], gamma = theta[6];
  return truncated_normal_positive_quantile(mu + u, mu * sigma / std::pow(u, gamma), noise[0]);
}

PriorBox toggle_prior() {
  Vector lo(7), hi(7);
  lo << 0.01, 0.01, 0.01, 0.01, 250.0, 0.01, 0.01;
  hi << 50.0, 50.0, 5.0, 5.0, 450.0, 0.5, 0.4;
  return {lo, hi};
}

ToggleSimulator::ToggleSimulator(std::vector<std::size_t> steps, double unit_cost)
    : steps_(std::move(steps)), prior_(toggle_prior()) {
  require(!steps_.empty(), "toggle: at least one level required");
  for (std::size_t T : steps_) {
    require(T >= 1, "toggle: T must be >= 1");
    ladder_.levels.push_back({"toggle_T" + std::to_string(T), toggle_noise_dim(T), unit_cost * static_cast<double>(T)});
  }
  ladder_.validate();
}

Matrix ToggleSimulator::simulate(std::size_t level, const Vector& theta, const NoiseBlock& noise) const {
  require(level < steps_.size(), "toggle: level out of range");
  require(noise.kind == NoiseKind::uniform01, "toggle: noise must be uniform01");
  Matrix out(noise.rows(), 1);
  std::vector<double> row(static_cast<std::size_t>(noise.dim()));
  for (Eigen::Index i = 0; i < noise.rows(); ++i) {
    for (Eigen::Index j = 0; j < noise.dim(); ++j) row[static_cast<std::size_t>(j)] = noise.values(i, j);
    out(i, 0) = toggle_simulate(as_span(theta), row, steps_[level]);
  }
  return out;
}

// ---- linear Gaussian ------------------------------------------------------------

LinearGaussianSimulator::LinearGaussianSimulator(std::size_t dim, double noise_sd, double prior_sd)
    : dim_(dim), noise_sd_(noise_sd), prior_sd_(prior_sd) {
  require(dim >= 1, "lingauss: dim must be >= 1");
  require(noise_sd > 0.0, "lingauss: noise sd must be positive");
  require(prior_sd > 0.0, "lingauss: prior sd must be positive");
  ladder_.levels = {{"lingauss", dim_, 1.0}};
}

Vector LinearGaussianSimulator::sample_prior(RandomStream& rs) const {
  Vector out(static_cast<Eigen::Index>(dim_));
  for (auto& v : out) v = prior_sd_ * rs.normal();
  return out;
}

double LinearGaussianSimulator::prior_log_density(const Vector& theta) const {
  double s = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) s += log_normal_pdf(theta[i], 0.0, prior_sd_);
  return s;
}

PriorBox LinearGaussianSimulator::prior_support() const {
  return {Vector::Constant(static_cast<Eigen::Index>(dim_), -8.0 * prior_sd_),
          Vector::Constant(static_cast<Eigen::Index>(dim_), 8.0 * prior_sd_)};
}

Matrix LinearGaussianSimulator::simulate(std::size_t level, const Vector& theta, const NoiseBlock& noise) const {
  require(level == 0, "lingauss: single-level simulator");
  require(noise.kind == NoiseKind::std_normal, "lingauss: noise must be std_normal");
  require(static_cast<std::size_t>(noise.dim()) >= dim_, "lingauss: noise narrower than theta");
  Matrix out(noise.rows(), static_cast<Eigen::Index>(dim_));
  for (Eigen::Index i = 0; i < noise.rows(); ++i)
    out.row(i) = theta.transpose() + noise_sd_ * noise.values.row(i).head(static_cast<Eigen::Index>(dim_));
  return out;
}

GaussianPosterior LinearGaussianSimulator::posterior(const Matrix& obs) const {
  require(obs.rows() >= 1 && static_cast<std::size_t>(obs.cols()) == dim_, "lingauss: observation shape");
  const double m = static_cast<double>(obs.rows());
  const double precision = 1.0 / (prior_sd_ * prior_sd_) + m / (noise_sd_ * noise_sd_);
  GaussianPosterior post;
  post.variance = Vector::Constant(static_cast<Eigen::Index>(dim_), 1.0 / precision);
  post.mean = (obs.colwise().sum().transpose() / (noise_sd_ * noise_sd_)) / precision;
  return post;
}

// ---- summaries -------------------------------------------------------------------

SummaryScheme parse_summary_scheme(const std::string& name) {
  if (name == "gk_quantiles4") return SummaryScheme::gk_quantiles4;
  if (name == "ou_logspace5") return SummaryScheme::ou_logspace5;
  if (name == "identity") return SummaryScheme::identity;
  throw std::invalid_argument("unknown summary scheme '" + name + "'");
}

const char* to_string(SummaryScheme scheme) {
  switch (scheme) {
    case SummaryScheme::gk_quantiles4: return "gk_quantiles4";
    case SummaryScheme::ou_logspace5: return "ou_logspace5";
    case SummaryScheme::identity: return "identity";
  }
  return "?";
}

Vector summarize(const Matrix& dataset, SummaryScheme scheme) {
  require(dataset.size() > 0, "summarize: empty dataset");
  switch (scheme) {
    case SummaryScheme::gk_quantiles4: {
      require(dataset.cols() == 1, "summarize: gk_quantiles4 expects one column");
      std::vector<double> sorted(dataset.data(), dataset.data() + dataset.size());
      std::sort(sorted.begin(), sorted.end());
      Vector out(4);
      for (int q = 0; q < 4; ++q) out[q] = sorted_quantile(sorted, (2.0 * q + 1.0) / 8.0);
      return out;
    }
    case SummaryScheme::ou_logspace5: {
      require(dataset.size() >= 100, "summarize: ou_logspace5 expects at least 100 values");
      static constexpr Eigen::Index kIdx[] = {0, 3, 10, 31, 99};
      Vector out(5);
      // Row-major flattening: index k of the first series.
      for (int i = 0; i < 5; ++i) {
        const Eigen::Index k = kIdx[i];
        out[i] = dataset(k / dataset.cols(), k % dataset.cols());
      }
      return out;
    }
    case SummaryScheme::identity: {
      Vector out(dataset.size());
      Eigen::Index k = 0;
      for (Eigen::Index i = 0; i < dataset.rows(); ++i)
        for (Eigen::Index j = 0; j < dataset.cols(); ++j) out[k++] = dataset(i, j);
      return out;
    }
  }
  throw std::invalid_argument("summarize: unknown scheme");
}

std::size_t summary_dim(SummaryScheme scheme, std::size_t m, std::size_t obs_dim) {
  switch (scheme) {
    case SummaryScheme::gk_quantiles4: return 4;
    case SummaryScheme::ou_logspace5: return 5;
    case SummaryScheme::identity: return m * obs_dim;
  }
  return 0;
}

// ---- coupled sampling ------------------------------------------------------------

std::vector<CoupledLevelSample> simulate_level_at(const Simulator& sim, std::size_t level,
                                                  const std::vector<Vector>& thetas, std::size_t m,
                                                  const SeedKey& key, Coupling coupling) {
  require(level < sim.num_levels(), "simulate_level: level out of range");
  require(m >= 1, "simulate_level: m must be >= 1");
  const SeedKey level_key = derive_stream(key, level);
  const std::size_t d = sim.ladder().levels[level].noise_dim;
  std::vector<CoupledLevelSample> out(thetas.size());
  parallel_for(thetas.size(), [&](std::size_t i) {
    const SeedKey sample_key = derive_stream(level_key, i);
    CoupledLevelSample& s = out[i];
    s.theta = thetas[i];
    s.noise = sample_noise(derive_stream(sample_key, 1), m, d, sim.noise_kind());
    s.x_hi = sim.simulate(level, s.theta, s.noise);
    if (level > 0) {
      const std::size_t d_lo = sim.ladder().levels[level - 1].noise_dim;
      NoiseBlock lo_noise;
      if (coupling == Coupling::seed_matched) {
        lo_noise.kind = s.noise.kind;
        lo_noise.values = s.noise.values.leftCols(static_cast<Eigen::Index>(d_lo));
      } else {
        lo_noise = sample_noise(derive_stream(sample_key, 2), m, d_lo, sim.noise_kind());
      }
      s.x_lo = sim.simulate(level - 1, s.theta, lo_noise);
    }
  });
  return out;
}

std::vector<CoupledLevelSample> simulate_level(const Simulator& sim, std::size_t level, std::size_t n,
                                               std::size_t m, const SeedKey& key, Coupling coupling) {
  const SeedKey level_key = derive_stream(key, level);
  std::vector<Vector> thetas(n);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rs(derive_stream(derive_stream(level_key, i), 0));
    thetas[i] = sim.sample_prior(rs);
  }
  return simulate_level_at(sim, level, thetas, m, key, coupling);
}

std::unique_ptr<Simulator> make_simulator(const std::string& name) {
  if (name == "gk") return std::make_unique<GkSimulator>();
  if (name == "ou") return std::make_unique<OuSimulator>();
  if (name == "toggle") return std::make_unique<ToggleSimulator>();
  if (name == "lingauss") return std::make_unique<LinearGaussianSimulator>(1, 1.0);
  throw std::invalid_argument("unknown simulator '" + name + "'");
}

}  // namespace mlsbi
