#include <doctest.h>

#include "mlsbi/reference.hpp"

#include <algorithm>
#include <cmath>

using namespace mlsbi;

namespace {

// q(t | c) = N(t; c + phi[0], exp(phi[1])^2), one dimensional.
class ShiftedGaussian final : public ConditionalEstimator {
 public:
  std::size_t condition_dim() const override { return 1; }
  std::size_t target_dim() const override { return 1; }
  EstimatorParams init(const SeedKey&) const override {
    EstimatorParams p;
    p.values = Vector::Zero(2);
    return p;
  }
  Vector logpdf(const EstimatorParams& phi, const Matrix& c, const Matrix& t) const override {
    const double s = std::exp(phi.values[1]);
    Vector out(t.cols());
    for (Eigen::Index i = 0; i < t.cols(); ++i) {
      const double z = (t(0, i) - c(0, i) - phi.values[0]) / s;
      out[i] = -0.5 * z * z - std::log(s) - 0.5 * std::log(2 * M_PI);
    }
    return out;
  }
  LogDensityBatch logpdf_grad(const EstimatorParams& phi, const Matrix& c, const Matrix& t) const override {
    return {logpdf(phi, c, t), Vector::Zero(2)};
  }
  Matrix sample(const EstimatorParams& phi, const Vector& c, std::size_t n, const SeedKey& key) const override {
    const NoiseBlock z = sample_noise(key, n, 1, NoiseKind::std_normal);
    Matrix out(1, static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < out.cols(); ++i) out(0, i) = c[0] + phi.values[0] + std::exp(phi.values[1]) * z.values(i, 0);
    return out;
  }
};

EstimatorParams gauss(double shift, double log_sd) {
  EstimatorParams p;
  p.values.resize(2);
  p.values << shift, log_sd;
  return p;
}

double ks_uniform(std::vector<double> v, double lo, double hi) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = (v[i] - lo) / (hi - lo);
    d = std::max({d, std::abs(static_cast<double>(i + 1) / n - f), std::abs(f - static_cast<double>(i) / n)});
  }
  return d;
}

// Standard error of the mean from non-overlapping batch means.
double batch_se(const Vector& x, std::size_t n_batches) {
  const Eigen::Index b = x.size() / static_cast<Eigen::Index>(n_batches);
  Vector means(static_cast<Eigen::Index>(n_batches));
  for (std::size_t k = 0; k < n_batches; ++k) means[static_cast<Eigen::Index>(k)] = x.segment(static_cast<Eigen::Index>(k) * b, b).mean();
  const double mu = means.mean();
  const double var = (means.array() - mu).square().sum() / static_cast<double>(n_batches - 1);
  return std::sqrt(var / static_cast<double>(n_batches));
}

PriorBox box(std::initializer_list<double> lo, std::initializer_list<double> hi) {
  Vector a(static_cast<Eigen::Index>(lo.size())), b(static_cast<Eigen::Index>(hi.size()));
  Eigen::Index i = 0;
  for (double v : lo) a[i++] = v;
  i = 0;
  for (double v : hi) b[i++] = v;
  return PriorBox(a, b);
}

}  // namespace

TEST_CASE("flat likelihood gives the uniform prior back") {
  const PriorBox prior = box({0, -2}, {1, 3});
  McmcOptions o;
  o.n_chains = 4;
  o.n_steps = 2500;
  o.thin = 5;
  const McmcResult r = nle_posterior_sample([](const Vector&) { return 0.0; }, prior, o, SeedKey{1, {}});
  REQUIRE(r.samples.rows() == 10000);
  for (Eigen::Index j = 0; j < 2; ++j) {
    std::vector<double> v(r.samples.col(j).data(), r.samples.col(j).data() + r.samples.rows());
    CHECK(ks_uniform(v, prior.lower[j], prior.upper[j]) < 0.05);
  }
  for (double a : r.acceptance) CHECK(a > 0.0);
}

TEST_CASE("symmetric target is centred in the box") {
  const PriorBox prior = box({-1, 2}, {1, 6});
  const LogTarget ll = [](const Vector& t) { return -0.5 * (t[0] * t[0] + (t[1] - 4) * (t[1] - 4)); };
  McmcOptions o;
  o.n_steps = 5000;
  const McmcResult r = nle_posterior_sample(ll, prior, o, SeedKey{2, {}});
  for (Eigen::Index j = 0; j < 2; ++j) {
    const Vector col = r.samples.col(j);
    CHECK(std::abs(col.mean() - 0.5 * (prior.lower[j] + prior.upper[j])) < 4 * batch_se(col, 40));
  }
}

TEST_CASE("conjugate Gaussian posterior mean") {
  // x_j ~ N(theta, 1), 20 draws, wide flat prior: posterior N(xbar, 1/20).
  const Vector obs = sample_noise(SeedKey{3, {}}, 20, 1, NoiseKind::std_normal).values.col(0).array() + 0.7;
  const double xbar = obs.mean();
  const LogTarget ll = [&obs](const Vector& t) { return -0.5 * (obs.array() - t[0]).square().sum(); };
  McmcOptions o;
  o.n_steps = 5000;
  const McmcResult r = nle_posterior_sample(ll, box({-5}, {5}), o, SeedKey{4, {}});
  const Vector col = r.samples.col(0);
  CHECK(std::abs(col.mean() - xbar) < 3 * batch_se(col, 40));
  const double var = (col.array() - col.mean()).square().mean();
  CHECK(var == doctest::Approx(1.0 / 20).epsilon(0.15));
}

TEST_CASE("adding a constant to the target leaves the chains unchanged") {
  const PriorBox prior = box({-3}, {3});
  const LogTarget a = [](const Vector& t) { return -t[0] * t[0]; };
  const LogTarget b = [](const Vector& t) { return -t[0] * t[0] + 17.0; };
  McmcOptions o;
  o.n_steps = 300;
  o.burn_in = 200;
  const McmcResult ra = nle_posterior_sample(a, prior, o, SeedKey{5, {}});
  const McmcResult rb = nle_posterior_sample(b, prior, o, SeedKey{5, {}});
  CHECK(ra.samples == rb.samples);
  CHECK(ra.step == rb.step);
}

TEST_CASE("a chain that never moves is reported") {
  const PriorBox prior = box({0}, {1});
  // Only a single point carries mass once the chain starts there.
  const LogTarget spike = [](const Vector& t) { return t[0] < 0.999 ? -std::numeric_limits<double>::infinity() : 0.0; };
  McmcOptions o;
  o.n_chains = 1;
  o.n_steps = 50;
  o.burn_in = 50;
  o.initial_step = 1.0;
  CHECK_THROWS_AS(nle_posterior_sample(spike, prior, o, SeedKey{6, {}}), SamplerStuck);
  CHECK_THROWS_AS(nle_posterior_sample(spike, prior, McmcOptions{0}, SeedKey{6, {}}), std::invalid_argument);
}

TEST_CASE("kld to a reference") {
  const ShiftedGaussian q;
  Vector c(1);
  c << 0.3;
  CHECK(kld_to_reference(q, gauss(0, 0), q, gauss(0, 0), c, 1000, SeedKey{7, {}}) == doctest::Approx(0.0));

  // KL(N(0,1) || N(0.5,1)) = 0.125. The per-draw term is 0.125 - 0.5 z, sd 0.5.
  const std::size_t n = 4000;
  const double k = kld_to_reference(q, gauss(0.5, 0), q, gauss(0, 0), c, n, SeedKey{8, {}});
  CHECK(std::abs(k - 0.125) < 3 * 0.5 / std::sqrt(static_cast<double>(n)));

  double sum = 0;
  for (std::uint64_t s = 0; s < 50; ++s) sum += kld_to_reference(q, gauss(0.1, 0.2), q, gauss(0, 0), c, 200, SeedKey{9, {s}});
  CHECK(sum / 50 >= 0.0);

  CHECK_THROWS_AS(kld_to_reference(q, gauss(0, 0), q, gauss(0, 0), c, 0, SeedKey{}), std::invalid_argument);
}

TEST_CASE("nle likelihood sums over observations") {
  const ShiftedGaussian q;
  Matrix obs(3, 1);
  obs << 0.1, -0.4, 1.2;
  const EstimatorParams phi = gauss(0.2, 0.1);
  Vector theta(1);
  theta << 0.5;
  const double got = nle_log_likelihood(q, phi, obs)(theta);
  double want = 0;
  const double s = std::exp(0.1);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const double z = (obs(i, 0) - 0.7) / s;
    want += -0.5 * z * z - std::log(s) - 0.5 * std::log(2 * M_PI);
  }
  CHECK(got == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("reference npe is deterministic") {
  const LinearGaussianSimulator sim(1, 1.0);
  ReferenceOptions o;
  o.n = 200;
  o.mdn = MdnConfig{0, 0, {8}, 1, "tanh"};
  o.train.epochs = 10;
  o.train.lr = 1e-3;
  const FittedEstimator a = reference_npe(sim, o, SeedKey{10, {}});
  const FittedEstimator b = reference_npe(sim, o, SeedKey{10, {}});
  CHECK(a.params.values == b.params.values);
  CHECK(a.net->condition_dim() == 1);
  CHECK(a.log.epochs.size() == 10);
  const FittedEstimator c = reference_npe(sim, o, SeedKey{11, {}});
  CHECK(a.params.values != c.params.values);
}

TEST_CASE("reference beats a small-sample npe on held-out nlpd") {
  const LinearGaussianSimulator sim(1, 1.0);
  ReferenceOptions o;
  o.n = 10000;
  o.mdn = MdnConfig{0, 0, {16}, 1, "tanh"};
  o.train.epochs = 300;
  o.train.lr = 1e-2;
  const FittedEstimator ref = reference_npe(sim, o, SeedKey{20, {}});
  o.n = 100;
  const FittedEstimator small = reference_npe(sim, o, SeedKey{21, {}});

  const auto held = simulate_level(sim, 0, 500, 1, SeedKey{22, {}});
  Matrix c(1, 500), t(1, 500);
  for (Eigen::Index i = 0; i < 500; ++i) {
    c(0, i) = held[static_cast<std::size_t>(i)].x_hi(0, 0);
    t(0, i) = held[static_cast<std::size_t>(i)].theta[0];
  }
  const double nlpd_ref = -ref.net->logpdf(ref.params, c, t).mean();
  const double nlpd_small = -small.net->logpdf(small.params, c, t).mean();
  CHECK(nlpd_ref < nlpd_small);
  // Exact posterior N(x/2, 1/2) gives 0.5 log(pi) + 0.5 in expectation.
  CHECK(nlpd_ref == doctest::Approx(0.5 * std::log(M_PI) + 0.5).epsilon(0.05));
}
