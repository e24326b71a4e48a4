#include <doctest.h>

#include "mlsbi/mdn.hpp"
#include "mlsbi/special.hpp"

#include <cmath>
#include <filesystem>

using namespace mlsbi;

namespace {

// Scale-head bias giving softplus(b) + floor == 1.
const double kUnitBias = std::log(std::expm1(1.0 - MixtureDensityNetwork::kSigmaFloor));

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  const auto nb = sample_noise(SeedKey{seed, {}}, static_cast<std::size_t>(c), static_cast<std::size_t>(r),
                               NoiseKind::std_normal);
  return scale * nb.values.transpose();
}

EstimatorParams perturbed(const MixtureDensityNetwork& net, std::uint64_t seed, double scale) {
  EstimatorParams p = net.init(SeedKey{seed, {0}});
  p.values += random_matrix(p.values.size(), 1, seed + 1000, scale).col(0);
  return p;
}

// Independent forward pass: tanh MLP, then the mixture formula written out directly.
double oracle_logpdf(const MixtureDensityNetwork& net, const EstimatorParams& p, const Vector& c, const Vector& t) {
  const auto& cfg = net.config();
  Vector h = c;
  for (std::size_t l = 0; l < cfg.hidden_layers.size(); ++l) {
    const std::string n = "hidden" + std::to_string(l);
    h = (p.tensor(n + ".weight") * h + p.tensor(n + ".bias")).array().tanh();
  }
  const Vector o = p.tensor("head.weight") * h + p.tensor("head.bias");
  const auto K = static_cast<Eigen::Index>(cfg.n_components);
  const auto D = static_cast<Eigen::Index>(cfg.target_dim);
  const Vector w = o.head(K).array().exp() / o.head(K).array().exp().sum();
  double dens = 0;
  for (Eigen::Index k = 0; k < K; ++k) {
    double comp = w[k];
    for (Eigen::Index j = 0; j < D; ++j) {
      const double mu = o[K + k * D + j];
      const double sd = std::log1p(std::exp(o[K + K * D + k * D + j])) + 1e-4;
      comp *= std::exp(-0.5 * std::pow((t[j] - mu) / sd, 2)) / (sd * std::sqrt(2 * kPi));
    }
    dens += comp;
  }
  return std::log(dens);
}

}  // namespace

TEST_CASE("config validation") {
  MdnConfig c;
  c.n_components = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = MdnConfig{};
  c.target_dim = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = MdnConfig{};
  c.activation = "relu";
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("layout partitions the flat vector") {
  const MixtureDensityNetwork net(MdnConfig{3, 2, {7, 5}, 4, "tanh"});
  const EstimatorParams p = net.make_layout();
  std::size_t off = 0;
  for (const auto& s : p.layout) {
    CHECK(s.offset == off);
    off += static_cast<std::size_t>(s.rows * s.cols);
  }
  CHECK(off == p.size());
  CHECK(p.size() == 7 * 3 + 7 + 5 * 7 + 5 + 20 * 5 + 20);
}

TEST_CASE("initialisation") {
  const MixtureDensityNetwork net(MdnConfig{2, 1, {16, 16}, 3, "tanh"});
  const EstimatorParams a = net.init(SeedKey{5, {}});
  const EstimatorParams b = net.init(SeedKey{5, {}});
  CHECK(a.values == b.values);
  CHECK(a.values != net.init(SeedKey{6, {}}).values);

  const Matrix conds = random_matrix(2, 100, 17, 2.0);
  double mean_sd = 0;
  for (Eigen::Index i = 0; i < 100; ++i) {
    const auto mc = net.components(a, conds.col(i));
    for (Eigen::Index k = 0; k < 3; ++k) CHECK(mc.weights[k] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    mean_sd += mc.sds.mean() / 100.0;
  }
  CHECK(mean_sd >= 0.5);
  CHECK(mean_sd <= 2.0);

  // Glorot bound on the first layer.
  const double limit = std::sqrt(6.0 / (2 + 16));
  CHECK(a.tensor("hidden0.weight").cwiseAbs().maxCoeff() <= limit);
}

TEST_CASE("standard normal at the mode") {
  const MixtureDensityNetwork net(MdnConfig{1, 1, {4}, 1, "tanh"});
  EstimatorParams p = net.make_layout();
  p.tensor("head.bias")(2, 0) = kUnitBias;
  Vector c(1), t(1);
  c << 0.7;
  t << 0.0;
  CHECK(net.logpdf(p, c, t) == doctest::Approx(-0.91894).epsilon(1e-5));
  CHECK(net.logpdf(p, c, t) == doctest::Approx(-kLogSqrt2Pi).epsilon(1e-9));
}

TEST_CASE("identical components collapse to one") {
  const MixtureDensityNetwork one(MdnConfig{1, 1, {3}, 1, "tanh"});
  const MixtureDensityNetwork two(MdnConfig{1, 1, {3}, 2, "tanh"});
  EstimatorParams p1 = perturbed(one, 3, 0.5);
  EstimatorParams p2 = two.make_layout();
  p2.tensor("hidden0.weight") = p1.tensor("hidden0.weight");
  p2.tensor("hidden0.bias") = p1.tensor("hidden0.bias");
  auto w1 = p1.tensor("head.weight");
  auto b1 = p1.tensor("head.bias");
  auto w2 = p2.tensor("head.weight");
  auto b2 = p2.tensor("head.bias");
  // rows: logit, mean, scale for K=1; logits(2), means(2), scales(2) for K=2
  for (int r : {1, 2}) {
    w2.row(2 * r) = w1.row(r);
    w2.row(2 * r + 1) = w1.row(r);
    b2(2 * r, 0) = b1(r, 0);
    b2(2 * r + 1, 0) = b1(r, 0);
  }
  for (double x : {-2.0, 0.0, 0.4, 3.0}) {
    Vector c(1), t(1);
    c << x;
    t << 0.3 * x - 1;
    CHECK(two.logpdf(p2, c, t) == doctest::Approx(one.logpdf(p1, c, t)).epsilon(1e-13));
  }
}

TEST_CASE("logpdf matches the reference forward pass") {
  const MixtureDensityNetwork net(MdnConfig{3, 2, {8, 6}, 3, "tanh"});
  const EstimatorParams p = perturbed(net, 21, 0.3);
  const Matrix c = random_matrix(3, 40, 22);
  const Matrix t = random_matrix(2, 40, 23);
  const Vector v = net.logpdf(p, c, t);
  for (Eigen::Index i = 0; i < 40; ++i)
    CHECK(v[i] == doctest::Approx(oracle_logpdf(net, p, c.col(i), t.col(i))).epsilon(1e-10));
}

TEST_CASE("density integrates to one") {
  const MixtureDensityNetwork net(MdnConfig{2, 1, {10}, 3, "tanh"});
  for (std::uint64_t s = 0; s < 5; ++s) {
    const EstimatorParams p = perturbed(net, 40 + s, 0.5);
    const Vector c = random_matrix(2, 1, 60 + s).col(0);
    const int n = 10000;
    const double lo = -50, hi = 50, h = (hi - lo) / (n - 1);
    Matrix cs = c.replicate(1, n);
    Matrix ts(1, n);
    for (int i = 0; i < n; ++i) ts(0, i) = lo + i * h;
    const Vector lp = net.logpdf(p, cs, ts);
    double mass = 0;
    for (int i = 0; i < n; ++i) mass += std::exp(lp[i]) * ((i == 0 || i == n - 1) ? 0.5 : 1.0);
    mass *= h;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("standardizer reports densities in original units") {
  const MixtureDensityNetwork base(MdnConfig{1, 1, {3}, 1, "tanh"});
  EstimatorParams p = base.make_layout();
  p.tensor("head.bias")(2, 0) = kUnitBias;
  Standardizer s = Standardizer::identity(1, 1);
  s.target_shift[0] = 3.0;
  s.target_scale[0] = 2.0;
  s.condition_shift[0] = -1.0;
  s.condition_scale[0] = 4.0;
  const MixtureDensityNetwork net(base.config(), s);
  Vector c(1), t(1);
  c << 0.0;
  t << 4.0;
  CHECK(net.logpdf(p, c, t) == doctest::Approx(log_normal_pdf(4.0, 3.0, 2.0)).epsilon(1e-8));

  Matrix cond(1, 4), targ(1, 4);
  cond << 1, 2, 3, 4;
  targ << 10, 10, 30, 30;
  const Standardizer f = Standardizer::fit(cond, targ);
  CHECK(f.condition_shift[0] == doctest::Approx(2.5));
  CHECK(f.target_shift[0] == doctest::Approx(20));
  CHECK(f.target_scale[0] > 0);
  Matrix flat(1, 3);
  flat << 5, 5, 5;
  CHECK(Standardizer::fit(flat, flat).target_scale[0] == 1.0);
}

TEST_CASE("gradient matches central finite differences") {
  const double h = 1e-5;
  double worst = 0;
  for (std::uint64_t cfg = 0; cfg < 4; ++cfg) {
    const MdnConfig mc{1 + cfg % 3, 1 + cfg % 2, {6, 5}, 1 + cfg, "tanh"};
    const MixtureDensityNetwork net(mc);
    EstimatorParams p = perturbed(net, 100 + cfg, 0.2);
    const Matrix c = random_matrix(static_cast<Eigen::Index>(mc.condition_dim), 30, 200 + cfg);
    const Matrix t = random_matrix(static_cast<Eigen::Index>(mc.target_dim), 30, 300 + cfg);
    const LogDensityBatch g = net.logpdf_grad(p, c, t);
    CHECK(g.values.isApprox(net.logpdf(p, c, t), 1e-14));
    RandomStream rs(SeedKey{400 + cfg, {}});
    for (int probe = 0; probe < 50; ++probe) {
      const auto i = static_cast<Eigen::Index>(rs.uniform() * static_cast<double>(p.size()));
      const double keep = p.values[i];
      p.values[i] = keep + h;
      const double up = net.logpdf(p, c, t).mean();
      p.values[i] = keep - h;
      const double down = net.logpdf(p, c, t).mean();
      p.values[i] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - g.grad_phi[i]) / std::max({std::abs(fd), std::abs(g.grad_phi[i]), 1e-6}));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradient of the mean ignores duplication and order") {
  const MixtureDensityNetwork net(MdnConfig{2, 1, {5}, 2, "tanh"});
  const EstimatorParams p = perturbed(net, 9, 0.4);
  const Matrix c = random_matrix(2, 25, 10);
  const Matrix t = random_matrix(1, 25, 11);
  const Vector g = net.logpdf_grad(p, c, t).grad_phi;

  Matrix c2(2, 50), t2(1, 50);
  c2 << c, c;
  t2 << t, t;
  CHECK(net.logpdf_grad(p, c2, t2).grad_phi.isApprox(g, 1e-13));

  Matrix cr = c.rowwise().reverse(), tr = t.rowwise().reverse();
  CHECK(net.logpdf_grad(p, cr, tr).grad_phi.isApprox(g, 1e-13));
}

TEST_CASE("chunked reduction does not depend on thread count") {
  const MixtureDensityNetwork net(MdnConfig{1, 1, {4}, 2, "tanh"});
  const EstimatorParams p = perturbed(net, 70, 0.3);
  const Matrix c = random_matrix(1, 3000, 71);
  const Matrix t = random_matrix(1, 3000, 72);
  const Vector a = net.logpdf_grad(p, c, t).grad_phi;
  setenv("MLSBI_THREADS", "1", 1);
  const Vector b = net.logpdf_grad(p, c, t).grad_phi;
  unsetenv("MLSBI_THREADS");
  CHECK(a == b);
}

TEST_CASE("mean-bias gradient is the Gaussian score") {
  const MixtureDensityNetwork net(MdnConfig{1, 1, {3}, 1, "tanh"});
  EstimatorParams p = perturbed(net, 12, 0.3);
  p.tensor("head.weight").row(1).setZero();
  p.tensor("head.weight").row(2).setZero();
  const double mu = p.tensor("head.bias")(1, 0);
  const double sd = softplus(p.tensor("head.bias")(2, 0)) + 1e-4;
  const Matrix c = random_matrix(1, 20, 13);
  const Matrix t = random_matrix(1, 20, 14, 2.0);
  const LogDensityBatch g = net.logpdf_grad(p, c, t);
  const double expect = ((t.row(0).array() - mu) / (sd * sd)).mean();
  CHECK(g.grad_phi[static_cast<Eigen::Index>(p.slot("head.bias").offset + 1)] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("sigma never drops below the floor") {
  const MixtureDensityNetwork net(MdnConfig{1, 1, {3}, 1, "tanh"});
  EstimatorParams p = net.make_layout();
  p.tensor("head.bias")(2, 0) = -1000.0;
  Vector c(1);
  c << 0.0;
  CHECK(net.components(p, c).sds(0, 0) >= 1e-4);
  Vector t(1);
  t << 0.0;
  CHECK(std::isfinite(net.logpdf(p, c, t)));
}

TEST_CASE("sampling") {
  const MixtureDensityNetwork net(MdnConfig{1, 1, {3}, 1, "tanh"});
  EstimatorParams p = net.make_layout();
  p.tensor("head.bias")(2, 0) = kUnitBias;
  Vector c(1);
  c << 0.2;
  const Matrix s = net.sample(p, c, 100000, SeedKey{8, {}});
  REQUIRE(s.rows() == 1);
  REQUIRE(s.cols() == 100000);
  const double mean = s.mean();
  const double var = (s.array() - mean).square().sum() / (100000.0 - 1.0);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
  CHECK(net.sample(p, c, 50, SeedKey{8, {}}) == net.sample(p, c, 50, SeedKey{8, {}}));

  const MixtureDensityNetwork two(MdnConfig{1, 1, {3}, 2, "tanh"});
  EstimatorParams q = two.make_layout();
  auto b = q.tensor("head.bias");
  b(0, 0) = 0.0;
  b(1, 0) = -1000.0;
  b(2, 0) = -10.0;
  b(3, 0) = 10.0;
  b(4, 0) = kUnitBias;
  b(5, 0) = kUnitBias;
  const Matrix d = two.sample(q, c, 5000, SeedKey{9, {}});
  CHECK(d.maxCoeff() < 0.0);
  CHECK_THROWS_AS(two.sample(q, c, 0, SeedKey{}), std::invalid_argument);
}

TEST_CASE("non-finite inputs are rejected") {
  const MixtureDensityNetwork net(MdnConfig{1, 1, {3}, 1, "tanh"});
  const EstimatorParams p = net.init(SeedKey{});
  Matrix c(1, 2), t(1, 2);
  c << 0.0, NAN;
  t << 0.0, 0.0;
  CHECK_THROWS_AS(net.logpdf(p, c, t), std::invalid_argument);
  c << 0.0, 1.0;
  t << INFINITY, 0.0;
  CHECK_THROWS_AS(net.logpdf_grad(p, c, t), std::invalid_argument);
}

TEST_CASE("checkpoint round trip") {
  Standardizer s = Standardizer::identity(2, 1);
  s.target_scale[0] = 2.5;
  const MixtureDensityNetwork net(MdnConfig{2, 1, {4, 3}, 2, "tanh"}, s);
  Checkpoint ck{net.config(), s, perturbed(net, 5, 0.1), R"({"note":"x"})"};
  const auto path = std::filesystem::temp_directory_path() / "mlsbi_test_ckpt.mlsbi";
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.params.values == ck.params.values);
  CHECK(back.config.hidden_layers == ck.config.hidden_layers);
  CHECK(back.config.n_components == 2);
  CHECK(back.standardizer.target_scale[0] == 2.5);
  CHECK(back.params.layout.size() == ck.params.layout.size());
  CHECK(std::filesystem::file_size(path) > ck.params.size() * 8);
  std::filesystem::remove(path);
  CHECK_THROWS(load_checkpoint(path));
}
