#include <doctest.h>

#include "mlsbi/trainer.hpp"

#include <cmath>

using namespace mlsbi;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Vector random_vector(Eigen::Index n, std::uint64_t seed) {
  return sample_noise(SeedKey{seed, {}}, static_cast<std::size_t>(n), 1, NoiseKind::std_normal).values.col(0);
}

LevelData lingauss_batch(const LinearGaussianSimulator& sim, std::size_t n, const SeedKey& key) {
  return prepare_level({0, simulate_level(sim, 0, n, 1, key)}, Task::npe, SummaryScheme::identity);
}

}  // namespace

TEST_CASE("surgery on the hand example") {
  AdjustInfo info;
  const Vector out = adjust_gradients(vec({1, 0}), {vec({-1, 1})}, {vec({0, 0})}, 1e-8, &info);
  CHECK(info.conflict);
  CHECK(info.g_h0[0] == doctest::Approx(0.5));
  CHECK(info.g_h0[1] == doctest::Approx(0.5));
  CHECK(info.g_c[0] == doctest::Approx(0.0));
  CHECK(info.g_c[1] == doctest::Approx(1.0));
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == doctest::Approx(1.5));
  CHECK(std::abs(info.g_h0.dot(info.g_c_raw)) < 1e-15);
  CHECK(std::abs(info.g_c.dot(vec({1, 0}))) < 1e-15);
}

TEST_CASE("no conflict passes the sum through") {
  const Vector h0 = vec({1.0, 2.0, -0.5});
  const Vector gp = vec({0.3, 0.1, 0.2});
  const Vector gm = vec({0.6, 0.2, 0.4});
  AdjustInfo info;
  const Vector out = adjust_gradients(h0, {gp}, {gm}, 1e-8, &info);
  CHECK_FALSE(info.conflict);
  const Vector scaled = gm * (gp.norm() / (gm.norm() + 1e-8));
  const Vector expect = h0 + (Vector::Zero(3) + gp + scaled);
  CHECK(out == expect);
}

TEST_CASE("rescaling bound") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Vector gp = random_vector(30, s) * (1.0 + static_cast<double>(s));
    const Vector gm = random_vector(30, 100 + s) * 1e-3;
    const double eps = 1e-8;
    const Vector scaled = gm * (gp.norm() / (gm.norm() + eps));
    // Equality in exact arithmetic; allow roundoff in the norm difference.
    CHECK(std::abs(scaled.norm() - gp.norm()) <= eps * gp.norm() / (gm.norm() + eps) + 1e-14 * gp.norm());
  }
}

TEST_CASE("orthogonality whenever surgery fires") {
  int fired = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Vector h0 = random_vector(40, 3 * s);
    std::vector<Vector> gp{random_vector(40, 3 * s + 1), random_vector(40, 1000 + s)};
    std::vector<Vector> gm{random_vector(40, 3 * s + 2), random_vector(40, 2000 + s)};
    AdjustInfo info;
    const Vector out = adjust_gradients(h0, gp, gm, 1e-8, &info);
    if (!info.conflict) continue;
    ++fired;
    CHECK(std::abs(info.g_h0.dot(info.g_c_raw)) <= 1e-10 * info.g_h0.norm() * info.g_c_raw.norm());
    CHECK(std::abs(info.g_c.dot(h0)) <= 1e-10 * info.g_c.norm() * h0.norm());
    CHECK(out.isApprox(info.g_h0 + info.g_c, 1e-15));
  }
  CHECK(fired > 20);
}

TEST_CASE("length mismatch") {
  CHECK_THROWS_AS(adjust_gradients(vec({1, 0}), {vec({1, 0, 0})}, {vec({1, 0})}), std::invalid_argument);
  CHECK_THROWS_AS(adjust_gradients(vec({1, 0}), {vec({1, 0})}, {}), std::invalid_argument);
}

TEST_CASE("adam first step and zero gradient") {
  EstimatorParams p;
  p.values = vec({0.5});
  AdamState s = AdamState::zeros(1, 1e-3);
  adam_step(s, p, vec({1.0}));
  CHECK(p.values[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-9));
  CHECK(s.step == 1);

  EstimatorParams q;
  q.values = vec({0.5, -2.0});
  AdamState z = AdamState::zeros(2, 1e-3);
  adam_step(z, q, Vector::Zero(2));
  CHECK(q.values == vec({0.5, -2.0}));

  // Weight decay enters the gradient before the moments.
  EstimatorParams w;
  w.values = vec({2.0});
  AdamState sw = AdamState::zeros(1, 1e-3);
  adam_step(sw, w, vec({0.0}), 0.5);
  CHECK(sw.m1[0] == doctest::Approx(0.1 * 1.0));
  CHECK(w.values[0] == doctest::Approx(2.0 - 1e-3).epsilon(1e-9));

  EstimatorParams a, b;
  a.values = b.values = vec({0.1, 0.2, 0.3});
  AdamState sa = AdamState::zeros(3), sb = AdamState::zeros(3);
  for (int i = 0; i < 5; ++i) {
    adam_step(sa, a, vec({0.3, -1.0, 2.0}));
    adam_step(sb, b, vec({0.3, -1.0, 2.0}));
  }
  CHECK(a.values == b.values);

  CHECK_THROWS_AS(adam_step(sa, a, vec({NAN, 0, 0})), TrainingDiverged);
}

TEST_CASE("adam matches the textbook recursion over several steps") {
  EstimatorParams p;
  p.values = vec({1.0});
  AdamState s = AdamState::zeros(1, 0.01);
  double x = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 10; ++t) {
    const double g = 2 * p.values[0];
    adam_step(s, p, vec({g}));
    const double gx = 2 * x;
    m = 0.9 * m + 0.1 * gx;
    v = 0.999 * v + 0.001 * gx * gx;
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  CHECK(p.values[0] == doctest::Approx(x).epsilon(1e-13));
}

TEST_CASE("single level training is plain Adam on the MC loss") {
  const LinearGaussianSimulator sim(1, 1.0);
  const LevelData d = lingauss_batch(sim, 200, SeedKey{1, {}});
  const MixtureDensityNetwork net(MdnConfig{1, 1, {8}, 1, "tanh"});
  const EstimatorParams p0 = net.init(SeedKey{2, {}});

  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.lr = 1e-3;
  cfg.adjust_gradients = true;
  const TrainResult a = train(net, p0, {d}, cfg);
  cfg.adjust_gradients = false;
  const TrainResult b = train(net, p0, {d}, cfg);
  CHECK(a.params.values == b.params.values);

  EstimatorParams manual = p0;
  AdamState s = AdamState::zeros(manual.size(), cfg.lr);
  for (int e = 0; e < 25; ++e) adam_step(s, manual, mc_loss(net, manual, d).grad_total(), cfg.weight_decay);
  CHECK(manual.values == a.params.values);
  CHECK(a.log.epochs.size() == 25);
  CHECK_FALSE(a.log.epochs[3].surgery);
}

TEST_CASE("training is deterministic and logs every component") {
  const GkSimulator sim;
  std::vector<LevelData> batches;
  batches.push_back(prepare_level({0, simulate_level(sim, 0, 300, 1, SeedKey{4, {0}})}, Task::nle,
                                  SummaryScheme::identity));
  batches.push_back(prepare_level({1, simulate_level(sim, 1, 30, 1, SeedKey{4, {1}})}, Task::nle,
                                  SummaryScheme::identity));
  const MixtureDensityNetwork net(MdnConfig{4, 1, {8}, 2, "tanh"});
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.lr = 1e-3;
  std::size_t seen = 0;
  const TrainResult a = train(net, net.init(SeedKey{5, {}}), batches, cfg, [&](const EpochRecord&) { ++seen; });
  const TrainResult b = train(net, net.init(SeedKey{5, {}}), batches, cfg);
  CHECK(seen == 20);
  CHECK(a.params.values == b.params.values);
  const auto& r = a.log.epochs.back();
  CHECK(r.loss.h.size() == 2);
  CHECK(r.loss.f_minus.size() == 1);
  CHECK(r.grad_norm_f_plus.size() == 2);
  CHECK(r.grad_norm_f_minus.size() == 1);
  CHECK_FALSE(r.loss.has_gradients());
  const std::string js = r.to_json();
  CHECK(js.find("\"epoch\":19") != std::string::npos);
  CHECK(js.find("\"surgery\"") != std::string::npos);

  cfg.adjust_gradients = false;
  const TrainResult c = train(net, net.init(SeedKey{5, {}}), batches, cfg);
  CHECK(c.params.values != a.params.values);
}

TEST_CASE("divergence is reported with the epoch") {
  const LinearGaussianSimulator sim(1, 1.0);
  LevelData d = lingauss_batch(sim, 20, SeedKey{1, {}});
  const MixtureDensityNetwork net(MdnConfig{1, 1, {4}, 1, "tanh"});
  EstimatorParams p = net.init(SeedKey{2, {}});
  p.values[0] = NAN;
  TrainConfig cfg;
  cfg.epochs = 5;
  try {
    train(net, p, {d}, cfg);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.epoch() == 0);
  }
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(net, net.init(SeedKey{}), {d}, cfg), std::invalid_argument);
}

TEST_CASE("MC training recovers the conjugate posterior mean") {
  const LinearGaussianSimulator sim(1, 1.0);
  const auto samples = simulate_level(sim, 0, 2000, 1, SeedKey{10, {}});
  LevelData d = prepare_level({0, samples}, Task::npe, SummaryScheme::identity);
  const Standardizer st = Standardizer::fit(d.hi.conditions, d.hi.targets);
  const MixtureDensityNetwork net(MdnConfig{1, 1, {32}, 1, "tanh"}, st);
  TrainConfig cfg;
  cfg.epochs = 2000;
  cfg.lr = 1e-3;
  const TrainResult r = train(net, net.init(SeedKey{11, {}}), {d}, cfg);

  const auto test = simulate_level(sim, 0, 100, 1, SeedKey{12, {}});
  double err = 0;
  for (const auto& s : test) {
    const auto mc = net.components(r.params, s.x_hi.row(0).transpose());
    err += std::abs(mc.means(0, 0) - sim.posterior(s.x_hi).mean[0]) / 100.0;
  }
  CHECK(err < 0.1);
}
