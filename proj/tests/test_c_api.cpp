#include <doctest.h>

#include "mlsbi/mlsbi.h"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Takes ownership of a string returned by the library.
std::string take(char* s) {
  std::string out = s ? s : "";
  mlsbi_free_string(s);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mlsbi_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string tiny_config(const fs::path& out) {
  return json{{"experiment", "gk_nle"},
              {"method", "mlmc"},
              {"n_per_level", {200, 20}},
              {"epochs", 3},
              {"estimator", {{"hidden_layers", {8}}, {"n_components", 2}}},
              {"evaluation", {{"n_test", 2}, {"grid", {{"lo", -10.0}, {"hi", 10.0}, {"n_points", 400}}}}},
              {"output_dir", out.string()}}
      .dump();
}

int cli(const std::string& args, const fs::path& stdout_file, const std::string& env = "") {
  const char* exe = std::getenv("MLSBI_CLI");
  REQUIRE(exe != nullptr);
  const std::string cmd = env + " \"" + exe + "\" " + args + " > \"" + stdout_file.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("version and errors") {
  CHECK(std::string(mlsbi_version()).size() > 0);
  char* out = nullptr;
  CHECK(mlsbi_plan("{not json", &out) != MLSBI_OK);
  CHECK(std::string(mlsbi_last_error()).size() > 0);
  CHECK(out == nullptr);
  CHECK(mlsbi_plan(nullptr, &out) == MLSBI_ERR_INVALID_ARGUMENT);
  CHECK(mlsbi_plan(R"({"costs":[1,10],"budget":5,"norms":[1,1]})", &out) == MLSBI_ERR_INFEASIBLE);
  CHECK(mlsbi_run(R"({"experiment":"gk_nle","method":"mlmc","seed":-1})", &out) == MLSBI_ERR_CONFIG);
  CHECK(std::string(mlsbi_last_error()).find("seed") != std::string::npos);
}

TEST_CASE("validate returns diagnostics as JSON") {
  char* out = nullptr;
  REQUIRE(mlsbi_validate(R"({"experiment":"gk_nle","method":"mlmc"})", &out) == MLSBI_OK);
  CHECK(json::parse(take(out)).empty());
  REQUIRE(mlsbi_validate(R"({"experiment":"gk_nle","method":"mc_high","n_per_level":[1,2]})", &out) == MLSBI_OK);
  CHECK(json::parse(take(out)).size() >= 1);
}

TEST_CASE("cost and plan") {
  const uint64_t n[3] = {10000, 500, 300};
  const double c[3] = {50, 80, 300};
  double cost = 0;
  REQUIRE(mlsbi_cost_of(n, c, 3, &cost) == MLSBI_OK);
  CHECK(cost == 679000.0);
  CHECK(mlsbi_cost_of(n, c, 0, &cost) == MLSBI_ERR_INVALID_ARGUMENT);

  char* out = nullptr;
  REQUIRE(mlsbi_plan(R"({"costs":[1,100],"budget":100000,"norms":[1,1]})", &out) == MLSBI_OK);
  const json p = json::parse(take(out));
  CHECK(p["n_continuous"][0].get<double>() / p["n_continuous"][1].get<double>() ==
        doctest::Approx(std::sqrt(101.0)).epsilon(1e-12));
}

TEST_CASE("g-and-k density") {
  const double th[4] = {0, 1, 0, 1};
  double lp = 0;
  REQUIRE(mlsbi_gk_exact_logpdf(th, 0.7, &lp) == MLSBI_OK);
  CHECK(lp == doctest::Approx(-0.5 * 0.49 - 0.5 * std::log(2 * M_PI)).epsilon(1e-6));
  const double bad[4] = {0, 1, 0, -1};
  CHECK(mlsbi_gk_exact_logpdf(bad, 0.0, &lp) == MLSBI_ERR_INVALID_ARGUMENT);
}

TEST_CASE("trained estimator through the handle") {
  const fs::path dir = scratch("est");
  char* out = nullptr;
  REQUIRE(mlsbi_train(tiny_config(dir).c_str(), nullptr, &out) == MLSBI_OK);
  const json summary = json::parse(take(out));
  const std::string ckpt = summary["checkpoint"];

  mlsbi_estimator* est = nullptr;
  CHECK(mlsbi_estimator_load((dir / "missing.mlsbi").string().c_str(), &est) == MLSBI_ERR_IO);
  REQUIRE(mlsbi_estimator_load(ckpt.c_str(), &est) == MLSBI_OK);
  REQUIRE(mlsbi_estimator_condition_dim(est) == 4);
  REQUIRE(mlsbi_estimator_target_dim(est) == 1);

  // The density integrates to one over x for a fixed theta.
  const double theta[4] = {1.0, 1.5, 0.5, 1.2};
  const std::size_t n = 4001;
  std::vector<double> conds(4 * n), xs(n), lp(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 4; ++j) conds[4 * i + j] = theta[j];
    xs[i] = -40.0 + 80.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  REQUIRE(mlsbi_estimator_logpdf(est, conds.data(), xs.data(), n, lp.data()) == MLSBI_OK);
  double mass = 0;
  for (std::size_t i = 0; i < n; ++i) mass += std::exp(lp[i]) * (i == 0 || i == n - 1 ? 0.5 : 1.0);
  mass *= 80.0 / static_cast<double>(n - 1);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));

  std::vector<double> a(500), b(500);
  REQUIRE(mlsbi_estimator_sample(est, theta, 500, 9, a.data()) == MLSBI_OK);
  REQUIRE(mlsbi_estimator_sample(est, theta, 500, 9, b.data()) == MLSBI_OK);
  CHECK(a == b);
  double mean = 0;
  for (double v : a) mean += v / 500.0;
  // Sample mean against the quadrature mean.
  double qmean = 0;
  for (std::size_t i = 0; i < n; ++i) qmean += xs[i] * std::exp(lp[i]) * 80.0 / static_cast<double>(n - 1);
  double qvar = 0;
  for (std::size_t i = 0; i < n; ++i)
    qvar += (xs[i] - qmean) * (xs[i] - qmean) * std::exp(lp[i]) * 80.0 / static_cast<double>(n - 1);
  CHECK(std::abs(mean - qmean) < 4 * std::sqrt(qvar / 500.0));

  CHECK(mlsbi_estimator_sample(est, theta, 0, 9, a.data()) == MLSBI_ERR_INVALID_ARGUMENT);
  CHECK(mlsbi_estimator_logpdf(est, nullptr, xs.data(), 1, lp.data()) == MLSBI_ERR_INVALID_ARGUMENT);
  mlsbi_estimator_free(est);
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  const fs::path log = dir / "stdout.txt";

  CHECK(cli("validate --experiment gk_nle --method mlmc", log) == 0);
  CHECK(slurp(log).find("config ok") != std::string::npos);
  CHECK(cli("validate --experiment gk_nle --method mc_high --n 300,20", log) == 1);
  CHECK(slurp(log).find("n_per_level") != std::string::npos);
  CHECK(cli("validate --experiment gk_nle --method mlmc --set seed=-4", log) == 1);

  CHECK(cli("plan --costs 50,80,300 --n 10000,500,300", log) == 0);
  const std::string plan = slurp(log);
  CHECK(plan.find("679000") != std::string::npos);
  CHECK(plan.find("2263") != std::string::npos);

  // Config file with a flag override, and thread-count invariance.
  const fs::path cfg = dir / "config.json";
  std::ofstream(cfg) << tiny_config(dir / "unused");
  CHECK(cli("run -c " + cfg.string() + " --seed 3 -o " + (dir / "t1").string(), log, "MLSBI_THREADS=1") == 0);
  CHECK(cli("run -c " + cfg.string() + " --seed 3 -o " + (dir / "t3").string(), log, "MLSBI_THREADS=3") == 0);
  REQUIRE(fs::exists(dir / "t1" / "metrics.csv"));
  CHECK(slurp(dir / "t1" / "metrics.csv") == slurp(dir / "t3" / "metrics.csv"));
  CHECK(json::parse(slurp(dir / "t1" / "results.json"))["config"]["seed"] == 3);
  CHECK(!fs::exists(dir / "unused"));

  // simulate -> train --dataset -> evaluate --checkpoint
  const std::string base = "-c " + cfg.string() + " -o " + (dir / "v").string();
  CHECK(cli("simulate " + base, log) == 0);
  CHECK(cli("train " + base + " --dataset " + (dir / "v" / "dataset.csv").string(), log) == 0);
  CHECK(cli("evaluate " + base + " --checkpoint " + (dir / "v" / "checkpoint.mlsbi").string(), log) == 0);
  CHECK(fs::exists(dir / "v" / "metrics.csv"));

  CHECK(cli("run --experiment nope --method mlmc", log) != 0);
}
