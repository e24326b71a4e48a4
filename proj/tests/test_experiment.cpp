#include <doctest.h>

#include "mlsbi/experiment.hpp"
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mlsbi;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

bool mentions(const std::vector<std::string>& diags, const std::string& needle) {
  for (const auto& d : diags)
    if (d.find(needle) != std::string::npos) return true;
  return false;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mlsbi_test_" + name);
  fs::remove_all(p);
  return p;
}

json tiny_gk(const fs::path& out) {
  return json{{"experiment", "gk_nle"},
              {"method", "mlmc"},
              {"n_per_level", {200, 20}},
              {"epochs", 4},
              {"seed", 7},
              {"replicates", 2},
              {"estimator", {{"hidden_layers", {8}}, {"n_components", 2}}},
              {"evaluation", {{"n_test", 2}, {"grid", {{"lo", -10.0}, {"hi", 10.0}, {"n_points", 400}}}}},
              {"output_dir", out.string()}};
}

}  // namespace

TEST_CASE("validation diagnostics name the field") {
  CHECK(validate_config(R"({"experiment":"gk_nle","method":"mlmc"})").empty());

  auto d = validate_config(R"({"experiment":"gk_nle","method":"mc_high","n_per_level":[300,20]})");
  CHECK(mentions(d, "n_per_level"));
  CHECK(mentions(d, "exactly one level"));

  d = validate_config(R"({"experiment":"gk_nle","method":"mlmc","seed":-3})");
  REQUIRE(d.size() == 1);
  CHECK(d[0].rfind("seed:", 0) == 0);

  d = validate_config(R"({"experiment":"toggle_nle","method":"mlmc","n_per_level":[100,0,3]})");
  REQUIRE(d.size() == 1);
  CHECK(d[0].rfind("n_per_level[1]", 0) == 0);
  CHECK(mentions(d, ">= 1"));

  d = validate_config(R"({"experiment":"toggle_nle","method":"mlmc","n_per_level":[100,3]})");
  CHECK(mentions(d, "one count per fidelity level (3)"));

  CHECK(mentions(validate_config("{not json"), "not valid JSON"));
  CHECK(mentions(validate_config(R"({"experiment":"gk_nle","method":"mlmc","bogus":1})"), "bogus: unknown field"));
  CHECK(mentions(validate_config(R"({"experiment":"gk_nle","method":"mlmc","estimator":{"n_components":0}})"),
                 "estimator.n_components"));
  CHECK(mentions(validate_config(R"({"method":"mlmc"})"), "experiment: required"));
  CHECK_THROWS_AS(parse_config(R"({"experiment":"gk_nle","method":"mlmc","epochs":0})"), ConfigError);
}

TEST_CASE("defaults resolve from the experiment") {
  const ExperimentConfig c = parse_config(R"({"experiment":"gk_nle","method":"mlmc"})");
  CHECK(c.n_per_level == std::vector<std::size_t>{10000, 100});
  CHECK(c.epochs * 10 == c.full_epochs());
  const ExperimentConfig f = parse_config(R"({"experiment":"gk_nle","method":"mlmc","full":true})");
  CHECK(f.epochs == f.full_epochs());
  CHECK(c.task() == Task::nle);
  CHECK(parse_config(R"({"experiment":"gk_npe","method":"mlmc"})").task() == Task::npe);
}

TEST_CASE("toggle baselines match the multilevel budget") {
  const auto lo = parse_config(R"({"experiment":"toggle_nle","method":"mc_low","match_budget":[10000,500,300]})");
  const auto mid = parse_config(R"({"experiment":"toggle_nle","method":"mc_mid","match_budget":[10000,500,300]})");
  const auto hi = parse_config(R"({"experiment":"toggle_nle","method":"mc_high","match_budget":[10000,500,300]})");
  CHECK(lo.n_per_level == std::vector<std::size_t>{13580});
  CHECK(mid.n_per_level == std::vector<std::size_t>{8487});
  CHECK(hi.n_per_level == std::vector<std::size_t>{2263});

  // Without an explicit budget the default multilevel counts are matched.
  const auto dflt = parse_config(R"({"experiment":"toggle_nle","method":"mc_high"})");
  const auto ml = parse_config(R"({"experiment":"toggle_nle","method":"mlmc"})");
  const auto sim = make_experiment_simulator(ml);
  CHECK(dataset_cost(dflt, *sim) <= dataset_cost(ml, *sim));
  CHECK(dataset_cost(dflt, *sim) + 300 > dataset_cost(ml, *sim));
}

TEST_CASE("plan verb") {
  const json p = json::parse(plan_allocation(R"({"costs":[1,100],"budget":100000,"norms":[1,1]})"));
  CHECK(p["n_continuous"][0].get<double>() / p["n_continuous"][1].get<double>() ==
        doctest::Approx(std::sqrt(101.0)).epsilon(1e-12));
  CHECK(p["achieved_cost"].get<double>() <= 100000);
  CHECK_THROWS(plan_allocation(R"({"costs":[1,10],"budget":5,"norms":[1,1]})"));
}

TEST_CASE("run writes every output and is reproducible") {
  const fs::path a = scratch("run_a");
  const fs::path b = scratch("run_b");
  json cfg = tiny_gk(a);
  const json res = json::parse(run_experiment(parse_config(cfg.dump())));
  cfg["output_dir"] = b.string();
  run_experiment(parse_config(cfg.dump()));

  for (const char* f : {"results.json", "metrics.csv", "training_log.jsonl", "loss_components.csv"})
    CHECK(fs::exists(a / f));
  CHECK(fs::exists(a / "datasets" / "dataset_rep0.csv"));
  CHECK(fs::exists(a / "datasets" / "dataset_rep0.json"));
  CHECK(fs::exists(a / "checkpoints" / "checkpoint_rep1.mlsbi"));

  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "datasets" / "dataset_rep1.csv") == slurp(b / "datasets" / "dataset_rep1.csv"));

  CHECK(res["version"] == version_string());
  CHECK(res["config"]["seed"] == 7);
  CHECK(res["config"]["n_per_level"] == json({200, 20}));
  CHECK(res["config"]["estimator"]["n_components"] == 2);

  // Every training-log line is a standalone JSON object.
  std::ifstream log(a / "training_log.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const json j = json::parse(line);
    CHECK(j.contains("epoch"));
    ++lines;
  }
  CHECK(lines == 8);

  // A different seed changes the data.
  cfg["seed"] = 8;
  cfg["output_dir"] = scratch("run_c").string();
  run_experiment(parse_config(cfg.dump()));
  CHECK(slurp(a / "datasets" / "dataset_rep0.csv") != slurp(fs::path(cfg["output_dir"].get<std::string>()) / "datasets" / "dataset_rep0.csv"));
}

TEST_CASE("simulate, train and evaluate verbs chain through files") {
  const fs::path out = scratch("verbs");
  json cfg = tiny_gk(out);
  cfg["replicates"] = 1;
  const ExperimentConfig c = parse_config(cfg.dump());
  simulate_experiment(c);
  const fs::path csv = out / "dataset.csv";
  REQUIRE(fs::exists(csv));
  const json trained = json::parse(train_experiment(c, csv));
  const fs::path ckpt = trained["checkpoint"].get<std::string>();
  REQUIRE(fs::exists(ckpt));
  const json metrics = json::parse(evaluate_experiment(c, ckpt));
  CHECK(metrics["metrics"].contains("kld"));
  CHECK(fs::exists(out / "metrics.csv"));

  // Training from the persisted dataset matches training on the fly.
  const fs::path out2 = scratch("verbs2");
  cfg["output_dir"] = out2.string();
  const ExperimentConfig c2 = parse_config(cfg.dump());
  const json direct = json::parse(train_experiment(c2, std::nullopt));
  const std::string x = slurp(ckpt);
  const std::string y = slurp(direct["checkpoint"].get<std::string>());
  CHECK(x.substr(x.find('\n')) == y.substr(y.find('\n')));
}
