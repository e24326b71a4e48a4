// mlsbi command-line front end. Everything goes through the C API.

#include "mlsbi/mlsbi.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using json = nlohmann::json;

namespace {

struct Overrides {
  std::string config_path;
  std::string experiment, method, output_dir;
  std::vector<std::size_t> n;
  std::vector<std::size_t> sweep;
  long long seed = -1;
  std::size_t epochs = 0, replicates = 0, n_test = 0;
  double lr = 0.0;
  bool full = false;
  bool no_adjust = false;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON experiment config");
  cmd->add_option("--experiment", o.experiment, "gk_nle | gk_npe | ou_npe | toggle_nle | lingauss_calibration");
  cmd->add_option("--method", o.method, "mc_low | mc_mid | mc_high | mlmc");
  cmd->add_option("--n", o.n, "samples per level")->delimiter(',');
  cmd->add_option("--sweep-n1", o.sweep, "n1 values for the sweep")->delimiter(',');
  cmd->add_option("--seed", o.seed, "root seed");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--lr", o.lr, "Adam learning rate");
  cmd->add_option("--replicates", o.replicates, "independent training repetitions");
  cmd->add_option("--n-test", o.n_test, "test parameters / datasets for evaluation");
  cmd->add_option("-o,--output-dir", o.output_dir, "output directory");
  cmd->add_flag("--full", o.full, "full-scale epochs (10x) and learning rate 1e-4");
  cmd->add_flag("--no-adjust", o.no_adjust, "disable the MLMC gradient adjustment");
  cmd->add_option("--set", o.sets, "override any field: dotted.path=<json value>");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

void set_path(json& j, const std::string& dotted, const json& value) {
  json* cur = &j;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) cur = &(*cur)[parts[i]];
  (*cur)[parts.back()] = value;
}

std::string build_config(const Overrides& o) {
  json j = o.config_path.empty() ? json::object() : read_json_file(o.config_path);
  if (!o.experiment.empty()) j["experiment"] = o.experiment;
  if (!o.method.empty()) j["method"] = o.method;
  if (!o.n.empty()) {
    j["n_per_level"] = o.n;
    j.erase("match_budget");
  }
  if (!o.sweep.empty()) j["sweep_n1"] = o.sweep;
  if (o.seed >= 0) j["seed"] = o.seed;
  if (o.epochs) j["epochs"] = o.epochs;
  if (o.lr > 0.0) j["lr"] = o.lr;
  if (o.replicates) j["replicates"] = o.replicates;
  if (o.n_test) j["evaluation"]["n_test"] = o.n_test;
  if (!o.output_dir.empty()) j["output_dir"] = o.output_dir;
  if (o.full) j["full"] = true;
  if (o.no_adjust) j["adjust_gradients"] = false;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::runtime_error("--set expects path=value, got '" + s + "'");
    const std::string raw = s.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    set_path(j, s.substr(0, eq), value);
  }
  return j.dump();
}

int report(mlsbi_status st, char*& out) {
  if (st != MLSBI_OK) {
    std::fprintf(stderr, "mlsbi: error %d: %s\n", static_cast<int>(st), mlsbi_last_error());
    return static_cast<int>(st);
  }
  if (out) {
    std::cout << out << '\n';
    mlsbi_free_string(out);
    out = nullptr;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilevel Monte Carlo training for simulation-based inference"};
  app.set_version_flag("--version", std::string(mlsbi_version()));
  app.require_subcommand(1);

  Overrides o;
  auto* simulate = app.add_subcommand("simulate", "generate and persist the training dataset");
  auto* train = app.add_subcommand("train", "train an estimator and write a checkpoint");
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint");
  auto* run = app.add_subcommand("run", "simulate, train and evaluate every replicate");
  auto* validate = app.add_subcommand("validate", "check a config and print diagnostics");
  for (auto* cmd : {simulate, train, evaluate, run, validate}) add_config_options(cmd, o);

  std::string dataset, checkpoint;
  train->add_option("--dataset", dataset, "train on a dataset CSV instead of simulating");
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  auto* plan = app.add_subcommand("plan", "per-level sample sizes under a budget");
  std::string request_path, kernel = "lower";
  std::vector<double> costs, norms, variances;
  std::vector<std::uint64_t> plan_n;
  double budget = 0.0;
  plan->add_option("--request", request_path, "JSON request file");
  plan->add_option("--costs", costs, "unit costs C_0..C_L")->delimiter(',');
  plan->add_option("--budget", budget, "simulation budget");
  plan->add_option("--norms", norms, "norm proxies for the closed-form plan")->delimiter(',');
  plan->add_option("--variances", variances, "pilot variances V_0..V_L")->delimiter(',');
  plan->add_option("--kernel", kernel, "cost kernel: lower (C_l + C_{l-1}) or upper (C_l + C_{l+1})");
  plan->add_option("--n", plan_n, "cost an existing plan and derive matched single-level sizes")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    char* out = nullptr;
    if (*plan) {
      json req = request_path.empty() ? json::object() : read_json_file(request_path);
      if (!costs.empty()) req["costs"] = costs;
      if (budget > 0.0) req["budget"] = budget;
      if (!norms.empty()) req["norms"] = norms;
      if (!variances.empty()) req["pilot_variances"] = variances;
      if (!plan_n.empty()) req["n"] = plan_n;
      req["kernel"] = kernel;
      return report(mlsbi_plan(req.dump().c_str(), &out), out);
    }
    const std::string cfg = build_config(o);
    if (*validate) {
      const mlsbi_status st = mlsbi_validate(cfg.c_str(), &out);
      if (st != MLSBI_OK) return report(st, out);
      const json diags = json::parse(out);
      mlsbi_free_string(out);
      if (diags.empty()) {
        std::cout << "config ok\n";
        return 0;
      }
      for (const auto& d : diags) std::cout << d.get<std::string>() << '\n';
      return 1;
    }
    if (*simulate) return report(mlsbi_simulate(cfg.c_str(), &out), out);
    if (*train) return report(mlsbi_train(cfg.c_str(), dataset.empty() ? nullptr : dataset.c_str(), &out), out);
    if (*evaluate) return report(mlsbi_evaluate(cfg.c_str(), checkpoint.c_str(), &out), out);
    if (*run) return report(mlsbi_run(cfg.c_str(), &out), out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mlsbi: %s\n", e.what());
    return 1;
  }
  return 0;
}
