#include "mlsbi/experiment.hpp"

#include "mlsbi/dataset_io.hpp"
#include "mlsbi/gk_density.hpp"
#include "mlsbi/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <set>

#ifndef MLSBI_VERSION_STRING
#define MLSBI_VERSION_STRING "dev"
#endif

namespace mlsbi {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Stream roots below the replicate index space.
constexpr std::uint64_t kEvalStream = 1u << 20;
constexpr std::uint64_t kReferenceStream = (1u << 20) + 1;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::set<std::string> kTopLevelKeys = {
    "experiment", "method", "n_per_level", "match_budget", "m", "seed", "epochs", "full", "lr",
    "weight_decay", "adjust_gradients", "replicates", "sweep_n1", "estimator", "metrics", "evaluation",
    "simulator", "output_dir", "write_datasets", "log_every"};

const std::map<ExperimentKind, std::set<std::string>> kMetricNames = {
    {ExperimentKind::gk_nle, {"kld", "ise"}},
    {ExperimentKind::gk_npe, {"nlpd", "coverage", "recovery"}},
    {ExperimentKind::ou_npe, {"nlpd", "coverage", "recovery", "kld_ref"}},
    {ExperimentKind::toggle_nle, {"mmd"}},
    {ExperimentKind::lingauss_calibration, {"posterior_mean_error", "coverage", "nlpd"}},
};

std::vector<std::string> default_metrics(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::gk_nle: return {"kld", "ise"};
    case ExperimentKind::gk_npe: return {"nlpd", "coverage", "recovery"};
    case ExperimentKind::ou_npe: return {"nlpd", "recovery", "kld_ref"};
    case ExperimentKind::toggle_nle: return {"mmd"};
    case ExperimentKind::lingauss_calibration: return {"posterior_mean_error", "coverage", "nlpd"};
  }
  return {};
}

std::size_t ladder_size(ExperimentKind k, const json& j) {
  if (k == ExperimentKind::lingauss_calibration) return 1;
  if (k == ExperimentKind::toggle_nle) {
    if (j.contains("simulator") && j["simulator"].is_object() && j["simulator"].contains("toggle_steps") &&
        j["simulator"]["toggle_steps"].is_array())
      return j["simulator"]["toggle_steps"].size();
    return 3;
  }
  return 2;
}

std::vector<std::size_t> default_n(ExperimentKind k, Method m) {
  const bool ml = m == Method::mlmc;
  switch (k) {
    case ExperimentKind::gk_nle:
      return ml ? std::vector<std::size_t>{10000, 100} : std::vector<std::size_t>{m == Method::mc_low ? 10000u : 300u};
    case ExperimentKind::gk_npe:
      return ml ? std::vector<std::size_t>{1000, 100} : std::vector<std::size_t>{m == Method::mc_low ? 1000u : 100u};
    case ExperimentKind::ou_npe:
      return ml ? std::vector<std::size_t>{10000, 100} : std::vector<std::size_t>{m == Method::mc_low ? 10000u : 100u};
    case ExperimentKind::toggle_nle:
      return {10000, 500, 300};
    case ExperimentKind::lingauss_calibration:
      return {5000};
  }
  return {};
}

MdnConfig default_estimator(ExperimentKind k) {
  MdnConfig c;
  switch (k) {
    case ExperimentKind::gk_nle: c.hidden_layers = {32, 32}; c.n_components = 5; break;
    case ExperimentKind::gk_npe: c.hidden_layers = {50, 50}; c.n_components = 3; break;
    case ExperimentKind::ou_npe: c.hidden_layers = {20}; c.n_components = 2; break;
    case ExperimentKind::toggle_nle: c.hidden_layers = {20, 20}; c.n_components = 2; break;
    case ExperimentKind::lingauss_calibration: c.hidden_layers = {32}; c.n_components = 1; break;
  }
  return c;
}

std::size_t default_m(ExperimentKind k) { return k == ExperimentKind::gk_npe ? 1000 : 1; }

std::size_t default_n_test(ExperimentKind k, bool full) {
  switch (k) {
    case ExperimentKind::gk_nle: return full ? 100 : 20;
    case ExperimentKind::gk_npe:
    case ExperimentKind::ou_npe: return full ? 500 : 100;
    case ExperimentKind::toggle_nle: return full ? 5000 : 100;
    case ExperimentKind::lingauss_calibration: return 500;
  }
  return 20;
}

bool is_uint(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0); }

void check_count_array(const json& j, const std::string& path, std::vector<std::string>& diags, bool allow_zero) {
  if (!j.is_array()) {
    diags.push_back(path + ": must be an array of integers");
    return;
  }
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& v = j[i];
    const std::string p = path + "[" + std::to_string(i) + "]";
    if (!v.is_number_integer()) diags.push_back(p + ": must be an integer");
    else if (v.get<long long>() < (allow_zero ? 0 : 1))
      diags.push_back(p + ": must be >= 1 (every level needs at least one sample)");
  }
}

std::vector<std::size_t> as_counts(const json& j) {
  std::vector<std::size_t> v;
  for (const auto& x : j) v.push_back(x.get<std::size_t>());
  return v;
}

double median_of(std::vector<double> v) {
  std::vector<double> f;
  for (double x : v)
    if (std::isfinite(x)) f.push_back(x);
  if (f.empty()) return kNaN;
  return robust_summary(f).median;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNaN : s / static_cast<double>(v.size());
}

json summary_json(const std::vector<double>& values) {
  json j;
  std::size_t finite = 0;
  for (double v : values) finite += std::isfinite(v) ? 1 : 0;
  j["values"] = json::array();
  for (double v : values) j["values"].push_back(std::isfinite(v) ? json(v) : json(format_double(v)));
  if (finite == 0) {
    j["median"] = nullptr;
    j["n_excluded"] = values.size();
    return j;
  }
  const RobustSummary s = robust_summary(values);
  j["median"] = s.median;
  j["q25"] = s.q25;
  j["q75"] = s.q75;
  j["n_excluded"] = s.n_excluded;
  return j;
}

json loss_json_line(const EpochRecord& rec, std::size_t replicate) {
  json j = json::parse(rec.to_json());
  j["replicate"] = replicate;
  return j;
}

}  // namespace

// ---- enums ------------------------------------------------------------------

ExperimentKind parse_experiment(const std::string& s) {
  if (s == "gk_nle") return ExperimentKind::gk_nle;
  if (s == "gk_npe") return ExperimentKind::gk_npe;
  if (s == "ou_npe") return ExperimentKind::ou_npe;
  if (s == "toggle_nle") return ExperimentKind::toggle_nle;
  if (s == "lingauss_calibration") return ExperimentKind::lingauss_calibration;
  throw std::invalid_argument("unknown experiment '" + s + "'");
}

const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::gk_nle: return "gk_nle";
    case ExperimentKind::gk_npe: return "gk_npe";
    case ExperimentKind::ou_npe: return "ou_npe";
    case ExperimentKind::toggle_nle: return "toggle_nle";
    case ExperimentKind::lingauss_calibration: return "lingauss_calibration";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "mc_low") return Method::mc_low;
  if (s == "mc_mid") return Method::mc_mid;
  if (s == "mc_high") return Method::mc_high;
  if (s == "mlmc") return Method::mlmc;
  throw std::invalid_argument("unknown method '" + s + "'");
}

const char* to_string(Method m) {
  switch (m) {
    case Method::mc_low: return "mc_low";
    case Method::mc_mid: return "mc_mid";
    case Method::mc_high: return "mc_high";
    case Method::mlmc: return "mlmc";
  }
  return "?";
}

const char* version_string() { return MLSBI_VERSION_STRING; }

// ---- config -----------------------------------------------------------------

Task ExperimentConfig::task() const {
  return experiment == ExperimentKind::gk_nle || experiment == ExperimentKind::toggle_nle ? Task::nle : Task::npe;
}

SummaryScheme ExperimentConfig::scheme() const {
  switch (experiment) {
    case ExperimentKind::gk_npe: return SummaryScheme::gk_quantiles4;
    case ExperimentKind::ou_npe: return SummaryScheme::ou_logspace5;
    default: return SummaryScheme::identity;
  }
}

std::size_t ExperimentConfig::full_epochs() const {
  switch (experiment) {
    case ExperimentKind::gk_nle: return 10000;
    case ExperimentKind::gk_npe: return 800;
    case ExperimentKind::ou_npe: return 500;
    case ExperimentKind::toggle_nle: return 10000;
    case ExperimentKind::lingauss_calibration: return 2000;
  }
  return 1000;
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["experiment"] = to_string(experiment);
  j["method"] = to_string(method);
  j["n_per_level"] = n_per_level;
  if (!match_budget.empty()) j["match_budget"] = match_budget;
  j["m"] = m;
  j["seed"] = seed;
  j["epochs"] = epochs;
  j["full"] = full;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["adjust_gradients"] = adjust_gradients;
  j["replicates"] = replicates;
  j["sweep_n1"] = sweep_n1;
  j["estimator"] = {{"hidden_layers", estimator.hidden_layers},
                    {"n_components", estimator.n_components},
                    {"activation", estimator.activation}};
  j["metrics"] = metrics;
  j["evaluation"] = {{"n_test", eval.n_test},
                     {"n_posterior_draws", eval.n_posterior_draws},
                     {"mmd_samples", eval.mmd_samples},
                     {"coverage_levels", eval.coverage_levels},
                     {"grid", {{"lo", eval.grid.lo}, {"hi", eval.grid.hi}, {"n_points", eval.grid.n_points}}},
                     {"reference_n", eval.reference_n},
                     {"reference_epochs", eval.reference_epochs}};
  j["simulator"] = {{"gk_low_variant", simulator.gk_low_variant == GkLowVariant::taylor3 ? "taylor3" : "pi_over_2"},
                    {"ou_drift_dt", simulator.ou_drift_dt},
                    {"toggle_steps", simulator.toggle_steps},
                    {"costs", simulator.costs},
                    {"lingauss_dim", simulator.lingauss_dim},
                    {"lingauss_noise_sd", simulator.lingauss_noise_sd},
                    {"lingauss_prior_sd", simulator.lingauss_prior_sd}};
  j["output_dir"] = output_dir.string();
  j["write_datasets"] = write_datasets;
  j["log_every"] = log_every;
  return j.dump();
}

ConfigError::ConfigError(std::vector<std::string> diagnostics)
    : std::runtime_error([&] {
        std::string s = "invalid config:";
        for (const auto& d : diagnostics) s += "\n  " + d;
        return s;
      }()),
      diagnostics_(std::move(diagnostics)) {}

std::vector<std::string> validate_config(const std::string& config_json) {
  std::vector<std::string> d;
  json j;
  try {
    j = json::parse(config_json);
  } catch (const json::parse_error& e) {
    return {std::string("(root): not valid JSON: ") + e.what()};
  }
  if (!j.is_object()) return {"(root): config must be a JSON object"};

  for (const auto& [key, _] : j.items())
    if (!kTopLevelKeys.count(key)) d.push_back(key + ": unknown field");

  std::optional<ExperimentKind> kind;
  if (!j.contains("experiment")) d.push_back("experiment: required");
  else if (!j["experiment"].is_string()) d.push_back("experiment: must be a string");
  else {
    try {
      kind = parse_experiment(j["experiment"].get<std::string>());
    } catch (const std::exception&) {
      d.push_back("experiment: must be one of gk_nle, gk_npe, ou_npe, toggle_nle, lingauss_calibration");
    }
  }
  std::optional<Method> method;
  if (!j.contains("method")) d.push_back("method: required");
  else if (!j["method"].is_string()) d.push_back("method: must be a string");
  else {
    try {
      method = parse_method(j["method"].get<std::string>());
    } catch (const std::exception&) {
      d.push_back("method: must be one of mc_low, mc_mid, mc_high, mlmc");
    }
  }

  if (j.contains("seed")) {
    const auto& s = j["seed"];
    if (!s.is_number_integer()) d.push_back("seed: must be an unsigned 64-bit integer");
    else if (!is_uint(s)) d.push_back("seed: must be non-negative");
  }
  auto positive_int = [&](const char* key) {
    if (!j.contains(key)) return;
    const auto& v = j[key];
    if (!v.is_number_integer() || v.get<long long>() < 1) d.push_back(std::string(key) + ": must be an integer >= 1");
  };
  positive_int("epochs");
  positive_int("m");
  positive_int("replicates");
  positive_int("log_every");
  if (j.contains("lr") && (!j["lr"].is_number() || !(j["lr"].get<double>() > 0.0)))
    d.push_back("lr: must be a positive number");
  if (j.contains("weight_decay") && (!j["weight_decay"].is_number() || j["weight_decay"].get<double>() < 0.0))
    d.push_back("weight_decay: must be a number >= 0");
  for (const char* key : {"full", "adjust_gradients", "write_datasets"})
    if (j.contains(key) && !j[key].is_boolean()) d.push_back(std::string(key) + ": must be a boolean");
  if (j.contains("output_dir") && !j["output_dir"].is_string()) d.push_back("output_dir: must be a string");

  if (j.contains("n_per_level")) check_count_array(j["n_per_level"], "n_per_level", d, false);
  if (j.contains("match_budget")) check_count_array(j["match_budget"], "match_budget", d, false);
  if (j.contains("sweep_n1")) check_count_array(j["sweep_n1"], "sweep_n1", d, false);

  if (kind && method) {
    const std::size_t L1 = ladder_size(*kind, j);
    if (j.contains("n_per_level") && j["n_per_level"].is_array()) {
      const std::size_t len = j["n_per_level"].size();
      if (*method == Method::mlmc && len != L1)
        d.push_back("n_per_level: mlmc needs one count per fidelity level (" + std::to_string(L1) + "), got " +
                    std::to_string(len));
      if (*method != Method::mlmc && len != 1)
        d.push_back("n_per_level: " + std::string(to_string(*method)) + " uses exactly one level, got " +
                    std::to_string(len));
    }
    if (j.contains("match_budget")) {
      if (*method == Method::mlmc) d.push_back("match_budget: only meaningful for mc_* methods");
      else if (j["match_budget"].is_array() && j["match_budget"].size() != L1)
        d.push_back("match_budget: needs one count per fidelity level (" + std::to_string(L1) + ")");
      if (j.contains("n_per_level")) d.push_back("match_budget: conflicts with n_per_level");
    }
    if (*method == Method::mc_mid && L1 < 3) d.push_back("method: mc_mid needs a ladder with at least three levels");
    if (*kind == ExperimentKind::lingauss_calibration && *method != Method::mc_high && *method != Method::mc_low)
      d.push_back("method: lingauss_calibration has a single fidelity level; use mc_high");
    if ((*kind == ExperimentKind::toggle_nle || *kind == ExperimentKind::lingauss_calibration) &&
        j.contains("simulator") && j["simulator"].is_object() && j["simulator"].contains("costs"))
      d.push_back("simulator.costs: fixed for this experiment (toggle costs are the step counts)");
    if (j.contains("sweep_n1") && *method != Method::mlmc) d.push_back("sweep_n1: requires method mlmc");
    if (j.contains("metrics")) {
      if (!j["metrics"].is_array()) d.push_back("metrics: must be an array of strings");
      else
        for (std::size_t i = 0; i < j["metrics"].size(); ++i) {
          const auto& mname = j["metrics"][i];
          if (!mname.is_string() || !kMetricNames.at(*kind).count(mname.get<std::string>()))
            d.push_back("metrics[" + std::to_string(i) + "]: not available for " + to_string(*kind));
        }
    }
  }

  if (j.contains("estimator")) {
    const auto& e = j["estimator"];
    if (!e.is_object()) d.push_back("estimator: must be an object");
    else {
      for (const auto& [key, _] : e.items())
        if (key != "hidden_layers" && key != "n_components" && key != "activation")
          d.push_back("estimator." + key + ": unknown field");
      if (e.contains("hidden_layers")) check_count_array(e["hidden_layers"], "estimator.hidden_layers", d, false);
      if (e.contains("n_components") && (!e["n_components"].is_number_integer() || e["n_components"].get<long long>() < 1))
        d.push_back("estimator.n_components: must be an integer >= 1");
      if (e.contains("activation") && e["activation"] != "tanh") d.push_back("estimator.activation: only tanh is supported");
    }
  }
  if (j.contains("evaluation")) {
    const auto& e = j["evaluation"];
    if (!e.is_object()) d.push_back("evaluation: must be an object");
    else {
      for (const auto& [key, v] : e.items()) {
        const std::string p = "evaluation." + key;
        if (key == "grid") {
          if (!v.is_object() || !v.value("lo", -30.0) || !(v.value("lo", -30.0) < v.value("hi", 30.0)))
            d.push_back(p + ": needs lo < hi");
          else if (v.contains("n_points") && (!v["n_points"].is_number_integer() || v["n_points"].get<long long>() < 2))
            d.push_back(p + ".n_points: must be an integer >= 2");
        } else if (key == "n_test" || key == "n_posterior_draws" || key == "mmd_samples" || key == "coverage_levels" ||
                   key == "reference_n") {
          if (!v.is_number_integer() || v.get<long long>() < 1) d.push_back(p + ": must be an integer >= 1");
          else if (key == "n_posterior_draws" && v.get<long long>() < 10)
            d.push_back(p + ": at least 10 draws are needed for HPD coverage");
          else if (key == "coverage_levels" && v.get<long long>() < 2) d.push_back(p + ": must be >= 2");
        } else if (key == "reference_epochs") {
          if (!v.is_number_integer() || v.get<long long>() < 0) d.push_back(p + ": must be an integer >= 0");
        } else {
          d.push_back(p + ": unknown field");
        }
      }
    }
  }
  if (j.contains("simulator")) {
    const auto& s = j["simulator"];
    if (!s.is_object()) d.push_back("simulator: must be an object");
    else {
      for (const auto& [key, v] : s.items()) {
        const std::string p = "simulator." + key;
        if (key == "gk_low_variant") {
          if (v != "taylor3" && v != "pi_over_2") d.push_back(p + ": must be taylor3 or pi_over_2");
        } else if (key == "ou_drift_dt") {
          if (!v.is_boolean()) d.push_back(p + ": must be a boolean");
        } else if (key == "toggle_steps") {
          check_count_array(v, p, d, false);
          if (v.is_array())
            for (std::size_t i = 1; i < v.size(); ++i)
              if (v[i].is_number_integer() && v[i - 1].is_number_integer() && v[i] <= v[i - 1])
                d.push_back(p + ": steps must strictly increase");
        } else if (key == "costs") {
          if (!v.is_array()) d.push_back(p + ": must be an array");
          else
            for (std::size_t i = 0; i < v.size(); ++i) {
              if (!v[i].is_number() || !(v[i].get<double>() > 0.0))
                d.push_back(p + "[" + std::to_string(i) + "]: must be positive");
              else if (i > 0 && v[i - 1].is_number() && !(v[i].get<double>() > v[i - 1].get<double>()))
                d.push_back(p + "[" + std::to_string(i) + "]: costs must strictly increase");
            }
        } else if (key == "lingauss_dim") {
          if (!v.is_number_integer() || v.get<long long>() < 1) d.push_back(p + ": must be an integer >= 1");
        } else if (key == "lingauss_noise_sd" || key == "lingauss_prior_sd") {
          if (!v.is_number() || !(v.get<double>() > 0.0)) d.push_back(p + ": must be positive");
        } else {
          d.push_back(p + ": unknown field");
        }
      }
    }
  }
  return d;
}

ExperimentConfig parse_config(const std::string& config_json) {
  auto diags = validate_config(config_json);
  if (!diags.empty()) throw ConfigError(std::move(diags));
  const json j = json::parse(config_json);
  ExperimentConfig c;
  c.experiment = parse_experiment(j["experiment"]);
  c.method = parse_method(j["method"]);
  c.full = j.value("full", false);
  c.seed = j.value("seed", std::uint64_t{0});
  c.m = j.value("m", default_m(c.experiment));
  c.replicates = j.value("replicates", std::size_t{1});
  c.weight_decay = j.value("weight_decay", 1e-5);
  c.adjust_gradients = j.value("adjust_gradients", true);
  c.lr = j.value("lr", c.full ? 1e-4 : 1e-3);
  c.epochs = j.value("epochs", std::size_t{0});
  if (c.epochs == 0) {
    c.epochs = c.full_epochs();
    if (!c.full && c.experiment != ExperimentKind::lingauss_calibration) c.epochs = std::max<std::size_t>(1, c.epochs / 10);
  }
  c.log_every = j.value("log_every", std::size_t{1});
  c.write_datasets = j.value("write_datasets", true);
  if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();

  if (j.contains("simulator")) {
    const auto& s = j["simulator"];
    if (s.contains("gk_low_variant"))
      c.simulator.gk_low_variant = s["gk_low_variant"] == "taylor3" ? GkLowVariant::taylor3 : GkLowVariant::pi_over_2;
    c.simulator.ou_drift_dt = s.value("ou_drift_dt", false);
    if (s.contains("toggle_steps")) c.simulator.toggle_steps = as_counts(s["toggle_steps"]);
    if (s.contains("costs")) c.simulator.costs = s["costs"].get<std::vector<double>>();
    c.simulator.lingauss_dim = s.value("lingauss_dim", c.simulator.lingauss_dim);
    c.simulator.lingauss_noise_sd = s.value("lingauss_noise_sd", c.simulator.lingauss_noise_sd);
    c.simulator.lingauss_prior_sd = s.value("lingauss_prior_sd", c.simulator.lingauss_prior_sd);
  }

  auto sim = make_experiment_simulator(c);
  if (!c.simulator.costs.empty() && c.simulator.costs.size() != sim->num_levels())
    throw ConfigError({"simulator.costs: needs one cost per fidelity level (" + std::to_string(sim->num_levels()) + ")"});

  if (j.contains("n_per_level")) {
    c.n_per_level = as_counts(j["n_per_level"]);
  } else if (j.contains("match_budget") ||
             (c.experiment == ExperimentKind::toggle_nle && c.method != Method::mlmc)) {
    c.match_budget = j.contains("match_budget") ? as_counts(j["match_budget"]) : default_n(c.experiment, Method::mlmc);
    const CostModel costs{sim->ladder().costs()};
    const auto sizes = matched_budget_sizes(cost_of(c.match_budget, costs), costs);
    const std::size_t level = method_levels(c, *sim).front();
    c.n_per_level = {sizes[level]};
    if (c.n_per_level[0] == 0) throw ConfigError({"match_budget: budget does not cover one sample"});
  } else {
    c.n_per_level = default_n(c.experiment, c.method);
  }
  if (j.contains("sweep_n1")) c.sweep_n1 = as_counts(j["sweep_n1"]);

  c.estimator = default_estimator(c.experiment);
  if (j.contains("estimator")) {
    const auto& e = j["estimator"];
    if (e.contains("hidden_layers")) c.estimator.hidden_layers = as_counts(e["hidden_layers"]);
    c.estimator.n_components = e.value("n_components", c.estimator.n_components);
  }
  c.metrics = j.contains("metrics") ? j["metrics"].get<std::vector<std::string>>() : default_metrics(c.experiment);

  c.eval.n_test = default_n_test(c.experiment, c.full);
  c.eval.reference_n = c.full ? 100000 : 10000;
  if (j.contains("evaluation")) {
    const auto& e = j["evaluation"];
    c.eval.n_test = e.value("n_test", c.eval.n_test);
    c.eval.n_posterior_draws = e.value("n_posterior_draws", c.eval.n_posterior_draws);
    c.eval.mmd_samples = e.value("mmd_samples", c.eval.mmd_samples);
    c.eval.coverage_levels = e.value("coverage_levels", c.eval.coverage_levels);
    c.eval.reference_n = e.value("reference_n", c.eval.reference_n);
    c.eval.reference_epochs = e.value("reference_epochs", c.eval.reference_epochs);
    if (e.contains("grid")) {
      c.eval.grid.lo = e["grid"].value("lo", c.eval.grid.lo);
      c.eval.grid.hi = e["grid"].value("hi", c.eval.grid.hi);
      c.eval.grid.n_points = e["grid"].value("n_points", c.eval.grid.n_points);
    }
  }
  return c;
}

std::unique_ptr<Simulator> make_experiment_simulator(const ExperimentConfig& cfg) {
  const auto& s = cfg.simulator;
  switch (cfg.experiment) {
    case ExperimentKind::gk_nle:
    case ExperimentKind::gk_npe:
      return s.costs.empty() ? std::make_unique<GkSimulator>(s.gk_low_variant)
                             : std::make_unique<GkSimulator>(s.gk_low_variant, s.costs);
    case ExperimentKind::ou_npe: {
      OuOptions o;
      o.drift_dt = s.ou_drift_dt;
      return s.costs.empty() ? std::make_unique<OuSimulator>(o) : std::make_unique<OuSimulator>(o, s.costs);
    }
    case ExperimentKind::toggle_nle:
      return std::make_unique<ToggleSimulator>(s.toggle_steps);
    case ExperimentKind::lingauss_calibration:
      return std::make_unique<LinearGaussianSimulator>(s.lingauss_dim, s.lingauss_noise_sd, s.lingauss_prior_sd);
  }
  throw std::logic_error("unhandled experiment");
}

std::vector<std::size_t> method_levels(const ExperimentConfig& cfg, const Simulator& sim) {
  switch (cfg.method) {
    case Method::mc_low: return {0};
    case Method::mc_mid: return {1};
    case Method::mc_high: return {sim.top_level()};
    case Method::mlmc: {
      std::vector<std::size_t> v(sim.num_levels());
      for (std::size_t l = 0; l < v.size(); ++l) v[l] = l;
      return v;
    }
  }
  return {};
}

double dataset_cost(const ExperimentConfig& cfg, const Simulator& sim) {
  const CostModel costs{sim.ladder().costs()};
  if (cfg.method == Method::mlmc) return cost_of(cfg.n_per_level, costs);
  return static_cast<double>(cfg.n_per_level[0]) * costs.unit_costs[method_levels(cfg, sim)[0]];
}

// ---- simulation and training -------------------------------------------------

std::vector<LevelBatch> simulate_datasets(const ExperimentConfig& cfg, const Simulator& sim, std::size_t replicate) {
  const SeedKey key{cfg.seed, {replicate, 0}};
  const auto levels = method_levels(cfg, sim);
  if (levels.size() != cfg.n_per_level.size())
    throw std::invalid_argument("simulate: n_per_level does not match the method's levels");
  std::vector<LevelBatch> out;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    LevelBatch b{levels[i], simulate_level(sim, levels[i], cfg.n_per_level[i], cfg.m, key)};
    if (cfg.method != Method::mlmc)
      for (auto& s : b.samples) s.x_lo.reset();
    out.push_back(std::move(b));
  }
  return out;
}

FittedEstimator fit(const ExperimentConfig& cfg, const std::vector<LevelBatch>& batches, std::size_t replicate,
                    const EpochCallback& on_epoch) {
  if (batches.empty()) throw std::invalid_argument("fit: no batches");
  std::vector<LevelData> data;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    LevelData d = prepare_level(batches[i], cfg.task(), cfg.scheme());
    d.level = i;
    if (batches.size() == 1) d.lo.reset();
    data.push_back(std::move(d));
  }
  MdnConfig mc = cfg.estimator;
  mc.condition_dim = static_cast<std::size_t>(data[0].hi.conditions.rows());
  mc.target_dim = static_cast<std::size_t>(data[0].hi.targets.rows());
  FittedEstimator out;
  out.net = std::make_shared<MixtureDensityNetwork>(mc, Standardizer::fit(data[0].hi.conditions, data[0].hi.targets));

  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.lr = cfg.lr;
  tc.weight_decay = cfg.weight_decay;
  tc.adjust_gradients = cfg.adjust_gradients;
  tc.seed = SeedKey{cfg.seed, {replicate, 1}};
  TrainResult r = train(*out.net, out.net->init(tc.seed), data, tc, on_epoch);
  out.params = std::move(r.params);
  out.log = std::move(r.log);
  return out;
}

FittedEstimator train_reference(const ExperimentConfig& cfg, const Simulator& sim) {
  ReferenceOptions o;
  o.n = cfg.eval.reference_n;
  o.m = cfg.m;
  o.scheme = cfg.scheme();
  o.mdn = cfg.estimator;
  o.train.epochs = cfg.eval.reference_epochs ? cfg.eval.reference_epochs : cfg.epochs;
  o.train.lr = cfg.lr;
  o.train.weight_decay = cfg.weight_decay;
  return reference_npe(sim, o, SeedKey{cfg.seed, {kReferenceStream}});
}

// ---- evaluation ----------------------------------------------------------------

namespace {

bool wants(const ExperimentConfig& cfg, const std::string& metric) {
  return std::find(cfg.metrics.begin(), cfg.metrics.end(), metric) != cfg.metrics.end();
}

std::vector<Vector> test_parameters(const ExperimentConfig& cfg, const Simulator& sim) {
  RandomStream rs(SeedKey{cfg.seed, {kEvalStream, 0}});
  std::vector<Vector> out;
  for (std::size_t i = 0; i < cfg.eval.n_test; ++i) out.push_back(sim.sample_prior(rs));
  return out;
}

void evaluate_nle_gk(const ExperimentConfig& cfg, const Simulator& sim, const MixtureDensityNetwork& net,
                     const EstimatorParams& phi, EvalReport& rep) {
  const auto thetas = test_parameters(cfg, sim);
  const EvalGrid& grid = cfg.eval.grid;
  Matrix targets(1, static_cast<Eigen::Index>(grid.n_points));
  for (std::size_t i = 0; i < grid.n_points; ++i) targets(0, static_cast<Eigen::Index>(i)) = grid.point(i);
  std::vector<double> kld(thetas.size()), ise(thetas.size());
  parallel_for(thetas.size(), [&](std::size_t i) {
    const Vector& th = thetas[i];
    GkDensityOracle oracle({th.data(), 4});
    std::vector<double> lp(grid.n_points), lq(grid.n_points);
    const Vector q = net.logpdf(phi, th.replicate(1, targets.cols()), targets);
    for (std::size_t k = 0; k < grid.n_points; ++k) {
      lp[k] = oracle.logpdf(grid.point(k));
      lq[k] = q[static_cast<Eigen::Index>(k)];
    }
    kld[i] = grid_kld(lp, lq, grid);
    ise[i] = grid_ise(lp, lq);
  });
  if (wants(cfg, "kld")) {
    rep.metrics["kld"] = mean_of(kld);
    rep.metrics["kld_median"] = median_of(kld);
    rep.per_item["kld"] = kld;
  }
  if (wants(cfg, "ise")) {
    rep.metrics["ise"] = mean_of(ise);
    rep.per_item["ise"] = ise;
  }
}

void evaluate_nle_toggle(const ExperimentConfig& cfg, const Simulator& sim, const MixtureDensityNetwork& net,
                         const EstimatorParams& phi, EvalReport& rep) {
  const auto thetas = test_parameters(cfg, sim);
  const std::size_t top = sim.top_level();
  const std::size_t ns = cfg.eval.mmd_samples;
  std::vector<double> mmds(thetas.size());
  parallel_for(thetas.size(), [&](std::size_t i) {
    const SeedKey key{cfg.seed, {kEvalStream, 1, i}};
    const Matrix q = net.sample(phi, thetas[i], ns, derive_stream(key, 0)).transpose();
    const NoiseBlock noise = sample_noise(derive_stream(key, 1), ns, sim.ladder().levels[top].noise_dim, sim.noise_kind());
    const Matrix x = sim.simulate(top, thetas[i], noise);
    mmds[i] = mmd(q, x);
  });
  rep.metrics["mmd"] = median_of(mmds);
  rep.metrics["mmd_mean"] = mean_of(mmds);
  rep.per_item["mmd"] = mmds;
}

void evaluate_npe(const ExperimentConfig& cfg, const Simulator& sim, const MixtureDensityNetwork& net,
                  const EstimatorParams& phi, const FittedEstimator* reference, EvalReport& rep) {
  const auto thetas = test_parameters(cfg, sim);
  const std::size_t n = thetas.size();
  const std::size_t top = sim.top_level();
  const auto d = static_cast<Eigen::Index>(sim.param_dim());
  const auto levels = credibility_grid(cfg.eval.coverage_levels);
  const bool want_cov = wants(cfg, "coverage");
  const bool want_rec = wants(cfg, "recovery");
  const bool want_kref = wants(cfg, "kld_ref");
  const bool want_pme = wants(cfg, "posterior_mean_error");
  if (want_kref && !reference) throw std::invalid_argument("evaluate: kld_ref needs a reference posterior");
  const auto* lg = dynamic_cast<const LinearGaussianSimulator*>(&sim);
  if (want_pme && !lg) throw std::invalid_argument("evaluate: posterior_mean_error needs the linear-Gaussian simulator");

  std::vector<double> nlpds(n), krefs(n);
  std::vector<std::vector<bool>> covered(n);
  Matrix medians(static_cast<Eigen::Index>(n), d), truths(static_cast<Eigen::Index>(n), d);
  Matrix mean_err(static_cast<Eigen::Index>(n), d);

  parallel_for(n, [&](std::size_t i) {
    const SeedKey key{cfg.seed, {kEvalStream, 2, i}};
    const Vector& th = thetas[i];
    const NoiseBlock noise =
        sample_noise(derive_stream(key, 0), cfg.m, sim.ladder().levels[top].noise_dim, sim.noise_kind());
    const Matrix x = sim.simulate(top, th, noise);
    const Vector s = summarize(x, cfg.scheme());
    nlpds[i] = -net.logpdf(phi, s, th);
    truths.row(static_cast<Eigen::Index>(i)) = th.transpose();

    if (want_cov || want_rec) {
      const Matrix draws = net.sample(phi, s, cfg.eval.n_posterior_draws, derive_stream(key, 1));
      if (want_cov) {
        const Vector lq = net.logpdf(phi, s.replicate(1, draws.cols()), draws);
        covered[i] = hpd_covered(lq, -nlpds[i], levels);
      }
      if (want_rec) {
        for (Eigen::Index j = 0; j < d; ++j) {
          std::vector<double> v(static_cast<std::size_t>(draws.cols()));
          for (Eigen::Index k = 0; k < draws.cols(); ++k) v[static_cast<std::size_t>(k)] = draws(j, k);
          medians(static_cast<Eigen::Index>(i), j) = robust_summary(v).median;
        }
      }
    }
    if (want_kref)
      krefs[i] = kld_to_reference(net, phi, *reference->net, reference->params, s, cfg.eval.n_posterior_draws,
                                  derive_stream(key, 2));
    if (want_pme) {
      const MixtureComponents mc = net.components(phi, s);
      const Vector post_mean = mc.means * mc.weights;
      const GaussianPosterior exact = lg->posterior(x);
      mean_err.row(static_cast<Eigen::Index>(i)) = (post_mean - exact.mean).cwiseAbs().transpose();
    }
  });

  if (wants(cfg, "nlpd")) {
    const std::size_t finite = static_cast<std::size_t>(std::count_if(nlpds.begin(), nlpds.end(), [](double v) {
      return std::isfinite(v);
    }));
    rep.metrics["nlpd"] = median_of(nlpds);
    rep.metrics["nlpd_excluded"] = static_cast<double>(n - finite);
    rep.per_item["nlpd"] = nlpds;
  }
  if (want_cov) {
    CoverageAccumulator acc(levels);
    for (const auto& c : covered) acc.add(c);
    rep.coverage = acc.curve();
    std::size_t inside = 0;
    for (std::size_t k = 0; k < levels.size(); ++k) {
      const auto [lo, hi] = binomial_band(n, levels[k]);
      const double e = rep.coverage->empirical[k];
      inside += (e >= lo - 1e-12 && e <= hi + 1e-12) ? 1 : 0;
    }
    rep.metrics["coverage_in_band"] = static_cast<double>(inside);
    double gap = 0.0;
    for (std::size_t k = 0; k < levels.size(); ++k) gap += rep.coverage->empirical[k] - levels[k];
    rep.metrics["coverage_mean_gap"] = gap / static_cast<double>(levels.size());
  }
  if (want_rec) {
    const RecoveryStats rs = recovery_stats(truths, medians);
    for (Eigen::Index j = 0; j < d; ++j) {
      const auto js = std::to_string(j);
      rep.metrics["recovery_r_" + js] = rs.r[static_cast<std::size_t>(j)].value_or(kNaN);
      rep.metrics["recovery_r2_" + js] = rs.r2[static_cast<std::size_t>(j)];
    }
  }
  if (want_kref) {
    rep.metrics["kld_ref"] = mean_of(krefs);
    rep.per_item["kld_ref"] = krefs;
  }
  if (want_pme) {
    const Vector avg = mean_err.colwise().mean();
    rep.metrics["posterior_mean_error"] = avg.maxCoeff();
  }
}

}  // namespace

EvalReport evaluate(const ExperimentConfig& cfg, const Simulator& sim, const MixtureDensityNetwork& net,
                    const EstimatorParams& phi, const FittedEstimator* reference) {
  EvalReport rep;
  switch (cfg.experiment) {
    case ExperimentKind::gk_nle: evaluate_nle_gk(cfg, sim, net, phi, rep); break;
    case ExperimentKind::toggle_nle: evaluate_nle_toggle(cfg, sim, net, phi, rep); break;
    default: evaluate_npe(cfg, sim, net, phi, reference, rep); break;
  }
  return rep;
}

// ---- verbs -----------------------------------------------------------------------

namespace {

DatasetMeta dataset_meta(const ExperimentConfig& cfg, const Simulator& sim) {
  DatasetMeta meta;
  meta.simulator = sim.name();
  meta.seed = cfg.seed;
  meta.m = cfg.m;
  meta.n_per_level = cfg.n_per_level;
  meta.unit_costs = sim.ladder().costs();
  meta.levels = method_levels(cfg, sim);
  meta.total_cost = dataset_cost(cfg, sim);
  return meta;
}

struct RunFiles {
  std::ofstream log;
  std::vector<std::vector<std::string>> metric_rows;
  std::vector<std::vector<std::string>> loss_rows;
  std::vector<std::vector<std::string>> coverage_rows;
  std::vector<std::vector<std::string>> sweep_rows;
};

EpochCallback logging_callback(const ExperimentConfig& cfg, std::ofstream* log,
                               std::vector<std::vector<std::string>>* loss_rows, std::size_t replicate,
                               const std::string& tag) {
  return [&cfg, log, loss_rows, replicate, tag](const EpochRecord& rec) {
    const bool last = rec.epoch + 1 == cfg.epochs;
    if (!(rec.epoch % cfg.log_every == 0 || last)) return;
    if (log) {
      json j = loss_json_line(rec, replicate);
      if (!tag.empty()) j["run"] = tag;
      *log << j.dump() << '\n';
    }
    if (loss_rows) {
      std::vector<std::string> row{tag, std::to_string(replicate), std::to_string(rec.epoch),
                                   format_double(rec.loss.total)};
      for (double v : rec.loss.h) row.push_back(format_double(v));
      for (double v : rec.loss.f_plus) row.push_back(format_double(v));
      for (double v : rec.loss.f_minus) row.push_back(format_double(v));
      row.push_back(rec.surgery ? "1" : "0");
      loss_rows->push_back(std::move(row));
    }
  };
}

std::vector<std::string> loss_header(std::size_t L1) {
  std::vector<std::string> h{"run", "replicate", "epoch", "total"};
  for (std::size_t l = 0; l < L1; ++l) h.push_back("h_" + std::to_string(l));
  for (std::size_t l = 0; l < L1; ++l) h.push_back("f_plus_" + std::to_string(l));
  for (std::size_t l = 0; l + 1 < L1; ++l) h.push_back("f_minus_" + std::to_string(l));
  h.push_back("surgery");
  return h;
}

std::string checkpoint_metadata(const ExperimentConfig& cfg, std::size_t replicate) {
  json j;
  j["config"] = json::parse(cfg.to_json());
  j["replicate"] = replicate;
  j["version"] = version_string();
  return j.dump();
}

}  // namespace

std::string run_experiment(const ExperimentConfig& cfg) {
  auto sim = make_experiment_simulator(cfg);
  fs::create_directories(cfg.output_dir);
  RunFiles files;
  files.log.open(cfg.output_dir / "training_log.jsonl");
  if (!files.log) throw IoError("cannot open training log in " + cfg.output_dir.string());

  std::optional<FittedEstimator> reference;
  if (wants(cfg, "kld_ref")) {
    try {
      reference = train_reference(cfg, *sim);
    } catch (const std::exception& e) {
      std::throw_with_nested(std::runtime_error(std::string("[reference] ") + e.what()));
    }
  }

  const std::string method = to_string(cfg.method);
  std::map<std::string, std::vector<double>> per_metric;
  std::vector<CoverageCurve> curves;
  json diverged = json::array();
  const std::size_t L1 = cfg.method == Method::mlmc ? cfg.n_per_level.size() : 1;

  auto one_run = [&](const ExperimentConfig& c, std::size_t r, const std::string& tag,
                     std::vector<std::vector<std::string>>& out_rows, bool persist) -> std::optional<EvalReport> {
    std::vector<LevelBatch> batches;
    try {
      batches = simulate_datasets(c, *sim, r);
    } catch (const std::exception& e) {
      std::throw_with_nested(std::runtime_error(std::string("[simulate] ") + e.what()));
    }
    if (persist && c.write_datasets) {
      fs::create_directories(c.output_dir / "datasets");
      write_dataset(c.output_dir / "datasets" / ("dataset_rep" + std::to_string(r) + ".csv"), batches,
                    dataset_meta(c, *sim));
    }
    FittedEstimator fitted;
    try {
      fitted = fit(c, batches, r, logging_callback(c, &files.log, &files.loss_rows, r, tag));
    } catch (const TrainingDiverged& e) {
      diverged.push_back({{"run", tag}, {"replicate", r}, {"epoch", e.epoch()}, {"error", e.what()}});
      out_rows.push_back({method, "diverged", std::to_string(r), std::to_string(e.epoch())});
      return std::nullopt;
    } catch (const std::exception& e) {
      std::throw_with_nested(std::runtime_error(std::string("[train] ") + e.what()));
    }
    if (persist) {
      fs::create_directories(c.output_dir / "checkpoints");
      save_checkpoint(c.output_dir / "checkpoints" / ("checkpoint_rep" + std::to_string(r) + ".mlsbi"),
                      Checkpoint{fitted.net->config(), fitted.net->standardizer(), fitted.params,
                                 checkpoint_metadata(c, r)});
    }
    try {
      return evaluate(c, *sim, *fitted.net, fitted.params, reference ? &*reference : nullptr);
    } catch (const std::exception& e) {
      std::throw_with_nested(std::runtime_error(std::string("[evaluate] ") + e.what()));
    }
  };

  for (std::size_t r = 0; r < cfg.replicates; ++r) {
    auto rep = one_run(cfg, r, "main", files.metric_rows, true);
    if (!rep) continue;
    for (const auto& [name, value] : rep->metrics) {
      files.metric_rows.push_back({method, name, std::to_string(r), format_double(value)});
      per_metric[name].push_back(value);
    }
    if (rep->coverage) {
      curves.push_back(*rep->coverage);
      for (std::size_t k = 0; k < rep->coverage->levels.size(); ++k) {
        const auto [lo, hi] = binomial_band(rep->coverage->n_datasets, rep->coverage->levels[k]);
        files.coverage_rows.push_back({method, std::to_string(r), format_double(rep->coverage->levels[k]),
                                       format_double(rep->coverage->empirical[k]), format_double(lo),
                                       format_double(hi)});
      }
    }
  }

  for (std::size_t n1 : cfg.sweep_n1) {
    ExperimentConfig c = cfg;
    c.n_per_level[1] = n1;
    for (std::size_t r = 0; r < cfg.replicates; ++r) {
      std::vector<std::vector<std::string>> dummy;
      auto rep = one_run(c, r, "sweep_n1_" + std::to_string(n1), dummy, false);
      if (!rep) {
        files.sweep_rows.push_back({std::to_string(n1), std::to_string(r), "diverged", "nan"});
        continue;
      }
      for (const auto& [name, value] : rep->metrics)
        files.sweep_rows.push_back({std::to_string(n1), std::to_string(r), name, format_double(value)});
    }
  }

  write_csv(cfg.output_dir / "metrics.csv", {"method", "metric", "replicate", "value"}, files.metric_rows);
  write_csv(cfg.output_dir / "loss_components.csv", loss_header(L1), files.loss_rows);
  std::vector<std::string> written{"results.json", "metrics.csv", "training_log.jsonl", "loss_components.csv"};
  if (!files.coverage_rows.empty()) {
    write_csv(cfg.output_dir / "coverage.csv", {"method", "replicate", "credibility", "empirical", "band_lo", "band_hi"},
              files.coverage_rows);
    written.push_back("coverage.csv");
  }
  if (!cfg.sweep_n1.empty()) {
    write_csv(cfg.output_dir / "sweep.csv", {"n1", "replicate", "metric", "value"}, files.sweep_rows);
    written.push_back("sweep.csv");
  }

  json res;
  res["version"] = version_string();
  res["config"] = json::parse(cfg.to_json());
  res["experiment"] = to_string(cfg.experiment);
  res["method"] = method;
  res["n_per_level"] = cfg.n_per_level;
  res["levels"] = method_levels(cfg, *sim);
  res["unit_costs"] = sim->ladder().costs();
  res["simulation_cost"] = dataset_cost(cfg, *sim);
  res["epochs"] = cfg.epochs;
  res["scale"] = cfg.full ? "full" : "desk";
  if (reference) res["reference"] = {{"n", cfg.eval.reference_n}, {"scaled_down", cfg.eval.reference_n < 100000}};
  json metrics = json::object();
  for (const auto& [name, values] : per_metric) metrics[name] = summary_json(values);
  res["metrics"] = metrics;
  res["diverged"] = diverged;
  if (!curves.empty()) {
    json cov;
    cov["levels"] = curves[0].levels;
    std::vector<double> avg(curves[0].levels.size(), 0.0);
    for (const auto& c : curves)
      for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += c.empirical[k] / static_cast<double>(curves.size());
    cov["empirical_mean"] = avg;
    cov["n_datasets"] = curves[0].n_datasets;
    res["coverage"] = cov;
  }
  res["files"] = written;
  const std::string text = res.dump(2);
  std::ofstream(cfg.output_dir / "results.json") << text << '\n';
  return text;
}

std::string simulate_experiment(const ExperimentConfig& cfg) {
  auto sim = make_experiment_simulator(cfg);
  fs::create_directories(cfg.output_dir);
  const auto batches = simulate_datasets(cfg, *sim, 0);
  const fs::path csv = cfg.output_dir / "dataset.csv";
  write_dataset(csv, batches, dataset_meta(cfg, *sim));
  std::ifstream side(sidecar_path(csv));
  return json::parse(side).dump(2);
}

std::string train_experiment(const ExperimentConfig& cfg, const std::optional<fs::path>& dataset) {
  auto sim = make_experiment_simulator(cfg);
  fs::create_directories(cfg.output_dir);
  std::vector<LevelBatch> batches;
  if (dataset) {
    batches = to_level_batches(read_dataset(*dataset), cfg.m);
    if (cfg.method != Method::mlmc)
      for (auto& b : batches)
        for (auto& s : b.samples) s.x_lo.reset();
  } else {
    batches = simulate_datasets(cfg, *sim, 0);
  }
  std::ofstream log(cfg.output_dir / "training_log.jsonl");
  std::vector<std::vector<std::string>> loss_rows;
  FittedEstimator fitted = fit(cfg, batches, 0, logging_callback(cfg, &log, &loss_rows, 0, "main"));
  const fs::path ckpt = cfg.output_dir / "checkpoint.mlsbi";
  save_checkpoint(ckpt, Checkpoint{fitted.net->config(), fitted.net->standardizer(), fitted.params,
                                   checkpoint_metadata(cfg, 0)});
  write_csv(cfg.output_dir / "loss_components.csv", loss_header(batches.size()), loss_rows);
  json j;
  j["checkpoint"] = ckpt.string();
  j["epochs"] = cfg.epochs;
  j["final_loss"] = fitted.log.epochs.empty() ? kNaN : fitted.log.epochs.back().loss.total;
  j["n_params"] = fitted.params.size();
  return j.dump(2);
}

std::string evaluate_experiment(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  auto sim = make_experiment_simulator(cfg);
  const Checkpoint ck = load_checkpoint(checkpoint);
  MixtureDensityNetwork net(ck.config, ck.standardizer);
  std::optional<FittedEstimator> reference;
  if (wants(cfg, "kld_ref")) reference = train_reference(cfg, *sim);
  const EvalReport rep = evaluate(cfg, *sim, net, ck.params, reference ? &*reference : nullptr);
  fs::create_directories(cfg.output_dir);
  std::vector<std::vector<std::string>> rows;
  json j;
  for (const auto& [name, value] : rep.metrics) {
    rows.push_back({to_string(cfg.method), name, "0", format_double(value)});
    j["metrics"][name] = std::isfinite(value) ? json(value) : json(format_double(value));
  }
  write_csv(cfg.output_dir / "metrics.csv", {"method", "metric", "replicate", "value"}, rows);
  if (rep.coverage) {
    std::vector<std::vector<std::string>> crow;
    for (std::size_t k = 0; k < rep.coverage->levels.size(); ++k) {
      const auto [lo, hi] = binomial_band(rep.coverage->n_datasets, rep.coverage->levels[k]);
      crow.push_back({to_string(cfg.method), "0", format_double(rep.coverage->levels[k]),
                      format_double(rep.coverage->empirical[k]), format_double(lo), format_double(hi)});
    }
    write_csv(cfg.output_dir / "coverage.csv", {"method", "replicate", "credibility", "empirical", "band_lo", "band_hi"},
              crow);
  }
  j["checkpoint"] = checkpoint.string();
  return j.dump(2);
}

std::string plan_allocation(const std::string& request_json) {
  json req;
  try {
    req = json::parse(request_json);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("plan: not valid JSON: ") + e.what());
  }
  if (!req.contains("costs")) throw std::invalid_argument("plan: costs: required");
  const CostModel costs{req["costs"].get<std::vector<double>>()};
  costs.validate();
  json out;
  std::vector<double> eff;
  for (std::size_t l = 0; l < costs.levels(); ++l) eff.push_back(costs.effective_cost(l));
  out["effective_costs"] = eff;

  if (req.contains("n")) {
    const auto n = req["n"].get<std::vector<std::size_t>>();
    const double c = cost_of(n, costs);
    out["n"] = n;
    out["cost"] = c;
    out["matched_single_level"] = matched_budget_sizes(c, costs);
    return out.dump(2);
  }
  if (!req.contains("budget")) throw std::invalid_argument("plan: budget: required (or give n)");
  const double budget = req["budget"].get<double>();
  AllocationPlan plan;
  if (req.contains("pilot_variances")) {
    plan = plan_pilot(costs, req["pilot_variances"].get<std::vector<double>>(), budget);
    out["planner"] = "pilot";
  } else {
    if (!req.contains("norms")) throw std::invalid_argument("plan: norms or pilot_variances: required");
    const std::string kernel = req.value("kernel", "lower");
    if (kernel != "lower" && kernel != "upper") throw std::invalid_argument("plan: kernel: must be lower or upper");
    plan = plan_waterfill(costs, req["norms"].get<std::vector<double>>(), budget,
                         kernel == "lower" ? CostKernel::adjacent_lower : CostKernel::adjacent_upper);
    out["planner"] = "waterfill";
    out["kernel"] = kernel;
  }
  out["n"] = plan.n;
  out["n_continuous"] = plan.n_continuous;
  out["budget"] = plan.budget;
  out["achieved_cost"] = plan.achieved_cost;
  return out.dump(2);
}

}  // namespace mlsbi
