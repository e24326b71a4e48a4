#include "mlsbi/mlsbi.h"

#include "mlsbi/experiment.hpp"
#include "mlsbi/gk_density.hpp"

#include <json.hpp>

#include <cstring>
#include <exception>
#include <new>
#include <string>

struct mlsbi_estimator {
  mlsbi::MixtureDensityNetwork net;
  mlsbi::EstimatorParams params;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

mlsbi_status classify(const std::exception& e) {
  // Stage-tagged errors wrap the original; report the innermost kind.
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    return classify(inner);
  } catch (...) {
  }
  if (dynamic_cast<const mlsbi::ConfigError*>(&e)) return MLSBI_ERR_CONFIG;
  if (dynamic_cast<const mlsbi::TrainingDiverged*>(&e)) return MLSBI_ERR_DIVERGED;
  if (dynamic_cast<const mlsbi::InfeasibleBudget*>(&e)) return MLSBI_ERR_INFEASIBLE;
  if (dynamic_cast<const mlsbi::SamplerStuck*>(&e)) return MLSBI_ERR_SAMPLER;
  if (dynamic_cast<const std::invalid_argument*>(&e)) return MLSBI_ERR_INVALID_ARGUMENT;
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return MLSBI_ERR_INVALID_ARGUMENT;
  if (dynamic_cast<const mlsbi::IoError*>(&e)) return MLSBI_ERR_IO;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return MLSBI_ERR_IO;
  return MLSBI_ERR_INTERNAL;
}

template <class F>
mlsbi_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return MLSBI_OK;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return classify(e);
  } catch (...) {
    g_last_error = "unknown error";
    return MLSBI_ERR_INTERNAL;
  }
}

void need(const void* p, const char* name) {
  if (!p) throw std::invalid_argument(std::string(name) + " must not be NULL");
}

}  // namespace

extern "C" {

const char* mlsbi_version(void) { return mlsbi::version_string(); }

const char* mlsbi_last_error(void) { return g_last_error.c_str(); }

void mlsbi_free_string(char* s) { std::free(s); }

mlsbi_status mlsbi_validate(const char* config_json, char** diagnostics_json) {
  return guarded([&] {
    need(config_json, "config_json");
    need(diagnostics_json, "diagnostics_json");
    *diagnostics_json = dup_string(nlohmann::json(mlsbi::validate_config(config_json)).dump(2));
  });
}

mlsbi_status mlsbi_simulate(const char* config_json, char** sidecar_json) {
  return guarded([&] {
    need(config_json, "config_json");
    need(sidecar_json, "sidecar_json");
    *sidecar_json = dup_string(mlsbi::simulate_experiment(mlsbi::parse_config(config_json)));
  });
}

mlsbi_status mlsbi_train(const char* config_json, const char* dataset_csv, char** summary_json) {
  return guarded([&] {
    need(config_json, "config_json");
    need(summary_json, "summary_json");
    std::optional<std::filesystem::path> ds;
    if (dataset_csv) ds = dataset_csv;
    *summary_json = dup_string(mlsbi::train_experiment(mlsbi::parse_config(config_json), ds));
  });
}

mlsbi_status mlsbi_evaluate(const char* config_json, const char* checkpoint_path, char** metrics_json) {
  return guarded([&] {
    need(config_json, "config_json");
    need(checkpoint_path, "checkpoint_path");
    need(metrics_json, "metrics_json");
    *metrics_json = dup_string(mlsbi::evaluate_experiment(mlsbi::parse_config(config_json), checkpoint_path));
  });
}

mlsbi_status mlsbi_run(const char* config_json, char** results_json) {
  return guarded([&] {
    need(config_json, "config_json");
    need(results_json, "results_json");
    *results_json = dup_string(mlsbi::run_experiment(mlsbi::parse_config(config_json)));
  });
}

mlsbi_status mlsbi_plan(const char* request_json, char** plan_json) {
  return guarded([&] {
    need(request_json, "request_json");
    need(plan_json, "plan_json");
    *plan_json = dup_string(mlsbi::plan_allocation(request_json));
  });
}

mlsbi_status mlsbi_cost_of(const uint64_t* n, const double* unit_costs, size_t levels, double* cost) {
  return guarded([&] {
    need(n, "n");
    need(unit_costs, "unit_costs");
    need(cost, "cost");
    mlsbi::CostModel cm{std::vector<double>(unit_costs, unit_costs + levels)};
    cm.validate();
    *cost = mlsbi::cost_of(std::vector<std::size_t>(n, n + levels), cm);
  });
}

mlsbi_status mlsbi_gk_exact_logpdf(const double* theta, double x, double* logpdf) {
  return guarded([&] {
    need(theta, "theta");
    need(logpdf, "logpdf");
    *logpdf = mlsbi::gk_exact_logpdf({theta, 4}, x);
  });
}

mlsbi_status mlsbi_estimator_load(const char* checkpoint_path, mlsbi_estimator** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint_path");
    need(out, "out");
    mlsbi::Checkpoint ck = mlsbi::load_checkpoint(checkpoint_path);
    *out = new mlsbi_estimator{mlsbi::MixtureDensityNetwork(ck.config, ck.standardizer), std::move(ck.params)};
  });
}

void mlsbi_estimator_free(mlsbi_estimator* est) { delete est; }

size_t mlsbi_estimator_condition_dim(const mlsbi_estimator* est) { return est ? est->net.condition_dim() : 0; }

size_t mlsbi_estimator_target_dim(const mlsbi_estimator* est) { return est ? est->net.target_dim() : 0; }

mlsbi_status mlsbi_estimator_logpdf(const mlsbi_estimator* est, const double* conditions, const double* targets,
                                    size_t n, double* out) {
  return guarded([&] {
    need(est, "est");
    need(conditions, "conditions");
    need(targets, "targets");
    need(out, "out");
    if (n == 0) throw std::invalid_argument("n must be positive");
    const auto dc = static_cast<Eigen::Index>(est->net.condition_dim());
    const auto dt = static_cast<Eigen::Index>(est->net.target_dim());
    const auto nn = static_cast<Eigen::Index>(n);
    // Row-major n x d input is column-major d x n, which is the feature-major layout.
    const mlsbi::Matrix c = Eigen::Map<const mlsbi::Matrix>(conditions, dc, nn);
    const mlsbi::Matrix t = Eigen::Map<const mlsbi::Matrix>(targets, dt, nn);
    const mlsbi::Vector v = est->net.logpdf(est->params, c, t);
    std::memcpy(out, v.data(), n * sizeof(double));
  });
}

mlsbi_status mlsbi_estimator_sample(const mlsbi_estimator* est, const double* condition, size_t n, uint64_t seed,
                                    double* out) {
  return guarded([&] {
    need(est, "est");
    need(condition, "condition");
    need(out, "out");
    if (n == 0) throw std::invalid_argument("n must be positive");
    const mlsbi::Vector c =
        Eigen::Map<const mlsbi::Vector>(condition, static_cast<Eigen::Index>(est->net.condition_dim()));
    const mlsbi::Matrix draws = est->net.sample(est->params, c, n, mlsbi::SeedKey{seed, {}});
    std::memcpy(out, draws.data(), static_cast<std::size_t>(draws.size()) * sizeof(double));
  });
}

}  // extern "C"
