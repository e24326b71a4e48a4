#ifndef MLSBI_H
#define MLSBI_H

/* C interface to libmlsbi. Every call returns an mlsbi_status; on failure the
 * message is available from mlsbi_last_error() on the same thread. Strings
 * returned through out-parameters are owned by the caller and released with
 * mlsbi_free_string(). */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(MLSBI_BUILDING_LIBRARY)
#    define MLSBI_API __declspec(dllexport)
#  else
#    define MLSBI_API __declspec(dllimport)
#  endif
#else
#  define MLSBI_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mlsbi_status {
  MLSBI_OK = 0,
  MLSBI_ERR_INVALID_ARGUMENT = 1,
  MLSBI_ERR_CONFIG = 2,
  MLSBI_ERR_IO = 3,
  MLSBI_ERR_DIVERGED = 4,
  MLSBI_ERR_INFEASIBLE = 5,
  MLSBI_ERR_SAMPLER = 6,
  MLSBI_ERR_INTERNAL = 99
} mlsbi_status;

typedef struct mlsbi_estimator mlsbi_estimator;

MLSBI_API const char* mlsbi_version(void);
MLSBI_API const char* mlsbi_last_error(void);
MLSBI_API void mlsbi_free_string(char* s);

/* Writes a JSON array of diagnostics (empty when valid). Returns MLSBI_OK even
 * when the config has problems; only malformed arguments fail. */
MLSBI_API mlsbi_status mlsbi_validate(const char* config_json, char** diagnostics_json);

/* Pipeline verbs. Each takes a JSON config and writes into its output_dir. */
MLSBI_API mlsbi_status mlsbi_simulate(const char* config_json, char** sidecar_json);
/* dataset_csv may be NULL to simulate on the fly. */
MLSBI_API mlsbi_status mlsbi_train(const char* config_json, const char* dataset_csv, char** summary_json);
MLSBI_API mlsbi_status mlsbi_evaluate(const char* config_json, const char* checkpoint_path, char** metrics_json);
MLSBI_API mlsbi_status mlsbi_run(const char* config_json, char** results_json);
MLSBI_API mlsbi_status mlsbi_plan(const char* request_json, char** plan_json);

/* Cost of an MLMC dataset: n[0] C[0] + sum_l n[l] (C[l] + C[l-1]). */
MLSBI_API mlsbi_status mlsbi_cost_of(const uint64_t* n, const double* unit_costs, size_t levels, double* cost);

/* Numerically exact g-and-k log-density; theta has four entries. */
MLSBI_API mlsbi_status mlsbi_gk_exact_logpdf(const double* theta, double x, double* logpdf);

/* Trained estimators loaded from checkpoint files. */
MLSBI_API mlsbi_status mlsbi_estimator_load(const char* checkpoint_path, mlsbi_estimator** out);
MLSBI_API void mlsbi_estimator_free(mlsbi_estimator* est);
MLSBI_API size_t mlsbi_estimator_condition_dim(const mlsbi_estimator* est);
MLSBI_API size_t mlsbi_estimator_target_dim(const mlsbi_estimator* est);
/* Row-major inputs: n rows of condition_dim / target_dim values. */
MLSBI_API mlsbi_status mlsbi_estimator_logpdf(const mlsbi_estimator* est, const double* conditions,
                                              const double* targets, size_t n, double* out);
/* n draws for one condition, written row-major into out (n x target_dim). */
MLSBI_API mlsbi_status mlsbi_estimator_sample(const mlsbi_estimator* est, const double* condition, size_t n,
                                              uint64_t seed, double* out);

#ifdef __cplusplus
}
#endif

#endif
