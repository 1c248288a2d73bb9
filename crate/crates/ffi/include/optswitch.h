#ifndef OPTSWITCH_H
#define OPTSWITCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum OsStatus {
  OS_STATUS_OK = 0,
  OS_STATUS_NULL_POINTER = 1,
  OS_STATUS_INVALID_ARGUMENT = 2,
  OS_STATUS_DIMENSION_MISMATCH = 3,
  OS_STATUS_NUMERICAL = 4,
  OS_STATUS_MISSING_MODEL = 5,
  OS_STATUS_FORMAT = 6,
  OS_STATUS_IO = 7,
  OS_STATUS_PANIC = 8,
} OsStatus;

/**
 * Experiment configuration (a preset or a TOML file).
 */
typedef struct OsConfig OsConfig;

/**
 * Fitted continuation models for every step and mode.
 */
typedef struct OsEnsemble OsEnsemble;

/**
 * Simulated trajectories.
 */
typedef struct OsPaths OsPaths;

/**
 * A built switching problem.
 */
typedef struct OsProblem OsProblem;

/**
 * Scores of one strategy, averaged over evaluation paths.
 */
typedef struct OsMetrics {
  double decision_quality;
  double value_capture;
  double internal_consistency;
  size_t n_paths;
  size_t n_excluded;
  double mean_value;
  double greedy_value;
  double ap_value;
} OsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`) and returns the full message length excluding the NUL.
 * Passing a null `buf` only queries the length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t os_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *os_version(void);

/**
 * Loads a preset (`cl`, `aclp`, `bsp`, `hcl10`, `hcl50`, `concentration`) or a TOML file.
 *
 * # Safety
 * `name_or_path` must be a NUL-terminated string; `out` must be writable.
 */
enum OsStatus os_config_load(const char *name_or_path, struct OsConfig **out);

/**
 * # Safety
 * `cfg` must be null or a live handle.
 */
enum OsStatus os_config_set_seed(struct OsConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void os_config_free(struct OsConfig *cfg);

/**
 * Builds the problem described by `cfg`.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum OsStatus os_problem_from_config(const struct OsConfig *cfg, struct OsProblem **out);

/**
 * Builds a named problem (`cl`, `aclp`, `bsp`, `hcl`, `ou_lab`, `jump_lab`)
 * with its default parameters; `dim` is only read by `hcl`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum OsStatus os_problem_named(const char *name, size_t dim, struct OsProblem **out);

/**
 * # Safety
 * `p` must be a live handle.
 */
size_t os_problem_dim(const struct OsProblem *p);

/**
 * # Safety
 * `p` must be a live handle.
 */
size_t os_problem_n_modes(const struct OsProblem *p);

/**
 * # Safety
 * `p` must be a live handle.
 */
size_t os_problem_n_steps(const struct OsProblem *p);

/**
 * # Safety
 * `p` must be null or a handle not yet freed.
 */
void os_problem_free(struct OsProblem *p);

/**
 * Simulates `m` trajectories.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be writable.
 */
enum OsStatus os_simulate(const struct OsProblem *problem,
                          size_t m,
                          uint64_t seed,
                          struct OsPaths **out);

/**
 * # Safety
 * `paths` must be a live handle.
 */
size_t os_paths_count(const struct OsPaths *paths);

/**
 * Copies the state of path `s` at step `n` into `out[0..dim]`.
 *
 * # Safety
 * `paths` must be a live handle; `out` must point to `dim` writable doubles.
 */
enum OsStatus os_paths_state(const struct OsPaths *paths,
                             size_t s,
                             size_t n,
                             double *out,
                             size_t dim);

/**
 * # Safety
 * `paths` must be null or a handle not yet freed.
 */
void os_paths_free(struct OsPaths *paths);

/**
 * Runs the backward induction with the named model at its default
 * hyperparameters and the default solver settings.
 *
 * # Safety
 * Handles must be live, `model` NUL-terminated and `out` writable.
 */
enum OsStatus os_solve(const struct OsProblem *problem,
                       const struct OsPaths *paths,
                       const char *model,
                       uint64_t seed,
                       struct OsEnsemble **out);

/**
 * Trains the model labelled `label` in `cfg` on trajectories simulated with
 * the configuration's seed and solver settings, as the CLI does.
 *
 * # Safety
 * Handles must be live, `label` NUL-terminated and `out` writable.
 */
enum OsStatus os_solve_config(const struct OsConfig *cfg,
                              const char *label,
                              struct OsEnsemble **out);

/**
 * # Safety
 * `ens` must be a live handle and `path` NUL-terminated.
 */
enum OsStatus os_ensemble_save(const struct OsEnsemble *ens, const char *path);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum OsStatus os_ensemble_load(const char *path, struct OsEnsemble **out);

/**
 * Continuation estimates of every mode at step `n` and state `x[0..dim]`,
 * written to `out[0..n_modes]`.
 *
 * # Safety
 * `ens` must be a live handle; `x` must hold `dim` and `out` `n_modes` doubles.
 */
enum OsStatus os_ensemble_continuations(const struct OsEnsemble *ens,
                                        size_t n,
                                        const double *x,
                                        size_t dim,
                                        double *out,
                                        size_t n_modes);

/**
 * # Safety
 * `ens` must be null or a handle not yet freed.
 */
void os_ensemble_free(struct OsEnsemble *ens);

/**
 * Scores `ens` and the greedy and a-posteriori benchmarks on `n_paths` fresh
 * trajectories starting in mode `start`. Any of the three outputs may be null.
 *
 * # Safety
 * Handles must be live; non-null outputs must be writable.
 */
enum OsStatus os_evaluate(const struct OsEnsemble *ens,
                          const struct OsProblem *problem,
                          size_t n_paths,
                          size_t start,
                          uint64_t seed,
                          struct OsMetrics *model_out,
                          struct OsMetrics *greedy_out,
                          struct OsMetrics *ap_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPTSWITCH_H */
