#ifndef HJLAB_H
#define HJLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HjlabStatus {
  HJLAB_STATUS_OK = 0,
  HJLAB_STATUS_NULL_POINTER = 1,
  HJLAB_STATUS_INVALID_CONFIG = 2,
  HJLAB_STATUS_DOMAIN = 3,
  HJLAB_STATUS_SUBCRITICAL = 4,
  HJLAB_STATUS_SOLVER = 5,
  HJLAB_STATUS_BRACKET = 6,
  HJLAB_STATUS_GRID_RANGE = 7,
  HJLAB_STATUS_LEVEL = 8,
  HJLAB_STATUS_IO = 9,
  HJLAB_STATUS_FORMAT = 10,
  HJLAB_STATUS_PANIC = 11,
  /**
   * An experiment ran but one of its checks failed.
   */
  HJLAB_STATUS_CHECK_FAILED = 12,
} HjlabStatus;

/**
 * Sampled coefficient fields.
 */
typedef struct HjlabEnvironment HjlabEnvironment;

/**
 * Solution of the metric problem on a box.
 */
typedef struct HjlabMetricField HjlabMetricField;

/**
 * Table of a function on a box lattice; `+inf` marks points outside the
 * effective domain.
 */
typedef struct HjlabTable HjlabTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hjlab_version(void);

/**
 * Copy the last error message of this thread into `buf` (truncated and
 * NUL-terminated). Returns the full message length without the NUL, or 0
 * when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t hjlab_last_error_message(char *buf, size_t len);

void hjlab_clear_error(void);

/**
 * Parse an environment specification (TOML text) and sample it.
 *
 * # Safety
 * `spec_toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HjlabStatus hjlab_env_new(const char *spec_toml, uint64_t seed, struct HjlabEnvironment **out);

/**
 * # Safety
 * `env` must come from [`hjlab_env_new`] and not be used afterwards.
 */
void hjlab_env_free(struct HjlabEnvironment *env);

/**
 * Dimension of the environment, 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t hjlab_env_dimension(const struct HjlabEnvironment *env);

/**
 * `H(p, y)` with `p` and `y` of length `dim`.
 *
 * # Safety
 * `p` and `y` must point to `dim` doubles, `out` to one.
 */
enum HjlabStatus hjlab_env_evaluate_h(const struct HjlabEnvironment *env,
                                      const double *p,
                                      const double *y,
                                      size_t dim,
                                      double *out);

/**
 * Maximal subsolution at level `mu` with pole `z`, on the box of
 * half-width `half_width` and spacing `h` centered at `z`.
 *
 * # Safety
 * `z` must point to as many doubles as the environment dimension.
 */
enum HjlabStatus hjlab_solve_metric(const struct HjlabEnvironment *env,
                                    double mu,
                                    const double *z,
                                    double half_width,
                                    double h,
                                    struct HjlabMetricField **out);

/**
 * Interpolated value of the metric field; `Domain` outside the box.
 *
 * # Safety
 * `y` must point to as many doubles as the field dimension.
 */
enum HjlabStatus hjlab_metric_value_at(const struct HjlabMetricField *field,
                                       const double *y,
                                       double *out);

/**
 * # Safety
 * `field` must come from [`hjlab_solve_metric`] and not be used afterwards.
 */
void hjlab_metric_free(struct HjlabMetricField *field);

/**
 * Effective Hamiltonian at `p` by the discounted cell problem on the
 * environment torus, along the decreasing discounts `eps[0..n_eps]`.
 * `error` may be null.
 *
 * # Safety
 * `p` must point to dimension-many doubles and `eps` to `n_eps`.
 */
enum HjlabStatus hjlab_hbar_cell(const struct HjlabEnvironment *env,
                                 const double *p,
                                 const double *eps,
                                 size_t n_eps,
                                 double *out,
                                 double *error);

/**
 * Table on the box lattice with `shape[k]` nodes from `origin[k]` in steps
 * of `step[k]`; `values` is row-major with the last axis fastest.
 *
 * # Safety
 * `origin`, `step` and `shape` must point to `dim` entries and `values` to
 * the product of the shape.
 */
enum HjlabStatus hjlab_table_new(size_t dim,
                                 const double *origin,
                                 const double *step,
                                 const size_t *shape,
                                 const double *values,
                                 struct HjlabTable **out);

/**
 * Legendre transform on the dual lattice spanned by the chord slopes.
 *
 * # Safety
 * `table` must be a live handle and `out` a valid pointer.
 */
enum HjlabStatus hjlab_legendre_transform(const struct HjlabTable *table, struct HjlabTable **out);

/**
 * Number of nodes, 0 for a null handle.
 *
 * # Safety
 * `table` must be null or a live handle.
 */
size_t hjlab_table_len(const struct HjlabTable *table);

/**
 * Copy the values into `buf`, which must hold [`hjlab_table_len`] doubles.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum HjlabStatus hjlab_table_values(const struct HjlabTable *table, double *buf, size_t len);

/**
 * Coordinates of node `index` written to `buf[0..dim]`.
 *
 * # Safety
 * `buf` must point to `dim` writable doubles.
 */
enum HjlabStatus hjlab_table_point(const struct HjlabTable *table,
                                   size_t index,
                                   double *buf,
                                   size_t dim);

/**
 * # Safety
 * `table` must come from this library and not be used afterwards.
 */
void hjlab_table_free(struct HjlabTable *table);

/**
 * Run the experiment described by the TOML file `config_path` into
 * `output_dir` (the configured or default directory when null). Returns
 * `CheckFailed` when the run completed with a failing check.
 *
 * # Safety
 * Both strings must be NUL-terminated; `output_dir` may be null.
 */
enum HjlabStatus hjlab_run_experiment(const char *config_path, const char *output_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HJLAB_H */
