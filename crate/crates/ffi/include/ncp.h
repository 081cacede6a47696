#ifndef NCP_H
#define NCP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
enum NcpStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  NCP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  NCP_STATUS_NULL_POINTER = 1,
  /**
   * An argument was out of range or malformed.
   */
  NCP_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The predictor or configuration cannot serve the request.
   */
  NCP_STATUS_CONFIG = 3,
  /**
   * A file could not be read or parsed.
   */
  NCP_STATUS_IO = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  NCP_STATUS_PANIC = 5,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum NcpStatus NcpStatus;
#else
typedef int32_t NcpStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Values for `head` arguments. Functions take a plain `int32_t` and reject
 * unknown values instead of trusting the caller with an enum.
 */
typedef enum NcpHead {
  NCP_HEAD_CLASSIFICATION = 0,
  NCP_HEAD_SEGMENTATION = 1,
} NcpHead;

/**
 * Values for [`NcpConfig::strategy`].
 */
typedef enum NcpStrategy {
  NCP_STRATEGY_CONTINUOUS = 0,
  NCP_STRATEGY_WINNER_TAKES_ALL = 1,
} NcpStrategy;

/**
 * FLOPs lookup table for one head and input size.
 */
typedef struct NcpFlopsTable NcpFlopsTable;

/**
 * Loaded predictor.
 */
typedef struct NcpPredictor NcpPredictor;

/**
 * Propagation settings; obtain defaults from [`ncp_config_default`].
 */
typedef struct NcpConfig {
  /**
   * An `NcpStrategy` value.
   */
  int32_t strategy;
  /**
   * Weight of the FLOPs term.
   */
  double lambda;
  double eta;
  uint32_t max_iters;
  double delta_acc;
  double delta_flops;
  /**
   * Non-zero: re-derive targets from the predictions every iteration.
   */
  int32_t retarget;
  double tolerance;
} NcpConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ncp_version(void);

/**
 * Message of the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ncp_last_error(void);

/**
 * Length of an architecture code (27).
 */
size_t ncp_code_dim(void);

/**
 * Maps 27 raw-unit values (within bounds, not necessarily on the grid) to
 * normalized coordinates.
 *
 * # Safety
 * `raw` and `out` must point to 27 doubles.
 */
NcpStatus ncp_normalize(const double *raw, double *out);

/**
 * Rounds a normalized code to the nearest grid point, in raw units.
 *
 * # Safety
 * `code` must point to 27 doubles and `out_raw` to 27 `uint32_t`.
 */
NcpStatus ncp_round(const double *code, uint32_t *out_raw);

/**
 * Loads a predictor file. On success `*out` owns a new handle; on failure
 * it is set to null.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
NcpStatus ncp_predictor_load(const char *path, struct NcpPredictor **out);

/**
 * Releases a predictor; null is ignored.
 *
 * # Safety
 * `p` must come from [`ncp_predictor_load`] and not be used afterwards.
 */
void ncp_predictor_free(struct NcpPredictor *p);

/**
 * Input length the predictor expects; 0 for null.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t ncp_predictor_input_dim(const struct NcpPredictor *p);

/**
 * Number of output metrics; 0 for null.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t ncp_predictor_num_metrics(const struct NcpPredictor *p);

/**
 * Name of metric `index`, owned by the handle; null when out of range.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
const char *ncp_predictor_metric_name(const struct NcpPredictor *p, size_t index);

/**
 * Predicts every metric for one code; `out` receives `out_len` values,
 * which must equal the metric count.
 *
 * # Safety
 * `code` must hold `len` doubles and `out` `out_len` doubles.
 */
NcpStatus ncp_predictor_predict(const struct NcpPredictor *p,
                                const double *code,
                                size_t len,
                                double *out,
                                size_t out_len);

/**
 * Loss `sum_k weights[k] * smoothL1(p_k - targets[k])` over all metrics
 * (a zero weight drops a metric) and its gradient with respect to the
 * code. `targets` and `weights` hold one entry per metric; `out_grad`
 * receives `len` values; `out_loss` may be null.
 *
 * # Safety
 * Array arguments must hold the stated number of doubles.
 */
NcpStatus ncp_predictor_input_gradient(const struct NcpPredictor *p,
                                       const double *code,
                                       size_t len,
                                       const double *targets,
                                       const double *weights,
                                       size_t num_metrics,
                                       double *out_grad,
                                       double *out_loss);

/**
 * Creates a FLOPs table for a head and an input size (both multiples of 32).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
NcpStatus ncp_flops_table_new(int32_t head_kind,
                              uint32_t height,
                              uint32_t width,
                              struct NcpFlopsTable **out);

/**
 * Releases a table; null is ignored.
 *
 * # Safety
 * `t` must come from [`ncp_flops_table_new`] and not be used afterwards.
 */
void ncp_flops_table_free(struct NcpFlopsTable *t);

/**
 * GFLOPs of a normalized code after rounding.
 *
 * # Safety
 * `code` must point to 27 doubles and `out` to one.
 */
NcpStatus ncp_flops_lookup(const struct NcpFlopsTable *t, const double *code, double *out);

/**
 * GFLOPs of a raw-unit code.
 *
 * # Safety
 * `raw` must point to 27 `uint32_t` and `out` to one double.
 */
NcpStatus ncp_flops_lookup_raw(const struct NcpFlopsTable *t, const uint32_t *raw, double *out);

/**
 * Full cost of a raw-unit code: GFLOPs (multiply-accumulates / 1e9) and
 * millions of parameters. Either output may be null.
 *
 * # Safety
 * `raw` must point to 27 `uint32_t`.
 */
NcpStatus ncp_cost(int32_t head_kind,
                   uint32_t height,
                   uint32_t width,
                   const uint32_t *raw,
                   double *out_gflops,
                   double *out_mparams);

/**
 * Default propagation settings: continuous, lambda 0.5, eta 3, 70 iterations.
 */
struct NcpConfig ncp_config_default(void);

/**
 * Runs propagation from the normalized code `init`. The predictor needs
 * `acc` and (when lambda > 0) `flops` heads. Winner-takes-all requires
 * `table`; continuous search ignores it. `out_code` receives the final
 * normalized code; `out_raw` (27 `uint32_t`) and `out_iterations` may be
 * null. A null `cfg` uses the defaults.
 *
 * # Safety
 * Pointers must be null where allowed or point to the stated storage.
 */
NcpStatus ncp_propagate(const struct NcpPredictor *p,
                        const struct NcpFlopsTable *table,
                        const struct NcpConfig *cfg,
                        const double *init,
                        double *out_code,
                        uint32_t *out_raw,
                        size_t *out_iterations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NCP_H */
