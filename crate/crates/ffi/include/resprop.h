#ifndef RESPROP_H
#define RESPROP_H

/* Generated by cbindgen from resprop-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by fallible functions.
 */
typedef enum RespropStatus {
  RESPROP_STATUS_OK = 0,
  /**
   * Invalid argument, parse failure, or unusable configuration.
   */
  RESPROP_STATUS_USAGE = 1,
  /**
   * A numerical contract was violated (non-finite loss, broken
   * contraction guarantee).
   */
  RESPROP_STATUS_CONTRACT = 2,
  /**
   * Filesystem or serialization failure.
   */
  RESPROP_STATUS_IO = 3,
  /**
   * A required pointer was NULL.
   */
  RESPROP_STATUS_NULL_POINTER = 4,
} RespropStatus;

/**
 * Opaque sparse graph handle.
 */
typedef struct RespropGraph RespropGraph;

/**
 * Opaque propagation-operator handle.
 */
typedef struct RespropOperator RespropOperator;

/**
 * Spectral-clip outcome with the exact golden-file field layout.
 */
typedef struct RespropClipReport {
  double nu_before;
  double nu_after;
  double scale;
  double epsilon;
  double kappa_before;
  double kappa_after;
  uintptr_t converged_power_iters;
} RespropClipReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *resprop_last_error(void);

/**
 * Crate version as a static string.
 */
const char *resprop_version(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must have been returned by a resprop function documented to allocate,
 * and must not have been freed already.
 */
void resprop_string_free(char *s);

/**
 * Load a graph from the text format. On success stores the new handle in
 * `out` and returns `RESPROP_STATUS_OK`.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be a valid
 * pointer to a handle slot.
 */
enum RespropStatus resprop_graph_from_file(const char *path, struct RespropGraph **out);

/**
 * Parse a graph from an in-memory text-format string.
 *
 * # Safety
 * `text` must be NUL-terminated UTF-8; `out` must be valid.
 */
enum RespropStatus resprop_graph_from_text(const char *text, struct RespropGraph **out);

/**
 * Generate a stochastic block model graph.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum RespropStatus resprop_graph_generate_sbm(uintptr_t n,
                                              uintptr_t blocks,
                                              double p_intra,
                                              double p_inter,
                                              uintptr_t feature_dim,
                                              double feature_noise,
                                              uint64_t seed,
                                              struct RespropGraph **out);

/**
 * # Safety
 * `g` must be a live graph handle (or NULL, which is a no-op).
 */
void resprop_graph_free(struct RespropGraph *g);

/**
 * # Safety
 * `g` must be a live graph handle.
 */
uintptr_t resprop_graph_n_nodes(const struct RespropGraph *g);

/**
 * # Safety
 * `g` must be a live graph handle.
 */
uintptr_t resprop_graph_n_edges(const struct RespropGraph *g);

/**
 * Mean same-label neighbor fraction. `excluded` (optional) receives the
 * count of isolated nodes left out of the mean.
 *
 * # Safety
 * `g` must be a live graph handle; `out` must be valid; `excluded` may be
 * NULL.
 */
enum RespropStatus resprop_graph_homophily(const struct RespropGraph *g,
                                           double *out,
                                           uintptr_t *excluded);

/**
 * Structural perturbation: delete/add the given edge fractions.
 *
 * # Safety
 * `g` must be a live graph handle; `out` must be valid.
 */
enum RespropStatus resprop_graph_perturb(const struct RespropGraph *g,
                                         double del_rate,
                                         double add_rate,
                                         uint64_t seed,
                                         struct RespropGraph **out);

/**
 * Write the graph in the text format.
 *
 * # Safety
 * `g` must be a live graph handle; `path` must be NUL-terminated UTF-8.
 */
enum RespropStatus resprop_graph_save(const struct RespropGraph *g, const char *path);

/**
 * Symmetric degree normalization (optionally with self-loops).
 *
 * # Safety
 * `g` must be a live graph handle; `out` must be valid.
 */
enum RespropStatus resprop_operator_normalize(const struct RespropGraph *g,
                                              bool with_self_loops,
                                              struct RespropOperator **out);

/**
 * # Safety
 * `op` must be a live operator handle (or NULL, which is a no-op).
 */
void resprop_operator_free(struct RespropOperator *op);

/**
 * Cached power-iteration estimate of the spectral norm.
 *
 * # Safety
 * `op` must be a live operator handle.
 */
double resprop_operator_norm_estimate(const struct RespropOperator *op);

/**
 * Rescale the operator so its spectral norm cannot exceed one. `report`
 * (optional) receives the clip report; `out` receives the new handle.
 *
 * # Safety
 * `op` must be a live operator handle; `out` must be valid; `report` may be
 * NULL.
 */
enum RespropStatus resprop_operator_clip(const struct RespropOperator *op,
                                         double epsilon,
                                         struct RespropClipReport *report,
                                         struct RespropOperator **out);

/**
 * Rank-based ROC AUC with midrank ties. `labels` are 0/1 bytes.
 *
 * # Safety
 * `scores` and `labels` must point to `len` readable elements; `out` must
 * be valid.
 */
enum RespropStatus resprop_roc_auc(const double *scores,
                                   const uint8_t *labels,
                                   uintptr_t len,
                                   double *out);

/**
 * Run a full training experiment from a JSON config for one seed and return
 * the metric report as a JSON string (free with [`resprop_string_free`]).
 *
 * # Safety
 * `config_json` must be NUL-terminated UTF-8; `out_metrics_json` must be
 * valid.
 */
enum RespropStatus resprop_train_run(const char *config_json,
                                     uint64_t seed,
                                     char **out_metrics_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RESPROP_H */
