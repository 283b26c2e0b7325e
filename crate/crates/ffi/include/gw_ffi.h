#ifndef GW_FFI_H
#define GW_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every exported function.
typedef enum GwStatus {
  GW_STATUS_OK = 0,
  GW_STATUS_NULL_POINTER = 1,
  GW_STATUS_INVALID_ARGUMENT = 2,
  GW_STATUS_PARSE = 3,
  GW_STATUS_SOLVER = 4,
  GW_STATUS_BUFFER_TOO_SMALL = 5,
  GW_STATUS_PANIC = 6,
} GwStatus;

// Matching strategy for [`gw_iso_test`].
typedef enum GwMatchMode {
  GW_MATCH_MODE_EXHAUSTIVE = 0,
  GW_MATCH_MODE_RELAXED = 1,
} GwMatchMode;

// Independent-edge random graph model.
typedef struct GwGraphModel GwGraphModel;

// Finitely supported probability measure.
typedef struct GwMeasure GwMeasure;

// Result of a distance computation.
typedef struct GwReport GwReport;

// Outcome of [`gw_iso_test`].
typedef struct GwTestOutcome {
  double statistic;
  // `+inf` when `alpha = 0`.
  double critical_value;
  double alpha;
  bool reject;
  size_t n;
  size_t draws_used;
} GwTestOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *gw_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *gw_version(void);

// Measure with `len` atoms in dimension `dim`; `points` is row-major
// `len * dim`, `weights` has `len` entries summing to one.
enum GwStatus gw_measure_new(size_t dim,
                             size_t len,
                             const double *points,
                             const double *weights,
                             struct GwMeasure **out);

// Measure from `{"points": [[...]], "weights": [...]}`.
enum GwStatus gw_measure_from_json(const char *json, struct GwMeasure **out);

// Number of atoms and ambient dimension.
enum GwStatus gw_measure_shape(const struct GwMeasure *m, size_t *len, size_t *dim);

void gw_measure_free(struct GwMeasure *m);

// Graph model from `{"n": N, "edges": [{"i","j","support","probs"}]}`
// with 0-based vertices.
enum GwStatus gw_model_from_json(const char *json, struct GwGraphModel **out);

void gw_model_free(struct GwGraphModel *g);

// Embedded measure of a graph model on `R^N`.
enum GwStatus gw_model_embed(const struct GwGraphModel *g, struct GwMeasure **out);

// Squared GW distance (`eps = 0`) or entropic GW (`eps > 0`) with the
// default multi-start strategy.
enum GwStatus gw_distance(const struct GwMeasure *mu0,
                          const struct GwMeasure *mu1,
                          double eps,
                          uint64_t seed,
                          struct GwReport **out);

// Scalar fields of a report. Any output pointer may be null.
enum GwStatus gw_report_summary(const struct GwReport *r,
                                double *value,
                                double *subgrad_norm,
                                size_t *iterations,
                                bool *converged);

// Copy the minimizing matrix, row-major, into `buf` of `cap` entries.
// `rows`/`cols` receive the shape even when `buf` is too small.
enum GwStatus gw_report_a_opt(const struct GwReport *r,
                              double *buf,
                              size_t cap,
                              size_t *rows,
                              size_t *cols);

void gw_report_free(struct GwReport *r);

// `eps − 16 √(M4(μ̄0) M4(μ̄1))`; positive means a unique entropic minimizer.
enum GwStatus gw_entropic_margin(const struct GwMeasure *mu0,
                                 const struct GwMeasure *mu1,
                                 double eps,
                                 double *out);

// `draws` samples of the null limit law of a measure (multinomial cost).
enum GwStatus gw_limit_sample(const struct GwMeasure *mu,
                              double delta,
                              size_t draws,
                              uint64_t seed,
                              double *buf,
                              size_t cap);

// Same for the embedding of a graph model (block cost structure).
enum GwStatus gw_limit_sample_graph(const struct GwGraphModel *g,
                                    double delta,
                                    size_t draws,
                                    uint64_t seed,
                                    double *buf,
                                    size_t cap);

// Sample `n` graphs from each model and run the isomorphism test; the
// same seed gives the same result as `gw test-iso`.
enum GwStatus gw_iso_test(const struct GwGraphModel *model0,
                          const struct GwGraphModel *model1,
                          size_t n,
                          double alpha,
                          size_t draws,
                          enum GwMatchMode mode,
                          uint64_t seed,
                          struct GwTestOutcome *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GW_FFI_H */
