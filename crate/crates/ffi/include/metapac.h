#ifndef METAPAC_H
#define METAPAC_H

#include <stddef.h>
#include <stdint.h>

typedef enum MetapacStatus {
  METAPAC_STATUS_OK = 0,
  METAPAC_STATUS_NULL_POINTER = 1,
  METAPAC_STATUS_INVALID_ARGUMENT = 2,
  METAPAC_STATUS_INVALID_SCORE = 3,
  METAPAC_STATUS_BUFFER_TOO_SMALL = 4,
  METAPAC_STATUS_PANIC = 5,
} MetapacStatus;

// Validated score sample.
typedef struct MetapacScoreSample MetapacScoreSample;

// Ordered collection of per-task calibration samples.
typedef struct MetapacTaskSet MetapacTaskSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none. Valid
// until the next failing call on the same thread.
const char *metapac_last_error(void);

// Binomial CDF `P(X <= k)` for `X ~ Binomial(m, p)`.
//
// # Safety
// `out` must be valid for a write of one `double`.
enum MetapacStatus metapac_binom_cdf(uint64_t k, uint64_t m, double p, double *out);

// One-sided Clopper-Pearson upper bound for `k` failures in `m` trials.
//
// # Safety
// `out` must be valid for a write of one `double`.
enum MetapacStatus metapac_cp_upper_bound(uint64_t k, uint64_t m, double delta, double *out);

// Copies `len` scores into a new sample.
//
// # Safety
// `scores` must point to `len` readable doubles; `out` must be writable.
enum MetapacStatus metapac_sample_new(const double *scores,
                                      size_t len,
                                      struct MetapacScoreSample **out);

// # Safety
// `sample` must come from [`metapac_sample_new`] and not be freed twice.
void metapac_sample_free(struct MetapacScoreSample *sample);

// # Safety
// `sample` must be null or a live sample.
size_t metapac_sample_len(const struct MetapacScoreSample *sample);

// PS-Binom threshold of `sample` at `(eps, delta)`.
//
// # Safety
// `sample` must be a live sample; `out` must be writable.
enum MetapacStatus metapac_ps_binom(const struct MetapacScoreSample *sample,
                                    double eps,
                                    double delta,
                                    double *out);

// # Safety
// `out` must be writable.
enum MetapacStatus metapac_task_set_new(struct MetapacTaskSet **out);

// # Safety
// `set` must come from [`metapac_task_set_new`] and not be freed twice.
void metapac_task_set_free(struct MetapacTaskSet *set);

// # Safety
// `set` must be null or a live task set.
size_t metapac_task_set_len(const struct MetapacTaskSet *set);

// Appends one task's calibration scores.
//
// # Safety
// `set` must be a live task set; `scores` must point to `len` doubles.
enum MetapacStatus metapac_task_set_push(struct MetapacTaskSet *set,
                                         const double *scores,
                                         size_t len);

// Meta-PS threshold over every task in `set`. When `per_task` is non-null it
// receives the per-task thresholds, in push order, and must hold
// `per_task_len >= metapac_task_set_len(set)` entries.
//
// # Safety
// `set` must be a live task set; `out` must be writable; `per_task`, when
// non-null, must be writable for `per_task_len` doubles.
enum MetapacStatus metapac_meta_ps(const struct MetapacTaskSet *set,
                                   double eps,
                                   double alpha,
                                   double delta,
                                   double *out,
                                   double *per_task,
                                   size_t per_task_len);

// PS-Binom over the pooled scores of every task in `set`.
//
// # Safety
// `set` must be a live task set; `out` must be writable.
enum MetapacStatus metapac_pooled_ps(const struct MetapacTaskSet *set,
                                     double eps,
                                     double delta,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METAPAC_H */
