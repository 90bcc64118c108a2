#ifndef TLU_H
#define TLU_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TluStatus {
  TLU_STATUS_OK = 0,
  TLU_STATUS_NULL_POINTER = 1,
  TLU_STATUS_INVALID_INPUT = 2,
  TLU_STATUS_DOMAIN = 3,
  TLU_STATUS_SHAPE_MISMATCH = 4,
  TLU_STATUS_IO = 5,
  TLU_STATUS_PARSE = 6,
  TLU_STATUS_DIVERGENCE = 7,
  TLU_STATUS_PANIC = 8,
} TluStatus;

/**
 * Per-frame t label model built from annotations.
 */
typedef struct TluLabelDistribution TluLabelDistribution;

/**
 * Bayes-by-Backprop network.
 */
typedef struct TluNetwork TluNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *tlu_last_error(void);

/**
 * KL divergence from the t label model `(nu, m, s)` to `N(mu_hat, sigma_hat²)`.
 *
 * # Safety
 * `result` must be a valid pointer to a double.
 */
enum TluStatus tlu_kl_t_gauss(double nu,
                              double m,
                              double s,
                              double mu_hat,
                              double sigma_hat,
                              double *result);

/**
 * KL(N(mu, sigma²) ‖ N(mu_hat, sigma_hat²)).
 *
 * # Safety
 * `result` must be a valid pointer to a double.
 */
enum TluStatus tlu_kl_gauss_gauss(double mu,
                                  double sigma,
                                  double mu_hat,
                                  double sigma_hat,
                                  double *result);

/**
 * Differential entropy of a location-scale t.
 *
 * # Safety
 * `result` must be a valid pointer to a double.
 */
enum TluStatus tlu_student_t_entropy(double nu, double scale, double *result);

/**
 * Concordance correlation coefficient of two traces of length `len`.
 *
 * # Safety
 * `m` and `m_hat` must point to `len` doubles; `result` to one.
 */
enum TluStatus tlu_ccc(const double *m, const double *m_hat, size_t len, double *result);

/**
 * One-tailed Welch test that `mean(a) > mean(b)`.
 *
 * # Safety
 * `a` and `b` must point to `len_a` and `len_b` doubles.
 */
enum TluStatus tlu_one_tailed_t_test(const double *a,
                                     size_t len_a,
                                     const double *b,
                                     size_t len_b,
                                     double *p_value);

/**
 * Builds a label model from a row-major `frames × annotators` grid.
 *
 * # Safety
 * `values` must point to `frames * annotators` doubles; `handle` to a
 * writable pointer.
 */
enum TluStatus tlu_label_distribution_from_annotations(const double *values,
                                                       size_t frames,
                                                       size_t annotators,
                                                       struct TluLabelDistribution **handle);

/**
 * Number of frames in a label model, 0 for NULL.
 *
 * # Safety
 * `handle` must be NULL or a live handle.
 */
size_t tlu_label_distribution_len(const struct TluLabelDistribution *handle);

/**
 * Copies ν and the `m` and `s` traces; either trace pointer may be NULL.
 *
 * # Safety
 * `m` and `s`, when non-NULL, must have room for `len` doubles, where `len`
 * equals [`tlu_label_distribution_len`].
 */
enum TluStatus tlu_label_distribution_get(const struct TluLabelDistribution *handle,
                                          double *nu,
                                          double *m,
                                          double *s,
                                          size_t len);

/**
 * # Safety
 * `handle` must be NULL or a handle not yet freed.
 */
void tlu_label_distribution_free(struct TluLabelDistribution *handle);

/**
 * Fresh network with layer widths `dims[0..n_dims]` (input first, output 1).
 *
 * # Safety
 * `dims` must point to `n_dims` values; `handle` to a writable pointer.
 */
enum TluStatus tlu_network_new(const size_t *dims,
                               size_t n_dims,
                               double prior_sigma,
                               uint64_t seed,
                               struct TluNetwork **handle);

/**
 * Loads the network stored in a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `handle` a writable pointer.
 */
enum TluStatus tlu_network_load(const char *path, struct TluNetwork **handle);

/**
 * Input width of a network, 0 for NULL.
 *
 * # Safety
 * `handle` must be NULL or a live handle.
 */
size_t tlu_network_input_dim(const struct TluNetwork *handle);

/**
 * Test-time prediction for a row-major `frames × dim` feature grid: the
 * mean-weight output into `mu_hat`, the spread of `n_passes` sampled passes
 * into `sigma_hat`.
 *
 * # Safety
 * `features` must point to `frames * dim` doubles; `mu_hat` and `sigma_hat`
 * to `frames` doubles each.
 */
enum TluStatus tlu_network_predict(const struct TluNetwork *handle,
                                   const double *features,
                                   size_t frames,
                                   size_t dim,
                                   size_t n_passes,
                                   uint64_t seed,
                                   double *mu_hat,
                                   double *sigma_hat);

/**
 * # Safety
 * `handle` must be NULL or a handle not yet freed.
 */
void tlu_network_free(struct TluNetwork *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TLU_H */
