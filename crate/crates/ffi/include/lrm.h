#ifndef LRM_H
#define LRM_H

/* Generated by cbindgen. Do not edit. */

#include <stdint.h>
#include <stddef.h>

// Result of an FFI call.
typedef enum LrmStatus {
  LRM_STATUS_OK = 0,
  LRM_STATUS_NULL_POINTER = 1,
  LRM_STATUS_INVALID_INPUT = 2,
  LRM_STATUS_DIMENSION = 3,
  LRM_STATUS_IO = 4,
  LRM_STATUS_PARSE = 5,
  // The solver missed its target; the best iterate is still returned.
  LRM_STATUS_NON_CONVERGENCE = 6,
  LRM_STATUS_NOT_POSITIVE_DEFINITE = 7,
  LRM_STATUS_PANIC = 8,
} LrmStatus;

typedef enum LrmWorkloadKind {
  LRM_WORKLOAD_KIND_DISCRETE = 0,
  LRM_WORKLOAD_KIND_RANGE = 1,
  LRM_WORKLOAD_KIND_MARGINAL = 2,
  LRM_WORKLOAD_KIND_RELATED = 3,
} LrmWorkloadKind;

typedef enum LrmMode {
  // L1 sensitivity, for ε-DP.
  LRM_MODE_L1 = 0,
  // L2 sensitivity, for (ε,δ)-DP.
  LRM_MODE_L2 = 1,
} LrmMode;

// Opaque decomposition `W ≈ BL`.
typedef struct LrmDecomposition LrmDecomposition;

// Opaque workload matrix.
typedef struct LrmWorkload LrmWorkload;

// Message for the last failed call on this thread, or NULL if none. The
// pointer stays valid until the next failing call on the same thread.
const char *lrm_last_error_message(void);

// Generates a workload. `s` is used by `Related` only; pass 0 otherwise.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum LrmStatus lrm_workload_generate(enum LrmWorkloadKind kind,
                                     size_t m,
                                     size_t n,
                                     size_t s,
                                     uint64_t seed,
                                     struct LrmWorkload **out);

// Builds a workload from `m * n` values in row-major order.
//
// # Safety
// `data` must point to `m * n` readable doubles and `out` to writable
// storage for a handle.
enum LrmStatus lrm_workload_from_rows(const double *data,
                                      size_t m,
                                      size_t n,
                                      struct LrmWorkload **out);

// Reads a workload CSV file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable storage for a
// handle.
enum LrmStatus lrm_workload_read_csv(const char *path, struct LrmWorkload **out);

// # Safety
// `w` must be a live workload handle and `path` a NUL-terminated string.
enum LrmStatus lrm_workload_write_csv(const struct LrmWorkload *w, const char *path);

// # Safety
// `w` must be a live workload handle; `m` and `n` must be writable.
enum LrmStatus lrm_workload_shape(const struct LrmWorkload *w, size_t *m, size_t *n);

// Releases a workload. Passing NULL is a no-op.
//
// # Safety
// `w` must be NULL or a handle not yet freed.
void lrm_workload_free(struct LrmWorkload *w);

// Decomposes `w` with the default solver settings. An `r` of 0 picks the
// default for the workload's rank. On `NonConvergence` the best iterate is
// still stored in `out` and must be freed.
//
// # Safety
// `w` must be a live workload handle and `out` writable storage for a
// handle.
enum LrmStatus lrm_decompose(const struct LrmWorkload *w,
                             double gamma,
                             size_t r,
                             enum LrmMode mode,
                             uint64_t seed,
                             struct LrmDecomposition **out);

// Reads a decomposition JSON document.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable storage for a
// handle.
enum LrmStatus lrm_decomposition_read(const char *path, struct LrmDecomposition **out);

// # Safety
// `d` must be a live decomposition handle and `path` a NUL-terminated
// string.
enum LrmStatus lrm_decomposition_write(const struct LrmDecomposition *d, const char *path);

// Writes `m`, `r` and `n`, the shapes being `B: m × r` and `L: r × n`.
//
// # Safety
// `d` must be a live decomposition handle; the outputs must be writable.
enum LrmStatus lrm_decomposition_shape(const struct LrmDecomposition *d,
                                       size_t *m,
                                       size_t *r,
                                       size_t *n);

// `‖W − BL‖_F`.
//
// # Safety
// `d` and `w` must be live handles and `out` writable.
enum LrmStatus lrm_decomposition_residual(const struct LrmDecomposition *d,
                                          const struct LrmWorkload *w,
                                          double *out);

// Releases a decomposition. Passing NULL is a no-op.
//
// # Safety
// `d` must be NULL or a handle not yet freed.
void lrm_decomposition_free(struct LrmDecomposition *d);

// Expected total squared error of the low-rank mechanism.
//
// # Safety
// `d` must be a live handle and `out` writable.
enum LrmStatus lrm_expected_error_lrm(const struct LrmDecomposition *d,
                                      double epsilon,
                                      double delta,
                                      double *out);

// Expected total squared error of noise on data.
//
// # Safety
// `w` must be a live handle and `out` writable.
enum LrmStatus lrm_expected_error_nod(const struct LrmWorkload *w,
                                      double epsilon,
                                      double delta,
                                      double *out);

// Expected total squared error of noise on result.
//
// # Safety
// `w` must be a live handle and `out` writable.
enum LrmStatus lrm_expected_error_nor(const struct LrmWorkload *w,
                                      double epsilon,
                                      double delta,
                                      double *out);

// Answers the workload of `d` privately on `n` unit counts, writing `m`
// noisy answers to `out`.
//
// # Safety
// `d` must be a live handle, `counts_ptr` must point to `n` readable doubles
// and `out` to `m` writable doubles.
enum LrmStatus lrm_run_lrm(const struct LrmDecomposition *d,
                           const double *counts_ptr,
                           size_t n,
                           double epsilon,
                           double delta,
                           uint64_t seed,
                           double *out,
                           size_t m);

// Noise on data. Same buffer contract as [`lrm_run_lrm`].
//
// # Safety
// See [`lrm_run_lrm`].
enum LrmStatus lrm_run_nod(const struct LrmWorkload *w,
                           const double *counts_ptr,
                           size_t n,
                           double epsilon,
                           double delta,
                           uint64_t seed,
                           double *out,
                           size_t m);

// Noise on result. Same buffer contract as [`lrm_run_lrm`].
//
// # Safety
// See [`lrm_run_lrm`].
enum LrmStatus lrm_run_nor(const struct LrmWorkload *w,
                           const double *counts_ptr,
                           size_t n,
                           double epsilon,
                           double delta,
                           uint64_t seed,
                           double *out,
                           size_t m);

#endif  /* LRM_H */
