#ifndef GRAPHWAVE_H
#define GRAPHWAVE_H

/* This file is generated by cbindgen from graphwave-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of every fallible call.
typedef enum GwStatus {
  // Success.
  GW_STATUS_OK = 0,
  // Invalid input: bad sizes, bad arguments, malformed data.
  GW_STATUS_INVALID_INPUT = 2,
  // A mathematical precondition failed (degenerate geometry, frame
  // violation, non-convergence).
  GW_STATUS_MATH_FAILURE = 3,
  // A required pointer argument was null.
  GW_STATUS_NULL_POINTER = 4,
  // A panic was caught at the boundary; state may be stale.
  GW_STATUS_INTERNAL = 5,
} GwStatus;

// Wavelet kernel family selector.
typedef enum GwKernelFamily {
  GW_KERNEL_FAMILY_MEXICAN_HAT = 0,
  GW_KERNEL_FAMILY_MEYER = 1,
} GwKernelFamily;

// Opaque handle to a spectral basis.
typedef struct GwBasis GwBasis;

// Opaque handle to a wavelet frame.
typedef struct GwFrame GwFrame;

// Opaque handle to a k-NN local graph.
typedef struct GwGraph GwGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *gw_version(void);

// Copy the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len` bytes). Returns the full message length in bytes.
//
// # Safety
// `buf` must point to at least `len` writable bytes, or be null (in which
// case only the length is returned).
size_t gw_last_error_message(char *buf, size_t len);

// Build a symmetrized k-NN graph with Gaussian edge weights from `n_points`
// xyz triples. `sigma <= 0` selects the mean k-NN distance heuristic.
//
// # Safety
// `xyz` must point to `3 * n_points` doubles; `out` must be a valid pointer.
enum GwStatus gw_graph_build_knn(const double *xyz,
                                 size_t n_points,
                                 size_t k,
                                 double sigma,
                                 struct GwGraph **out);

// Release a graph handle. Null is ignored.
//
// # Safety
// `graph` must come from [`gw_graph_build_knn`] and not be freed twice.
void gw_graph_free(struct GwGraph *graph);

// Vertex count of a graph; 0 when the handle is null.
//
// # Safety
// `graph` must be a live handle or null.
size_t gw_graph_vertex_count(const struct GwGraph *graph);

// Copy the normalized Laplacian into `out` (row-major `n * n`).
//
// # Safety
// `out` must point to `n * n` writable doubles.
enum GwStatus gw_graph_laplacian(const struct GwGraph *graph, double *out);

// Eigendecompose a graph's normalized Laplacian.
//
// # Safety
// `graph` must be a live handle; `out` must be a valid pointer.
enum GwStatus gw_graph_eigendecompose(const struct GwGraph *graph,
                                      double tol,
                                      struct GwBasis **out);

// Release a basis handle. Null is ignored.
//
// # Safety
// `basis` must come from this library and not be freed twice.
void gw_basis_free(struct GwBasis *basis);

// Dimension of a basis; 0 when the handle is null.
//
// # Safety
// `basis` must be a live handle or null.
size_t gw_basis_size(const struct GwBasis *basis);

// Copy the ascending eigenvalues into `out` (`n` doubles).
//
// # Safety
// `out` must point to `n` writable doubles.
enum GwStatus gw_basis_eigenvalues(const struct GwBasis *basis, double *out);

// Copy the eigenvector matrix into `out` (row-major `n * n`, columns are
// eigenvectors).
//
// # Safety
// `out` must point to `n * n` writable doubles.
enum GwStatus gw_basis_eigenvectors(const struct GwBasis *basis, double *out);

// Closed-form orthogonal completion of a unit vector `q` (length `n`),
// written row-major into `out_u` (`n * n`). The first column equals `q`.
// Fails when `q` is not normalized or lies within 1e-6 of +/- e1.
//
// # Safety
// `q` must point to `n` doubles and `out_u` to `n * n` writable doubles.
enum GwStatus gw_orthogonal_from_vector(const double *q, size_t n, double *out_u);

// Build a wavelet frame over a basis: one scaling band plus `j_scales`
// wavelet bands at the default log-spaced scale placement.
//
// # Safety
// `basis` must be a live handle; `out` must be a valid pointer.
enum GwStatus gw_frame_build(const struct GwBasis *basis,
                             enum GwKernelFamily family,
                             size_t j_scales,
                             struct GwFrame **out);

// Release a frame handle. Null is ignored.
//
// # Safety
// `frame` must come from [`gw_frame_build`] and not be freed twice.
void gw_frame_free(struct GwFrame *frame);

// Number of bands (1 + J); 0 when the handle is null.
//
// # Safety
// `frame` must be a live handle or null.
size_t gw_frame_band_count(const struct GwFrame *frame);

// Minimum frame value `p(lambda_i)` over the basis eigenvalues; stability
// of the inverse transform requires this to stay well above zero.
//
// # Safety
// `frame` must be a live handle or null (returns 0 for null).
double gw_frame_min_p(const struct GwFrame *frame);

// Forward transform of an `n x channels` signal: writes `bands * n *
// channels` doubles (band-major, then row-major per band).
//
// # Safety
// `signal` must hold `n * channels` doubles; `out` must hold
// `(1 + J) * n * channels` writable doubles.
enum GwStatus gw_wavelet_forward(const struct GwFrame *frame,
                                 const double *signal,
                                 size_t channels,
                                 double *out);

// Least-squares inverse transform of stacked coefficients (layout as in
// [`gw_wavelet_forward`]): writes the reconstructed `n * channels` signal.
//
// # Safety
// `coeffs` must hold `(1 + J) * n * channels` doubles; `out` must hold
// `n * channels` writable doubles.
enum GwStatus gw_wavelet_inverse(const struct GwFrame *frame,
                                 const double *coeffs,
                                 size_t channels,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAPHWAVE_H */
