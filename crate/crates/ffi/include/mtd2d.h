#ifndef MTD2D_H
#define MTD2D_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum Mtd2dStatus {
  MTD2D_STATUS_OK = 0,
  MTD2D_STATUS_NULL_POINTER = 1,
  MTD2D_STATUS_INVALID_ARGUMENT = 2,
  MTD2D_STATUS_NUMERICAL = 3,
  MTD2D_STATUS_IO = 4,
  MTD2D_STATUS_PANIC = 5,
} Mtd2dStatus;

// How separation between occurrences is handled during recovery.
typedef enum Mtd2dCase {
  // Two-stage fit with surrogate separation functions.
  MTD2D_CASE_APPROXIMATED = 1,
  // Cross terms between neighbours are dropped.
  MTD2D_CASE_IGNORED = 2,
} Mtd2dCase;

// A steerable basis with its precomputed tables.
typedef struct Mtd2dBasis Mtd2dBasis;

// Autocorrelations of one measurement.
typedef struct Mtd2dMoments Mtd2dMoments;

// Outcome of a multi-start recovery.
typedef struct Mtd2dRecovery Mtd2dRecovery;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *mtd2d_version(void);

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *mtd2d_last_error(void);

// Basis of the `count` lowest-bandlimit functions on a disk of `radius` pixels.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum Mtd2dStatus mtd2d_basis_new(double radius, size_t count, struct Mtd2dBasis **out);

// # Safety
// `basis` must come from `mtd2d_basis_new` and not be freed twice. Null is ignored.
void mtd2d_basis_free(struct Mtd2dBasis *basis);

// Number of complex coefficients, or 0 for a null handle.
//
// # Safety
// `basis` must be null or a live handle.
size_t mtd2d_basis_len(const struct Mtd2dBasis *basis);

// Side `L` of the shift window the moments are taken over, or 0 for null.
//
// # Safety
// `basis` must be null or a live handle.
size_t mtd2d_basis_window(const struct Mtd2dBasis *basis);

// Random real-image coefficients with standard normal free parameters.
//
// # Safety
// `out` must hold `2 * mtd2d_basis_len(basis)` doubles.
enum Mtd2dStatus mtd2d_basis_random_coefficients(const struct Mtd2dBasis *basis,
                                                 uint64_t seed,
                                                 double *out,
                                                 size_t len);

// Simulates an `side x side` measurement with arbitrarily spaced copies at
// density `gamma`, noise set by `snr` (`INFINITY` for none).
//
// # Safety
// `coeffs` must hold `coeffs_len` doubles, `grid` `side * side` doubles and
// `sigma` one double (or be null).
enum Mtd2dStatus mtd2d_simulate(const struct Mtd2dBasis *basis,
                                const double *coeffs,
                                size_t coeffs_len,
                                size_t side,
                                double gamma,
                                double snr,
                                uint64_t seed,
                                double *grid,
                                double *sigma);

// Autocorrelations of a row-major `side x side` grid for image `radius`.
//
// # Safety
// `grid` must hold `side * side` doubles; `out` must be writable.
enum Mtd2dStatus mtd2d_moments_from_grid(const double *grid,
                                         size_t side,
                                         double radius,
                                         struct Mtd2dMoments **out);

// # Safety
// `moments` must come from `mtd2d_moments_from_grid`. Null is ignored.
void mtd2d_moments_free(struct Mtd2dMoments *moments);

// Window side `L`; `a2` has `L^2` entries and `a3` has `L^4`. 0 for null.
//
// # Safety
// `moments` must be null or a live handle.
size_t mtd2d_moments_window(const struct Mtd2dMoments *moments);

// First moment, NaN for null.
//
// # Safety
// `moments` must be null or a live handle.
double mtd2d_moments_a1(const struct Mtd2dMoments *moments);

// Copies the second moment, `a2[ly * L + lx]`.
//
// # Safety
// `out` must hold `len` doubles.
enum Mtd2dStatus mtd2d_moments_a2(const struct Mtd2dMoments *moments, double *out, size_t len);

// Copies the third moment, `a3[(l1y * L + l1x) * L^2 + l2y * L + l2x]`.
//
// # Safety
// `out` must hold `len` doubles.
enum Mtd2dStatus mtd2d_moments_a3(const struct Mtd2dMoments *moments, double *out, size_t len);

// Recovers the image coefficients and density from `moments`, keeping the
// best of `starts` random starts. `sigma` is the noise standard deviation;
// `case` is a `Mtd2dCase` value.
//
// # Safety
// Handles must be live; `out` must be writable.
enum Mtd2dStatus mtd2d_recover(const struct Mtd2dBasis *basis,
                               const struct Mtd2dMoments *moments,
                               double sigma,
                               int32_t case_,
                               size_t starts,
                               uint64_t seed,
                               double gamma_init,
                               struct Mtd2dRecovery **out);

// # Safety
// `recovery` must come from `mtd2d_recover`. Null is ignored.
void mtd2d_recovery_free(struct Mtd2dRecovery *recovery);

// Estimated density, NaN for null.
//
// # Safety
// `recovery` must be null or a live handle.
double mtd2d_recovery_gamma(const struct Mtd2dRecovery *recovery);

// Final objective value, NaN for null.
//
// # Safety
// `recovery` must be null or a live handle.
double mtd2d_recovery_objective(const struct Mtd2dRecovery *recovery);

// 1 when the kept start reported a failure (stage-one divergence), else 0.
//
// # Safety
// `recovery` must be null or a live handle.
int32_t mtd2d_recovery_failed(const struct Mtd2dRecovery *recovery);

// Copies the estimated coefficients.
//
// # Safety
// `out` must hold `len` doubles.
enum Mtd2dStatus mtd2d_recovery_coefficients(const struct Mtd2dRecovery *recovery,
                                             double *out,
                                             size_t len);

// Rotation-aligned relative error `min_phi |truth - R_phi est| / |truth|`.
//
// # Safety
// `truth` and `estimate` must hold `len` doubles; `out` must be writable.
enum Mtd2dStatus mtd2d_relative_error(const struct Mtd2dBasis *basis,
                                      const double *truth,
                                      const double *estimate,
                                      size_t len,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTD2D_H */
