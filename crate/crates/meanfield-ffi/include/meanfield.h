#ifndef MEANFIELD_H
#define MEANFIELD_H

/* Generated by cbindgen from the meanfield-ffi crate; do not edit by hand. */

#include <stdbool.h>
#include <stdint.h>

// Weight matrices drawn i.i.d. Gaussian.
#define MF_SCHEME_GAUSSIAN 0

// Weight matrices drawn Haar-orthogonal (scaled).
#define MF_SCHEME_ORTHOGONAL 1

// Opaque activation handle.
typedef struct MfActivation MfActivation;

// Status code returned by every API function.
typedef int32_t MfStatus;

// Flat mirror of the library's bound report.
typedef struct MfBoundReport {
  double sigma_b2;
  double y;
  double q_star;
  double sigma_w2;
  double ratio;
  double ratio_lower;
  double ratio_upper;
  double measured_gap;
  double corr_bound;
  double measured_moment_dev;
  double moment_bound;
  bool corr_bound_vacuous;
  bool all_satisfied;
} MfBoundReport;

// Flat mirror of the library's Jacobian spectral moments.
typedef struct MfSpectrumMoments {
  double mu1;
  double mu2;
  double chi1;
  double m1;
  double m2;
  double var_jjt;
  double s1;
  uint32_t depth;
} MfSpectrumMoments;

// Success.
#define MF_OK 0

// A parameter was out of domain (non-finite, wrong sign, unknown name, ...).
#define MF_ERR_INVALID_ARGUMENT 1

// The variance map has no fixed point for this configuration.
#define MF_ERR_NO_FIXED_POINT 2

// An iteration left the finite floating-point range.
#define MF_ERR_DIVERGED 3

// A required pointer argument was null.
#define MF_ERR_NULL_POINTER 4

// A string argument was not valid UTF-8.
#define MF_ERR_UTF8 5

// An internal panic was caught at the boundary.
#define MF_ERR_PANIC 6

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parse an activation spec such as `"shtanh:2:1"` into a new handle.
// On success `*out` owns the handle; release it with `mf_activation_free`.
//
// # Safety
// `spec` must be a valid NUL-terminated string; `out` must be valid to
// write one pointer.
MfStatus mf_activation_parse(const char *spec, struct MfActivation **out);

// Release a handle created by `mf_activation_parse`. Null is a no-op.
//
// # Safety
// `act` must be null or a pointer previously returned by
// `mf_activation_parse` that has not already been freed.
void mf_activation_free(struct MfActivation *act);

// Evaluate phi(z).
//
// # Safety
// `act` must be a live handle; `out` must be valid to write one double.
MfStatus mf_phi(const struct MfActivation *act, double z, double *out);

// Evaluate phi'(z) (one-sided limits averaged at kinks).
//
// # Safety
// `act` must be a live handle; `out` must be valid to write one double.
MfStatus mf_dphi(const struct MfActivation *act, double z, double *out);

// One step of the variance map V(q).
//
// # Safety
// `act` must be a live handle; `out` must be valid to write one double.
MfStatus mf_variance_map(const struct MfActivation *act,
                         double sigma_w2,
                         double sigma_b2,
                         double q,
                         double *out);

// Critical initialization: solve for the variance fixed point q* and the
// weight variance that puts the network on the edge of chaos.
//
// # Safety
// `act` must be a live handle; `q_star` and `sigma_w2` must each be valid
// to write one double.
MfStatus mf_eoc_solve(const struct MfActivation *act,
                      double sigma_b2,
                      double *q_star,
                      double *sigma_w2);

// Slope of the correlation map at rho = 1.
//
// # Safety
// `act` must be a live handle; `out` must be valid to write one double.
MfStatus mf_chi1(const struct MfActivation *act,
                 double sigma_w2,
                 double sigma_b2,
                 double q,
                 double *out);

// One step of the correlation map R(rho) at length fixed point `q_star`.
//
// # Safety
// `act` must be a live handle; `out` must be valid to write one double.
MfStatus mf_corr_map(const struct MfActivation *act,
                     double sigma_w2,
                     double sigma_b2,
                     double q_star,
                     double rho,
                     double *out);

// Derivative R'(rho) for |rho| < 1.
//
// # Safety
// `act` must be a live handle; `out` must be valid to write one double.
MfStatus mf_corr_derivative(const struct MfActivation *act,
                            double sigma_w2,
                            double sigma_b2,
                            double q_star,
                            double rho,
                            double *out);

// Principal branch of the Lambert W function.
//
// # Safety
// `out` must be valid to write one double.
MfStatus mf_lambert_w0(double x, double *out);

// Lower bound Lambda(y) on the critical ratio a / sqrt(q*).
//
// # Safety
// `out` must be valid to write one double.
MfStatus mf_lambda_lower(double y, double *out);

// Two-sided bound on the critical ratio for y = sigma_b^2 / a^2.
//
// # Safety
// `lower` and `upper` must each be valid to write one double.
MfStatus mf_ratio_bounds(double y, double *lower, double *upper);

// Full bound verification at one (activation, sigma_b2) point.
//
// # Safety
// `act` must be a live handle; `out` must be valid to write one
// `MfBoundReport`.
MfStatus mf_verify_theorem(const struct MfActivation *act,
                           double sigma_b2,
                           struct MfBoundReport *out);

// Theoretical Jacobian spectral moments for a depth-`depth` network at the
// length fixed point. `scheme` is `MF_SCHEME_GAUSSIAN` or
// `MF_SCHEME_ORTHOGONAL`.
//
// # Safety
// `act` must be a live handle; `out` must be valid to write one
// `MfSpectrumMoments`.
MfStatus mf_jacobian_moments(const struct MfActivation *act,
                             double sigma_w2,
                             double sigma_b2,
                             double q_star,
                             uint32_t depth,
                             int32_t scheme,
                             struct MfSpectrumMoments *out);

// Static description of a status code. Never returns null.
const char *mf_strerror(MfStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEANFIELD_H */
