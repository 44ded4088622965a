//! C ABI over the meanfield library.
//!
//! Conventions: every function returns an `MfStatus` code and writes results
//! through out-pointers, which are touched only on `MF_OK`. Activations are
//! opaque handles created by [`mf_activation_parse`] and released with
//! [`mf_activation_free`]. All functions are panic-safe: a caught panic is
//! reported as `MF_ERR_PANIC` instead of unwinding across the boundary.
//!
//! The matching C header lives in `include/meanfield.h`; a test regenerates
//! it with cbindgen and fails if it is stale.

use meanfield::activation::Activation;
use meanfield::error::MfError;
use meanfield::maps::{self, NetworkHyperparams};
use meanfield::spectrum::{self, InitScheme};
use meanfield::bounds;
use meanfield::Result as MfResult;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status code returned by every API function.
pub type MfStatus = i32;

/// Success.
pub const MF_OK: MfStatus = 0;
/// A parameter was out of domain (non-finite, wrong sign, unknown name, ...).
pub const MF_ERR_INVALID_ARGUMENT: MfStatus = 1;
/// The variance map has no fixed point for this configuration.
pub const MF_ERR_NO_FIXED_POINT: MfStatus = 2;
/// An iteration left the finite floating-point range.
pub const MF_ERR_DIVERGED: MfStatus = 3;
/// A required pointer argument was null.
pub const MF_ERR_NULL_POINTER: MfStatus = 4;
/// A string argument was not valid UTF-8.
pub const MF_ERR_UTF8: MfStatus = 5;
/// An internal panic was caught at the boundary.
pub const MF_ERR_PANIC: MfStatus = 6;

/// Weight matrices drawn i.i.d. Gaussian.
pub const MF_SCHEME_GAUSSIAN: i32 = 0;
/// Weight matrices drawn Haar-orthogonal (scaled).
pub const MF_SCHEME_ORTHOGONAL: i32 = 1;

/// Opaque activation handle.
pub struct MfActivation {
    inner: Activation,
}

/// Flat mirror of the library's bound report.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MfBoundReport {
    pub sigma_b2: f64,
    pub y: f64,
    pub q_star: f64,
    pub sigma_w2: f64,
    pub ratio: f64,
    pub ratio_lower: f64,
    pub ratio_upper: f64,
    pub measured_gap: f64,
    pub corr_bound: f64,
    pub measured_moment_dev: f64,
    pub moment_bound: f64,
    pub corr_bound_vacuous: bool,
    pub all_satisfied: bool,
}

/// Flat mirror of the library's Jacobian spectral moments.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MfSpectrumMoments {
    pub mu1: f64,
    pub mu2: f64,
    pub chi1: f64,
    pub m1: f64,
    pub m2: f64,
    pub var_jjt: f64,
    pub s1: f64,
    pub depth: u32,
}

fn status_of(e: &MfError) -> MfStatus {
    match e {
        MfError::InvalidParameter(_) => MF_ERR_INVALID_ARGUMENT,
        MfError::NoFixedPoint(_) => MF_ERR_NO_FIXED_POINT,
        MfError::Diverged(_) => MF_ERR_DIVERGED,
        MfError::Numerical(_) => MF_ERR_INVALID_ARGUMENT,
    }
}

/// Run `f` behind a panic guard, mapping library errors to status codes.
fn guarded<F: FnOnce() -> MfResult<()>>(f: F) -> MfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MF_OK,
        Ok(Err(e)) => status_of(&e),
        Err(_) => MF_ERR_PANIC,
    }
}

unsafe fn act_ref<'a>(act: *const MfActivation) -> Option<&'a Activation> {
    act.as_ref().map(|h| &h.inner)
}

/// Parse an activation spec such as `"shtanh:2:1"` into a new handle.
/// On success `*out` owns the handle; release it with `mf_activation_free`.
///
/// # Safety
/// `spec` must be a valid NUL-terminated string; `out` must be valid to
/// write one pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_activation_parse(
    spec: *const c_char,
    out: *mut *mut MfActivation,
) -> MfStatus {
    if spec.is_null() || out.is_null() {
        return MF_ERR_NULL_POINTER;
    }
    let Ok(spec) = CStr::from_ptr(spec).to_str() else {
        return MF_ERR_UTF8;
    };
    guarded(|| {
        let act = Activation::parse(spec)?;
        *out = Box::into_raw(Box::new(MfActivation { inner: act }));
        Ok(())
    })
}

/// Release a handle created by `mf_activation_parse`. Null is a no-op.
///
/// # Safety
/// `act` must be null or a pointer previously returned by
/// `mf_activation_parse` that has not already been freed.
#[no_mangle]
pub unsafe extern "C" fn mf_activation_free(act: *mut MfActivation) {
    if !act.is_null() {
        drop(Box::from_raw(act));
    }
}

/// Evaluate phi(z).
///
/// # Safety
/// `act` must be a live handle; `out` must be valid to write one double.
#[no_mangle]
pub unsafe extern "C" fn mf_phi(
    act: *const MfActivation,
    z: f64,
    out: *mut f64,
) -> MfStatus {
    let (Some(a), false) = (act_ref(act), out.is_null()) else {
        return MF_ERR_NULL_POINTER;
    };
    guarded(|| {
        *out = a.phi(z);
        Ok(())
    })
}

/// Evaluate phi'(z) (one-sided limits averaged at kinks).
///
/// # Safety
/// `act` must be a live handle; `out` must be valid to write one double.
#[no_mangle]
pub unsafe extern "C" fn mf_dphi(
    act: *const MfActivation,
    z: f64,
    out: *mut f64,
) -> MfStatus {
    let (Some(a), false) = (act_ref(act), out.is_null()) else {
        return MF_ERR_NULL_POINTER;
    };
    guarded(|| {
        *out = a.dphi(z);
        Ok(())
    })
}

/// One step of the variance map V(q).
///
/// # Safety
/// `act` must be a live handle; `out` must be valid to write one double.
#[no_mangle]
pub unsafe extern "C" fn mf_variance_map(
    act: *const MfActivation,
    sigma_w2: f64,
    sigma_b2: f64,
    q: f64,
    out: *mut f64,
) -> MfStatus {
    let (Some(a), false) = (act_ref(act), out.is_null()) else {
        return MF_ERR_NULL_POINTER;
    };
    guarded(|| {
        let hp = NetworkHyperparams::new(sigma_w2, sigma_b2)?;
        *out = maps::variance_map(a, &hp, q)?;
        Ok(())
    })
}

/// Critical initialization: solve for the variance fixed point q* and the
/// weight variance that puts the network on the edge of chaos.
///
/// # Safety
/// `act` must be a live handle; `q_star` and `sigma_w2` must each be valid
/// to write one double.
#[no_mangle]
pub unsafe extern "C" fn mf_eoc_solve(
    act: *const MfActivation,
    sigma_b2: f64,
    q_star: *mut f64,
    sigma_w2: *mut f64,
) -> MfStatus {
    let (Some(a), false, false) = (act_ref(act), q_star.is_null(), sigma_w2.is_null()) else {
        return MF_ERR_NULL_POINTER;
    };
    guarded(|| {
        let p = maps::solve_q_star_eoc(a, sigma_b2)?;
        *q_star = p.q_star;
        *sigma_w2 = p.sigma_w2;
        Ok(())
    })
}

/// Slope of the correlation map at rho = 1.
///
/// # Safety
/// `act` must be a live handle; `out` must be valid to write one double.
#[no_mangle]
pub unsafe extern "C" fn mf_chi1(
    act: *const MfActivation,
    sigma_w2: f64,
    sigma_b2: f64,
    q: f64,
    out: *mut f64,
) -> MfStatus {
    let (Some(a), false) = (act_ref(act), out.is_null()) else {
        return MF_ERR_NULL_POINTER;
    };
    guarded(|| {
        let hp = NetworkHyperparams::new(sigma_w2, sigma_b2)?;
        *out = maps::chi1(a, &hp, q)?;
        Ok(())
    })
}

/// One step of the correlation map R(rho) at length fixed point `q_star`.
///
/// # Safety
/// `act` must be a live handle; `out` must be valid to write one double.
#[no_mangle]
pub unsafe extern "C" fn mf_corr_map(
    act: *const MfActivation,
    sigma_w2: f64,
    sigma_b2: f64,
    q_star: f64,
    rho: f64,
    out: *mut f64,
) -> MfStatus {
    let (Some(a), false) = (act_ref(act), out.is_null()) else {
        return MF_ERR_NULL_POINTER;
    };
    guarded(|| {
        let hp = NetworkHyperparams::new(sigma_w2, sigma_b2)?;
        *out = maps::corr_map(a, &hp, q_star, rho)?;
        Ok(())
    })
}

/// Derivative R'(rho) for |rho| < 1.
///
/// # Safety
/// `act` must be a live handle; `out` must be valid to write one double.
#[no_mangle]
pub unsafe extern "C" fn mf_corr_derivative(
    act: *const MfActivation,
    sigma_w2: f64,
    sigma_b2: f64,
    q_star: f64,
    rho: f64,
    out: *mut f64,
) -> MfStatus {
    let (Some(a), false) = (act_ref(act), out.is_null()) else {
        return MF_ERR_NULL_POINTER;
    };
    guarded(|| {
        let hp = NetworkHyperparams::new(sigma_w2, sigma_b2)?;
        *out = maps::corr_derivative(a, &hp, q_star, rho)?;
        Ok(())
    })
}

/// Principal branch of the Lambert W function.
///
/// # Safety
/// `out` must be valid to write one double.
#[no_mangle]
pub unsafe extern "C" fn mf_lambert_w0(x: f64, out: *mut f64) -> MfStatus {
    if out.is_null() {
        return MF_ERR_NULL_POINTER;
    }
    guarded(|| {
        *out = bounds::lambert_w0(x)?;
        Ok(())
    })
}

/// Lower bound Lambda(y) on the critical ratio a / sqrt(q*).
///
/// # Safety
/// `out` must be valid to write one double.
#[no_mangle]
pub unsafe extern "C" fn mf_lambda_lower(y: f64, out: *mut f64) -> MfStatus {
    if out.is_null() {
        return MF_ERR_NULL_POINTER;
    }
    guarded(|| {
        *out = bounds::lambda_lower(y)?;
        Ok(())
    })
}

/// Two-sided bound on the critical ratio for y = sigma_b^2 / a^2.
///
/// # Safety
/// `lower` and `upper` must each be valid to write one double.
#[no_mangle]
pub unsafe extern "C" fn mf_ratio_bounds(
    y: f64,
    lower: *mut f64,
    upper: *mut f64,
) -> MfStatus {
    if lower.is_null() || upper.is_null() {
        return MF_ERR_NULL_POINTER;
    }
    guarded(|| {
        let (lo, hi) = bounds::ratio_bounds(y)?;
        *lower = lo;
        *upper = hi;
        Ok(())
    })
}

/// Full bound verification at one (activation, sigma_b2) point.
///
/// # Safety
/// `act` must be a live handle; `out` must be valid to write one
/// `MfBoundReport`.
#[no_mangle]
pub unsafe extern "C" fn mf_verify_theorem(
    act: *const MfActivation,
    sigma_b2: f64,
    out: *mut MfBoundReport,
) -> MfStatus {
    let (Some(a), false) = (act_ref(act), out.is_null()) else {
        return MF_ERR_NULL_POINTER;
    };
    guarded(|| {
        let r = bounds::verify_theorem(a, sigma_b2)?;
        *out = MfBoundReport {
            sigma_b2: r.sigma_b2,
            y: r.y,
            q_star: r.q_star,
            sigma_w2: r.sigma_w2,
            ratio: r.ratio,
            ratio_lower: r.ratio_lower,
            ratio_upper: r.ratio_upper,
            measured_gap: r.measured_gap,
            corr_bound: r.corr_bound,
            measured_moment_dev: r.measured_moment_dev,
            moment_bound: r.moment_bound,
            corr_bound_vacuous: r.corr_bound_vacuous,
            all_satisfied: r.all_satisfied,
        };
        Ok(())
    })
}

/// Theoretical Jacobian spectral moments for a depth-`depth` network at the
/// length fixed point. `scheme` is `MF_SCHEME_GAUSSIAN` or
/// `MF_SCHEME_ORTHOGONAL`.
///
/// # Safety
/// `act` must be a live handle; `out` must be valid to write one
/// `MfSpectrumMoments`.
#[no_mangle]
pub unsafe extern "C" fn mf_jacobian_moments(
    act: *const MfActivation,
    sigma_w2: f64,
    sigma_b2: f64,
    q_star: f64,
    depth: u32,
    scheme: i32,
    out: *mut MfSpectrumMoments,
) -> MfStatus {
    let (Some(a), false) = (act_ref(act), out.is_null()) else {
        return MF_ERR_NULL_POINTER;
    };
    let scheme = match scheme {
        MF_SCHEME_GAUSSIAN => InitScheme::Gaussian,
        MF_SCHEME_ORTHOGONAL => InitScheme::Orthogonal,
        _ => return MF_ERR_INVALID_ARGUMENT,
    };
    guarded(|| {
        let hp = NetworkHyperparams::new(sigma_w2, sigma_b2)?;
        let m = spectrum::jacobian_moments(a, &hp, q_star, depth as usize, scheme)?;
        *out = MfSpectrumMoments {
            mu1: m.mu1,
            mu2: m.mu2,
            chi1: m.chi1,
            m1: m.m1,
            m2: m.m2,
            var_jjt: m.var_jjt,
            s1: m.s1,
            depth,
        };
        Ok(())
    })
}

/// Static description of a status code. Never returns null.
#[no_mangle]
pub extern "C" fn mf_strerror(status: MfStatus) -> *const c_char {
    let msg: &'static CStr = match status {
        MF_OK => c"ok",
        MF_ERR_INVALID_ARGUMENT => c"invalid argument",
        MF_ERR_NO_FIXED_POINT => c"no variance fixed point",
        MF_ERR_DIVERGED => c"iteration diverged",
        MF_ERR_NULL_POINTER => c"null pointer",
        MF_ERR_UTF8 => c"invalid utf-8 in string argument",
        MF_ERR_PANIC => c"internal panic",
        _ => c"unknown status code",
    };
    msg.as_ptr()
}
