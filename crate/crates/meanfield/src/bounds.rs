//! Closed-form bounds on critical-point quantities of bounded activations.
//!
//! For an activation that is linear with slope k up to |x| = a and bounded
//! by a k beyond, the behavior at the critical initialization is controlled
//! by the single ratio a / sqrt(q*). Both sides of that ratio admit explicit
//! bounds in y = sigma_b^2 / a^2 built from the principal Lambert W
//! function, which in turn bound the maximal correlation gain per layer and
//! the spread of the Jacobian spectrum.

use crate::activation::Activation;
use crate::error::{MfError, Result};
use crate::maps::{corr_gap, solve_q_star_eoc, NetworkHyperparams};

use crate::spectrum::moment_ratio;

const EXP_NEG_ONE: f64 = 0.36787944117144233;
const SQRT_2_OVER_PI: f64 = 0.7978845608028654;

/// Principal branch W_0 of the Lambert W function on [-1/e, inf),
/// by Halley iteration from a branch-appropriate seed.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(MfError::InvalidParameter(format!(
            "lambert_w0 needs a finite argument, got {x}"
        )));
    }
    if x < -EXP_NEG_ONE {
        // tolerate roundoff at the branch point
        if x < -EXP_NEG_ONE - 1e-15 {
            return Err(MfError::InvalidParameter(format!(
                "lambert_w0 domain is [-1/e, inf), got {x}"
            )));
        }
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut w = if x < -0.25 {
        // series around the branch point in p = sqrt(2 (e x + 1))
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 0.5 {
        x * (1.0 - x)
    } else {
        x.ln_1p().max(1e-12)
    };
    for _ in 0..60 {
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-9 {
            // at the branch point Halley degenerates; the series seed is
            // already accurate to O((w+1)^3) here
            break;
        }
        let ew = w.exp();
        let f = w * ew - x;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let dw = f / denom;
        w -= dw;
        if dw.abs() <= 1e-16 * w.abs().max(1e-300) {
            break;
        }
    }
    Ok(w)
}

/// W_0(exp(ln_x)) without forming exp(ln_x); stable for arguments far beyond
/// f64 range (ln_x up to ~1e308) and falls back to [`lambert_w0`] when the
/// argument is representable.
pub fn lambert_w0_of_exp(ln_x: f64) -> Result<f64> {
    if !ln_x.is_finite() {
        return Err(MfError::InvalidParameter(format!(
            "lambert_w0_of_exp needs a finite log-argument, got {ln_x}"
        )));
    }
    if ln_x < 700.0 {
        return lambert_w0(ln_x.exp());
    }
    // solve w + ln w = ln_x by Newton; seed with the asymptotic expansion
    let mut w = ln_x - ln_x.ln();
    for _ in 0..60 {
        let f = w + w.ln() - ln_x;
        let dw = f / (1.0 + 1.0 / w);
        w -= dw;
        if dw.abs() <= 1e-16 * w {
            break;
        }
    }
    Ok(w)
}

/// The lower bound Lambda(y) on a / sqrt(q*), defined through a two-step
/// Lambert W chain: with delta = sqrt(W_0(2 / (pi y^2))) and
/// beta = sqrt(2/pi) e^{-delta^2 / 2} (2 / delta + delta),
/// Lambda(y) = sqrt(W_0(2 / (pi beta^2))).
pub fn lambda_lower(y: f64) -> Result<f64> {
    if !(y.is_finite() && y > 0.0) {
        return Err(MfError::InvalidParameter(format!(
            "bound parameter y = sigma_b^2 / a^2 must be positive, got {y}"
        )));
    }
    // delta^2 = W0(2 / (pi y^2)): use the log form so tiny y stays in range
    let ln_arg = (2.0 / std::f64::consts::PI).ln() - 2.0 * y.ln();
    let delta = lambert_w0_of_exp(ln_arg)?.sqrt();
    if delta <= 0.0 {
        return Err(MfError::Numerical(format!(
            "degenerate delta in the bound chain at y = {y}"
        )));
    }
    let beta = SQRT_2_OVER_PI * (-0.5 * delta * delta).exp() * (2.0 / delta + delta);
    let ln_arg2 = (2.0 / std::f64::consts::PI).ln() - 2.0 * beta.ln();
    Ok(lambert_w0_of_exp(ln_arg2)?.sqrt())
}

/// Two-sided bound on the critical ratio a / sqrt(q*):
/// returns (Lambda(y), (8/pi)^(1/6) y^(-1/3)).
pub fn ratio_bounds(y: f64) -> Result<(f64, f64)> {
    let lo = lambda_lower(y)?;
    let hi = (8.0 / std::f64::consts::PI).powf(1.0 / 6.0) * y.powf(-1.0 / 3.0);
    Ok((lo, hi))
}

/// Everything the main bound statement asserts about one activation at one
/// bias variance, with both the closed-form bounds and the measured values.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub sigma_b2: f64,
    /// y = sigma_b^2 / a^2.
    pub y: f64,
    pub q_star: f64,
    pub sigma_w2: f64,
    /// Measured critical ratio a / sqrt(q*).
    pub ratio: f64,
    /// Lower bound Lambda(y) on the ratio.
    pub ratio_lower: f64,
    /// Upper bound (8/pi)^(1/6) y^(-1/3) on the ratio.
    pub ratio_upper: f64,
    /// Maximal one-step correlation gain max_rho R(rho) - rho on [0, 1].
    pub measured_gap: f64,
    /// Closed-form gap bound (8/pi)^(1/3) y^(1/3).
    pub corr_bound: f64,
    /// Set when corr_bound >= 1, where any correlation gap satisfies it
    /// trivially.
    pub corr_bound_vacuous: bool,
    /// Measured spectral spread mu_2 / mu_1^2 - 1.
    pub measured_moment_dev: f64,
    /// Closed-form bound erf(Lambda / sqrt(2))^(-2) - 1 on the spread.
    pub moment_bound: f64,
    pub all_satisfied: bool,
}

/// Number of interior grid points used for the measured correlation gap.
const GAP_GRID: usize = 1001;

/// Evaluate the bound statement for a saturating activation at one bias
/// variance: solve the critical point, measure ratio / gap / moment spread,
/// and compare against the closed forms.
pub fn verify_theorem(act: &Activation, sigma_b2: f64) -> Result<BoundReport> {
    if !act.is_scaled_bounded() {
        return Err(MfError::InvalidParameter(format!(
            "the bound statement covers the bounded piecewise-saturating family, not {}",
            act.name
        )));
    }
    let p = solve_q_star_eoc(act, sigma_b2)?;
    let y = sigma_b2 / (act.a * act.a);
    let (lo, hi) = ratio_bounds(y)?;
    let ratio = act.a / p.q_star.sqrt();

    let hp = NetworkHyperparams::new(p.sigma_w2, sigma_b2)?;
    let (gap, _) = corr_gap(act, &hp, p.q_star, GAP_GRID)?;
    let corr_bound = (8.0 / std::f64::consts::PI).powf(1.0 / 3.0) * y.powf(1.0 / 3.0);
    // gap = sigma_b^2 / q* <= 2 always, so a bound past 1 says nothing about
    // contraction
    let corr_bound_vacuous = corr_bound >= 1.0;

    let dev = moment_ratio(act, p.q_star)? - 1.0;
    let e = libm::erf(lo * std::f64::consts::FRAC_1_SQRT_2);
    let moment_bound = 1.0 / (e * e) - 1.0;

    let all_satisfied =
        lo < ratio && ratio < hi && gap < corr_bound && dev <= moment_bound;
    Ok(BoundReport {
        sigma_b2,
        y,
        q_star: p.q_star,
        sigma_w2: p.sigma_w2,
        ratio,
        ratio_lower: lo,
        ratio_upper: hi,
        measured_gap: gap,
        corr_bound,
        corr_bound_vacuous,
        measured_moment_dev: dev,
        moment_bound,
        all_satisfied,
    })
}

/// Identity check of the bound construction: at x = Lambda(y) the defining
/// equation sqrt(2/pi) x^{-1} e^{-x^2/2} = beta holds exactly; returns the
/// relative residual.
pub fn lambda_identity_residual(y: f64) -> Result<f64> {
    let ln_arg = (2.0 / std::f64::consts::PI).ln() - 2.0 * y.ln();
    let delta = lambert_w0_of_exp(ln_arg)?.sqrt();
    let beta = SQRT_2_OVER_PI * (-0.5 * delta * delta).exp() * (2.0 / delta + delta);
    let lam = lambda_lower(y)?;
    let g = SQRT_2_OVER_PI * (-0.5 * lam * lam).exp() / lam;
    Ok(((g - beta) / beta).abs())
}

/// Second moment of phi for hard saturation, used by the self-check below.
#[allow(dead_code)]
fn shtanh_phi_sq(a: f64, k: f64, q: f64) -> f64 {
    let r = a / (2.0 * q).sqrt();
    k * k * q * libm::erf(r) - SQRT_2_OVER_PI * a * k * k * q.sqrt() * (-r * r).exp()
        + a * a * k * k * libm::erfc(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{ActKind, Activation};
    use approx::assert_relative_eq;

    #[test]
    fn lambert_w_reference_points() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert_relative_eq!(
            lambert_w0(std::f64::consts::E).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            lambert_w0(1.0).unwrap(),
            0.567143290409783873,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            lambert_w0(0.5).unwrap(),
            0.3517337112491958,
            max_relative = 1e-14
        );
        assert_relative_eq!(lambert_w0(-EXP_NEG_ONE).unwrap(), -1.0, epsilon = 1e-7);
        assert!(lambert_w0(-0.4).is_err());
        assert!(lambert_w0(f64::NAN).is_err());
    }

    #[test]
    fn lambert_w_identity_along_log_grid() {
        // w e^w = x to relative 1e-12 across 25 decades
        let mut x = -EXP_NEG_ONE + 1e-6;
        let hi: f64 = 1e12;
        let mut pts = vec![x, -0.2, -0.05, 0.0, 1e-8];
        let n = 60;
        for i in 0..=n {
            pts.push(1e-6 * (hi / 1e-6).powf(i as f64 / n as f64));
        }
        for &p in &pts {
            x = p;
            let w = lambert_w0(x).unwrap();
            let back = w * w.exp();
            let scale = x.abs().max(1e-12);
            assert!(
                (back - x).abs() <= 1e-12 * scale,
                "x = {x}: w = {w}, w e^w = {back}"
            );
        }
    }

    #[test]
    fn lambert_w_log_form_handles_huge_arguments() {
        // w + ln w = ln x
        for &lnx in &[700.0, 1e3, 1e5, 3e7] {
            let w = lambert_w0_of_exp(lnx).unwrap();
            assert_relative_eq!(w + w.ln(), lnx, max_relative = 1e-14);
        }
        // consistency with the direct branch
        let w1 = lambert_w0_of_exp(5.0).unwrap();
        let w2 = lambert_w0(5.0f64.exp()).unwrap();
        assert_relative_eq!(w1, w2, max_relative = 1e-14);
    }

    #[test]
    fn lambda_chain_frozen_values() {
        assert_relative_eq!(
            lambda_lower(0.25).unwrap(),
            0.675948452555723376,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            lambda_lower(0.1).unwrap(),
            0.979566140657623563,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            lambda_lower(1.0).unwrap(),
            0.31400112675517668,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            lambda_lower(2.0).unwrap(),
            0.183434754946247494,
            max_relative = 1e-13
        );
        assert!(lambda_lower(0.0).is_err());
        assert!(lambda_lower(-1.0).is_err());
        // survives extreme y where 2/(pi y^2) overflows f64
        let l = lambda_lower(1e-200).unwrap();
        assert!(l.is_finite() && l > 10.0);
    }

    #[test]
    fn lambda_defining_identity_holds() {
        for &y in &[0.01, 0.1, 0.25, 1.0, 2.0, 10.0] {
            assert!(lambda_identity_residual(y).unwrap() < 1e-13, "y = {y}");
        }
    }

    #[test]
    fn ratio_bounds_frozen() {
        let (lo, hi) = ratio_bounds(0.1).unwrap();
        assert_relative_eq!(lo, 0.979566140657623563, max_relative = 1e-13);
        assert_relative_eq!(hi, 2.51761906720398895, max_relative = 1e-13);
        assert!(lo < hi);
    }

    #[test]
    fn theorem_report_shtanh() {
        let act = Activation::new(ActKind::Shtanh, 1.0, 1.0).unwrap();
        let r = verify_theorem(&act, 0.1).unwrap();
        assert!(r.all_satisfied);
        assert_relative_eq!(r.q_star, 0.63215546454830246, max_relative = 1e-9);
        assert_relative_eq!(r.measured_gap, 0.15818893548828776, max_relative = 1e-7);
        assert_relative_eq!(r.corr_bound, 0.6338405767549083, max_relative = 1e-12);
        assert!(!r.corr_bound_vacuous);
        assert!(r.ratio_lower < r.ratio && r.ratio < r.ratio_upper);
        assert_relative_eq!(
            r.measured_moment_dev,
            0.2634059323861395,
            max_relative = 1e-8
        );
        assert!(r.measured_moment_dev <= r.moment_bound);
    }

    #[test]
    fn theorem_vacuous_flag_at_large_y() {
        // y = 1: bound (8/pi)^(1/3) > 1
        let act = Activation::new(ActKind::Shtanh, 1.0, 1.0).unwrap();
        let r = verify_theorem(&act, 1.0).unwrap();
        assert_relative_eq!(r.corr_bound, 1.365568126510591, max_relative = 1e-12);
        assert!(r.corr_bound_vacuous);
        assert!(r.all_satisfied);
    }

    #[test]
    fn theorem_applies_to_other_family_members() {
        let act = Activation::parse("shardsaw:6:1").unwrap();
        let r = verify_theorem(&act, 0.1).unwrap();
        assert!(r.all_satisfied, "{r:?}");
        assert!(!r.corr_bound_vacuous);
        let relu = Activation::parse("relu").unwrap();
        assert!(verify_theorem(&relu, 0.1).is_err());
        let tanh = Activation::parse("tanh").unwrap();
        assert!(verify_theorem(&tanh, 0.1).is_err());
    }

    #[test]
    fn bounds_tighten_with_a() {
        // larger a at fixed sigma_b2 means smaller y: bound values shrink
        let mut prev_gapb = f64::INFINITY;
        let mut prev_momb = f64::INFINITY;
        for &a in &[1.0, 2.0, 5.0, 10.0, 20.0] {
            let act = Activation::new(ActKind::Shtanh, a, 1.0).unwrap();
            let r = verify_theorem(&act, 0.1).unwrap();
            assert!(r.all_satisfied, "a = {a}");
            assert!(r.corr_bound < prev_gapb);
            assert!(r.moment_bound < prev_momb);
            prev_gapb = r.corr_bound;
            prev_momb = r.moment_bound;
        }
    }
}
