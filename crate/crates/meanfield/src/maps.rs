//! Variance and correlation propagation maps and their fixed points.
//!
//! For a layer z = W h + b with W_ij ~ N(0, sigma_w^2 / N) and
//! b_i ~ N(0, sigma_b^2), the pre-activation variance q and the correlation
//! rho between two inputs evolve under scalar recursions driven by Gaussian
//! expectations of the activation. This module evaluates those maps, solves
//! for the critical initialization (unit correlation-map slope at the
//! variance fixed point), and iterates depth dynamics.

use crate::activation::Activation;
use crate::error::{MfError, Result};
use crate::quadrature::{expect_1d, expect_2d, Mode1D, Mode2D};

/// Weight/bias variances of a random layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkHyperparams {
    pub sigma_w2: f64,
    pub sigma_b2: f64,
}

impl NetworkHyperparams {
    pub fn new(sigma_w2: f64, sigma_b2: f64) -> Result<Self> {
        if !(sigma_w2.is_finite() && sigma_w2 > 0.0) {
            return Err(MfError::InvalidParameter(format!(
                "sigma_w2 must be positive and finite, got {sigma_w2}"
            )));
        }
        if !(sigma_b2.is_finite() && sigma_b2 >= 0.0) {
            return Err(MfError::InvalidParameter(format!(
                "sigma_b2 must be nonnegative and finite, got {sigma_b2}"
            )));
        }
        Ok(Self { sigma_w2, sigma_b2 })
    }
}

/// Outcome of a scalar fixed-point / root solve.
#[derive(Debug, Clone)]
pub struct FixedPointResult {
    /// Solution point.
    pub value: f64,
    /// |f(value)| for the residual function the solver worked on.
    pub residual: f64,
    /// Interval that contained the reported sign change.
    pub bracket: (f64, f64),
    /// Total iteration count (scan points + bisection steps).
    pub iterations: usize,
    /// Locations of every sign change seen during the scan, each refined by
    /// bisection; `value` is the first of them.
    pub all_sign_changes: Vec<f64>,
}

/// Layerwise trajectory of a scalar statistic.
#[derive(Debug, Clone)]
pub struct DepthTrajectory {
    /// values[l] is the statistic at layer l; values[0] is the input value.
    pub values: Vec<f64>,
    /// Number of layers applied; values.len() == depth + 1.
    pub depth: usize,
    /// Set when the iteration left the numeric domain (NaN/inf/overflow);
    /// remaining entries are NaN.
    pub diverged: bool,
}

const RESIDUAL_TOL: f64 = 1e-10;
const BISECT_MAX: usize = 200;

/// Variance map V(q) = sigma_w^2 E[phi(sqrt(q) Z)^2] + sigma_b^2.
pub fn variance_map(act: &Activation, hp: &NetworkHyperparams, q: f64) -> Result<f64> {
    if q == 0.0 {
        // phi(0) = 0 for every kind here
        return Ok(hp.sigma_b2);
    }
    Ok(hp.sigma_w2 * expect_1d(act, q, Mode1D::PhiSq)? + hp.sigma_b2)
}

/// The critical-line variance map W(q) = E[phi^2] / E[phi'^2] + sigma_b2,
/// i.e. V(q) with sigma_w^2 eliminated by the unit-slope condition.
pub fn w_map(act: &Activation, sigma_b2: f64, q: f64) -> Result<f64> {
    let num = expect_1d(act, q, Mode1D::PhiSq)?;
    let den = expect_1d(act, q, Mode1D::DphiSq)?;
    if den <= 0.0 || !den.is_finite() {
        return Err(MfError::Numerical(format!(
            "derivative second moment vanished at q = {q}"
        )));
    }
    Ok(num / den + sigma_b2)
}

/// Slope of the correlation map at rho = 1:
/// chi1 = sigma_w^2 E[phi'(sqrt(q) Z)^2].
pub fn chi1(act: &Activation, hp: &NetworkHyperparams, q: f64) -> Result<f64> {
    Ok(hp.sigma_w2 * expect_1d(act, q, Mode1D::DphiSq)?)
}

/// Correlation map R(rho) at the variance fixed point q_star:
/// R(rho) = (sigma_w^2 / q_star) E[phi(U1) phi(U2)] + sigma_b^2 / q_star,
/// clamped into [-1, 1] against roundoff at the endpoints.
pub fn corr_map(
    act: &Activation,
    hp: &NetworkHyperparams,
    q_star: f64,
    rho: f64,
) -> Result<f64> {
    let e = expect_2d(act, q_star, rho, Mode2D::PhiPhi)?;
    let r = (hp.sigma_w2 * e + hp.sigma_b2) / q_star;
    Ok(r.clamp(-1.0, 1.0))
}

/// Derivative of the correlation map,
/// R'(rho) = sigma_w^2 E[phi'(U1) phi'(U2)]. Defined on the open interval.
pub fn corr_derivative(
    act: &Activation,
    hp: &NetworkHyperparams,
    q_star: f64,
    rho: f64,
) -> Result<f64> {
    if rho.abs() >= 1.0 {
        return Err(MfError::InvalidParameter(format!(
            "corr_derivative requires |rho| < 1, got {rho}"
        )));
    }
    Ok(hp.sigma_w2 * expect_2d(act, q_star, rho, Mode2D::DphiDphi)?)
}

/// Critical point of an activation at a given bias variance: the fixed point
/// q_star = W(q_star) together with the sigma_w^2 that makes chi1 = 1 there.
#[derive(Debug, Clone)]
pub struct EocPoint {
    pub sigma_b2: f64,
    pub sigma_w2: f64,
    pub q_star: f64,
    pub solve: FixedPointResult,
}

/// Solve W(q) = q for the critical variance fixed point and back out
/// sigma_w^2 = 1 / E[phi'(sqrt(q_star) Z)^2].
///
/// The residual W(q) - q is positive at q -> 0+ (W(0+) >= sigma_b2 plus a
/// positive slope-ratio term) and negative for large q when the activation
/// saturates, so a geometric scan from sigma_b2 up locates the first sign
/// change, which bisection then refines. Activations whose slope ratio never
/// falls below the identity line (e.g. relu at chi1 = 1) have no crossing
/// and produce `NoFixedPoint`.
pub fn solve_q_star_eoc(act: &Activation, sigma_b2: f64) -> Result<EocPoint> {
    if !(sigma_b2.is_finite() && sigma_b2 > 0.0) {
        return Err(MfError::InvalidParameter(format!(
            "sigma_b2 must be positive and finite for the critical solve, got {sigma_b2}"
        )));
    }
    let f = |q: f64| -> Result<f64> { Ok(w_map(act, sigma_b2, q)? - q) };

    let lo = sigma_b2;
    let hi = 1e4 * (act.a * act.a).max(sigma_b2);
    let per_decade = 24.0;
    let decades = (hi / lo).log10();
    let n = ((decades * per_decade).ceil() as usize).max(64);
    let ratio = (hi / lo).powf(1.0 / n as f64);

    let mut iterations = 0usize;
    let mut prev_q = lo;
    let mut prev_f = f(lo)?;
    iterations += 1;
    if prev_f <= 0.0 {
        // W(q) >= sigma_b2 + something positive, so W(sigma_b2) - sigma_b2 > 0
        // unless the expectation ratio degenerated
        return Err(MfError::Numerical(format!(
            "unexpected nonpositive residual {prev_f} at scan anchor q = {lo}"
        )));
    }

    let mut changes: Vec<(f64, f64)> = Vec::new();
    let mut q = lo;
    for _ in 0..n {
        q *= ratio;
        let fq = f(q)?;
        iterations += 1;
        if prev_f > 0.0 && fq <= 0.0 || prev_f <= 0.0 && fq > 0.0 {
            changes.push((prev_q, q));
        }
        prev_q = q;
        prev_f = fq;
    }

    if changes.is_empty() {
        return Err(MfError::NoFixedPoint(format!(
            "W(q) - q has no sign change on [{lo:.3e}, {hi:.3e}] for {}; \
             the map stays above the identity line",
            act.name
        )));
    }

    let mut refined = Vec::with_capacity(changes.len());
    let mut first: Option<(f64, (f64, f64))> = None;
    for (i, &(a0, b0)) in changes.iter().enumerate() {
        let (mut a, mut b) = (a0, b0);
        let mut fa = f(a)?;
        for _ in 0..BISECT_MAX {
            let m = 0.5 * (a + b);
            let fm = f(m)?;
            iterations += 1;
            if fa > 0.0 && fm <= 0.0 || fa <= 0.0 && fm > 0.0 {
                b = m;
            } else {
                a = m;
                fa = fm;
            }
            if (b - a) <= 1e-15 * b.abs().max(1.0) {
                break;
            }
        }
        let root = 0.5 * (a + b);
        refined.push(root);
        if i == 0 {
            first = Some((root, (a0, b0)));
        }
    }
    let (q_star, bracket) = first.unwrap();
    let residual = f(q_star)?.abs();
    if residual > RESIDUAL_TOL {
        return Err(MfError::Numerical(format!(
            "critical solve stalled: residual {residual:.3e} at q = {q_star:.6e}"
        )));
    }
    let dphi2 = expect_1d(act, q_star, Mode1D::DphiSq)?;
    let sigma_w2 = 1.0 / dphi2;
    Ok(EocPoint {
        sigma_b2,
        sigma_w2,
        q_star,
        solve: FixedPointResult {
            value: q_star,
            residual,
            bracket,
            iterations,
            all_sign_changes: refined,
        },
    })
}

/// Fixed point of the variance map V at fixed hyperparameters, by damped
/// iteration with a bisection fallback on V(q) - q. Returns `NoFixedPoint`
/// when the iteration diverges and no sign change exists.
pub fn variance_fixed_point_general(
    act: &Activation,
    hp: &NetworkHyperparams,
) -> Result<FixedPointResult> {
    let f = |q: f64| -> Result<f64> { Ok(variance_map(act, hp, q)? - q) };
    let damping = 0.5;
    let mut q = if hp.sigma_b2 > 0.0 { hp.sigma_b2 } else { 1e-3 };
    let mut iterations = 0usize;
    let mut converged = false;
    for _ in 0..10_000 {
        let v = variance_map(act, hp, q)?;
        iterations += 1;
        if !v.is_finite() || v > 1e8 {
            converged = false;
            break;
        }
        let next = (1.0 - damping) * q + damping * v;
        if (next - q).abs() <= 1e-14 * next.abs().max(1e-30) {
            q = next;
            converged = true;
            break;
        }
        q = next;
    }
    if converged {
        let residual = f(q)?.abs();
        if residual <= RESIDUAL_TOL {
            // expand a genuine bracket around the solution
            let mut delta = 1e-12 * q.abs().max(1e-12);
            let (mut a, mut b) = (q - delta, q + delta);
            for _ in 0..80 {
                a = (q - delta).max(0.0);
                b = q + delta;
                let fa = f(a)?;
                let fb = f(b)?;
                if fa.signum() != fb.signum() && fa != 0.0 {
                    break;
                }
                delta *= 2.0;
            }
            return Ok(FixedPointResult {
                value: q,
                residual,
                bracket: (a, b),
                iterations,
                all_sign_changes: vec![q],
            });
        }
    }
    // fallback: geometric scan + bisection, same scheme as the critical solve
    let lo = 1e-8;
    let hi = 1e6 * (act.a * act.a).max(1.0);
    let n = 400usize;
    let ratio = (hi / lo).powf(1.0 / n as f64);
    let mut prev_q = lo;
    let mut prev_f = f(lo)?;
    let mut changes = Vec::new();
    let mut x = lo;
    for _ in 0..n {
        x *= ratio;
        let fx = f(x)?;
        iterations += 1;
        if prev_f.signum() != fx.signum() {
            changes.push((prev_q, x));
        }
        prev_q = x;
        prev_f = fx;
    }
    let (mut a, mut b) = *changes.first().ok_or_else(|| {
        MfError::NoFixedPoint(format!(
            "variance map of {} has no fixed point at sigma_w2 = {}, sigma_b2 = {}",
            act.name, hp.sigma_w2, hp.sigma_b2
        ))
    })?;
    let bracket = (a, b);
    let mut refined = Vec::with_capacity(changes.len());
    for &(a0, b0) in &changes {
        let (mut ca, mut cb) = (a0, b0);
        let mut fa = f(ca)?;
        for _ in 0..BISECT_MAX {
            let m = 0.5 * (ca + cb);
            let fm = f(m)?;
            iterations += 1;
            if fa.signum() != fm.signum() {
                cb = m;
            } else {
                ca = m;
                fa = fm;
            }
            if (cb - ca) <= 1e-15 * cb.abs().max(1.0) {
                break;
            }
        }
        refined.push(0.5 * (ca + cb));
        if (a0, b0) == (a, b) {
            a = ca;
            b = cb;
        }
    }
    let value = refined[0];
    let residual = f(value)?.abs();
    if residual > RESIDUAL_TOL {
        return Err(MfError::Numerical(format!(
            "variance fixed point stalled: residual {residual:.3e} at q = {value:.6e}"
        )));
    }
    Ok(FixedPointResult {
        value,
        residual,
        bracket,
        iterations,
        all_sign_changes: refined,
    })
}

/// Fixed point of the correlation map on [0, 1]. At or below unit slope the
/// stable fixed point is rho = 1 itself; above it, R crosses the diagonal in
/// the interior and the crossing is found by bisection.
pub fn corr_fixed_point(
    act: &Activation,
    hp: &NetworkHyperparams,
    q_star: f64,
) -> Result<FixedPointResult> {
    let slope = chi1(act, hp, q_star)?;
    if slope <= 1.0 {
        let r1 = corr_map(act, hp, q_star, 1.0)?;
        return Ok(FixedPointResult {
            value: 1.0,
            residual: (r1 - 1.0).abs(),
            bracket: (1.0, 1.0),
            iterations: 1,
            all_sign_changes: vec![1.0],
        });
    }
    let f = |rho: f64| -> Result<f64> { Ok(corr_map(act, hp, q_star, rho)? - rho) };
    let (mut a, mut b) = (0.0, 1.0 - 1e-6);
    let mut fa = f(a)?;
    let fb = f(b)?;
    let mut iterations = 2usize;
    if fa.signum() == fb.signum() {
        // chi1 > 1 guarantees f < 0 just below 1; f(0) >= 0 unless the map is
        // negative at the origin, which bounded odd activations exclude
        return Err(MfError::Numerical(
            "no sign change for the correlation fixed point on [0, 1)".into(),
        ));
    }
    for _ in 0..BISECT_MAX {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        iterations += 1;
        if fa.signum() != fm.signum() {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
        if (b - a) <= 1e-15 {
            break;
        }
    }
    let value = 0.5 * (a + b);
    Ok(FixedPointResult {
        value,
        residual: f(value)?.abs(),
        bracket: (0.0, 1.0 - 1e-6),
        iterations,
        all_sign_changes: vec![value],
    })
}

/// Largest one-step gain R(rho) - rho over rho in [0, 1], located by a dense
/// grid scan refined with golden-section search around the grid argmax.
///
/// Returns (gap, argmax_rho).
pub fn corr_gap(
    act: &Activation,
    hp: &NetworkHyperparams,
    q_star: f64,
    grid_points: usize,
) -> Result<(f64, f64)> {
    if grid_points < 2 {
        return Err(MfError::InvalidParameter(
            "corr_gap needs at least 2 grid points".into(),
        ));
    }
    let g = |rho: f64| -> Result<f64> { Ok(corr_map(act, hp, q_star, rho)? - rho) };
    let n = grid_points - 1;
    let mut best_i = 0usize;
    let mut best = f64::NEG_INFINITY;
    let mut vals = Vec::with_capacity(grid_points);
    for i in 0..=n {
        let rho = i as f64 / n as f64;
        let v = g(rho)?;
        vals.push(v);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    // golden-section refinement on the bracketing cell pair
    let lo = if best_i == 0 { 0.0 } else { (best_i - 1) as f64 / n as f64 };
    let hi = if best_i == n { 1.0 } else { (best_i + 1) as f64 / n as f64 };
    let inv_phi = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = g(x1)?;
    let mut f2 = g(x2)?;
    for _ in 0..80 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = g(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = g(x2)?;
        }
        if (b - a) <= 1e-12 {
            break;
        }
    }
    let (mut arg, mut gap) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    // keep the refinement honest against the original endpoints: for maps
    // whose maximum sits exactly on a grid node (rho = 0 at criticality) the
    // golden probe must not report an interior point of equal value
    let rho_lo = g(lo)?;
    let rho_hi = g(hi)?;
    if rho_lo >= gap {
        arg = lo;
        gap = rho_lo;
    }
    if rho_hi > gap {
        arg = hi;
        gap = rho_hi;
    }
    let _ = vals;
    Ok((gap, arg))
}

/// Iterate the variance map for `depth` layers from q0.
pub fn iterate_variance_depth(
    act: &Activation,
    hp: &NetworkHyperparams,
    q0: f64,
    depth: usize,
) -> Result<DepthTrajectory> {
    if !(q0.is_finite() && q0 >= 0.0) {
        return Err(MfError::InvalidParameter(format!(
            "initial variance must be nonnegative and finite, got {q0}"
        )));
    }
    let mut values = Vec::with_capacity(depth + 1);
    values.push(q0);
    let mut q = q0;
    let mut diverged = false;
    for _ in 0..depth {
        if diverged {
            values.push(f64::NAN);
            continue;
        }
        match variance_map(act, hp, q) {
            Ok(v) if v.is_finite() && v <= 1e12 => {
                q = v;
                values.push(v);
            }
            _ => {
                diverged = true;
                values.push(f64::NAN);
            }
        }
    }
    Ok(DepthTrajectory {
        values,
        depth,
        diverged,
    })
}

/// Iterate the coupled (q_a, q_b, covariance) depth dynamics of an input
/// pair and report the correlation trajectory. Both inputs start at variance
/// q0 so the pair recursion reduces to the single-q correlation map taken at
/// the running variance.
pub fn iterate_correlation_depth(
    act: &Activation,
    hp: &NetworkHyperparams,
    q0: f64,
    rho0: f64,
    depth: usize,
) -> Result<DepthTrajectory> {
    if !(rho0.is_finite() && rho0.abs() <= 1.0) {
        return Err(MfError::InvalidParameter(format!(
            "initial correlation must lie in [-1, 1], got {rho0}"
        )));
    }
    if !(q0.is_finite() && q0 > 0.0) {
        return Err(MfError::InvalidParameter(format!(
            "initial variance must be positive and finite, got {q0}"
        )));
    }
    let mut values = Vec::with_capacity(depth + 1);
    values.push(rho0);
    let mut q = q0;
    let mut rho = rho0;
    let mut diverged = false;
    for _ in 0..depth {
        if diverged {
            values.push(f64::NAN);
            continue;
        }
        let qn = match variance_map(act, hp, q) {
            Ok(v) if v.is_finite() && v > 0.0 && v <= 1e12 => v,
            _ => {
                diverged = true;
                values.push(f64::NAN);
                continue;
            }
        };
        // covariance update: c' = sigma_w^2 E[phi(U1) phi(U2)] + sigma_b2
        // with U's at the current variance; rho' = c' / q'
        let e = expect_2d(act, q, rho, Mode2D::PhiPhi)?;
        let c = hp.sigma_w2 * e + hp.sigma_b2;
        rho = (c / qn).clamp(-1.0, 1.0);
        q = qn;
        values.push(rho);
    }
    Ok(DepthTrajectory {
        values,
        depth,
        diverged,
    })
}

/// One row of a critical-line sweep over bias variances.
#[derive(Debug, Clone)]
pub struct EocCurveEntry {
    pub sigma_b2: f64,
    /// The solved critical point, or the failure for this bias variance.
    pub point: Result<EocPoint>,
}

/// Solve the critical point across a list of bias variances, recording
/// per-entry failures instead of aborting the sweep.
pub fn eoc_curve(act: &Activation, sigma_b2s: &[f64]) -> Vec<EocCurveEntry> {
    sigma_b2s
        .iter()
        .map(|&s| EocCurveEntry {
            sigma_b2: s,
            point: solve_q_star_eoc(act, s),
        })
        .collect()
}
