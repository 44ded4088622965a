//! Finite-width Monte Carlo validation of the mean-field predictions.
//!
//! Samples explicit random networks (iid Gaussian or Haar-orthogonal
//! weights), propagates a correlated input pair, and optionally accumulates
//! the input-output Jacobian, so the infinite-width trajectories and
//! spectral moments can be checked at finite N. Trials run in parallel but
//! each draws from its own counter-derived RNG stream and results are
//! reduced in trial order, so output is bit-identical regardless of thread
//! count.

use crate::activation::Activation;
use crate::error::{MfError, Result};
use crate::maps::NetworkHyperparams;
use crate::spectrum::InitScheme;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Full description of one simulation run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub act: Activation,
    pub hp: NetworkHyperparams,
    /// Layer width N.
    pub width: usize,
    /// Number of layers L.
    pub depth: usize,
    pub trials: usize,
    pub seed: u64,
    pub scheme: InitScheme,
    /// Initial correlation of the input pair.
    pub rho0: f64,
    pub measure_jacobian: bool,
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.width < 2 {
            return Err(MfError::InvalidParameter(format!(
                "width must be >= 2, got {}",
                self.width
            )));
        }
        if self.depth == 0 {
            return Err(MfError::InvalidParameter("depth must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(MfError::InvalidParameter("trials must be >= 1".into()));
        }
        if !(self.rho0.is_finite() && self.rho0.abs() <= 1.0) {
            return Err(MfError::InvalidParameter(format!(
                "rho0 must lie in [-1, 1], got {}",
                self.rho0
            )));
        }
        Ok(())
    }
}

/// Aggregated simulation statistics. Trajectory vectors have length
/// depth + 1; index 0 is the (exact) input statistic.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub q_traj_mean: Vec<f64>,
    pub q_traj_stderr: Vec<f64>,
    pub rho_traj_mean: Vec<f64>,
    pub rho_traj_stderr: Vec<f64>,
    /// Empirical spectral moments of J J^T, present iff measure_jacobian.
    pub jac_m1_hat: Option<f64>,
    pub jac_m1_stderr: Option<f64>,
    pub jac_m2_hat: Option<f64>,
    pub jac_m2_stderr: Option<f64>,
    /// Mean over trials of the per-trial spectral variance m2 - m1^2.
    pub jac_var_hat: Option<f64>,
    pub jac_var_stderr: Option<f64>,
    /// Extreme eigenvalues of J J^T seen across all trials.
    pub jac_lambda_min: Option<f64>,
    pub jac_lambda_max: Option<f64>,
    /// Trials whose J J^T condition number exceeded 1e12.
    pub cond_warnings: usize,
    pub trials: usize,
    /// A trial left the finite range; affected layer statistics are NaN.
    pub diverged: bool,
}

/// Per-trial RNG: ChaCha12 keyed by (run seed, trial index) plus a domain
/// tag, so streams are independent of execution order.
fn trial_rng(seed: u64, trial: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    key[16] = 0x6d;
    key[17] = 0x66;
    ChaCha12Rng::from_seed(key)
}

fn gaussian_matrix(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// One random weight matrix. Gaussian: iid N(0, sigma_w^2 / N). Orthogonal:
/// Haar-distributed orthogonal (QR of a Gaussian matrix with the R-diagonal
/// sign fix) scaled by sigma_w, so W^T W = sigma_w^2 I exactly.
pub fn sample_weights(
    scheme: InitScheme,
    n: usize,
    sigma_w2: f64,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(MfError::InvalidParameter(format!(
            "weight matrices need n >= 2, got {n}"
        )));
    }
    if !(sigma_w2.is_finite() && sigma_w2 > 0.0) {
        return Err(MfError::InvalidParameter(format!(
            "sigma_w2 must be positive and finite, got {sigma_w2}"
        )));
    }
    match scheme {
        InitScheme::Gaussian => {
            let sd = (sigma_w2 / n as f64).sqrt();
            let mut w = gaussian_matrix(n, rng);
            w.iter_mut().for_each(|x| *x *= sd);
            Ok(w)
        }
        InitScheme::Orthogonal => {
            let g = gaussian_matrix(n, rng);
            let qr = g.qr();
            let r = qr.r();
            let mut q = qr.q();
            for j in 0..n {
                if r[(j, j)] < 0.0 {
                    for i in 0..n {
                        q[(i, j)] = -q[(i, j)];
                    }
                }
            }
            let sw = sigma_w2.sqrt();
            q.iter_mut().for_each(|x| *x *= sw);
            Ok(q)
        }
    }
}

struct TrialOut {
    q: Vec<f64>,
    rho: Vec<f64>,
    jac_m1: f64,
    jac_m2: f64,
    lambda_min: f64,
    lambda_max: f64,
    cond_warning: bool,
    diverged: bool,
}

const DIVERGE_Q: f64 = 1e12;

fn run_trial(cfg: &SimConfig, q_star: f64, trial: u64) -> Result<TrialOut> {
    let n = cfg.width;
    let nf = n as f64;
    let mut rng = trial_rng(cfg.seed, trial);

    // input pair on the sphere of squared radius N q* with exact pairwise
    // correlation rho0. Random directions keep the empirical coordinate
    // distribution close to N(0, q*), which the mean-field recursion
    // assumes of its inputs; a coordinate spike would saturate phi and
    // destroy the norm at the first layer.
    let scale = (nf * q_star).sqrt();
    let ga: DVector<f64> = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gb: DVector<f64> = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let ua = ga.normalize();
    let ub = (&gb - &ua * ua.dot(&gb)).normalize();
    let za0 = &ua * scale;
    // rho0 = +-1 makes the ub coefficient exactly zero, so the two inputs
    // are bitwise identical (or mirrored)
    let zb0 = (&ua * cfg.rho0 + &ub * (1.0 - cfg.rho0 * cfg.rho0).sqrt()) * scale;
    let mut za = za0;
    let mut zb = zb0;

    let mut q = Vec::with_capacity(cfg.depth + 1);
    let mut rho = Vec::with_capacity(cfg.depth + 1);
    q.push(q_star);
    rho.push(cfg.rho0);

    let mut jac = if cfg.measure_jacobian {
        Some(DMatrix::<f64>::identity(n, n))
    } else {
        None
    };

    let bias_sd = cfg.hp.sigma_b2.sqrt();
    let mut diverged = false;
    for _ in 0..cfg.depth {
        if diverged {
            q.push(f64::NAN);
            rho.push(f64::NAN);
            continue;
        }
        let w = sample_weights(cfg.scheme, n, cfg.hp.sigma_w2, &mut rng)?;
        let b = DVector::from_fn(n, |_, _| bias_sd * rng.sample::<f64, _>(StandardNormal));

        if let Some(j) = jac.as_mut() {
            // J <- W diag(phi'(z_a)) J, tracking d z^(l) / d z^(0) along
            // the x_a path; the diagonal factor scales rows of J
            for (row, &z) in za.iter().enumerate() {
                let d = cfg.act.dphi(z);
                j.row_mut(row).scale_mut(d);
            }
            *j = &w * &*j;
        }

        let ha = za.map(|z| cfg.act.phi(z));
        let hb = zb.map(|z| cfg.act.phi(z));
        za = &w * ha + &b;
        zb = &w * hb + &b;

        let qa = za.norm_squared() / nf;
        let qb = zb.norm_squared() / nf;
        let dot = za.dot(&zb);
        if !(qa.is_finite() && qb.is_finite()) || qa > DIVERGE_Q || qb > DIVERGE_Q {
            diverged = true;
            q.push(f64::NAN);
            rho.push(f64::NAN);
            continue;
        }
        q.push(qa);
        rho.push(dot / (za.norm_squared() * zb.norm_squared()).sqrt());
    }

    let (mut m1, mut m2) = (f64::NAN, f64::NAN);
    let (mut lmin, mut lmax) = (f64::NAN, f64::NAN);
    let mut cond_warning = false;
    if let Some(j) = jac {
        if diverged {
            cond_warning = true;
        } else {
            let jjt = &j * j.transpose();
            m1 = jjt.trace() / nf;
            m2 = jjt.iter().map(|x| x * x).sum::<f64>() / nf;
            let eig = jjt.symmetric_eigenvalues();
            lmin = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            lmax = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            cond_warning = !(lmin > 0.0) || lmax / lmin > 1e12;
        }
    }
    Ok(TrialOut {
        q,
        rho,
        jac_m1: m1,
        jac_m2: m2,
        lambda_min: lmin,
        lambda_max: lmax,
        cond_warning,
        diverged,
    })
}

fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let t = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / t;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (t - 1.0);
    (mean, (var / t).sqrt())
}

/// Run every trial and aggregate. The q_star argument sets the input norm;
/// pass the variance fixed point to probe the stationary regime.
pub fn run_simulation(cfg: &SimConfig, q_star: f64) -> Result<SimResult> {
    cfg.validate()?;
    if !(q_star.is_finite() && q_star > 0.0) {
        return Err(MfError::InvalidParameter(format!(
            "q_star must be positive and finite, got {q_star}"
        )));
    }
    let trials: Vec<TrialOut> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(cfg, q_star, t))
        .collect::<Result<_>>()?;

    let layers = cfg.depth + 1;
    let mut q_mean = Vec::with_capacity(layers);
    let mut q_se = Vec::with_capacity(layers);
    let mut r_mean = Vec::with_capacity(layers);
    let mut r_se = Vec::with_capacity(layers);
    let mut col = Vec::with_capacity(cfg.trials);
    for l in 0..layers {
        col.clear();
        col.extend(trials.iter().map(|t| t.q[l]));
        let (m, s) = mean_stderr(&col);
        q_mean.push(m);
        q_se.push(s);
        col.clear();
        col.extend(trials.iter().map(|t| t.rho[l]));
        let (m, s) = mean_stderr(&col);
        r_mean.push(m);
        r_se.push(s);
    }

    let diverged = trials.iter().any(|t| t.diverged);
    let cond_warnings = trials.iter().filter(|t| t.cond_warning).count();

    let mut out = SimResult {
        q_traj_mean: q_mean,
        q_traj_stderr: q_se,
        rho_traj_mean: r_mean,
        rho_traj_stderr: r_se,
        jac_m1_hat: None,
        jac_m1_stderr: None,
        jac_m2_hat: None,
        jac_m2_stderr: None,
        jac_var_hat: None,
        jac_var_stderr: None,
        jac_lambda_min: None,
        jac_lambda_max: None,
        cond_warnings,
        trials: cfg.trials,
        diverged,
    };
    if cfg.measure_jacobian {
        let m1s: Vec<f64> = trials.iter().map(|t| t.jac_m1).collect();
        let m2s: Vec<f64> = trials.iter().map(|t| t.jac_m2).collect();
        let vars: Vec<f64> = trials
            .iter()
            .map(|t| t.jac_m2 - t.jac_m1 * t.jac_m1)
            .collect();
        let (m1, se1) = mean_stderr(&m1s);
        let (m2, se2) = mean_stderr(&m2s);
        let (v, sev) = mean_stderr(&vars);
        out.jac_m1_hat = Some(m1);
        out.jac_m1_stderr = Some(se1);
        out.jac_m2_hat = Some(m2);
        out.jac_m2_stderr = Some(se2);
        out.jac_var_hat = Some(v);
        out.jac_var_stderr = Some(sev);
        out.jac_lambda_min = Some(trials.iter().map(|t| t.lambda_min).fold(f64::INFINITY, f64::min));
        out.jac_lambda_max = Some(
            trials
                .iter()
                .map(|t| t.lambda_max)
                .fold(f64::NEG_INFINITY, f64::max),
        );
    }
    Ok(out)
}

/// Propagate the input pair only (no Jacobian accumulation).
pub fn forward_pair(cfg: &SimConfig, q_star: f64) -> Result<SimResult> {
    let mut c = cfg.clone();
    c.measure_jacobian = false;
    run_simulation(&c, q_star)
}

/// Empirical first two spectral moments of J J^T at the variance fixed
/// point of cfg.hp, which is solved internally.
pub fn empirical_jacobian(cfg: &SimConfig) -> Result<(f64, f64)> {
    if !cfg.measure_jacobian {
        return Err(MfError::InvalidParameter(
            "empirical_jacobian requires measure_jacobian = true".into(),
        ));
    }
    if cfg.width > 400 || cfg.depth > 64 {
        return Err(MfError::InvalidParameter(format!(
            "jacobian measurement is desk-scale only (N <= 400, L <= 64), got N = {}, L = {}",
            cfg.width, cfg.depth
        )));
    }
    let q_star = crate::maps::variance_fixed_point_general(&cfg.act, &cfg.hp)?.value;
    if q_star <= 0.0 {
        return Err(MfError::NoFixedPoint(format!(
            "variance fixed point collapsed to {q_star}; jacobian statistics undefined"
        )));
    }
    let r = run_simulation(cfg, q_star)?;
    Ok((r.jac_m1_hat.unwrap(), r.jac_m2_hat.unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{ActKind, Activation};
    use crate::maps::solve_q_star_eoc;
    use approx::assert_relative_eq;

    fn eoc_config() -> (SimConfig, f64) {
        let act = Activation::new(ActKind::Shtanh, 1.0, 1.0).unwrap();
        let p = solve_q_star_eoc(&act, 0.1).unwrap();
        let hp = NetworkHyperparams::new(p.sigma_w2, 0.1).unwrap();
        (
            SimConfig {
                act,
                hp,
                width: 60,
                depth: 8,
                trials: 6,
                seed: 7,
                scheme: InitScheme::Gaussian,
                rho0: 0.6,
                measure_jacobian: false,
            },
            p.q_star,
        )
    }

    #[test]
    fn orthogonal_weights_are_orthogonal() {
        let mut rng = trial_rng(3, 0);
        let w = sample_weights(InitScheme::Orthogonal, 50, 2.0, &mut rng).unwrap();
        let wtw = w.transpose() * &w;
        let mut dev: f64 = 0.0;
        for i in 0..50 {
            for j in 0..50 {
                let want = if i == j { 2.0 } else { 0.0 };
                dev = dev.max((wtw[(i, j)] - want).abs());
            }
        }
        assert!(dev <= 1e-10, "max deviation {dev}");
    }

    #[test]
    fn gaussian_weight_variance() {
        let n = 400;
        let mut rng = trial_rng(11, 0);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0usize;
        for _ in 0..100 {
            let w = sample_weights(InitScheme::Gaussian, n, 1.0, &mut rng).unwrap();
            for x in w.iter() {
                sum += x;
                sumsq += x * x;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sumsq / count as f64 - mean * mean;
        let want = 1.0 / n as f64;
        // variance of the variance estimator ~ 2 var^2 / count
        let se = want * (2.0 / count as f64).sqrt();
        assert!((var - want).abs() <= 3.0 * se, "var {var} vs {want}");
    }

    #[test]
    fn orthogonal_entries_centered() {
        let mut rng = trial_rng(5, 0);
        let mut sum = 0.0;
        let mut count = 0usize;
        for _ in 0..2000 {
            let w = sample_weights(InitScheme::Orthogonal, 3, 1.0, &mut rng).unwrap();
            sum += w.iter().sum::<f64>();
            count += 9;
        }
        let mean = sum / count as f64;
        // entries of a scaled 3x3 orthogonal have variance 1/3
        let se = (1.0f64 / 3.0).sqrt() / (count as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn identical_inputs_stay_identical() {
        let (mut cfg, q) = eoc_config();
        cfg.rho0 = 1.0;
        let r = forward_pair(&cfg, q).unwrap();
        for (l, v) in r.rho_traj_mean.iter().enumerate() {
            assert_eq!(*v, 1.0, "layer {l}");
        }
        for s in &r.rho_traj_stderr {
            assert_eq!(*s, 0.0);
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (cfg, q) = eoc_config();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_simulation(&cfg, q).unwrap());
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| run_simulation(&cfg, q).unwrap());
        assert_eq!(one.q_traj_mean, four.q_traj_mean);
        assert_eq!(one.rho_traj_mean, four.rho_traj_mean);
        assert_eq!(one.q_traj_stderr, four.q_traj_stderr);
    }

    #[test]
    fn repeat_runs_bit_identical() {
        let (cfg, q) = eoc_config();
        let a = run_simulation(&cfg, q).unwrap();
        let b = run_simulation(&cfg, q).unwrap();
        assert_eq!(a.q_traj_mean, b.q_traj_mean);
        assert_eq!(a.rho_traj_mean, b.rho_traj_mean);
        assert_eq!(a.rho_traj_stderr, b.rho_traj_stderr);
    }

    #[test]
    fn divergence_is_flagged() {
        let act = Activation::parse("relu").unwrap();
        let hp = NetworkHyperparams::new(40.0, 0.0).unwrap();
        let cfg = SimConfig {
            act,
            hp,
            width: 16,
            depth: 30,
            trials: 2,
            seed: 1,
            scheme: InitScheme::Gaussian,
            rho0: 0.5,
            measure_jacobian: false,
        };
        let r = run_simulation(&cfg, 1.0).unwrap();
        assert!(r.diverged);
        assert!(r.q_traj_mean.last().unwrap().is_nan());
    }

    #[test]
    fn stationary_variance_tracks_q_star() {
        let (mut cfg, q) = eoc_config();
        cfg.width = 200;
        cfg.trials = 10;
        let r = forward_pair(&cfg, q).unwrap();
        for (l, (m, s)) in r.q_traj_mean.iter().zip(&r.q_traj_stderr).enumerate() {
            let tol = (3.0 * s).max(0.05 * q);
            assert!((m - q).abs() <= tol, "layer {l}: {m} vs {q} (tol {tol})");
        }
        assert!(!r.diverged);
        assert_eq!(r.q_traj_mean.len(), cfg.depth + 1);
        assert_eq!(r.trials, 10);
    }

    #[test]
    fn jacobian_fields_present_iff_measured() {
        let (mut cfg, q) = eoc_config();
        cfg.width = 32;
        cfg.depth = 4;
        let r = run_simulation(&cfg, q).unwrap();
        assert!(r.jac_m1_hat.is_none() && r.jac_m2_hat.is_none());
        cfg.measure_jacobian = true;
        let r = run_simulation(&cfg, q).unwrap();
        assert!(r.jac_m1_hat.is_some() && r.jac_m2_hat.is_some());
        assert!(r.jac_var_hat.is_some());
        let (m1, m2) = (r.jac_m1_hat.unwrap(), r.jac_m2_hat.unwrap());
        assert!(m1 > 0.0 && m2 > 0.0);
    }

    #[test]
    fn empirical_jacobian_solves_fixed_point_itself() {
        let (mut cfg, q) = eoc_config();
        cfg.width = 32;
        cfg.depth = 4;
        cfg.trials = 4;
        cfg.measure_jacobian = true;
        let (m1, m2) = empirical_jacobian(&cfg).unwrap();
        let direct = run_simulation(&cfg, q).unwrap();
        // internal solve lands on the same q*, so moments match exactly
        assert_eq!(m1, direct.jac_m1_hat.unwrap());
        assert_eq!(m2, direct.jac_m2_hat.unwrap());
        cfg.measure_jacobian = false;
        assert!(empirical_jacobian(&cfg).is_err());
        cfg.measure_jacobian = true;
        cfg.width = 401;
        assert!(empirical_jacobian(&cfg).is_err());
    }

    #[test]
    fn near_linear_orthogonal_network_is_isometric() {
        // a = 100 at tiny bias variance keeps every preactivation in the
        // linear region, so J is a product of scaled orthogonal matrices and
        // JJ^T = sigma_w^(2L) I up to eigensolver noise
        let act = Activation::new(ActKind::Shtanh, 100.0, 1.0).unwrap();
        let p = solve_q_star_eoc(&act, 1e-6).unwrap();
        // the fixed-point equation is nearly degenerate here (the map is
        // close to the identity), so q* itself is only loosely pinned
        assert_relative_eq!(p.q_star, 287.40536237943173, max_relative = 1e-7);
        let hp = NetworkHyperparams::new(p.sigma_w2, 1e-6).unwrap();
        let cfg = SimConfig {
            act,
            hp,
            width: 64,
            depth: 16,
            trials: 3,
            seed: 42,
            scheme: InitScheme::Orthogonal,
            rho0: 0.5,
            measure_jacobian: true,
        };
        let r = run_simulation(&cfg, p.q_star).unwrap();
        let lo = r.jac_lambda_min.unwrap();
        let hi = r.jac_lambda_max.unwrap();
        assert!((lo - 1.0).abs() <= 1e-6 && (hi - 1.0).abs() <= 1e-6, "spectrum [{lo}, {hi}]");
        assert_eq!(r.cond_warnings, 0);
    }

    #[test]
    fn rejects_bad_configs() {
        let (cfg, q) = eoc_config();
        let mut c = cfg.clone();
        c.width = 1;
        assert!(run_simulation(&c, q).is_err());
        let mut c = cfg.clone();
        c.trials = 0;
        assert!(run_simulation(&c, q).is_err());
        let mut c = cfg.clone();
        c.rho0 = 1.5;
        assert!(run_simulation(&c, q).is_err());
        let mut c = cfg.clone();
        c.depth = 0;
        assert!(run_simulation(&c, q).is_err());
        assert!(run_simulation(&cfg, 0.0).is_err());
        assert!(run_simulation(&cfg, f64::NAN).is_err());
    }
}
