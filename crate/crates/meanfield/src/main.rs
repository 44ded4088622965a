//! Command-line frontend: every analysis as a subcommand writing CSV or
//! JSON tables.

use clap::{Args, Parser, Subcommand, ValueEnum};
use meanfield::activation::Activation;
use meanfield::bounds;
use meanfield::error::{MfError, Result};
use meanfield::maps::{self, NetworkHyperparams};
use meanfield::report::OutputRecord;
use meanfield::sim::{self, SimConfig};
use meanfield::spectrum::{self, InitScheme};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "meanfield",
    version,
    about = "Mean-field signal propagation analysis of deep random networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scheme {
    Gaussian,
    Orthogonal,
}

impl From<Scheme> for InitScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Gaussian => InitScheme::Gaussian,
            Scheme::Orthogonal => InitScheme::Orthogonal,
        }
    }
}

#[derive(Args)]
struct OutputOpts {
    /// Output format.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Variance map V(q) and critical-line map W(q) over a q grid.
    VarMap {
        /// Activation as kind[:a[:k]], e.g. shtanh:1:1.
        #[arg(long)]
        activation: String,
        #[arg(long, value_name = "VAR")]
        sigma_b2: f64,
        /// Weight variance; derived from the critical condition when absent.
        #[arg(long)]
        sigma_w2: Option<f64>,
        /// Number of grid points.
        #[arg(long, default_value_t = 201)]
        grid: usize,
        #[command(flatten)]
        out: OutputOpts,
    },
    /// Correlation map R(rho) and one-step gain at the variance fixed point.
    CorrMap {
        #[arg(long)]
        activation: String,
        #[arg(long, value_name = "VAR")]
        sigma_b2: f64,
        #[arg(long)]
        sigma_w2: Option<f64>,
        #[arg(long, default_value_t = 201)]
        grid: usize,
        /// Repeat the map for these a values (comma-separated), overriding
        /// the activation's own a.
        #[arg(long, value_delimiter = ',')]
        sweep_a: Option<Vec<f64>>,
        #[command(flatten)]
        out: OutputOpts,
    },
    /// Critical initialization (q*, sigma_w2, chi1, max correlation gain)
    /// across bias variances.
    EocCurve {
        #[arg(long)]
        activation: String,
        /// One or more bias variances, comma-separated.
        #[arg(long, value_name = "VAR", value_delimiter = ',')]
        sigma_b2: Vec<f64>,
        #[command(flatten)]
        out: OutputOpts,
    },
    /// chi1 regime classification over a (sigma_w2, sigma_b2) grid.
    PhaseDiagram {
        #[arg(long)]
        activation: String,
        /// Grid resolution per axis.
        #[arg(long, default_value_t = 21)]
        grid: usize,
        #[command(flatten)]
        out: OutputOpts,
    },
    /// Lower/upper bounds on the critical ratio a/sqrt(q*) vs measurement.
    RatioBounds {
        #[arg(long)]
        activation: String,
        #[arg(long, value_name = "VAR")]
        sigma_b2: f64,
        #[arg(long, value_delimiter = ',')]
        sweep_a: Option<Vec<f64>>,
        #[command(flatten)]
        out: OutputOpts,
    },
    /// Full bound report (ratio sandwich, correlation gap, moment spread).
    VerifyTheorem {
        #[arg(long)]
        activation: String,
        #[arg(long, value_name = "VAR")]
        sigma_b2: f64,
        #[arg(long, value_delimiter = ',')]
        sweep_a: Option<Vec<f64>>,
        #[command(flatten)]
        out: OutputOpts,
    },
    /// Mean-field variance/correlation trajectories over depth.
    DepthDynamics {
        #[arg(long)]
        activation: String,
        #[arg(long, value_name = "VAR")]
        sigma_b2: f64,
        #[arg(long)]
        sigma_w2: Option<f64>,
        #[arg(long, default_value_t = 20)]
        depth: usize,
        /// Initial correlation of the input pair.
        #[arg(long, default_value_t = 0.6)]
        rho0: f64,
        #[command(flatten)]
        out: OutputOpts,
    },
    /// Theoretical Jacobian spectral moments per depth.
    JacobianMoments {
        #[arg(long)]
        activation: String,
        #[arg(long, value_name = "VAR")]
        sigma_b2: f64,
        #[arg(long)]
        sigma_w2: Option<f64>,
        #[arg(long, default_value_t = 32)]
        depth: usize,
        #[arg(long, value_enum, default_value = "orthogonal")]
        scheme: Scheme,
        #[command(flatten)]
        out: OutputOpts,
    },
    /// Finite-width Monte Carlo: empirical trajectories and Jacobian
    /// moments against the mean-field prediction.
    Simulate {
        #[arg(long)]
        activation: String,
        #[arg(long, value_name = "VAR")]
        sigma_b2: f64,
        #[arg(long)]
        sigma_w2: Option<f64>,
        #[arg(long, default_value_t = 400)]
        width: usize,
        #[arg(long, default_value_t = 20)]
        depth: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.6)]
        rho0: f64,
        #[arg(long, value_enum, default_value = "gaussian")]
        scheme: Scheme,
        #[command(flatten)]
        out: OutputOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("MEANFIELD_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // a failure here means a pool already exists, which is fine
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: MEANFIELD_THREADS must be a positive integer, got '{threads}'");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn emit(rec: &OutputRecord, out: &OutputOpts) -> Result<()> {
    let bytes = {
        let mut buf = Vec::new();
        match out.format {
            Format::Csv => rec.write_csv(&mut buf),
            Format::Json => rec.write_json(&mut buf),
        }
        .map_err(|e| MfError::Numerical(format!("write failed: {e}")))?;
        buf
    };
    match &out.output {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| MfError::InvalidParameter(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(&bytes)
                .and_then(|()| stdout.flush())
                .map_err(|e| MfError::Numerical(format!("stdout write failed: {e}")))
        }
    }
}

/// Effective (sigma_w2, q_star) for subcommands that accept an optional
/// sigma_w2: derive both from the critical condition when absent, otherwise
/// solve the variance fixed point at the given value.
fn resolve_point(act: &Activation, sigma_b2: f64, sigma_w2: Option<f64>) -> Result<(f64, f64)> {
    match sigma_w2 {
        Some(w) => {
            let hp = NetworkHyperparams::new(w, sigma_b2)?;
            let fp = maps::variance_fixed_point_general(act, &hp)?;
            Ok((w, fp.value))
        }
        None => {
            let p = maps::solve_q_star_eoc(act, sigma_b2)?;
            Ok((p.sigma_w2, p.q_star))
        }
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_list(vs: &[f64]) -> String {
    vs.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

fn base_params(activation: &str, format: Format) -> BTreeMap<String, String> {
    let mut p = BTreeMap::new();
    p.insert("activation".to_string(), activation.to_string(),);
    p.insert(
        "format".to_string(),
        match format {
            Format::Csv => "csv".to_string(),
            Format::Json => "json".to_string(),
        },
    );
    p
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::VarMap {
            activation,
            sigma_b2,
            sigma_w2,
            grid,
            out,
        } => {
            let act = Activation::parse(&activation)?;
            if grid < 2 {
                return Err(MfError::InvalidParameter("grid must be >= 2".into()));
            }
            let (w2, _) = resolve_point(&act, sigma_b2, sigma_w2)?;
            let hp = NetworkHyperparams::new(w2, sigma_b2)?;
            let mut params = base_params(&act.name, out.format);
            params.insert("sigma-b2".into(), fmt_f64(sigma_b2));
            if let Some(w) = sigma_w2 {
                params.insert("sigma-w2".into(), fmt_f64(w));
            }
            params.insert("grid".into(), grid.to_string());
            let mut rec = OutputRecord::new("var-map", params, &["q", "v", "w"]);
            let q_max = 4.0 * (act.a * act.a).max(1.0);
            for i in 0..grid {
                let q = q_max * i as f64 / (grid - 1) as f64;
                let v = maps::variance_map(&act, &hp, q)?;
                let w = if q > 0.0 {
                    maps::w_map(&act, sigma_b2, q)?
                } else {
                    f64::NAN
                };
                rec.push_row(vec![q, v, w]);
            }
            emit(&rec, &out)
        }
        Cmd::CorrMap {
            activation,
            sigma_b2,
            sigma_w2,
            grid,
            sweep_a,
            out,
        } => {
            let act = Activation::parse(&activation)?;
            if grid < 2 {
                return Err(MfError::InvalidParameter("grid must be >= 2".into()));
            }
            let mut params = base_params(&act.name, out.format);
            params.insert("sigma-b2".into(), fmt_f64(sigma_b2));
            if let Some(w) = sigma_w2 {
                params.insert("sigma-w2".into(), fmt_f64(w));
            }
            params.insert("grid".into(), grid.to_string());
            let sweep = match &sweep_a {
                Some(list) => {
                    params.insert("sweep-a".into(), fmt_list(list));
                    list.clone()
                }
                None => vec![act.a],
            };
            let columns: &[&str] = if sweep_a.is_some() {
                &["a", "rho", "r", "gap"]
            } else {
                &["rho", "r", "gap"]
            };
            let mut rec = OutputRecord::new("corr-map", params, columns);
            for &a in &sweep {
                let act_a = Activation::new(act.kind, a, act.k)?;
                let (w2, q_star) = resolve_point(&act_a, sigma_b2, sigma_w2)?;
                let hp = NetworkHyperparams::new(w2, sigma_b2)?;
                for i in 0..grid {
                    let rho = i as f64 / (grid - 1) as f64;
                    let r = maps::corr_map(&act_a, &hp, q_star, rho)?;
                    let row = if sweep_a.is_some() {
                        vec![a, rho, r, r - rho]
                    } else {
                        vec![rho, r, r - rho]
                    };
                    rec.push_row(row);
                }
            }
            emit(&rec, &out)
        }
        Cmd::EocCurve {
            activation,
            sigma_b2,
            out,
        } => {
            let act = Activation::parse(&activation)?;
            if sigma_b2.is_empty() {
                return Err(MfError::InvalidParameter(
                    "at least one sigma-b2 value is required".into(),
                ));
            }
            let mut params = base_params(&act.name, out.format);
            params.insert("sigma-b2".into(), fmt_list(&sigma_b2));
            let mut rec = OutputRecord::new(
                "eoc-curve",
                params,
                &["sigma_b2", "sigma_w2", "q_star", "chi1", "gap"],
            );
            let entries = maps::eoc_curve(&act, &sigma_b2);
            let mut first_err = None;
            let mut ok_count = 0usize;
            for e in entries {
                match e.point {
                    Ok(p) => {
                        let hp = NetworkHyperparams::new(p.sigma_w2, e.sigma_b2)?;
                        let chi = maps::chi1(&act, &hp, p.q_star)?;
                        let (gap, _) = maps::corr_gap(&act, &hp, p.q_star, 1001)?;
                        rec.push_row(vec![e.sigma_b2, p.sigma_w2, p.q_star, chi, gap]);
                        ok_count += 1;
                    }
                    Err(err) => {
                        eprintln!("warning: sigma_b2 = {}: {err}", e.sigma_b2);
                        rec.push_row(vec![
                            e.sigma_b2,
                            f64::NAN,
                            f64::NAN,
                            f64::NAN,
                            f64::NAN,
                        ]);
                        if first_err.is_none() {
                            first_err = Some(err);
                        }
                    }
                }
            }
            if ok_count == 0 {
                return Err(first_err.unwrap());
            }
            emit(&rec, &out)
        }
        Cmd::PhaseDiagram {
            activation,
            grid,
            out,
        } => {
            let act = Activation::parse(&activation)?;
            if grid < 2 {
                return Err(MfError::InvalidParameter("grid must be >= 2".into()));
            }
            let mut params = base_params(&act.name, out.format);
            params.insert("grid".into(), grid.to_string());
            let mut rec = OutputRecord::new(
                "phase-diagram",
                params,
                &["sigma_w2", "sigma_b2", "q_star", "chi1", "regime"],
            );
            for i in 0..grid {
                let w2 = 0.5 + 3.5 * i as f64 / (grid - 1) as f64;
                for j in 0..grid {
                    let b2 = 1e-4 * 1e4f64.powf(j as f64 / (grid - 1) as f64);
                    let hp = NetworkHyperparams::new(w2, b2)?;
                    let (q, chi, regime) =
                        match maps::variance_fixed_point_general(&act, &hp) {
                            Ok(fp) if fp.value > 0.0 => {
                                let chi = maps::chi1(&act, &hp, fp.value)?;
                                let regime = if chi > 1.0 + 1e-6 {
                                    2.0
                                } else if chi < 1.0 - 1e-6 {
                                    0.0
                                } else {
                                    1.0
                                };
                                (fp.value, chi, regime)
                            }
                            Ok(fp) => (fp.value, f64::NAN, 0.0),
                            Err(_) => (f64::NAN, f64::NAN, f64::NAN),
                        };
                    rec.push_row(vec![w2, b2, q, chi, regime]);
                }
            }
            emit(&rec, &out)
        }
        Cmd::RatioBounds {
            activation,
            sigma_b2,
            sweep_a,
            out,
        } => {
            let act = Activation::parse(&activation)?;
            let mut params = base_params(&act.name, out.format);
            params.insert("sigma-b2".into(), fmt_f64(sigma_b2));
            let sweep = match &sweep_a {
                Some(list) => {
                    params.insert("sweep-a".into(), fmt_list(list));
                    list.clone()
                }
                None => vec![act.a],
            };
            let mut rec = OutputRecord::new(
                "ratio-bounds",
                params,
                &["a", "y", "lambda_lower", "measured_ratio", "ratio_upper"],
            );
            for &a in &sweep {
                let act_a = Activation::new(act.kind, a, act.k)?;
                let p = maps::solve_q_star_eoc(&act_a, sigma_b2)?;
                let y = sigma_b2 / (a * a);
                let (lo, hi) = bounds::ratio_bounds(y)?;
                rec.push_row(vec![a, y, lo, a / p.q_star.sqrt(), hi]);
            }
            emit(&rec, &out)
        }
        Cmd::VerifyTheorem {
            activation,
            sigma_b2,
            sweep_a,
            out,
        } => {
            let act = Activation::parse(&activation)?;
            let mut params = base_params(&act.name, out.format);
            params.insert("sigma-b2".into(), fmt_f64(sigma_b2));
            let sweep = match &sweep_a {
                Some(list) => {
                    params.insert("sweep-a".into(), fmt_list(list));
                    list.clone()
                }
                None => vec![act.a],
            };
            let mut rec = OutputRecord::new(
                "verify-theorem",
                params,
                &[
                    "a",
                    "sigma_b2",
                    "y",
                    "q_star",
                    "sigma_w2",
                    "ratio",
                    "ratio_lower",
                    "ratio_upper",
                    "measured_gap",
                    "corr_bound",
                    "corr_bound_vacuous",
                    "measured_moment_dev",
                    "moment_bound",
                    "all_satisfied",
                ],
            );
            for &a in &sweep {
                let act_a = Activation::new(act.kind, a, act.k)?;
                let r = bounds::verify_theorem(&act_a, sigma_b2)?;
                rec.push_row(vec![
                    a,
                    r.sigma_b2,
                    r.y,
                    r.q_star,
                    r.sigma_w2,
                    r.ratio,
                    r.ratio_lower,
                    r.ratio_upper,
                    r.measured_gap,
                    r.corr_bound,
                    r.corr_bound_vacuous as u8 as f64,
                    r.measured_moment_dev,
                    r.moment_bound,
                    r.all_satisfied as u8 as f64,
                ]);
            }
            emit(&rec, &out)
        }
        Cmd::DepthDynamics {
            activation,
            sigma_b2,
            sigma_w2,
            depth,
            rho0,
            out,
        } => {
            let act = Activation::parse(&activation)?;
            if depth == 0 {
                return Err(MfError::InvalidParameter("depth must be >= 1".into()));
            }
            let (w2, q_star) = resolve_point(&act, sigma_b2, sigma_w2)?;
            let hp = NetworkHyperparams::new(w2, sigma_b2)?;
            let mut params = base_params(&act.name, out.format);
            params.insert("sigma-b2".into(), fmt_f64(sigma_b2));
            if let Some(w) = sigma_w2 {
                params.insert("sigma-w2".into(), fmt_f64(w));
            }
            params.insert("depth".into(), depth.to_string());
            params.insert("rho0".into(), fmt_f64(rho0));
            let mut rec = OutputRecord::new("depth-dynamics", params, &["layer", "q", "rho"]);
            let qt = maps::iterate_variance_depth(&act, &hp, q_star, depth)?;
            let rt = maps::iterate_correlation_depth(&act, &hp, q_star, rho0, depth)?;
            for l in 0..=depth {
                rec.push_row(vec![l as f64, qt.values[l], rt.values[l]]);
            }
            emit(&rec, &out)
        }
        Cmd::JacobianMoments {
            activation,
            sigma_b2,
            sigma_w2,
            depth,
            scheme,
            out,
        } => {
            let act = Activation::parse(&activation)?;
            if depth == 0 {
                return Err(MfError::InvalidParameter("depth must be >= 1".into()));
            }
            let (w2, q_star) = resolve_point(&act, sigma_b2, sigma_w2)?;
            let hp = NetworkHyperparams::new(w2, sigma_b2)?;
            let mut params = base_params(&act.name, out.format);
            params.insert("sigma-b2".into(), fmt_f64(sigma_b2));
            if let Some(w) = sigma_w2 {
                params.insert("sigma-w2".into(), fmt_f64(w));
            }
            params.insert("depth".into(), depth.to_string());
            params.insert(
                "scheme".into(),
                InitScheme::from(scheme).token().to_string(),
            );
            let mut rec = OutputRecord::new(
                "jacobian-moments",
                params,
                &["depth", "mu1", "mu2", "chi1", "m1", "m2", "var_jjt", "s1"],
            );
            for l in 1..=depth {
                let m =
                    spectrum::jacobian_moments(&act, &hp, q_star, l, scheme.into())?;
                rec.push_row(vec![
                    l as f64, m.mu1, m.mu2, m.chi1, m.m1, m.m2, m.var_jjt, m.s1,
                ]);
            }
            emit(&rec, &out)
        }
        Cmd::Simulate {
            activation,
            sigma_b2,
            sigma_w2,
            width,
            depth,
            trials,
            seed,
            rho0,
            scheme,
            out,
        } => {
            let act = Activation::parse(&activation)?;
            let (w2, q_star) = resolve_point(&act, sigma_b2, sigma_w2)?;
            let hp = NetworkHyperparams::new(w2, sigma_b2)?;
            let mut params = base_params(&act.name, out.format);
            params.insert("sigma-b2".into(), fmt_f64(sigma_b2));
            if let Some(w) = sigma_w2 {
                params.insert("sigma-w2".into(), fmt_f64(w));
            }
            params.insert("width".into(), width.to_string());
            params.insert("depth".into(), depth.to_string());
            params.insert("trials".into(), trials.to_string());
            params.insert("seed".into(), seed.to_string());
            params.insert("rho0".into(), fmt_f64(rho0));
            params.insert(
                "scheme".into(),
                InitScheme::from(scheme).token().to_string(),
            );
            // Jacobian accumulation is on whenever the run is desk-scale
            let measure_jacobian = width <= 400 && depth <= 64;
            let cfg = SimConfig {
                act: act.clone(),
                hp,
                width,
                depth,
                trials,
                seed,
                scheme: scheme.into(),
                rho0,
                measure_jacobian,
            };
            let res = sim::run_simulation(&cfg, q_star)?;
            let qt = maps::iterate_variance_depth(&act, &hp, q_star, depth)?;
            let rt = maps::iterate_correlation_depth(&act, &hp, q_star, rho0, depth)?;
            let mut rec = OutputRecord::new(
                "simulate",
                params,
                &[
                    "layer",
                    "q_hat",
                    "q_stderr",
                    "rho_hat",
                    "rho_stderr",
                    "q_mf",
                    "rho_mf",
                    "jac_m1",
                    "jac_m2",
                    "jac_var",
                ],
            );
            for l in 0..=depth {
                rec.push_row(vec![
                    l as f64,
                    res.q_traj_mean[l],
                    res.q_traj_stderr[l],
                    res.rho_traj_mean[l],
                    res.rho_traj_stderr[l],
                    qt.values[l],
                    rt.values[l],
                    f64::NAN,
                    f64::NAN,
                    f64::NAN,
                ]);
            }
            // summary row: layer = -1, trajectory cells empty, jacobian stats
            rec.push_row(vec![
                -1.0,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                res.jac_m1_hat.unwrap_or(f64::NAN),
                res.jac_m2_hat.unwrap_or(f64::NAN),
                res.jac_var_hat.unwrap_or(f64::NAN),
            ]);
            if res.diverged {
                eprintln!("warning: at least one trial diverged; affected cells are NaN");
            }
            if res.cond_warnings > 0 {
                eprintln!(
                    "warning: {} trial(s) exceeded condition number 1e12 in JJ^T",
                    res.cond_warnings
                );
            }
            emit(&rec, &out)
        }
    }
}
