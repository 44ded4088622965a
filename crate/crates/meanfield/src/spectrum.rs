//! Moments of the input-output Jacobian spectrum at the variance fixed
//! point.
//!
//! With D_l the diagonal of activation derivatives and W_l the weights, the
//! end-to-end Jacobian is J = prod_l D_l W_l. Its squared singular value
//! distribution has normalized trace moments that depend on depth only
//! through chi1 = sigma_w^2 mu_1 and the ratio mu_2 / mu_1^2 of derivative
//! moments, plus a weight-ensemble constant: -1 for iid Gaussian entries, 0
//! for scaled orthogonal.

use crate::activation::Activation;
use crate::error::{MfError, Result};
use crate::maps::NetworkHyperparams;
use crate::quadrature::{expect_1d, Mode1D};

/// Weight-matrix ensemble at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    Gaussian,
    Orthogonal,
}

impl InitScheme {
    /// Ensemble constant entering the second spectral moment.
    pub fn s1(self) -> f64 {
        match self {
            InitScheme::Gaussian => -1.0,
            InitScheme::Orthogonal => 0.0,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            InitScheme::Gaussian => "gaussian",
            InitScheme::Orthogonal => "orthogonal",
        }
    }

    pub fn from_token(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(InitScheme::Gaussian),
            "orthogonal" => Ok(InitScheme::Orthogonal),
            other => Err(MfError::InvalidParameter(format!(
                "unknown init scheme '{other}' (expected gaussian | orthogonal)"
            ))),
        }
    }
}

/// First two spectral moments of J J^T for a depth-L network.
#[derive(Debug, Clone, Copy)]
pub struct SpectrumMoments {
    /// mu_1 = E[phi'(sqrt(q*) Z)^2].
    pub mu1: f64,
    /// mu_2 = E[phi'(sqrt(q*) Z)^4].
    pub mu2: f64,
    /// m_1 = chi1^L, the mean squared singular value.
    pub m1: f64,
    /// m_2, the second moment of the squared singular values.
    pub m2: f64,
    /// Variance m_2 - m_1^2 = chi1^(2L) L (mu_2/mu_1^2 - 1 - s_1/L ... ),
    /// computed directly to avoid cancellation.
    pub var_jjt: f64,
    pub chi1: f64,
    pub depth: usize,
    /// Ensemble constant used (-1 Gaussian, 0 orthogonal).
    pub s1: f64,
}

/// mu_l = E[phi'(sqrt(q) Z)^(2 l)].
pub fn moment_mu(act: &Activation, q: f64, order: u32) -> Result<f64> {
    if order == 0 {
        return Err(MfError::InvalidParameter(
            "derivative moment order must be >= 1".into(),
        ));
    }
    expect_1d(act, q, Mode1D::DphiPow(order))
}

/// mu_2 / mu_1^2, the kurtosis-like ratio controlling the spectral spread.
pub fn moment_ratio(act: &Activation, q: f64) -> Result<f64> {
    let mu1 = moment_mu(act, q, 1)?;
    let mu2 = moment_mu(act, q, 2)?;
    if mu1 <= 0.0 {
        return Err(MfError::Numerical(format!(
            "derivative second moment vanished at q = {q}"
        )));
    }
    Ok(mu2 / (mu1 * mu1))
}

/// First two spectral moments of J J^T for `depth` layers at the variance
/// fixed point `q_star`.
///
/// m_1 = chi1^L and
/// var(JJ^T) = chi1^(2L) L (mu_2/mu_1^2 - 1 - s_1/L * ... ); concretely the
/// large-width formula m_2 = chi1^(2L) [ L (mu_2/mu_1^2 - 1 - s_1) + 1 ] with
/// the variance assembled before m_2 so that the orthogonal/Gaussian
/// difference L chi1^(2L) is exact in floating point.
pub fn jacobian_moments(
    act: &Activation,
    hp: &NetworkHyperparams,
    q_star: f64,
    depth: usize,
    scheme: InitScheme,
) -> Result<SpectrumMoments> {
    if depth == 0 {
        return Err(MfError::InvalidParameter(
            "jacobian moments need depth >= 1".into(),
        ));
    }
    let mu1 = moment_mu(act, q_star, 1)?;
    let mu2 = moment_mu(act, q_star, 2)?;
    if mu1 <= 0.0 {
        return Err(MfError::Numerical(format!(
            "derivative second moment vanished at q = {q_star}"
        )));
    }
    let chi1 = hp.sigma_w2 * mu1;
    let l = depth as f64;
    let s1 = scheme.s1();
    let m1 = chi1.powi(depth as i32);
    let growth = chi1.powi(2 * depth as i32);
    let var_jjt = growth * l * (mu2 / (mu1 * mu1) - 1.0 - s1);
    let m2 = var_jjt + m1 * m1;
    Ok(SpectrumMoments {
        mu1,
        mu2,
        m1,
        m2,
        var_jjt,
        chi1,
        depth,
        s1,
    })
}

/// Backpropagated gradient-variance trajectory. Given the top-layer value
/// q_tilde_L and layer widths N^0..N^L, the recursion
/// q~^l = (N^{l+1} / N^l) chi1 q~^{l+1} runs backward; entry l of the result
/// is q~ at layer l (length widths.len()).
pub fn backprop_variance_trajectory(
    chi1: f64,
    widths: &[usize],
    q_tilde_l: f64,
) -> Result<Vec<f64>> {
    if widths.len() < 2 {
        return Err(MfError::InvalidParameter(
            "backprop trajectory needs at least two layer widths".into(),
        ));
    }
    if widths.iter().any(|&n| n == 0) {
        return Err(MfError::InvalidParameter(
            "layer widths must be positive".into(),
        ));
    }
    if !(chi1.is_finite() && chi1 > 0.0) {
        return Err(MfError::InvalidParameter(format!(
            "chi1 must be positive and finite, got {chi1}"
        )));
    }
    if !q_tilde_l.is_finite() {
        return Err(MfError::InvalidParameter(format!(
            "top-layer gradient variance must be finite, got {q_tilde_l}"
        )));
    }
    let llen = widths.len();
    let mut out = vec![0.0; llen];
    out[llen - 1] = q_tilde_l;
    for l in (0..llen - 1).rev() {
        out[l] = widths[l + 1] as f64 / widths[l] as f64 * chi1 * out[l + 1];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{ActKind, Activation};
    use crate::maps::solve_q_star_eoc;
    use approx::assert_relative_eq;

    #[test]
    fn moment_mu_closed_form() {
        // hard saturation: mu_l = k^(2l) erf(a / sqrt(2 q))
        let act = Activation::new(ActKind::Shtanh, 1.0, 1.0).unwrap();
        let q: f64 = 0.63215546454830246;
        let want = libm::erf(1.0 / (2.0 * q).sqrt());
        for l in 1..=3 {
            assert_relative_eq!(moment_mu(&act, q, l).unwrap(), want, max_relative = 1e-11);
        }
        assert!(moment_mu(&act, q, 0).is_err());
        assert_relative_eq!(
            moment_mu(&act, q, 1).unwrap(),
            0.7915112430344092,
            max_relative = 1e-11
        );
    }

    #[test]
    fn moment_ratio_is_inverse_erf_for_hard_saturation() {
        let act = Activation::new(ActKind::Shtanh, 1.0, 1.0).unwrap();
        let q: f64 = 0.63215546454830246;
        let want = 1.0 / libm::erf(1.0 / (2.0 * q).sqrt());
        assert_relative_eq!(moment_ratio(&act, q).unwrap(), want, max_relative = 1e-11);
        assert_relative_eq!(
            moment_ratio(&act, q).unwrap(),
            1.2634059323861395,
            max_relative = 1e-10
        );
    }

    #[test]
    fn moments_at_criticality() {
        let act = Activation::new(ActKind::Shtanh, 1.0, 1.0).unwrap();
        let p = solve_q_star_eoc(&act, 0.1).unwrap();
        let hp = NetworkHyperparams::new(p.sigma_w2, 0.1).unwrap();
        let depth = 32;
        let g = jacobian_moments(&act, &hp, p.q_star, depth, InitScheme::Gaussian).unwrap();
        let o = jacobian_moments(&act, &hp, p.q_star, depth, InitScheme::Orthogonal).unwrap();
        assert_relative_eq!(g.chi1, 1.0, max_relative = 1e-10);
        assert_relative_eq!(g.m1, 1.0, max_relative = 1e-8);
        // at chi1 = 1 the ensembles differ by exactly L in variance
        assert_relative_eq!(g.var_jjt - o.var_jjt, depth as f64, max_relative = 1e-6);
        let ratio = moment_ratio(&act, p.q_star).unwrap();
        assert_relative_eq!(o.var_jjt, depth as f64 * (ratio - 1.0), max_relative = 1e-8);
        assert!(o.m2 < g.m2);
    }

    #[test]
    fn ensemble_gap_is_exact_off_criticality() {
        let act = Activation::new(ActKind::Shtanh, 2.0, 1.0).unwrap();
        let hp = NetworkHyperparams::new(1.1, 0.05).unwrap();
        let q = 0.9;
        for depth in [1usize, 4, 17] {
            let g = jacobian_moments(&act, &hp, q, depth, InitScheme::Gaussian).unwrap();
            let o = jacobian_moments(&act, &hp, q, depth, InitScheme::Orthogonal).unwrap();
            let growth = g.chi1.powi(2 * depth as i32);
            assert_relative_eq!(
                g.var_jjt - o.var_jjt,
                growth * depth as f64,
                max_relative = 1e-12
            );
            assert_relative_eq!(g.m2, g.var_jjt + g.m1 * g.m1, max_relative = 1e-12);
            assert_relative_eq!(g.m1, g.chi1.powi(depth as i32), max_relative = 1e-14);
        }
        assert!(jacobian_moments(&act, &hp, q, 0, InitScheme::Gaussian).is_err());
    }

    #[test]
    fn backprop_trajectory_examples() {
        // chi1 = 2, constant widths, 10 layers: powers of two down to 1
        let widths = vec![64usize; 10];
        let t = backprop_variance_trajectory(2.0, &widths, 1.0).unwrap();
        assert_eq!(t.len(), 10);
        assert_eq!(t[9], 1.0);
        assert_eq!(t[0], 512.0);
        for (l, v) in t.iter().enumerate() {
            assert_relative_eq!(*v, 2.0f64.powi(9 - l as i32), max_relative = 1e-14);
        }
        // width ratio enters: N = [100, 200], chi1 = 1 => q~^0 = 2 q~^1
        let t = backprop_variance_trajectory(1.0, &[100, 200], 1.0).unwrap();
        assert_eq!(t, vec![2.0, 1.0]);
    }

    #[test]
    fn backprop_trajectory_rejects_bad_input() {
        assert!(backprop_variance_trajectory(1.0, &[10], 1.0).is_err());
        assert!(backprop_variance_trajectory(1.0, &[], 1.0).is_err());
        assert!(backprop_variance_trajectory(1.0, &[10, 0], 1.0).is_err());
        assert!(backprop_variance_trajectory(0.0, &[10, 10], 1.0).is_err());
        assert!(backprop_variance_trajectory(-1.0, &[10, 10], 1.0).is_err());
        assert!(backprop_variance_trajectory(f64::NAN, &[10, 10], 1.0).is_err());
        assert!(backprop_variance_trajectory(1.0, &[10, 10], f64::NAN).is_err());
    }

    #[test]
    fn scheme_tokens_round_trip() {
        for s in [InitScheme::Gaussian, InitScheme::Orthogonal] {
            assert_eq!(InitScheme::from_token(s.token()).unwrap(), s);
        }
        assert!(InitScheme::from_token("unitary").is_err());
        assert_eq!(InitScheme::Gaussian.s1(), -1.0);
        assert_eq!(InitScheme::Orthogonal.s1(), 0.0);
    }
}
