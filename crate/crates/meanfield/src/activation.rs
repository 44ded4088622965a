use crate::error::{MfError, Result};
use std::fmt;

/// Activation families understood by the library.
///
/// The first five are "scaled-bounded": odd, continuous, bounded by `a*k` in
/// magnitude, and exactly linear with slope `k` on `[-a, a]`. They differ in
/// how they continue past the linear region:
///
/// * `Shtanh`    - hard saturation at `±a*k` (the extremal member),
/// * `Htanh`     - the fixed `a = k = 1` hard tanh,
/// * `Ssoftsign` - reciprocal decay from `a*k` down to `a*k/2`,
/// * `Ssinusoid` - keeps oscillating: `a*k*cos((|z|-a)/a)` past the kink,
/// * `Shardsaw`  - zig-zags twice (slope `-k` then `+k`) before saturating.
///
/// `Tanh`, `Erf` and `Relu` are smooth/unbounded comparison activations; the
/// scaled-bounded invariants do not apply to them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActKind {
    Shtanh,
    Htanh,
    Ssoftsign,
    Ssinusoid,
    Shardsaw,
    Tanh,
    Erf,
    Relu,
}

impl ActKind {
    pub fn token(self) -> &'static str {
        match self {
            ActKind::Shtanh => "shtanh",
            ActKind::Htanh => "htanh",
            ActKind::Ssoftsign => "ssoftsign",
            ActKind::Ssinusoid => "ssinusoid",
            ActKind::Shardsaw => "shardsaw",
            ActKind::Tanh => "tanh",
            ActKind::Erf => "erf",
            ActKind::Relu => "relu",
        }
    }

    fn from_token(s: &str) -> Result<Self> {
        Ok(match s {
            "shtanh" => ActKind::Shtanh,
            "htanh" => ActKind::Htanh,
            "ssoftsign" => ActKind::Ssoftsign,
            "ssinusoid" => ActKind::Ssinusoid,
            "shardsaw" => ActKind::Shardsaw,
            "tanh" => ActKind::Tanh,
            "erf" => ActKind::Erf,
            "relu" => ActKind::Relu,
            _ => {
                return Err(MfError::InvalidParameter(format!(
                    "unknown activation kind '{s}' (expected one of shtanh, htanh, ssoftsign, \
                     ssinusoid, shardsaw, tanh, erf, relu)"
                )))
            }
        })
    }

    /// Kinds whose (a, k) are a true degree of freedom.
    fn parameterized(self) -> bool {
        matches!(
            self,
            ActKind::Shtanh | ActKind::Ssoftsign | ActKind::Ssinusoid | ActKind::Shardsaw
        )
    }
}

/// An activation function with its scale parameters and precomputed kink set.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    /// Canonical token, e.g. `shtanh:2:1` or `relu`; round-trips through
    /// [`Activation::parse`].
    pub name: String,
    pub kind: ActKind,
    pub a: f64,
    pub k: f64,
    /// Points where the derivative jumps, ascending and symmetric about 0
    /// (empty for the smooth kinds, `{0}` for ReLU).
    breakpoints: Vec<f64>,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl Activation {
    /// Build an activation, validating the scale parameters.
    ///
    /// `a` and `k` must be positive and finite for the parameterized kinds;
    /// for `htanh`, `tanh`, `erf` and `relu` they are ignored and pinned to 1.
    pub fn new(kind: ActKind, a: f64, k: f64) -> Result<Self> {
        if kind.parameterized() {
            if !(a.is_finite() && a > 0.0) {
                return Err(MfError::InvalidParameter(format!(
                    "activation scale a must be positive and finite, got {a}"
                )));
            }
            if !(k.is_finite() && k > 0.0) {
                return Err(MfError::InvalidParameter(format!(
                    "activation slope k must be positive and finite, got {k}"
                )));
            }
        }
        let (a, k) = if kind.parameterized() { (a, k) } else { (1.0, 1.0) };
        let breakpoints = match kind {
            ActKind::Shtanh | ActKind::Htanh | ActKind::Ssoftsign | ActKind::Ssinusoid => {
                vec![-a, a]
            }
            ActKind::Shardsaw => vec![-5.0 * a, -3.0 * a, -a, a, 3.0 * a, 5.0 * a],
            ActKind::Relu => vec![0.0],
            ActKind::Tanh | ActKind::Erf => vec![],
        };
        let name = if kind.parameterized() {
            format!("{}:{}:{}", kind.token(), a, k)
        } else {
            kind.token().to_string()
        };
        Ok(Activation { name, kind, a, k, breakpoints })
    }

    /// Parse a CLI token of the form `kind`, `kind:a` or `kind:a:k`
    /// (missing scale parameters default to 1).
    pub fn parse(spec: &str) -> Result<Self> {
        let mut parts = spec.split(':');
        let kind = ActKind::from_token(parts.next().unwrap_or(""))?;
        let parse_num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                MfError::InvalidParameter(format!("bad {what} '{s}' in activation spec '{spec}'"))
            })
        };
        let a = match parts.next() {
            Some(s) => parse_num(s, "scale a")?,
            None => 1.0,
        };
        let k = match parts.next() {
            Some(s) => parse_num(s, "slope k")?,
            None => 1.0,
        };
        if parts.next().is_some() {
            return Err(MfError::InvalidParameter(format!(
                "activation spec '{spec}' has too many ':' fields (expected kind:a:k)"
            )));
        }
        Activation::new(kind, a, k)
    }

    /// Odd, continuous, bounded, exactly linear on `[-a, a]`.
    pub fn is_scaled_bounded(&self) -> bool {
        matches!(
            self.kind,
            ActKind::Shtanh
                | ActKind::Htanh
                | ActKind::Ssoftsign
                | ActKind::Ssinusoid
                | ActKind::Shardsaw
        )
    }

    /// True when phi(-z) = -phi(z) exactly (everything except ReLU).
    pub fn is_odd(&self) -> bool {
        !matches!(self.kind, ActKind::Relu)
    }

    /// True when phi is piecewise linear, which lets Gaussian expectations of
    /// phi and phi' against a Gaussian factor be taken in closed form.
    pub(crate) fn is_piecewise_linear(&self) -> bool {
        matches!(
            self.kind,
            ActKind::Shtanh | ActKind::Htanh | ActKind::Shardsaw | ActKind::Relu
        )
    }

    /// Derivative-jump locations in the raw argument, ascending.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Breakpoints of z -> phi(sqrt(q) z), i.e. the raw set divided by sqrt(q).
    pub fn scaled_breakpoints(&self, q: f64) -> Vec<f64> {
        let s = q.sqrt();
        self.breakpoints.iter().map(|b| b / s).collect()
    }

    /// phi(z). Odd kinds are evaluated as sign(z) * phi(|z|) so that oddness
    /// holds bit-exactly.
    pub fn phi(&self, z: f64) -> f64 {
        match self.kind {
            ActKind::Tanh => z.tanh(),
            // Normalized so the slope at the origin is exactly 1.
            ActKind::Erf => libm::erf(0.5 * crate::quadrature::SQRT_PI * z),
            ActKind::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            _ => {
                if z < 0.0 {
                    -self.phi_pos(-z)
                } else {
                    self.phi_pos(z)
                }
            }
        }
    }

    /// phi on [0, inf) for the scaled-bounded kinds.
    fn phi_pos(&self, x: f64) -> f64 {
        let (a, k) = (self.a, self.k);
        match self.kind {
            ActKind::Shtanh | ActKind::Htanh => {
                if x <= a {
                    k * x
                } else {
                    a * k
                }
            }
            ActKind::Ssoftsign => {
                if x <= a {
                    k * x
                } else {
                    0.5 * a * k * (1.0 + a / x)
                }
            }
            ActKind::Ssinusoid => {
                if x <= a {
                    k * x
                } else {
                    a * k * ((x - a) / a).cos()
                }
            }
            ActKind::Shardsaw => {
                if x <= a {
                    k * x
                } else if x <= 3.0 * a {
                    k * (2.0 * a - x)
                } else if x <= 5.0 * a {
                    k * (x - 4.0 * a)
                } else {
                    a * k
                }
            }
            _ => unreachable!("phi_pos is only called for scaled-bounded kinds"),
        }
    }

    /// phi'(z), with the symmetrized (average of one-sided limits) value at a
    /// breakpoint. Even by construction for the odd kinds.
    pub fn dphi(&self, z: f64) -> f64 {
        match self.kind {
            ActKind::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            ActKind::Erf => (-0.25 * std::f64::consts::PI * z * z).exp(),
            ActKind::Relu => {
                if z > 0.0 {
                    1.0
                } else if z < 0.0 {
                    0.0
                } else {
                    0.5
                }
            }
            _ => self.dphi_pos(z.abs()),
        }
    }

    /// phi' on [0, inf) for the scaled-bounded kinds.
    fn dphi_pos(&self, x: f64) -> f64 {
        let (a, k) = (self.a, self.k);
        match self.kind {
            ActKind::Shtanh | ActKind::Htanh => {
                if x < a {
                    k
                } else if x > a {
                    0.0
                } else {
                    0.5 * k
                }
            }
            ActKind::Ssoftsign => {
                if x < a {
                    k
                } else if x > a {
                    -0.5 * a * a * k / (x * x)
                } else {
                    0.25 * k
                }
            }
            ActKind::Ssinusoid => {
                if x < a {
                    k
                } else if x > a {
                    -k * ((x - a) / a).sin()
                } else {
                    0.5 * k
                }
            }
            ActKind::Shardsaw => {
                if x < a {
                    k
                } else if x == a || x == 3.0 * a {
                    0.0
                } else if x < 3.0 * a {
                    -k
                } else if x < 5.0 * a {
                    k
                } else if x == 5.0 * a {
                    0.5 * k
                } else {
                    0.0
                }
            }
            _ => unreachable!("dphi_pos is only called for scaled-bounded kinds"),
        }
    }

    /// Constant values of phi on the two unbounded outer pieces, when the
    /// outer pieces actually are constant: `(left, right)` per side.
    pub(crate) fn phi_tail(&self) -> (Option<f64>, Option<f64>) {
        let sat = self.a * self.k;
        match self.kind {
            ActKind::Shtanh | ActKind::Htanh | ActKind::Shardsaw => (Some(-sat), Some(sat)),
            ActKind::Relu => (Some(0.0), None),
            _ => (None, None),
        }
    }

    /// Same as [`phi_tail`] for phi'.
    pub(crate) fn dphi_tail(&self) -> (Option<f64>, Option<f64>) {
        match self.kind {
            ActKind::Shtanh | ActKind::Htanh | ActKind::Shardsaw => (Some(0.0), Some(0.0)),
            ActKind::Relu => (Some(0.0), Some(1.0)),
            _ => (None, None),
        }
    }
}
