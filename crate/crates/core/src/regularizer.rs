//! Separable convex regularizers for regularized transport.
//!
//! Every regularizer here is a sum `f(pi) = sum_k h(pi_k)` of a scalar
//! Legendre function, so gradients, Hessians and conjugate gradients act
//! entrywise and Hessians are diagonal.
//!
//! | kind            | `h(x)`                                         | `h''(x)`            |
//! |-----------------|------------------------------------------------|---------------------|
//! | entropy         | `x log x - x + 1`                              | `1 / x`             |
//! | Burg            | `x - log x - 1`                                | `1 / x^2`           |
//! | Fermi-Dirac     | `x log x + (1 - x) log(1 - x)`                 | `1 / (x (1 - x))`   |
//! | beta-potential  | `(x^b - b x + b - 1) / (b (b - 1))`            | `x^(b - 2)`         |
//! | l_q quasi-norm  | `-x^q`                                         | `q (1 - q) x^(q-2)` |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RotError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum Regularizer {
    Entropy,
    Burg,
    FermiDirac,
    BetaPotential(f64),
    LpQuasi(f64),
}

impl Regularizer {
    pub fn beta_potential(beta: f64) -> Result<Self> {
        if beta > 0.0 && beta < 1.0 {
            Ok(Regularizer::BetaPotential(beta))
        } else {
            Err(RotError::invalid(format!("beta must lie in (0, 1), got {beta}")))
        }
    }

    pub fn lp_quasi(q: f64) -> Result<Self> {
        if q > 0.0 && q < 1.0 {
            Ok(Regularizer::LpQuasi(q))
        } else {
            Err(RotError::invalid(format!("quasi-norm exponent must lie in (0, 1), got {q}")))
        }
    }

    /// All five kinds, with the given parameter for the parametrized ones.
    pub fn all_kinds(param: f64) -> [Regularizer; 5] {
        [
            Regularizer::Entropy,
            Regularizer::Burg,
            Regularizer::FermiDirac,
            Regularizer::BetaPotential(param),
            Regularizer::LpQuasi(param),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::Entropy => "entropy",
            Regularizer::Burg => "burg",
            Regularizer::FermiDirac => "fermi_dirac",
            Regularizer::BetaPotential(_) => "beta_potential",
            Regularizer::LpQuasi(_) => "lp_quasi",
        }
    }

    pub fn is_entropy(&self) -> bool {
        matches!(self, Regularizer::Entropy)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::BetaPotential(b) => Self::beta_potential(b).map(|_| ()),
            Regularizer::LpQuasi(q) => Self::lp_quasi(q).map(|_| ()),
            _ => Ok(()),
        }
    }

    fn domain_error(&self, index: usize, value: f64) -> RotError {
        RotError::Domain {
            regularizer: self.name(),
            index,
            value,
        }
    }

    /// `x` in `dom h` (closed domain, used for values).
    fn in_domain(&self, x: f64) -> bool {
        match self {
            Regularizer::Burg => x > 0.0,
            Regularizer::FermiDirac => (0.0..=1.0).contains(&x),
            _ => x >= 0.0,
        }
    }

    /// `x` in the interior of `dom h` (where `h` is differentiable).
    pub fn in_interior(&self, x: f64) -> bool {
        match self {
            Regularizer::FermiDirac => x > 0.0 && x < 1.0,
            _ => x > 0.0 && x.is_finite(),
        }
    }

    /// `y` in the open domain of the conjugate gradient.
    pub fn in_conjugate_domain(&self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match *self {
            Regularizer::Entropy | Regularizer::FermiDirac => true,
            Regularizer::Burg => y < 1.0,
            Regularizer::BetaPotential(b) => y < 1.0 / (1.0 - b),
            Regularizer::LpQuasi(_) => y < 0.0,
        }
    }

    pub(crate) fn scalar_value(&self, x: f64) -> f64 {
        match *self {
            Regularizer::Entropy => xlogx(x) - x + 1.0,
            Regularizer::Burg => x - x.ln() - 1.0,
            Regularizer::FermiDirac => xlogx(x) + xlogx(1.0 - x),
            Regularizer::BetaPotential(b) => (x.powf(b) - b * x + b - 1.0) / (b * (b - 1.0)),
            Regularizer::LpQuasi(q) => -x.powf(q),
        }
    }

    pub(crate) fn scalar_grad(&self, x: f64) -> f64 {
        match *self {
            Regularizer::Entropy => x.ln(),
            Regularizer::Burg => 1.0 - 1.0 / x,
            Regularizer::FermiDirac => (x / (1.0 - x)).ln(),
            Regularizer::BetaPotential(b) => (x.powf(b - 1.0) - 1.0) / (b - 1.0),
            Regularizer::LpQuasi(q) => -q * x.powf(q - 1.0),
        }
    }

    pub(crate) fn scalar_hess(&self, x: f64) -> f64 {
        match *self {
            Regularizer::Entropy => 1.0 / x,
            Regularizer::Burg => 1.0 / (x * x),
            Regularizer::FermiDirac => 1.0 / (x * (1.0 - x)),
            Regularizer::BetaPotential(b) => x.powf(b - 2.0),
            Regularizer::LpQuasi(q) => q * (1.0 - q) * x.powf(q - 2.0),
        }
    }

    pub(crate) fn scalar_conjugate_grad(&self, y: f64) -> f64 {
        match *self {
            Regularizer::Entropy => y.exp(),
            Regularizer::Burg => 1.0 / (1.0 - y),
            Regularizer::FermiDirac => {
                // logistic function, written to avoid overflow for large |y|
                if y >= 0.0 {
                    1.0 / (1.0 + (-y).exp())
                } else {
                    let e = y.exp();
                    e / (1.0 + e)
                }
            }
            Regularizer::BetaPotential(b) => (1.0 + (b - 1.0) * y).powf(1.0 / (b - 1.0)),
            Regularizer::LpQuasi(q) => (-y / q).powf(1.0 / (q - 1.0)),
        }
    }

    /// Conjugate value `h*(y) = y x - h(x)` at `x = (h')^{-1}(y)`.
    pub(crate) fn scalar_conjugate_value(&self, y: f64) -> f64 {
        match *self {
            Regularizer::Entropy => y.exp_m1(),
            Regularizer::Burg => -(-y).ln_1p(),
            Regularizer::FermiDirac => {
                // log(1 + e^y)
                if y > 0.0 {
                    y + (-y).exp().ln_1p()
                } else {
                    y.exp().ln_1p()
                }
            }
            _ => {
                let x = self.scalar_conjugate_grad(y);
                y * x - self.scalar_value(x)
            }
        }
    }

    /// `f(pi)`, with `0 log 0 = 0` on the boundary of the entropies.
    pub fn value(&self, pi: &[f64]) -> Result<f64> {
        self.validate()?;
        let mut total = 0.0;
        for (k, &x) in pi.iter().enumerate() {
            if !self.in_domain(x) {
                return Err(self.domain_error(k, x));
            }
            total += self.scalar_value(x);
        }
        Ok(total)
    }

    /// Entrywise gradient on the interior of the domain.
    pub fn grad(&self, pi: &[f64]) -> Result<Vec<f64>> {
        self.entrywise(pi, |x| self.in_interior(x), |x| self.scalar_grad(x))
    }

    /// Diagonal of the Hessian; strictly positive on the interior.
    pub fn hess_diag(&self, pi: &[f64]) -> Result<Vec<f64>> {
        self.entrywise(pi, |x| self.in_interior(x), |x| self.scalar_hess(x))
    }

    /// Gradient of the Fenchel conjugate, the inverse map of [`Self::grad`].
    pub fn conjugate_grad(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.entrywise(y, |v| self.in_conjugate_domain(v), |v| self.scalar_conjugate_grad(v))
    }

    fn entrywise(
        &self,
        input: &[f64],
        ok: impl Fn(f64) -> bool,
        map: impl Fn(f64) -> f64,
    ) -> Result<Vec<f64>> {
        self.validate()?;
        input
            .iter()
            .enumerate()
            .map(|(k, &x)| if ok(x) { Ok(map(x)) } else { Err(self.domain_error(k, x)) })
            .collect()
    }
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularizer::Entropy => write!(f, "entropy"),
            Regularizer::Burg => write!(f, "burg"),
            Regularizer::FermiDirac => write!(f, "fermi"),
            Regularizer::BetaPotential(b) => write!(f, "beta:{b}"),
            Regularizer::LpQuasi(q) => write!(f, "lpq:{q}"),
        }
    }
}

/// Parses `entropy`, `burg`, `fermi`, `beta:<b>` and `lpq:<q>`.
impl FromStr for Regularizer {
    type Err = RotError;

    fn from_str(s: &str) -> Result<Self> {
        let param = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| RotError::invalid(format!("bad regularizer parameter `{v}`")))
        };
        match s.split_once(':') {
            None => match s {
                "entropy" => Ok(Regularizer::Entropy),
                "burg" => Ok(Regularizer::Burg),
                "fermi" | "fermi_dirac" => Ok(Regularizer::FermiDirac),
                other => Err(RotError::invalid(format!("unknown regularizer `{other}`"))),
            },
            Some(("beta", v)) => Regularizer::beta_potential(param(v)?),
            Some(("lpq", v)) => Regularizer::lp_quasi(param(v)?),
            Some((other, _)) => Err(RotError::invalid(format!("unknown regularizer `{other}`"))),
        }
    }
}
