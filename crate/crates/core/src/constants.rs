//! Smoothness and noise constants of a bilevel problem and the quantities
//! derived from them (relaxed-smoothness constants of the composite objective,
//! the hypergradient noise level and the estimator's mean-square Lipschitz
//! constants).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants describing the upper objective `f`, the lower objective `g`
/// and the stochastic oracles.
///
/// `l_g1` is the joint smoothness of `g`, `l_g2` the Lipschitz constant of its
/// second derivatives, `l_f0` the bound on `‖∇_y f‖`, and the four `l_x*`/`l_y*`
/// fields the block-wise relaxed smoothness of `f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConstants {
    pub mu: f64,
    pub l_g1: f64,
    pub l_g2: f64,
    pub l_f0: f64,
    pub lx0: f64,
    pub lx1: f64,
    pub ly0: f64,
    pub ly1: f64,
    pub sigma_f1: f64,
    pub sigma_g1: f64,
    pub sigma_g2: f64,
}

impl ProblemConstants {
    /// Full validity: finite, nonnegative, `mu > 0` and `l_g1 >= mu`.
    pub fn validate(&self) -> Result<()> {
        self.validate_formula_inputs()?;
        if self.l_g1 < self.mu {
            return Err(Error::constraint(format!(
                "l_g1 ({}) must be >= mu ({})",
                self.l_g1, self.mu
            )));
        }
        Ok(())
    }

    /// The weaker check the closed-form calculators need: finite,
    /// nonnegative and `mu > 0`.
    pub fn validate_formula_inputs(&self) -> Result<()> {
        let fields = [
            ("mu", self.mu),
            ("l_g1", self.l_g1),
            ("l_g2", self.l_g2),
            ("l_f0", self.l_f0),
            ("lx0", self.lx0),
            ("lx1", self.lx1),
            ("ly0", self.ly0),
            ("ly1", self.ly1),
            ("sigma_f1", self.sigma_f1),
            ("sigma_g1", self.sigma_g1),
            ("sigma_g2", self.sigma_g2),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::constraint(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.mu <= 0.0 {
            return Err(Error::constraint(format!("mu must be > 0, got {}", self.mu)));
        }
        Ok(())
    }

    /// Condition-number factor `sqrt(1 + l_g1²/μ²)` shared by `L0` and `L1`.
    fn lift(&self) -> f64 {
        let k = self.l_g1 / self.mu;
        (1.0 + k * k).sqrt()
    }

    /// Bracketed sum shared by `L0` and the bias constant `L̄`.
    fn smoothness_core(&self) -> f64 {
        let c = self;
        let k = c.l_g1 / c.mu;
        c.lx0
            + c.lx1 * c.l_g1 * c.l_f0 / c.mu
            + k * (c.ly0 + c.ly1 * c.l_f0)
            + c.l_f0 * (c.l_g1 * c.l_g2 + c.l_g2 * c.mu) / (c.mu * c.mu)
    }
}

/// `(L0, L1)` relaxed-smoothness constants of `Φ(x) = f(x, y*(x))`.
pub fn derive_smoothness_constants(c: &ProblemConstants) -> Result<(f64, f64)> {
    c.validate_formula_inputs()?;
    let lift = c.lift();
    Ok((lift * c.smoothness_core(), lift * c.lx1))
}

/// Standard deviation `σ̄` of the single-sample Neumann hypergradient estimator.
pub fn derive_sigma_bar(c: &ProblemConstants) -> Result<f64> {
    c.validate_formula_inputs()?;
    let sf = c.sigma_f1 * c.sigma_f1;
    let bracket = (sf + c.l_f0 * c.l_f0) * (c.sigma_g2 * c.sigma_g2 + 2.0 * c.l_g1 * c.l_g1)
        + sf * c.l_g1 * c.l_g1;
    Ok((sf + 3.0 / (c.mu * c.mu) * bracket).sqrt())
}

/// Bias constant `L̄` with `‖∇̄f(x,y) − ∇Φ(x)‖ ≤ (L̄ + L_{x,1}‖∇Φ(x)‖)‖y − y*(x)‖`.
pub fn derive_lbar(c: &ProblemConstants) -> Result<f64> {
    c.validate_formula_inputs()?;
    Ok(c.smoothness_core())
}

/// Mean-square Lipschitz constants `(L̄0, L̄1)` of the stochastic estimator
/// evaluated at tracking radius `r = ‖y − y*(x)‖` and Neumann depth `q_depth`.
pub fn derive_estimator_lipschitz(c: &ProblemConstants, q_depth: u64, r: f64) -> Result<(f64, f64)> {
    c.validate()?;
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::constraint(format!("radius must be finite and >= 0, got {r}")));
    }
    if q_depth == 0 {
        return Err(Error::constraint("Neumann depth Q must be >= 1"));
    }
    let q = q_depth as f64;
    let (mu, l) = (c.mu, c.l_g1);
    let a = c.lx0 + c.lx1 * l * c.l_f0 / mu;
    let first = 4.0 * (c.lx0 + c.lx1 * (l * c.l_f0 / mu + a * r)).powi(2);
    let chain_num = c.l_f0 * c.l_f0 * l * l * c.l_g2 * c.l_g2 * q * q;
    let chain = if chain_num == 0.0 {
        0.0
    } else {
        chain_num / ((l - mu) * (l - mu))
    };
    let inner = l * l * (c.ly0 + c.ly1 * c.l_f0).powi(2) + c.l_f0 * c.l_f0 * c.l_g2 * c.l_g2 + chain;
    let second = 6.0 * q / (2.0 * mu * l - mu * mu) * inner;
    let lbar0 = (first + second).sqrt();
    let lbar1 = 2.0 * c.lx1 * (1.0 + c.lx1 * r);
    Ok((lbar0, lbar1))
}

/// All derived constants for one problem.
///
/// `lbar0` depends on the runtime tracking error `‖y − y*(x)‖`; callers pass an
/// explicit radius, conventionally `2ε/L0` (the averaged-iterate guarantee).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub l0: f64,
    pub l1: f64,
    pub lbar: f64,
    pub sigma_bar: f64,
    pub lbar0: f64,
    pub lbar1: f64,
}

impl DerivedConstants {
    pub fn derive(c: &ProblemConstants, q_depth: u64, radius: f64) -> Result<Self> {
        let (l0, l1) = derive_smoothness_constants(c)?;
        let (lbar0, lbar1) = derive_estimator_lipschitz(c, q_depth, radius)?;
        Ok(Self {
            l0,
            l1,
            lbar: derive_lbar(c)?,
            sigma_bar: derive_sigma_bar(c)?,
            lbar0,
            lbar1,
        })
    }
}
