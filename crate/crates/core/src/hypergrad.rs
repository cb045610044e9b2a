//! Neumann-series stochastic hypergradient estimator.
//!
//! A single sample is
//!
//! ```text
//! ∇_x F(x,y;ξ) − (Q/l)·∇²_{xy}G(x,y;ζ⁰)·Π_{i=1}^{q}(I − ∇²_{yy}G(x,y;ζⁱ)/l)·∇_y F(x,y;ξ)
//! ```
//!
//! with `q ~ Uniform{0,…,Q−1}` drawn once per call and shared by the batch.
//! Stream layout below a call's stream: `("q", 0)` for the depth,
//! `("f", s)` for `ξ`, `("jvp", s)` for `ζ⁰` and `("hvp", s)/("chain", i)`
//! for `ζⁱ`.

use std::ops::{Add, AddAssign};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::ProblemConstants;
use crate::error::{Error, Result};
use crate::io::{format_f64, CsvRecord};
use crate::linalg::{all_finite, Vector};
use crate::problems::BilevelInstance;
use crate::schedule::Calibration;
use crate::stream::RandomStream;

/// Cumulative oracle calls by kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    /// Lower-level stochastic gradients `∇_y G`.
    pub g1: u64,
    pub jvp: u64,
    pub hvp: u64,
    /// Upper-level samples `ξ` (one call yields both `∇_x F` and `∇_y F`).
    pub f: u64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.g1 + self.jvp + self.hvp + self.f
    }
}

impl Add for CallCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            g1: self.g1 + o.g1,
            jvp: self.jvp + o.jvp,
            hvp: self.hvp + o.hvp,
            f: self.f + o.f,
        }
    }
}

impl AddAssign for CallCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Truncation depth `Q`.
    pub depth: u64,
    /// Batch size `S`.
    pub batch: u64,
    /// Scaling constant `l_g1`.
    pub l_g1: f64,
}

impl EstimatorConfig {
    pub fn new(depth: u64, batch: u64, l_g1: f64) -> Result<Self> {
        if depth == 0 || batch == 0 {
            return Err(Error::constraint("estimator depth and batch must be >= 1"));
        }
        if !(l_g1 > 0.0 && l_g1.is_finite()) {
            return Err(Error::constraint(format!("l_g1 must be > 0, got {l_g1}")));
        }
        Ok(Self { depth, batch, l_g1 })
    }

    /// Configuration scaled by the instance's `l_g1`.
    pub fn for_instance(inst: &BilevelInstance, depth: u64, batch: u64) -> Result<Self> {
        Self::new(depth, batch, inst.constants().l_g1)
    }
}

/// `(Q/l)·u` where `u` is `v` after `q` applications of `u ← u − hvp(u)/l`.
/// The `i`-th application (from 1) receives `stream.child("chain", i)`.
pub fn neumann_inverse_apply<H>(mut hvp: H, v: &Vector, cfg: &EstimatorConfig, q: u64, stream: &RandomStream) -> Result<Vector>
where
    H: FnMut(&Vector, &RandomStream) -> Result<Vector>,
{
    if q >= cfg.depth {
        return Err(Error::constraint(format!("q = {q} must be < Q = {}", cfg.depth)));
    }
    let mut u = v.clone();
    for i in 1..=q {
        let hu = hvp(&u, &stream.child("chain", i))?;
        u -= hu / cfg.l_g1;
    }
    Ok(u * (cfg.depth as f64 / cfg.l_g1))
}

/// Depth drawn for a call on `stream`.
pub fn draw_depth(cfg: &EstimatorConfig, stream: &RandomStream) -> u64 {
    stream.child("q", 0).rng().random_range(0..cfg.depth)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub value: Vector,
    pub q: u64,
    pub calls: CallCounts,
}

/// Batched estimator at `(x, y)`. Deterministic in `stream`: two calls with
/// the same stream share `q` and every sample, differing only through the
/// evaluation point.
pub fn estimate_hypergradient(
    inst: &BilevelInstance,
    x: &Vector,
    y: &Vector,
    cfg: &EstimatorConfig,
    stream: &RandomStream,
) -> Result<Estimate> {
    let q = draw_depth(cfg, stream);
    estimate_with_depth(inst, x, y, cfg, q, stream)
}

/// Estimator with a fixed depth `q` instead of a sampled one.
pub fn estimate_with_depth(
    inst: &BilevelInstance,
    x: &Vector,
    y: &Vector,
    cfg: &EstimatorConfig,
    q: u64,
    stream: &RandomStream,
) -> Result<Estimate> {
    let mut sum = Vector::zeros(inst.dim_x());
    for s in 0..cfg.batch {
        let xi = stream.child("f", s);
        let fx = inst.stoch_grad_x_f(x, y, &xi)?;
        let fy = inst.stoch_grad_y_f(x, y, &xi)?;
        let u = neumann_inverse_apply(
            |v, st| inst.stoch_hvp_yy_g(x, y, v, st),
            &fy,
            cfg,
            q,
            &stream.child("hvp", s),
        )?;
        let corr = inst.stoch_jvp_xy_g(x, y, &u, &stream.child("jvp", s))?;
        sum += fx - corr;
    }
    let value = sum / cfg.batch as f64;
    if !all_finite(&value) {
        return Err(Error::NonFinite {
            context: "hypergradient estimate",
            step: 0,
        });
    }
    Ok(Estimate {
        value,
        q,
        calls: CallCounts {
            g1: 0,
            jvp: cfg.batch,
            hvp: cfg.batch * q,
            f: cfg.batch,
        },
    })
}

/// Exact-oracle estimator averaged over every `q ∈ {0,…,Q−1}`:
/// `∇_x f − (1/l)·∇²_{xy}g·Σ_{q<Q}(I − ∇²_{yy}g/l)^q ∇_y f`.
pub fn enumerated_mean_estimator(inst: &BilevelInstance, x: &Vector, y: &Vector, depth: u64, l_g1: f64) -> Result<Vector> {
    let fy = inst.grad_y_f(x, y)?;
    let mut term = fy.clone();
    let mut acc = fy;
    for _ in 1..depth {
        term -= inst.hvp_yy_g(x, y, &term)? / l_g1;
        acc += &term;
    }
    Ok(inst.grad_x_f(x, y)? - inst.jvp_xy_g(x, y, &(acc / l_g1))?)
}

/// `(l_g1·l_f0/μ)(1 − μ/l_g1)^Q`.
pub fn bias_bound(c: &ProblemConstants, depth: u64) -> f64 {
    c.l_g1 * c.l_f0 / c.mu * (1.0 - c.mu / c.l_g1).powf(depth as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub depth: u64,
    pub batch: u64,
    pub bias_bound: f64,
    /// `‖mean of samples − ∇Φ(x)‖`.
    pub bias_est: f64,
    /// Unbiased estimate of `E‖sample − E sample‖²`.
    pub var_est: f64,
    /// `√(var_est/n)`.
    pub se: f64,
    pub n_samples: u64,
}

impl CsvRecord for BiasReport {
    const HEADER: &'static [&'static str] = &["Q", "S", "bias_bound", "bias_est", "var_est", "se"];
    fn write_fields(&self, out: &mut Vec<String>) {
        out.push(self.depth.to_string());
        out.push(self.batch.to_string());
        out.extend([self.bias_bound, self.bias_est, self.var_est, self.se].map(format_f64));
    }
}

/// Monte-Carlo bias and variance of the estimator at `(x, y*(x))`. Sample `k`
/// uses `stream.child("sample", k)`; samples are drawn in parallel and reduced
/// in index order.
pub fn empirical_bias_and_variance(
    inst: &BilevelInstance,
    x: &Vector,
    cfg: &EstimatorConfig,
    n_samples: u64,
    stream: &RandomStream,
) -> Result<BiasReport> {
    if n_samples < 2 {
        return Err(Error::constraint("n_samples must be >= 2"));
    }
    let y = inst.lower_minimizer(x)?;
    let truth = inst.true_hypergradient(x)?;
    let samples: Vec<Vector> = (0..n_samples)
        .into_par_iter()
        .map(|k| estimate_hypergradient(inst, x, &y, cfg, &stream.child("sample", k)).map(|e| e.value))
        .collect::<Result<_>>()?;
    let n = n_samples as f64;
    let mean = samples.iter().fold(Vector::zeros(inst.dim_x()), |a, s| a + s) / n;
    let var_est = samples.iter().map(|s| (s - &mean).norm_squared()).sum::<f64>() / (n - 1.0);
    Ok(BiasReport {
        depth: cfg.depth,
        batch: cfg.batch,
        bias_bound: bias_bound(inst.constants(), cfg.depth),
        bias_est: (mean - truth).norm(),
        var_est,
        se: (var_est / n).sqrt(),
        n_samples,
    })
}

/// Calibrated `(L0, σ̄)` for an instance: the largest finite-difference
/// curvature of `Φ` and the largest single-sample estimator std over `points`.
/// Point `i` draws its samples from `stream.child("point", i)`.
pub fn calibrate(
    inst: &BilevelInstance,
    points: &[Vector],
    depth: u64,
    n_samples: u64,
    stream: &RandomStream,
) -> Result<Calibration> {
    if points.is_empty() {
        return Err(Error::constraint("calibration needs at least one point"));
    }
    let cfg = EstimatorConfig::for_instance(inst, depth, 1)?;
    let mut var: f64 = 0.0;
    for (i, x) in points.iter().enumerate() {
        let r = empirical_bias_and_variance(inst, x, &cfg, n_samples, &stream.child("point", i as u64))?;
        var = var.max(r.var_est);
    }
    let cal = Calibration {
        l0: inst.phi_curvature_estimate(points, 1e-4)?,
        sigma_bar: var.sqrt(),
    };
    cal.validate()?;
    Ok(cal)
}

#[cfg(test)]
mod tests;
