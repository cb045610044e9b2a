//! Stochastic Nesterov accelerated gradient under minimizer drift.
//!
//! One step reads
//!
//! ```text
//! z_t     = w_t + γ(w_t − w_{t−1})
//! w_{t+1} = z_t − α ∇φ_t(z_t; noise)
//! ```
//!
//! with `γ = (1−√(μα))/(1+√(μα))` and `w_{−1} = w_0`. Progress is measured by
//! the potential
//!
//! ```text
//! V_t = (1/2α)‖(w_t − w_t*) + (√(μα) − 1)(w_{t−1} − w_t*)‖² + φ_t(w_t) − φ_t(w_t*)
//! ```
//!
//! whose quadratic part is the rank-1 form `θᵀPθ` with
//! `P = (1/2α)·v vᵀ ⊗ I`, `v = (1, √(μα) − 1)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io::{format_f64, CsvRecord};
use crate::linalg::{all_finite, symmetric_eigen_range, Matrix, Vector};
use crate::problems::sub_gaussian_noise;
use crate::schedule::momentum_gamma;
use crate::stream::{unit_direction, RandomStream};

#[derive(Clone, Debug, PartialEq)]
pub struct SnagState {
    pub w: Vector,
    pub w_prev: Vector,
    pub alpha: f64,
    pub gamma: f64,
    pub t: u64,
}

impl SnagState {
    /// Start at `w0` with `w_{−1} = w0` and the momentum matched to `(μ, α)`.
    pub fn new(w0: Vector, mu: f64, alpha: f64) -> Self {
        Self::with_gamma(w0, alpha, momentum_gamma(mu, alpha))
    }

    pub fn with_gamma(w0: Vector, alpha: f64, gamma: f64) -> Self {
        Self {
            w_prev: w0.clone(),
            w: w0,
            alpha,
            gamma,
            t: 0,
        }
    }

    /// Extrapolated point `z_t`.
    pub fn extrapolate(&self) -> Vector {
        &self.w + (&self.w - &self.w_prev) * self.gamma
    }

    /// In-place form of [`snag_step`].
    pub fn step<F>(&mut self, grad: F, stream: &RandomStream) -> Result<()>
    where
        F: FnOnce(&Vector, &RandomStream) -> Result<Vector>,
    {
        let z = self.extrapolate();
        let g = grad(&z, stream)?;
        check_dim("snag gradient", z.len(), g.len())?;
        if !all_finite(&g) {
            return Err(Error::NonFinite {
                context: "snag gradient",
                step: self.t,
            });
        }
        let next = z - g * self.alpha;
        self.w_prev = std::mem::replace(&mut self.w, next);
        self.t += 1;
        Ok(())
    }
}

/// One SNAG step; `grad` receives the extrapolated point and the stream.
pub fn snag_step<F>(state: &SnagState, grad: F, stream: &RandomStream) -> Result<SnagState>
where
    F: FnOnce(&Vector, &RandomStream) -> Result<Vector>,
{
    let mut next = state.clone();
    next.step(grad, stream)?;
    Ok(next)
}

/// Potential `V_t` of `state` relative to the current minimizer `w_star`.
pub fn potential(state: &SnagState, mu: f64, w_star: &Vector, phi_gap: f64) -> Result<f64> {
    check_dim("minimizer", state.w.len(), w_star.len())?;
    if phi_gap < -1e-12 {
        return Err(Error::constraint(format!("phi_gap must be >= 0, got {phi_gap}")));
    }
    let s = (mu * state.alpha).sqrt();
    let u = (&state.w - w_star) + (&state.w_prev - w_star) * (s - 1.0);
    Ok(u.norm_squared() / (2.0 * state.alpha) + phi_gap.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingBoundParams {
    pub mu: f64,
    pub alpha: f64,
    /// Sub-Gaussian scale of the gradient noise.
    pub sigma: f64,
    /// Per-step minimizer drift `Δ`.
    pub delta_drift: f64,
    /// Horizon `T`.
    pub horizon: u64,
    /// Failure probability `δ`.
    pub delta_prob: f64,
    pub v0: f64,
}

impl TrackingBoundParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.alpha > 0.0 && self.mu * self.alpha <= 1.0) {
            return Err(Error::constraint("tracking bound needs mu, alpha > 0 and mu*alpha <= 1"));
        }
        if !(self.sigma >= 0.0 && self.delta_drift >= 0.0 && self.v0 >= 0.0) {
            return Err(Error::constraint("sigma, delta_drift and v0 must be >= 0"));
        }
        if !(self.delta_prob > 0.0 && self.delta_prob < 1.0) || self.horizon == 0 {
            return Err(Error::constraint("tracking bound needs 0 < delta_prob < 1 and horizon >= 1"));
        }
        Ok(())
    }

    fn contraction(&self, t: u64) -> f64 {
        let rate = 1.0 - (self.mu * self.alpha).sqrt() / 4.0;
        rate.powf(t as f64) * self.v0
    }

    fn log_factor(&self) -> f64 {
        (std::f64::consts::E * self.horizon as f64 / self.delta_prob).ln()
    }
}

/// `(1−√(μα)/4)^t V0 + (5√α σ²/√μ + 80Δ²/α)·ln(eT/δ)`.
pub fn tracking_bound_with_drift(p: &TrackingBoundParams, t: u64) -> f64 {
    let noise = 5.0 * p.alpha.sqrt() * p.sigma * p.sigma / p.mu.sqrt();
    let drift = 80.0 * p.delta_drift * p.delta_drift / p.alpha;
    p.contraction(t) + (noise + drift) * p.log_factor()
}

/// `(1−√(μα)/4)^t V0 + (5√α σ²/√μ)·ln(eT/δ)`.
pub fn tracking_bound_no_drift(p: &TrackingBoundParams, t: u64) -> f64 {
    let noise = 5.0 * p.alpha.sqrt() * p.sigma * p.sigma / p.mu.sqrt();
    p.contraction(t) + noise * p.log_factor()
}

/// Quadratic family `φ_t(w) = ½(w − w_t*)ᵀ H (w − w_t*)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticFamily {
    h: Matrix,
    mu: f64,
    l: f64,
    isotropic: bool,
}

impl QuadraticFamily {
    pub fn isotropic(mu: f64, dim: usize) -> Result<Self> {
        if mu.is_nan() || mu <= 0.0 || dim == 0 {
            return Err(Error::constraint("isotropic family needs mu > 0 and dim >= 1"));
        }
        Ok(Self {
            h: Matrix::identity(dim, dim) * mu,
            mu,
            l: mu,
            isotropic: true,
        })
    }

    pub fn new(h: Matrix) -> Result<Self> {
        if h.nrows() != h.ncols() || h.nrows() == 0 {
            return Err(Error::constraint("Hessian must be a nonempty square matrix"));
        }
        if (&h - h.transpose()).amax() > 1e-12 * h.amax().max(1.0) {
            return Err(Error::constraint("Hessian must be symmetric"));
        }
        let (mu, l) = symmetric_eigen_range(&h);
        if mu <= 0.0 {
            return Err(Error::constraint("Hessian must be positive definite"));
        }
        let isotropic = (l - mu).abs() <= 1e-15 * l && (&h - Matrix::identity(h.nrows(), h.nrows()) * mu).amax() == 0.0;
        Ok(Self { h, mu, l, isotropic })
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn is_isotropic(&self) -> bool {
        self.isotropic
    }

    pub fn gradient(&self, w: &Vector, w_star: &Vector) -> Vector {
        &self.h * (w - w_star)
    }

    pub fn gap(&self, w: &Vector, w_star: &Vector) -> f64 {
        let e = w - w_star;
        0.5 * e.dot(&(&self.h * &e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftProcess {
    None,
    /// `w_{t+1}* = w_t* + Δ·direction/‖direction‖`.
    FixedDirection { delta: f64, direction: Vec<f64> },
    /// `w_{t+1}* = w_t* + Δ·u_t` with `u_t` uniform on the unit sphere.
    RandomWalk { delta: f64 },
    /// Explicit minimizer sequence `w_0*, w_1*, …`; the last entry repeats.
    External { minimizers: Vec<Vec<f64>> },
}

impl DriftProcess {
    pub fn delta(&self) -> f64 {
        match self {
            Self::None | Self::External { .. } => 0.0,
            Self::FixedDirection { delta, .. } | Self::RandomWalk { delta } => *delta,
        }
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Self::None => Ok(()),
            Self::FixedDirection { delta, direction } => {
                check_dim("drift direction", dim, direction.len())?;
                if delta.is_nan() || *delta < 0.0 || direction.iter().all(|v| *v == 0.0) {
                    return Err(Error::constraint("fixed drift needs delta >= 0 and a nonzero direction"));
                }
                Ok(())
            }
            Self::RandomWalk { delta } => {
                if *delta >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::constraint("random-walk drift needs delta >= 0"))
                }
            }
            Self::External { minimizers } => {
                if minimizers.is_empty() {
                    return Err(Error::constraint("external drift needs at least one minimizer"));
                }
                minimizers.iter().try_for_each(|m| check_dim("external minimizer", dim, m.len()))
            }
        }
    }

    pub(crate) fn initial(&self, w0_star: &Vector) -> Vector {
        match self {
            Self::External { minimizers } => Vector::from_column_slice(&minimizers[0]),
            _ => w0_star.clone(),
        }
    }

    /// Minimizer at `t + 1` given the minimizer at `t`.
    pub(crate) fn advance(&self, current: &Vector, t: u64, stream: &RandomStream) -> Vector {
        match self {
            Self::None => current.clone(),
            Self::FixedDirection { delta, direction } => {
                let d = Vector::from_column_slice(direction);
                current + &d * (*delta / d.norm())
            }
            Self::RandomWalk { delta } => {
                let u = unit_direction(&mut stream.child("drift", t).rng(), current.len());
                current + u * *delta
            }
            Self::External { minimizers } => {
                let k = ((t + 1) as usize).min(minimizers.len() - 1);
                Vector::from_column_slice(&minimizers[k])
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackingRecord {
    pub t: u64,
    pub v: f64,
    pub bound: f64,
    pub dist: f64,
    pub phi_gap: f64,
}

impl CsvRecord for TrackingRecord {
    const HEADER: &'static [&'static str] = &["t", "V", "bound", "dist", "phi_gap"];
    fn write_fields(&self, out: &mut Vec<String>) {
        out.push(self.t.to_string());
        out.extend([self.v, self.bound, self.dist, self.phi_gap].map(format_f64));
    }
}

/// Potential of the starting state `w_{−1} = w_0` against `w_0*`.
pub fn initial_potential(family: &QuadraticFamily, w0: &Vector, w0_star: &Vector, alpha: f64) -> Result<f64> {
    let state = SnagState::new(w0.clone(), family.mu, alpha);
    potential(&state, family.mu, w0_star, family.gap(w0, w0_star))
}

/// Run SNAG on the drifting family for `p.horizon` steps, recording
/// `V_t`, its bound, `‖w_t − w_t*‖` and the suboptimality gap at
/// `t = 0..=T`. Noise has sub-Gaussian scale `p.sigma`; the bound is the
/// with-drift form whenever the drift is not `None`.
pub fn run_tracking_experiment(
    family: &QuadraticFamily,
    drift: &DriftProcess,
    p: &TrackingBoundParams,
    w0: &Vector,
    w0_star: &Vector,
    stream: &RandomStream,
) -> Result<Vec<TrackingRecord>> {
    p.validate()?;
    check_dim("w0", family.dim(), w0.len())?;
    check_dim("w0_star", family.dim(), w0_star.len())?;
    drift.validate(family.dim())?;
    if !matches!(drift, DriftProcess::None) && !family.is_isotropic() {
        log::debug!("with-drift bound is only established for isotropic families; reporting it anyway");
    }
    if (p.mu - family.mu).abs() > 1e-12 * family.mu {
        return Err(Error::constraint("bound parameter mu must match the family"));
    }
    let bound = |t| match drift {
        DriftProcess::None => tracking_bound_no_drift(p, t),
        _ => tracking_bound_with_drift(p, t),
    };
    let mut state = SnagState::new(w0.clone(), family.mu, p.alpha);
    let mut w_star = drift.initial(w0_star);
    let mut out = Vec::with_capacity(p.horizon as usize + 1);
    for t in 0..=p.horizon {
        let gap = family.gap(&state.w, &w_star);
        out.push(TrackingRecord {
            t,
            v: potential(&state, family.mu, &w_star, gap)?,
            bound: bound(t),
            dist: (&state.w - &w_star).norm(),
            phi_gap: gap,
        });
        if t == p.horizon {
            break;
        }
        state.step(
            |z, s| Ok(family.gradient(z, &w_star) + sub_gaussian_noise(&s.child("noise", t), z.len(), p.sigma)),
            stream,
        )?;
        w_star = drift.advance(&w_star, t, stream);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McTrackingSummary {
    pub n_seeds: u64,
    pub violations: u64,
    pub violation_rate: f64,
    /// `max_t V_t` per seed, in seed order.
    pub max_potential: Vec<f64>,
}

/// Fraction of independent runs with some `V_t` above its bound. Seeds are
/// `stream.child("seed", k)` for `k < n_seeds` and run in parallel.
pub fn mc_tracking_violation_rate(
    family: &QuadraticFamily,
    drift: &DriftProcess,
    p: &TrackingBoundParams,
    w0: &Vector,
    w0_star: &Vector,
    n_seeds: u64,
    stream: &RandomStream,
) -> Result<McTrackingSummary> {
    if n_seeds == 0 {
        return Err(Error::constraint("n_seeds must be >= 1"));
    }
    let per_seed: Vec<(bool, f64)> = (0..n_seeds)
        .into_par_iter()
        .map(|k| {
            let traj = run_tracking_experiment(family, drift, p, w0, w0_star, &stream.child("seed", k))?;
            let violated = traj.iter().any(|r| r.v > r.bound);
            let max_v = traj.iter().map(|r| r.v).fold(f64::NEG_INFINITY, f64::max);
            Ok((violated, max_v))
        })
        .collect::<Result<_>>()?;
    let violations = per_seed.iter().filter(|(v, _)| *v).count() as u64;
    Ok(McTrackingSummary {
        n_seeds,
        violations,
        violation_rate: violations as f64 / n_seeds as f64,
        max_potential: per_seed.into_iter().map(|(_, m)| m).collect(),
    })
}
