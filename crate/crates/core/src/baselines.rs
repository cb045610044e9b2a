//! Reference methods: SGD tracking of a drifting minimizer, and a bilevel
//! method with plain momentum (no correction term) and SGD lower updates.
//!
//! The bilevel baseline keeps the normalized upper step and the iterate
//! averaging of the accelerated method, so the two differ only in the
//! momentum correction and the Nesterov lower loop.

use crate::accbo::{drive, AccboState, Method, RunOptions, RunOutput};
use crate::constants::{derive_sigma_bar, derive_smoothness_constants, ProblemConstants};
use crate::error::{check_dim, Error, Result};
use crate::hypergrad::{estimate_hypergradient, CallCounts, EstimatorConfig};
use crate::linalg::{all_finite, Vector};
use crate::problems::{sub_gaussian_noise, BilevelInstance};
use crate::schedule::{Calibration, Schedule, ScheduleOverrides, ScheduleRequest};
use crate::snag::{DriftProcess, QuadraticFamily};
use crate::stream::RandomStream;

/// `w − α·grad(w)`.
pub fn sgd_tracking_step<F>(w: &Vector, grad: F, alpha: f64, stream: &RandomStream) -> Result<Vector>
where
    F: FnOnce(&Vector, &RandomStream) -> Result<Vector>,
{
    let g = grad(w, stream)?;
    check_dim("sgd gradient", w.len(), g.len())?;
    if !all_finite(&g) {
        return Err(Error::NonFinite {
            context: "sgd gradient",
            step: 0,
        });
    }
    Ok(w - g * alpha)
}

/// `T0` SGD steps on `g(x0, ·)` with step `α_init`, on the same stream
/// paths as the accelerated warm start.
pub fn sgd_warm_start(
    inst: &BilevelInstance,
    x0: &Vector,
    y_init: &Vector,
    sched: &Schedule,
    stream: &RandomStream,
) -> Result<Vector> {
    let mut y = y_init.clone();
    for t in 0..sched.warm_start_steps {
        y = sgd_tracking_step(
            &y,
            |w, s| inst.stoch_grad_y_g_at(x0, w, sched.sigma_g1, s),
            sched.alpha_init,
            &stream.child("warm", t),
        )?;
    }
    Ok(y)
}

/// `m_t = β m_{t−1} + (1−β)∇̄f(x_t, ŷ_t; ξ̄_t)`, with `m_0 = ∇̄f(x_0, ŷ_0; ξ̄_0)`.
pub fn plain_momentum_update(
    state: &AccboState,
    inst: &BilevelInstance,
    cfg: &EstimatorConfig,
    beta: f64,
    stream: &RandomStream,
) -> Result<(Vector, CallCounts)> {
    let g = estimate_hypergradient(inst, &state.x, &state.y_hat, cfg, &stream.child("upper", state.t))?;
    let m = match &state.m {
        None => g.value,
        Some(m_prev) => m_prev * beta + g.value * (1.0 - beta),
    };
    Ok((m, g.calls))
}

/// Plain-momentum bilevel run sharing the log schema of the accelerated
/// method. Uses `alpha` for the SGD lower step.
pub fn run_plain_momentum_bilevel(
    inst: &BilevelInstance,
    sched: &Schedule,
    opts: &RunOptions,
    stream: &RandomStream,
) -> Result<RunOutput> {
    drive(inst, sched, Method::PlainMomentum, opts, stream)
}

/// Baseline schedule at the same target. Normalized momentum without the
/// correction term averages noise through `β` alone and pays for stale
/// gradients in its step, so it takes `1 − β = min{ε²/(4σ̄²), μ/(25·l_g1)}`,
/// `η = ε(1−β)/L0` and `T = ⌈4 d0/(η ε)⌉`, the choices under which it reaches
/// `ε` in `O(ε⁻⁴)` calls. Lower step sizes, warm start, batch and depth are
/// copied from `base`. `cal` plays the same role as in
/// [`ScheduleOverrides::desk`], so both methods see the same `L0` and `σ̄`.
pub fn plain_momentum_overrides(
    base: &ScheduleOverrides,
    c: &ProblemConstants,
    req: &ScheduleRequest,
    cal: Option<&Calibration>,
) -> Result<ScheduleOverrides> {
    let (l0, sigma_bar) = match cal {
        Some(k) => {
            k.validate()?;
            (k.l0, k.sigma_bar)
        }
        None => (derive_smoothness_constants(c)?.0, derive_sigma_bar(c)?),
    };
    if !(l0 > 0.0 && l0.is_finite()) {
        return Err(Error::constraint(format!("L0 must be > 0, got {l0}")));
    }
    let eps = req.epsilon;
    let one_minus_beta = if sigma_bar > 0.0 {
        (eps * eps / (4.0 * sigma_bar * sigma_bar)).min(c.mu / (25.0 * c.l_g1))
    } else {
        c.mu / (25.0 * c.l_g1)
    };
    let eta = eps * one_minus_beta / l0;
    let iterations = (4.0 * req.d0 / (eta * eps)).ceil();
    Ok(ScheduleOverrides {
        beta: 1.0 - one_minus_beta,
        eta,
        iterations: if iterations >= u64::MAX as f64 { u64::MAX } else { (iterations as u64).max(1) },
        l0: Some(l0),
        ..*base
    })
}

/// Distance `‖w_t − w_t*‖` for `t = 0..=horizon` of SGD tracking the drifting
/// family. Noise and drift use the same stream paths as
/// [`crate::snag::run_tracking_experiment`], so equal streams give paired runs.
#[allow(clippy::too_many_arguments)]
pub fn run_sgd_tracking(
    family: &QuadraticFamily,
    drift: &DriftProcess,
    alpha: f64,
    sigma: f64,
    horizon: u64,
    w0: &Vector,
    w0_star: &Vector,
    stream: &RandomStream,
) -> Result<Vec<f64>> {
    check_dim("w0", family.dim(), w0.len())?;
    drift.validate(family.dim())?;
    let mut w = w0.clone();
    let mut w_star = drift.initial(w0_star);
    let mut out = Vec::with_capacity(horizon as usize + 1);
    for t in 0..=horizon {
        out.push((&w - &w_star).norm());
        if t == horizon {
            break;
        }
        w = sgd_tracking_step(
            &w,
            |z, s| Ok(family.gradient(z, &w_star) + sub_gaussian_noise(&s.child("noise", t), z.len(), sigma)),
            alpha,
            stream,
        )?;
        w_star = drift.advance(&w_star, t, stream);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
