//! Hyperparameter schedules for the accelerated bilevel optimizer.
//!
//! [`ScheduleMode::Theorem`] evaluates the closed-form choices that come with
//! the convergence guarantee. Those choices carry large numeric constants and a
//! logarithmic factor, so at desk scale they prescribe billions of iterations;
//! [`ScheduleOverrides::desk`] keeps the same functional forms with a tunable
//! constant in place of the large factor and is fed through
//! [`ScheduleMode::Practical`]. Its output also carries `σ̃` and `L0`, so the
//! tracking invariants of a practical schedule are measured against the
//! same scales the preset used.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::constants::{
    derive_estimator_lipschitz, derive_sigma_bar, derive_smoothness_constants, ProblemConstants,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub alpha: f64,
    pub alpha_init: f64,
    pub beta: f64,
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub iterations: u64,
    pub warm_start_steps: u64,
    pub period: u64,
    pub inner_steps: u64,
    pub batch: u64,
    pub depth: u64,
    /// Lower-level gradient noise the run should use; defaults to the
    /// instance's `sigma_g1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_g1: Option<f64>,
    /// Noise scale `σ̃` behind the ŷ step bound; defaults to the instance's
    /// `sigma_g1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_tilde: Option<f64>,
    /// Smoothness scale behind the tracking radius; defaults to the certified `L0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l0: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ScheduleMode {
    Theorem,
    Practical(ScheduleOverrides),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRequest {
    pub epsilon: f64,
    pub delta: f64,
    /// Initial suboptimality `Φ(x0) − inf Φ`.
    pub d0: f64,
    /// `‖y_init − y*(x0)‖`, needed for the warm-start length.
    pub init_dist: f64,
    pub mode: ScheduleMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScheduleWarning {
    /// `epsilon` exceeds the admissibility ceiling of the theorem.
    EpsilonAboveCeiling { ceiling: f64 },
    /// `alpha > 1/(25·l_g1)`, outside the step range of the tracking bounds.
    AlphaAboveStabilityLimit { alpha: f64, limit: f64 },
    /// The log constant `P` is below 4, where the parameter lemma is vacuous.
    LogConstantBelowFour { p: f64 },
}

/// Every hyperparameter of one AccBO run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub alpha: f64,
    pub alpha_init: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub tau: f64,
    /// Outer iterations `T`.
    pub iterations: u64,
    /// Warm-start SNAG steps `T0`.
    pub warm_start_steps: u64,
    /// Option II round period `I`.
    pub period: u64,
    /// Option II inner SNAG steps `N`.
    pub inner_steps: u64,
    /// Batch size `S`.
    pub batch: u64,
    /// Neumann depth `Q`.
    pub depth: u64,
    /// `ln P`; `NaN` when the schedule was not derived from the theorem.
    pub log_p: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub d0: f64,
    /// Lower-level gradient noise level the run is configured for.
    pub sigma_g1: f64,
    /// `2ε/L0`, the averaged-iterate tracking radius.
    pub tracking_radius: f64,
    /// `με²/(24·L0²·σ̃_{g,1})`, the bound on consecutive averaged-iterate moves.
    pub yhat_step_bound: f64,
    pub epsilon_ceiling: f64,
    pub warnings: Vec<ScheduleWarning>,
}

/// Measured stand-ins for `L0` and `σ̄`, see [`ScheduleOverrides::desk`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub l0: f64,
    pub sigma_bar: f64,
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("l0", self.l0), ("sigma_bar", self.sigma_bar)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::constraint(format!("calibrated {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn momentum_gamma(mu: f64, alpha: f64) -> f64 {
    let s = (mu * alpha).sqrt();
    (1.0 - s) / (1.0 + s)
}

fn ceil_count(name: &str, v: f64) -> Result<u64> {
    if v.is_nan() {
        return Err(Error::constraint(format!("{name} evaluated to NaN")));
    }
    if v <= 1.0 {
        return Ok(1);
    }
    if v >= u64::MAX as f64 {
        return Ok(u64::MAX);
    }
    Ok(v.ceil() as u64)
}

fn ratio_or_inf(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Warm-start length `T0` for lower step `alpha`.
pub fn warm_start_length(mu: f64, alpha: f64, epsilon: f64, l0: f64, init_dist: f64) -> Result<u64> {
    if init_dist <= 0.0 {
        return Ok(1);
    }
    let arg = (mu * alpha).powi(3) * epsilon * epsilon / (256.0 * l0 * l0 * init_dist * init_dist);
    if arg >= 1.0 {
        return Ok(1);
    }
    ceil_count("T0", arg.ln() / (1.0 - mu * alpha / 4.0).ln())
}

/// Option II round length `N`.
pub fn inner_round_length(mu: f64, alpha: f64) -> Result<u64> {
    let s = (mu * alpha).sqrt();
    ceil_count("N", (mu * alpha / 128.0).ln() / (1.0 - s / 4.0).ln())
}

/// Smallest depth `Q` whose bias bound `(l·l_f0/μ)(1−μ/l)^Q` is at most `epsilon`.
pub fn neumann_depth(c: &ProblemConstants, epsilon: f64) -> Result<u64> {
    let ratio = c.mu * epsilon / (c.l_g1 * c.l_f0);
    if c.l_g1 <= c.mu || c.l_f0 == 0.0 || ratio >= 1.0 {
        return Ok(1);
    }
    ceil_count("Q", ratio.ln() / (1.0 - c.mu / c.l_g1).ln())
}

struct Common {
    l0: f64,
    l1: f64,
    sigma_bar: f64,
    /// `max{l_g1/σ̃, σ̄/d0}`
    spread: f64,
}

fn common(c: &ProblemConstants, req: &ScheduleRequest, sigma_tilde: f64) -> Result<Common> {
    let (l0, l1) = derive_smoothness_constants(c)?;
    if l0 <= 0.0 {
        return Err(Error::constraint("L0 must be > 0 to derive a schedule"));
    }
    let sigma_bar = derive_sigma_bar(c)?;
    Ok(Common {
        l0,
        l1,
        sigma_bar,
        spread: (c.l_g1 / sigma_tilde).max(sigma_bar / req.d0),
    })
}

fn validate_request(c: &ProblemConstants, req: &ScheduleRequest) -> Result<()> {
    c.validate()?;
    if !(req.epsilon > 0.0 && req.epsilon.is_finite()) {
        return Err(Error::constraint(format!("epsilon must be > 0, got {}", req.epsilon)));
    }
    if !(req.delta > 0.0 && req.delta < 1.0) {
        return Err(Error::constraint(format!("delta must lie in (0, 1), got {}", req.delta)));
    }
    if !(req.d0 > 0.0 && req.d0.is_finite()) {
        return Err(Error::constraint(format!("d0 must be > 0, got {}", req.d0)));
    }
    if !(req.init_dist >= 0.0 && req.init_dist.is_finite()) {
        return Err(Error::constraint(format!("init_dist must be >= 0, got {}", req.init_dist)));
    }
    Ok(())
}

/// Admissibility ceiling on `epsilon`.
fn epsilon_ceiling(c: &ProblemConstants, req: &ScheduleRequest, cm: &Common, sigma_tilde: f64) -> Result<f64> {
    let (mu, l, l0, l1) = (c.mu, c.l_g1, cm.l0, cm.l1);
    let lbar1 = derive_estimator_lipschitz(c, 1, 2.0 * req.epsilon / l0)?.1;
    let terms = [
        ratio_or_inf(l0, 32.0 * l1),
        ratio_or_inf(l * l0, mu * lbar1),
        ratio_or_inf(l0, 8.0 * lbar1),
        l0 * l * sigma_tilde / (mu * mu),
        (l0 / mu) * ratio_or_inf(l * sigma_tilde, l1).sqrt(),
        (164.0 * 32.0 * E * req.d0 * l0 * l0 * sigma_tilde * sigma_tilde / (req.delta * mu * mu) * cm.spread)
            .cbrt(),
    ];
    Ok(terms.into_iter().fold(f64::INFINITY, f64::min))
}

fn theorem_schedule(c: &ProblemConstants, req: &ScheduleRequest) -> Result<Schedule> {
    let sigma_tilde = c.sigma_g1;
    if sigma_tilde <= 0.0 {
        return Err(Error::constraint(
            "theorem mode needs a positive sigma_g1 scale (the noise scale σ̃)",
        ));
    }
    let cm = common(c, req, sigma_tilde)?;
    let (mu, l, eps) = (c.mu, c.l_g1, req.epsilon);
    let (l0, l1, sigma_bar) = (cm.l0, cm.l1, cm.sigma_bar);

    let p_sqrt = 170.0 * 64.0 * E * req.d0 * l0 * l0 * sigma_tilde * sigma_tilde
        / (req.delta * mu * mu * eps.powi(3))
        * cm.spread;
    let p = p_sqrt * p_sqrt;
    let log_p = p.ln();

    let one_minus_beta = [
        mu * mu * eps * eps / (164.0 * 16.0 * l0 * l0 * sigma_tilde * sigma_tilde * log_p),
        ratio_or_inf(l, 4.0 * sigma_tilde * l1),
        ratio_or_inf(eps * eps, 4.0 * sigma_bar * sigma_bar),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    if !(one_minus_beta > 0.0 && one_minus_beta < 1.0) {
        return Err(Error::constraint(format!(
            "1 - beta = {one_minus_beta} is outside (0, 1); epsilon is far too large for this problem"
        )));
    }
    let beta = 1.0 - one_minus_beta;
    let omb = 1.0 - beta;
    let alpha = omb / mu;
    let eta = (sigma_tilde / l).min(req.d0 / sigma_bar) * omb;
    let depth = neumann_depth(c, eps)?;
    let radius = 2.0 * eps / l0;
    let (lbar0, _) = derive_estimator_lipschitz(c, depth, radius)?;
    let batch = ceil_count(
        "S",
        (128.0 * log_p)
            .max(128.0 * lbar0 * lbar0 / (l0 * l0) * log_p)
            .max(mu * mu * lbar0 * lbar0 / (l * l * l0 * l0)),
    )?;

    let mut sched = Schedule {
        alpha,
        alpha_init: omb / (mu + l),
        beta,
        gamma: momentum_gamma(mu, alpha),
        eta,
        tau: (mu * alpha).sqrt(),
        iterations: ceil_count("T", 4.0 * req.d0 / (eta * eps))?,
        warm_start_steps: warm_start_length(mu, alpha, eps, l0, req.init_dist)?,
        period: ceil_count("I", mu * eps / (2.0 * omb * l0 * sigma_tilde))?,
        inner_steps: inner_round_length(mu, alpha)?,
        batch,
        depth,
        log_p,
        epsilon: eps,
        delta: req.delta,
        d0: req.d0,
        sigma_g1: omb.powf(0.25) * sigma_tilde,
        tracking_radius: radius,
        yhat_step_bound: mu * eps * eps / (24.0 * l0 * l0 * sigma_tilde),
        epsilon_ceiling: epsilon_ceiling(c, req, &cm, sigma_tilde)?,
        warnings: Vec::new(),
    };
    if p < 4.0 {
        sched.warnings.push(ScheduleWarning::LogConstantBelowFour { p });
    }
    finish_warnings(c, &mut sched);
    Ok(sched)
}

fn finish_warnings(c: &ProblemConstants, s: &mut Schedule) {
    if s.epsilon > s.epsilon_ceiling {
        s.warnings.push(ScheduleWarning::EpsilonAboveCeiling {
            ceiling: s.epsilon_ceiling,
        });
    }
    let limit = 1.0 / (25.0 * c.l_g1);
    if s.alpha > limit {
        s.warnings.push(ScheduleWarning::AlphaAboveStabilityLimit { alpha: s.alpha, limit });
    }
}

fn practical_schedule(c: &ProblemConstants, req: &ScheduleRequest, o: &ScheduleOverrides) -> Result<Schedule> {
    let mu = c.mu;
    let positive = [("alpha", o.alpha), ("alpha_init", o.alpha_init), ("eta", o.eta)];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::constraint(format!("{name} must be > 0, got {v}")));
        }
    }
    if mu * o.alpha > 1.0 || mu * o.alpha_init > 1.0 {
        return Err(Error::constraint("mu * alpha must be <= 1"));
    }
    if !(0.0..1.0).contains(&o.beta) {
        return Err(Error::constraint(format!("beta must lie in [0, 1), got {}", o.beta)));
    }
    let tau = o.tau.unwrap_or_else(|| (mu * o.alpha).sqrt());
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::constraint(format!("tau must lie in (0, 1], got {tau}")));
    }
    let counts = [
        ("iterations", o.iterations),
        ("warm_start_steps", o.warm_start_steps),
        ("period", o.period),
        ("inner_steps", o.inner_steps),
        ("batch", o.batch),
        ("depth", o.depth),
    ];
    for (name, v) in counts {
        if v == 0 {
            return Err(Error::constraint(format!("{name} must be >= 1")));
        }
    }
    let sigma_g1 = o.sigma_g1.unwrap_or(c.sigma_g1);
    if !(sigma_g1 >= 0.0 && sigma_g1.is_finite()) {
        return Err(Error::constraint(format!("sigma_g1 must be >= 0, got {sigma_g1}")));
    }
    let l0 = match o.l0 {
        Some(v) if v > 0.0 && v.is_finite() => v,
        Some(v) => return Err(Error::constraint(format!("l0 must be > 0, got {v}"))),
        None => derive_smoothness_constants(c)?.0,
    };
    let scale = match o.sigma_tilde {
        Some(v) if v > 0.0 && v.is_finite() => v,
        Some(v) => return Err(Error::constraint(format!("sigma_tilde must be > 0, got {v}"))),
        None if c.sigma_g1 > 0.0 => c.sigma_g1,
        None => 1.0,
    };
    let mut sched = Schedule {
        alpha: o.alpha,
        alpha_init: o.alpha_init,
        beta: o.beta,
        gamma: momentum_gamma(mu, o.alpha),
        eta: o.eta,
        tau,
        iterations: o.iterations,
        warm_start_steps: o.warm_start_steps,
        period: o.period,
        inner_steps: o.inner_steps,
        batch: o.batch,
        depth: o.depth,
        log_p: f64::NAN,
        epsilon: req.epsilon,
        delta: req.delta,
        d0: req.d0,
        sigma_g1,
        tracking_radius: 2.0 * req.epsilon / l0,
        yhat_step_bound: mu * req.epsilon * req.epsilon / (24.0 * l0 * l0 * scale),
        epsilon_ceiling: f64::NAN,
        warnings: Vec::new(),
    };
    if o.sigma_tilde.is_some() || c.sigma_g1 > 0.0 {
        let cm = common(c, req, scale)?;
        sched.epsilon_ceiling = epsilon_ceiling(c, req, &cm, scale)?;
    }
    finish_warnings(c, &mut sched);
    Ok(sched)
}

/// Derive a full schedule. Pure: identical inputs give bit-identical output.
pub fn derive_schedule(c: &ProblemConstants, req: &ScheduleRequest) -> Result<Schedule> {
    validate_request(c, req)?;
    match &req.mode {
        ScheduleMode::Theorem => theorem_schedule(c, req),
        ScheduleMode::Practical(o) => practical_schedule(c, req, o),
    }
}

impl ScheduleOverrides {
    /// Desk-scale preset with the theorem's functional forms.
    ///
    /// The momentum gap is
    /// `1 − β = min{μ²ε²/(κ·L0²σ̃²), l_g1/(4σ̃L1), ε²/(4σ̄²), μ/(25·l_g1)}`
    /// with `κ` in place of the theorem's `164·16·ln P`; the last term keeps
    /// `α = (1−β)/μ` inside the tracking bounds' step range. The noise scale
    /// is the free parameter `σ̃ = 2μσ̄/(√κ·L0)`, where the first and third
    /// terms meet: smaller `σ̃` shrinks `η`, larger `σ̃` shrinks `1 − β`, and
    /// either way `T` grows. Every other quantity (`η`, `α_init`, `τ`, `T0`,
    /// `I`, `N`, `Q`, `T` and the lower-level noise `(1−β)^{1/4}σ̃`) follows
    /// the theorem's formulas.
    ///
    /// `cal` replaces the certified `L0` and `σ̄` by measured values for
    /// instances whose certified constants are far looser than the curvature
    /// and noise met along a run.
    pub fn desk(
        c: &ProblemConstants,
        req: &ScheduleRequest,
        kappa: f64,
        batch: u64,
        cal: Option<&Calibration>,
    ) -> Result<Self> {
        validate_request(c, req)?;
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::constraint(format!("kappa must be > 0, got {kappa}")));
        }
        let (l0_cert, l1) = derive_smoothness_constants(c)?;
        let (l0, sigma_bar) = match cal {
            Some(k) => {
                k.validate()?;
                (k.l0, k.sigma_bar)
            }
            None => (l0_cert, derive_sigma_bar(c)?),
        };
        if !(l0 > 0.0 && sigma_bar > 0.0) {
            return Err(Error::constraint("desk preset needs L0 > 0 and sigma_bar > 0"));
        }
        let (mu, l, eps) = (c.mu, c.l_g1, req.epsilon);
        let sigma_tilde = 2.0 * mu * sigma_bar / (kappa.sqrt() * l0);
        let one_minus_beta = [
            mu * mu * eps * eps / (kappa * l0 * l0 * sigma_tilde * sigma_tilde),
            ratio_or_inf(l, 4.0 * sigma_tilde * l1),
            eps * eps / (4.0 * sigma_bar * sigma_bar),
            mu / (25.0 * l),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
        let beta = 1.0 - one_minus_beta;
        let omb = 1.0 - beta;
        let alpha = omb / mu;
        let eta = (sigma_tilde / l).min(req.d0 / sigma_bar) * omb;
        Ok(Self {
            alpha,
            alpha_init: omb / (mu + l),
            beta,
            eta,
            tau: Some((mu * alpha).sqrt()),
            iterations: ceil_count("T", 4.0 * req.d0 / (eta * eps))?,
            warm_start_steps: warm_start_length(mu, alpha, eps, l0, req.init_dist)?,
            period: ceil_count("I", mu * eps / (2.0 * omb * l0 * sigma_tilde))?,
            inner_steps: inner_round_length(mu, alpha)?,
            batch: batch.max(1),
            depth: neumann_depth(c, eps)?,
            sigma_g1: Some(omb.powf(0.25) * sigma_tilde),
            sigma_tilde: Some(sigma_tilde),
            l0: Some(l0),
        })
    }
}
