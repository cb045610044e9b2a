//! The accelerated bilevel optimizer: warm start, lower-level tracking by
//! SNAG (single-loop Option I or periodic rounds, Option II), iterate
//! averaging, and a normalized upper step driven by recursive momentum.
//!
//! Stream layout below a run's stream: `("warm", t)` for the warm start,
//! `("lower", t)` for lower steps (Option II rounds use
//! `("lower", t)/("inner", j)`), and `("upper", t)` for the sample bundle
//! `ξ̄_t` shared by both estimator calls of iteration `t`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::hypergrad::{estimate_hypergradient, CallCounts, EstimatorConfig};
use crate::io::{format_f64, CsvRecord};
use crate::linalg::{all_finite, Vector};
use crate::problems::BilevelInstance;
use crate::schedule::Schedule;
use crate::snag::SnagState;
use crate::stream::RandomStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerOption {
    /// One SNAG step per outer iteration; isotropic lower levels only.
    One,
    /// `N` SNAG steps at fixed `x_t` every `I` outer iterations.
    Two,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccboState {
    pub x: Vector,
    pub x_prev: Vector,
    pub y: Vector,
    pub y_prev: Vector,
    pub y_hat: Vector,
    pub y_hat_prev: Vector,
    /// `None` before the first momentum update.
    pub m: Option<Vector>,
    pub t: u64,
}

impl AccboState {
    /// State after the warm start: `y_{−1} = ŷ_0 = y_0`, `x_{−1} = x_0`.
    pub fn new(x0: Vector, y0: Vector) -> Self {
        Self {
            x_prev: x0.clone(),
            x: x0,
            y_prev: y0.clone(),
            y_hat: y0.clone(),
            y_hat_prev: y0.clone(),
            y: y0,
            m: None,
            t: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub t: u64,
    /// `‖∇Φ(x_t)‖`.
    pub grad_norm: f64,
    pub m_norm: f64,
    /// `‖y_t − y*(x_t)‖`.
    pub y_err: f64,
    /// `‖ŷ_t − y*(x_t)‖`.
    pub yhat_err: f64,
    /// `‖ŷ_{t+1} − ŷ_t‖`.
    pub yhat_step: f64,
    /// `‖m_t − ∇Φ(x_t)‖`.
    pub m_err: f64,
    /// Cumulative through iteration `t`, including the warm start.
    pub calls: CallCounts,
}

impl CsvRecord for IterationLog {
    const HEADER: &'static [&'static str] = &[
        "t", "grad_norm", "m_norm", "y_err", "yhat_err", "yhat_step", "calls_g1", "calls_jvp", "calls_hvp", "calls_f",
    ];
    fn write_fields(&self, out: &mut Vec<String>) {
        out.push(self.t.to_string());
        out.extend([self.grad_norm, self.m_norm, self.y_err, self.yhat_err, self.yhat_step].map(format_f64));
        out.extend([self.calls.g1, self.calls.jvp, self.calls.hvp, self.calls.f].map(|c| c.to_string()));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Initial upper iterate; zeros when absent.
    pub x0: Option<Vec<f64>>,
    /// Replaces the schedule's iteration count.
    pub max_iterations: Option<u64>,
    /// Running-average target on `‖∇Φ‖`; the first iteration meeting it is
    /// recorded in the summary.
    pub target: Option<f64>,
    /// Stop as soon as `target` is met.
    pub stop_at_target: bool,
    /// Stop once total oracle calls reach this budget.
    pub max_calls: Option<u64>,
    /// Keep every `log_stride`-th log (and the last); 0 keeps none.
    pub log_stride: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            x0: None,
            max_iterations: None,
            target: None,
            stop_at_target: false,
            max_calls: None,
            log_stride: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub iterations: u64,
    /// `(1/T)Σ_{t<T} ‖∇Φ(x_t)‖` over the iterations run.
    pub final_running_avg_grad_norm: f64,
    pub final_grad_norm: f64,
    pub total_calls: CallCounts,
    pub total_oracle_calls: u64,
    pub zero_momentum_events: u64,
    /// `‖y_0 − y*(x_0)‖` after the warm start.
    pub warm_start_error: f64,
    pub target: Option<f64>,
    pub reached_target_at: Option<u64>,
    pub calls_to_target: Option<u64>,
    /// Fraction of iterations with `‖ŷ_t − y*(x_t)‖ ≤ 2ε/L0`.
    pub yhat_radius_fraction: f64,
    /// Fraction of iterations with `‖ŷ_{t+1} − ŷ_t‖ ≤ ϑ`.
    pub yhat_step_fraction: f64,
    /// Set when the run stopped on a non-finite value.
    pub aborted: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub logs: Vec<IterationLog>,
    pub summary: RunSummary,
}

/// `T0` SNAG steps on `g(x0, ·)` from `y_init` (zero in the algorithm).
pub fn warm_start(
    inst: &BilevelInstance,
    x0: &Vector,
    y_init: &Vector,
    alpha_init: f64,
    steps: u64,
    sigma_g1: f64,
    stream: &RandomStream,
) -> Result<Vector> {
    check_dim("y_init", inst.dim_y(), y_init.len())?;
    let mut s = SnagState::new(y_init.clone(), inst.constants().mu, alpha_init);
    for t in 0..steps {
        s.step(|z, st| inst.stoch_grad_y_g_at(x0, z, sigma_g1, st), &stream.child("warm", t))?;
    }
    Ok(s.w)
}

/// Option I: one SNAG step on `g(x_t, ·)` from `(y_t, y_{t−1})`.
pub fn lower_step_option1(
    state: &AccboState,
    inst: &BilevelInstance,
    sched: &Schedule,
    stream: &RandomStream,
) -> Result<Vector> {
    let mut s = SnagState {
        w: state.y.clone(),
        w_prev: state.y_prev.clone(),
        alpha: sched.alpha,
        gamma: sched.gamma,
        t: state.t,
    };
    s.step(
        |z, st| inst.stoch_grad_y_g_at(&state.x, z, sched.sigma_g1, st),
        &stream.child("lower", state.t),
    )?;
    Ok(s.w)
}

/// Option II round: `N` SNAG steps on `g(x_t, ·)` restarted at
/// `y^0 = y^{−1} = y_t`; returns the final inner iterate.
pub fn lower_round_option2(
    state: &AccboState,
    inst: &BilevelInstance,
    sched: &Schedule,
    inner_steps: u64,
    stream: &RandomStream,
) -> Result<Vector> {
    let round = stream.child("lower", state.t);
    let mut s = SnagState::with_gamma(state.y.clone(), sched.alpha, sched.gamma);
    for j in 0..inner_steps {
        s.step(
            |z, st| inst.stoch_grad_y_g_at(&state.x, z, sched.sigma_g1, st),
            &round.child("inner", j),
        )?;
    }
    Ok(s.w)
}

/// `(1−τ)ŷ + τ y_next`.
pub fn average_step(y_hat: &Vector, y_next: &Vector, tau: f64) -> Vector {
    y_hat * (1.0 - tau) + y_next * tau
}

/// `β m_prev + (1−β) g_t + β(g_t − g_prev)` where `g_prev` re-evaluates the
/// estimator at `(x_{t−1}, ŷ_{t−1})` with the same samples as `g_t`.
pub fn momentum_combine(m_prev: &Vector, g_t: &Vector, g_prev: &Vector, beta: f64) -> Vector {
    m_prev * beta + g_t * (1.0 - beta) + (g_t - g_prev) * beta
}

/// Recursive-momentum update for iteration `state.t`; returns `m_t` and the
/// oracle calls spent.
pub fn momentum_update(
    state: &AccboState,
    inst: &BilevelInstance,
    cfg: &EstimatorConfig,
    beta: f64,
    stream: &RandomStream,
) -> Result<(Vector, CallCounts)> {
    let bundle = stream.child("upper", state.t);
    let g = estimate_hypergradient(inst, &state.x, &state.y_hat, cfg, &bundle)?;
    match &state.m {
        None => Ok((g.value, g.calls)),
        Some(m_prev) => {
            let g_prev = estimate_hypergradient(inst, &state.x_prev, &state.y_hat_prev, cfg, &bundle)?;
            Ok((momentum_combine(m_prev, &g.value, &g_prev.value, beta), g.calls + g_prev.calls))
        }
    }
}

/// `x − η m/‖m‖`; a zero `m` leaves `x` unchanged and returns `false`.
pub fn upper_step(x: &Vector, m: &Vector, eta: f64) -> (Vector, bool) {
    let n = m.norm();
    if n > 0.0 {
        (x - m * (eta / n), true)
    } else {
        (x.clone(), false)
    }
}

/// Run the optimizer; see the module docs for the stream layout.
pub fn run_accbo(
    inst: &BilevelInstance,
    sched: &Schedule,
    option: LowerOption,
    opts: &RunOptions,
    stream: &RandomStream,
) -> Result<RunOutput> {
    if option == LowerOption::One && !inst.has_isotropic_lower() {
        return Err(Error::constraint(format!(
            "Option I needs an isotropic quadratic lower level, got {}",
            inst.kind_name()
        )));
    }
    drive(inst, sched, Method::Accbo(option), opts, stream)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Method {
    Accbo(LowerOption),
    PlainMomentum,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Self::Accbo(LowerOption::One) => "accbo_option1",
            Self::Accbo(LowerOption::Two) => "accbo_option2",
            Self::PlainMomentum => "plain_momentum",
        }
    }
}

struct Tally {
    grad_sum: f64,
    radius_ok: u64,
    step_ok: u64,
    zero_events: u64,
    reached: Option<(u64, u64)>,
}

pub(crate) fn drive(
    inst: &BilevelInstance,
    sched: &Schedule,
    method: Method,
    opts: &RunOptions,
    stream: &RandomStream,
) -> Result<RunOutput> {
    let cfg = EstimatorConfig::for_instance(inst, sched.depth, sched.batch)?;
    let x0 = match &opts.x0 {
        Some(v) => Vector::from_column_slice(v),
        None => Vector::zeros(inst.dim_x()),
    };
    check_dim("x0", inst.dim_x(), x0.len())?;
    let iterations = opts.max_iterations.unwrap_or(sched.iterations);
    let y_init = Vector::zeros(inst.dim_y());
    let y0 = match method {
        Method::Accbo(_) => warm_start(inst, &x0, &y_init, sched.alpha_init, sched.warm_start_steps, sched.sigma_g1, stream)?,
        Method::PlainMomentum => crate::baselines::sgd_warm_start(inst, &x0, &y_init, sched, stream)?,
    };
    let mut calls = CallCounts {
        g1: sched.warm_start_steps,
        ..CallCounts::default()
    };
    let warm_start_error = (&y0 - inst.lower_minimizer(&x0)?).norm();
    let mut st = AccboState::new(x0, y0);
    let mut logs = Vec::new();
    let mut tally = Tally {
        grad_sum: 0.0,
        radius_ok: 0,
        step_ok: 0,
        zero_events: 0,
        reached: None,
    };
    let mut last_grad = f64::NAN;
    let mut aborted = None;
    let mut done = 0;
    for t in 0..iterations {
        st.t = t;
        match iterate(inst, sched, method, &cfg, &mut st, &mut calls, &mut tally, stream) {
            Ok(log) => {
                done = t + 1;
                last_grad = log.grad_norm;
                let keep = opts.log_stride > 0 && (t % opts.log_stride == 0 || t + 1 == iterations);
                let avg = tally.grad_sum / done as f64;
                let newly_reached = tally.reached.is_none() && opts.target.is_some_and(|target| avg <= target);
                if newly_reached {
                    tally.reached = Some((t, log.calls.total()));
                }
                let stop = (newly_reached && opts.stop_at_target) || opts.max_calls.is_some_and(|b| calls.total() >= b);
                if keep || (stop && opts.log_stride > 0) {
                    logs.push(log);
                }
                if stop {
                    break;
                }
            }
            Err(Error::NonFinite { context, step }) => {
                aborted = Some(format!("non-finite value in {context} at iteration {t} (inner step {step})"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let frac = |k: u64| if done == 0 { 1.0 } else { k as f64 / done as f64 };
    let summary = RunSummary {
        method: method.name().to_string(),
        iterations: done,
        final_running_avg_grad_norm: if done == 0 { f64::NAN } else { tally.grad_sum / done as f64 },
        final_grad_norm: last_grad,
        total_calls: calls,
        total_oracle_calls: calls.total(),
        zero_momentum_events: tally.zero_events,
        warm_start_error,
        target: opts.target,
        reached_target_at: tally.reached.map(|r| r.0),
        calls_to_target: tally.reached.map(|r| r.1),
        yhat_radius_fraction: frac(tally.radius_ok),
        yhat_step_fraction: frac(tally.step_ok),
        aborted,
    };
    Ok(RunOutput { logs, summary })
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    inst: &BilevelInstance,
    sched: &Schedule,
    method: Method,
    cfg: &EstimatorConfig,
    st: &mut AccboState,
    calls: &mut CallCounts,
    tally: &mut Tally,
    stream: &RandomStream,
) -> Result<IterationLog> {
    let t = st.t;
    let y_star = inst.lower_minimizer(&st.x)?;
    let true_grad = inst.true_hypergradient(&st.x)?;

    let y_next = match method {
        Method::Accbo(LowerOption::One) => {
            calls.g1 += 1;
            lower_step_option1(st, inst, sched, stream)?
        }
        Method::Accbo(LowerOption::Two) => {
            if t > 0 && t.is_multiple_of(sched.period) {
                calls.g1 += sched.inner_steps;
                lower_round_option2(st, inst, sched, sched.inner_steps, stream)?
            } else {
                st.y.clone()
            }
        }
        Method::PlainMomentum => {
            calls.g1 += 1;
            crate::baselines::sgd_tracking_step(
                &st.y,
                |w, s| inst.stoch_grad_y_g_at(&st.x, w, sched.sigma_g1, s),
                sched.alpha,
                &stream.child("lower", t),
            )?
        }
    };
    let y_hat_next = average_step(&st.y_hat, &y_next, sched.tau);

    let (m, spent) = match method {
        Method::Accbo(_) => momentum_update(st, inst, cfg, sched.beta, stream)?,
        Method::PlainMomentum => crate::baselines::plain_momentum_update(st, inst, cfg, sched.beta, stream)?,
    };
    *calls += spent;
    let (x_next, moved) = upper_step(&st.x, &m, sched.eta);
    if !all_finite(&x_next) || !all_finite(&y_hat_next) || !all_finite(&m) {
        return Err(Error::NonFinite {
            context: "iterate",
            step: t,
        });
    }
    if !moved {
        tally.zero_events += 1;
        log::debug!("zero momentum at iteration {t}; upper step skipped");
    }

    let grad_norm = true_grad.norm();
    let yhat_err = (&st.y_hat - &y_star).norm();
    let yhat_step = (&y_hat_next - &st.y_hat).norm();
    tally.grad_sum += grad_norm;
    tally.radius_ok += u64::from(yhat_err <= sched.tracking_radius);
    tally.step_ok += u64::from(yhat_step <= sched.yhat_step_bound);
    let log = IterationLog {
        t,
        grad_norm,
        m_norm: m.norm(),
        y_err: (&st.y - &y_star).norm(),
        yhat_err,
        yhat_step,
        m_err: (&m - &true_grad).norm(),
        calls: *calls,
    };

    st.x_prev = std::mem::replace(&mut st.x, x_next);
    st.y_prev = std::mem::replace(&mut st.y, y_next);
    st.y_hat_prev = std::mem::replace(&mut st.y_hat, y_hat_next);
    st.m = Some(m);
    Ok(log)
}
