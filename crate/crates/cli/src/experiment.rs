//! Schedule planning and seed fan-out shared by `accbo`, `sweep` and the
//! acceptance suite.

use accbo_core::accbo::{run_accbo, LowerOption, RunOptions, RunOutput};
use accbo_core::baselines::{plain_momentum_overrides, run_plain_momentum_bilevel};
use accbo_core::hypergrad::calibrate;
use accbo_core::schedule::{derive_schedule, neumann_depth, Calibration, ScheduleOverrides};
use accbo_core::stream::gaussian_vector;
use accbo_core::{BilevelInstance, RandomStream, Schedule, ScheduleMode, ScheduleRequest, Vector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, CalibrationConfig, ScheduleConfig};
use crate::error::{CliError, CliResult};

/// Inputs that fix the schedules of one `(instance, ε)` cell.
#[derive(Clone, Debug)]
pub struct CellSetup<'a> {
    pub schedule: &'a ScheduleConfig,
    pub calibration: Option<&'a CalibrationConfig>,
    pub epsilon: f64,
    pub delta: f64,
    pub target_factor: f64,
    pub x0: Option<&'a [f64]>,
    pub d0: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellPlan {
    pub epsilon: f64,
    pub target: f64,
    pub d0: f64,
    pub init_dist: f64,
    pub calibration: Option<Calibration>,
    pub accbo: Schedule,
    pub baseline: Schedule,
}

impl CellPlan {
    pub fn schedule(&self, algorithm: Algorithm) -> &Schedule {
        match algorithm {
            Algorithm::Accbo => &self.accbo,
            Algorithm::PlainMomentum => &self.baseline,
        }
    }
}

pub fn x0_vector(inst: &BilevelInstance, x0: Option<&[f64]>) -> CliResult<Vector> {
    match x0 {
        Some(v) if v.len() != inst.dim_x() => Err(CliError::config(format!(
            "at `x0`: expected {} entries, got {}",
            inst.dim_x(),
            v.len()
        ))),
        Some(v) => Ok(Vector::from_column_slice(v)),
        None => Ok(Vector::zeros(inst.dim_x())),
    }
}

/// `x0` plus `probes` Gaussian points; the seed is independent of the run seeds
/// so a calibration is shared by every seed of a cell.
pub fn calibrate_instance(inst: &BilevelInstance, x0: &Vector, cfg: &CalibrationConfig, epsilon: f64) -> CliResult<Calibration> {
    let root = RandomStream::new(cfg.seed);
    let mut rng = root.child("probe", 0).rng();
    let mut points = vec![x0.clone()];
    points.extend((0..cfg.probes).map(|_| gaussian_vector(&mut rng, inst.dim_x(), cfg.spread)));
    let depth = neumann_depth(inst.constants(), epsilon)?;
    Ok(calibrate(inst, &points, depth, cfg.samples, &root.child("calibrate", 0))?)
}

fn overrides_of(s: &Schedule) -> ScheduleOverrides {
    ScheduleOverrides {
        alpha: s.alpha,
        alpha_init: s.alpha_init,
        beta: s.beta,
        eta: s.eta,
        tau: Some(s.tau),
        iterations: s.iterations,
        warm_start_steps: s.warm_start_steps,
        period: s.period,
        inner_steps: s.inner_steps,
        batch: s.batch,
        depth: s.depth,
        sigma_g1: Some(s.sigma_g1),
        sigma_tilde: None,
        l0: None,
    }
}

pub fn plan_cell(inst: &BilevelInstance, setup: &CellSetup) -> CliResult<CellPlan> {
    crate::config::check_positive("epsilon", setup.epsilon)?;
    crate::config::check_positive("target_factor", setup.target_factor)?;
    let c = inst.constants();
    let x0 = x0_vector(inst, setup.x0)?;
    let d0 = match setup.d0 {
        Some(d) => d,
        None => inst.phi_value(&x0)? - inst.phi_lower_bound()?,
    };
    let init_dist = inst.lower_minimizer(&x0)?.norm();
    let calibration = setup
        .calibration
        .map(|k| calibrate_instance(inst, &x0, k, setup.epsilon))
        .transpose()?;
    let base = ScheduleRequest {
        epsilon: setup.epsilon,
        delta: setup.delta,
        d0,
        init_dist,
        mode: ScheduleMode::Theorem,
    };
    let mode = match *setup.schedule {
        ScheduleConfig::Theorem => ScheduleMode::Theorem,
        ScheduleConfig::Practical(o) => ScheduleMode::Practical(o),
        ScheduleConfig::Desk { kappa, batch } => {
            ScheduleMode::Practical(ScheduleOverrides::desk(c, &base, kappa, batch, calibration.as_ref())?)
        }
    };
    let req = ScheduleRequest { mode, ..base };
    let accbo = derive_schedule(c, &req)?;
    let seed_overrides = match mode {
        ScheduleMode::Practical(o) => o,
        ScheduleMode::Theorem => overrides_of(&accbo),
    };
    let ob = plain_momentum_overrides(&seed_overrides, c, &req, calibration.as_ref())?;
    let baseline = derive_schedule(c, &ScheduleRequest { mode: ScheduleMode::Practical(ob), ..base })?;
    Ok(CellPlan {
        epsilon: setup.epsilon,
        target: setup.target_factor * setup.epsilon,
        d0,
        init_dist,
        calibration,
        accbo,
        baseline,
    })
}

pub fn seed_stream(base_seed: u64, k: u64) -> RandomStream {
    RandomStream::new(base_seed).child("seed", k)
}

/// Runs seeds `0..seeds` concurrently; results come back in seed order.
pub fn run_seeds(
    inst: &BilevelInstance,
    sched: &Schedule,
    algorithm: Algorithm,
    option: LowerOption,
    opts: &RunOptions,
    seeds: u64,
    base_seed: u64,
) -> CliResult<Vec<RunOutput>> {
    (0..seeds)
        .into_par_iter()
        .map(|k| {
            let stream = seed_stream(base_seed, k);
            let out = match algorithm {
                Algorithm::Accbo => run_accbo(inst, sched, option, opts, &stream),
                Algorithm::PlainMomentum => run_plain_momentum_bilevel(inst, sched, opts, &stream),
            }?;
            log::debug!("seed {k}: {} iterations, {} calls", out.summary.iterations, out.summary.total_oracle_calls);
            Ok(out)
        })
        .collect()
}

/// Median with `None` ordered above every value; `None` when the median
/// itself falls on an unreached run.
pub fn median_calls(values: &[Option<u64>]) -> Option<f64> {
    let mut v: Vec<Option<u64>> = values.to_vec();
    v.sort_by(|a, b| match (a, b) {
        (Some(x), Some(y)) => x.cmp(y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let n = v.len();
    if n == 0 {
        return None;
    }
    if n % 2 == 1 {
        v[n / 2].map(|x| x as f64)
    } else {
        match (v[n / 2 - 1], v[n / 2]) {
            (Some(a), Some(b)) => Some((a as f64 + b as f64) / 2.0),
            _ => None,
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Least-squares slope of `ln y` against `ln(1/ε)`; `None` with fewer than two
/// distinct points.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(e, y)| *e > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(e, y)| ((1.0 / e).ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
