use std::path::{Path, PathBuf};

use accbo_core::accbo::{LowerOption, RunOptions, RunOutput, RunSummary};
use accbo_core::hypergrad::{empirical_bias_and_variance, BiasReport, EstimatorConfig};
use accbo_core::io::{format_f64, to_csv};
use accbo_core::linalg::matrix_from_rows;
use accbo_core::snag::{
    initial_potential, mc_tracking_violation_rate, run_tracking_experiment, DriftProcess, QuadraticFamily,
    TrackingBoundParams,
};
use accbo_core::{BilevelInstance, RandomStream, Vector};
use serde::{Deserialize, Serialize};

use crate::config::{
    check_positive, check_seeds, load_instance, AccboConfig, Algorithm, BiasConfig, FamilySpec, SnagTrackConfig,
    SweepConfig,
};
use crate::error::{CliError, CliResult};
use crate::experiment::{median, median_calls, log_log_slope, plan_cell, run_seeds, x0_vector, CellPlan, CellSetup};
use crate::output::{write_json, write_text};

/// Command-line values that override or complement the config file.
#[derive(Clone, Debug, Default)]
pub struct Flags {
    pub out: PathBuf,
    pub seeds: Option<u64>,
    pub base_seed: Option<u64>,
    /// Directory relative instance paths are resolved against.
    pub base_dir: PathBuf,
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))
}

// ---------------------------------------------------------------- snag-track

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingCell {
    pub cell: usize,
    pub sigma: f64,
    pub drift: DriftProcess,
    pub bound_v0: f64,
    pub n_seeds: u64,
    pub violations: u64,
    pub violation_rate: f64,
    pub median_max_potential: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub alpha: f64,
    pub horizon: u64,
    pub delta_prob: f64,
    pub base_seed: u64,
    pub cells: Vec<TrackingCell>,
}

fn build_family(spec: &FamilySpec) -> CliResult<QuadraticFamily> {
    Ok(match spec {
        FamilySpec::Isotropic { mu, dim } => QuadraticFamily::isotropic(*mu, *dim)?,
        FamilySpec::Diagonal { diag } => QuadraticFamily::diagonal(diag)?,
        FamilySpec::Matrix { h } => {
            let m = matrix_from_rows(h).ok_or_else(|| CliError::config("at `family.h`: rows must be non-empty and equal length"))?;
            QuadraticFamily::new(m)?
        }
    })
}

pub fn snag_track(mut cfg: SnagTrackConfig, flags: &Flags) -> CliResult<TrackingSummary> {
    cfg.seeds = flags.seeds.unwrap_or(cfg.seeds);
    cfg.base_seed = flags.base_seed.unwrap_or(cfg.base_seed);
    check_seeds(cfg.seeds)?;
    if cfg.sigmas.is_empty() || cfg.drifts.is_empty() {
        return Err(CliError::config("`sigmas` and `drifts` must be non-empty"));
    }
    let family = build_family(&cfg.family)?;
    let w0 = Vector::from_column_slice(&cfg.w0);
    let w0_star = match &cfg.w0_star {
        Some(v) => Vector::from_column_slice(v),
        None => Vector::zeros(family.dim()),
    };
    if w0.len() != family.dim() || w0_star.len() != family.dim() {
        return Err(CliError::config(format!("at `w0`: family has dimension {}", family.dim())));
    }
    prepare_out(&flags.out)?;
    let root = RandomStream::new(cfg.base_seed);
    let mut cells = Vec::new();
    for (i, sigma) in cfg.sigmas.iter().enumerate() {
        for (j, drift) in cfg.drifts.iter().enumerate() {
            let cell = i * cfg.drifts.len() + j;
            let params = TrackingBoundParams {
                mu: family.mu(),
                alpha: cfg.alpha,
                sigma: *sigma,
                delta_drift: drift.delta(),
                horizon: cfg.horizon,
                delta_prob: cfg.delta_prob,
                v0: initial_potential(&family, &w0, &w0_star, cfg.alpha)?,
            };
            let stream = root.child("cell", cell as u64);
            let mc = mc_tracking_violation_rate(&family, drift, &params, &w0, &w0_star, cfg.seeds, &stream)?;
            for k in 0..cfg.trajectories.min(cfg.seeds) {
                let traj = run_tracking_experiment(&family, drift, &params, &w0, &w0_star, &stream.child("seed", k))?;
                write_text(&to_csv(&traj), &flags.out.join(format!("trajectory_{cell}_{k}.csv")))?;
            }
            log::info!("cell {cell}: sigma {sigma}, drift {}: violation rate {}", drift.delta(), mc.violation_rate);
            cells.push(TrackingCell {
                cell,
                sigma: *sigma,
                drift: drift.clone(),
                bound_v0: params.v0,
                n_seeds: mc.n_seeds,
                violations: mc.violations,
                violation_rate: mc.violation_rate,
                median_max_potential: median(&mc.max_potential),
            });
        }
    }
    let summary = TrackingSummary {
        alpha: cfg.alpha,
        horizon: cfg.horizon,
        delta_prob: cfg.delta_prob,
        base_seed: cfg.base_seed,
        cells,
    };
    write_json(&summary, &flags.out.join("summary.json"))?;
    if let Some(limit) = cfg.max_violation_rate {
        if let Some(bad) = summary.cells.iter().find(|c| c.violation_rate > limit) {
            return Err(CliError::Assertion(format!(
                "cell {} violation rate {} exceeds {limit}",
                bad.cell, bad.violation_rate
            )));
        }
    }
    Ok(summary)
}

// ---------------------------------------------------------------------- bias

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub instance: String,
    pub x: Vec<f64>,
    pub base_seed: u64,
    pub rows: Vec<BiasReport>,
    /// Rows with `bias_est ≤ bias_bound + 4·se`.
    pub within_bound: Vec<bool>,
}

pub fn bias(mut cfg: BiasConfig, flags: &Flags) -> CliResult<BiasSummary> {
    if flags.seeds.is_some() {
        log::warn!("bias draws `samples` estimates per depth; --seeds is ignored");
    }
    cfg.base_seed = flags.base_seed.unwrap_or(cfg.base_seed);
    if cfg.depths.is_empty() {
        return Err(CliError::config("at `depths`: need at least one depth"));
    }
    let inst = load_instance(&cfg.instance, &cfg.instance_path, &flags.base_dir)?;
    let x = x0_vector(&inst, cfg.x.as_deref())?;
    prepare_out(&flags.out)?;
    let root = RandomStream::new(cfg.base_seed);
    let rows = cfg
        .depths
        .iter()
        .map(|&q| {
            let est = EstimatorConfig::for_instance(&inst, q, cfg.batch)?;
            Ok(empirical_bias_and_variance(&inst, &x, &est, cfg.samples, &root.child("depth", q))?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_text(&to_csv(&rows), &flags.out.join("bias.csv"))?;
    let within_bound: Vec<bool> = rows.iter().map(|r| r.bias_est <= r.bias_bound + 4.0 * r.se).collect();
    let summary = BiasSummary {
        instance: inst.kind_name().to_string(),
        x: x.iter().copied().collect(),
        base_seed: cfg.base_seed,
        rows,
        within_bound,
    };
    write_json(&summary, &flags.out.join("summary.json"))?;
    if cfg.check {
        if let Some(i) = summary.within_bound.iter().position(|ok| !ok) {
            let r = &summary.rows[i];
            return Err(CliError::Assertion(format!(
                "Q={}: bias_est {} > bias_bound {} + 4·se {}",
                r.depth, r.bias_est, r.bias_bound, r.se
            )));
        }
    }
    Ok(summary)
}

// --------------------------------------------------------------------- accbo

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccboSummary {
    pub algorithm: Algorithm,
    pub option: LowerOption,
    pub base_seed: u64,
    pub plan: CellPlan,
    pub median_final_running_avg_grad_norm: f64,
    pub median_calls_to_target: Option<f64>,
    pub min_yhat_radius_fraction: f64,
    pub min_yhat_step_fraction: f64,
    pub runs: Vec<RunSummary>,
}

fn aborted(outputs: &[RunOutput]) -> Option<String> {
    outputs.iter().enumerate().find_map(|(k, o)| o.summary.aborted.as_ref().map(|m| format!("seed {k}: {m}")))
}

pub fn accbo(mut cfg: AccboConfig, flags: &Flags) -> CliResult<AccboSummary> {
    cfg.seeds = flags.seeds.unwrap_or(cfg.seeds);
    cfg.base_seed = flags.base_seed.unwrap_or(cfg.base_seed);
    check_seeds(cfg.seeds)?;
    let inst = load_instance(&cfg.instance, &cfg.instance_path, &flags.base_dir)?;
    if cfg.algorithm == Algorithm::Accbo && cfg.option == LowerOption::One && !inst.has_isotropic_lower() {
        return Err(CliError::config("at `option`: option one needs an isotropic lower level"));
    }
    let plan = plan_cell(
        &inst,
        &CellSetup {
            schedule: &cfg.schedule,
            calibration: cfg.calibration.as_ref(),
            epsilon: cfg.epsilon,
            delta: cfg.delta,
            target_factor: cfg.target_factor,
            x0: cfg.x0.as_deref(),
            d0: cfg.d0,
        },
    )?;
    prepare_out(&flags.out)?;
    write_json(&plan, &flags.out.join("schedule.json"))?;
    let sched = plan.schedule(cfg.algorithm);
    log::info!("{:?}: T = {}, T0 = {}, {} seeds", cfg.algorithm, sched.iterations, sched.warm_start_steps, cfg.seeds);
    let opts = RunOptions {
        x0: cfg.x0.clone(),
        max_iterations: cfg.max_iterations,
        target: Some(plan.target),
        stop_at_target: cfg.stop_at_target,
        max_calls: cfg.max_calls,
        log_stride: cfg.log_stride,
    };
    let outputs = run_seeds(&inst, sched, cfg.algorithm, cfg.option, &opts, cfg.seeds, cfg.base_seed)?;
    if cfg.log_stride > 0 {
        for (k, o) in outputs.iter().enumerate() {
            write_text(&to_csv(&o.logs), &flags.out.join(format!("run_{k}.csv")))?;
        }
    }
    let runs: Vec<RunSummary> = outputs.iter().map(|o| o.summary.clone()).collect();
    let summary = AccboSummary {
        algorithm: cfg.algorithm,
        option: cfg.option,
        base_seed: cfg.base_seed,
        median_final_running_avg_grad_norm: median(&runs.iter().map(|r| r.final_running_avg_grad_norm).collect::<Vec<_>>()),
        median_calls_to_target: median_calls(&runs.iter().map(|r| r.calls_to_target).collect::<Vec<_>>()),
        min_yhat_radius_fraction: runs.iter().map(|r| r.yhat_radius_fraction).fold(1.0, f64::min),
        min_yhat_step_fraction: runs.iter().map(|r| r.yhat_step_fraction).fold(1.0, f64::min),
        plan,
        runs,
    };
    write_json(&summary, &flags.out.join("summary.json"))?;
    if let Some(msg) = aborted(&outputs) {
        return Err(CliError::Numerical(msg));
    }
    if let Some(limit) = cfg.checks.max_median_running_avg {
        if summary.median_final_running_avg_grad_norm.is_nan() || summary.median_final_running_avg_grad_norm > limit {
            return Err(CliError::Assertion(format!(
                "median running-average gradient norm {} exceeds {limit}",
                summary.median_final_running_avg_grad_norm
            )));
        }
    }
    if let Some(frac) = cfg.checks.min_invariant_fraction {
        let worst = summary.min_yhat_radius_fraction.min(summary.min_yhat_step_fraction);
        if worst < frac {
            return Err(CliError::Assertion(format!("ŷ invariants held at only {worst} of iterations, need {frac}")));
        }
    }
    Ok(summary)
}

// --------------------------------------------------------------------- sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub algorithm: Algorithm,
    /// `None` for the baseline.
    pub option: Option<LowerOption>,
    /// Call budget each run was capped at.
    pub budget: Option<u64>,
    /// Calls to the running-average target per seed; `None` when unreached.
    pub calls_to_target: Vec<Option<u64>>,
    pub median_calls_to_target: Option<f64>,
    pub reached: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub epsilon: f64,
    pub sigma_f1: f64,
    pub plan: CellPlan,
    pub results: Vec<MethodResult>,
}

impl ComparisonCell {
    pub fn result(&self, algorithm: Algorithm, option: Option<LowerOption>) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.algorithm == algorithm && r.option == option)
    }

    /// Whether AccBO with `option` needs strictly fewer median calls than the
    /// baseline. An unreached baseline median counts as above its budget.
    pub fn accbo_wins(&self, option: LowerOption) -> bool {
        let (Some(a), Some(b)) = (self.result(Algorithm::Accbo, Some(option)), self.result(Algorithm::PlainMomentum, None)) else {
            return false;
        };
        match (a.median_calls_to_target, b.median_calls_to_target) {
            (Some(x), Some(y)) => x < y,
            (Some(x), None) => match b.budget {
                Some(cap) => x <= cap as f64,
                None => true,
            },
            (None, _) => false,
        }
    }
}

fn method_result(algorithm: Algorithm, option: Option<LowerOption>, budget: Option<u64>, outputs: &[RunOutput]) -> MethodResult {
    let calls: Vec<Option<u64>> = outputs.iter().map(|o| o.summary.calls_to_target).collect();
    MethodResult {
        algorithm,
        option,
        budget,
        median_calls_to_target: median_calls(&calls),
        reached: calls.iter().filter(|c| c.is_some()).count() as u64,
        calls_to_target: calls,
    }
}

/// One `(instance, ε)` cell: AccBO for each option, then the baseline capped
/// at `budget_factor` times the largest AccBO median when given. Every run
/// stops at the target, and seed `k` uses the same stream for every method.
pub fn compare_cell(
    inst: &BilevelInstance,
    setup: &CellSetup,
    options: &[LowerOption],
    baseline: bool,
    budget_factor: Option<f64>,
    seeds: u64,
    base_seed: u64,
) -> CliResult<ComparisonCell> {
    let plan = plan_cell(inst, setup)?;
    let opts = RunOptions {
        x0: setup.x0.map(|v| v.to_vec()),
        target: Some(plan.target),
        stop_at_target: true,
        log_stride: 0,
        ..Default::default()
    };
    let mut results = Vec::new();
    for &option in options {
        let out = run_seeds(inst, &plan.accbo, Algorithm::Accbo, option, &opts, seeds, base_seed)?;
        if let Some(msg) = aborted(&out) {
            return Err(CliError::Numerical(msg));
        }
        let r = method_result(Algorithm::Accbo, Some(option), None, &out);
        log::info!("eps {}: AccBO {option:?} median calls {:?}", setup.epsilon, r.median_calls_to_target);
        results.push(r);
    }
    if baseline {
        let budget = budget_factor.and_then(|f| {
            let worst = results.iter().filter_map(|r| r.median_calls_to_target).fold(f64::NAN, f64::max);
            worst.is_finite().then(|| (f * worst).ceil() as u64)
        });
        let capped = RunOptions { max_calls: budget, ..opts };
        let out = run_seeds(inst, &plan.baseline, Algorithm::PlainMomentum, LowerOption::Two, &capped, seeds, base_seed)?;
        if let Some(msg) = aborted(&out) {
            return Err(CliError::Numerical(msg));
        }
        let r = method_result(Algorithm::PlainMomentum, None, budget, &out);
        log::info!("eps {}: baseline median calls {:?} (budget {budget:?})", setup.epsilon, r.median_calls_to_target);
        results.push(r);
    }
    Ok(ComparisonCell {
        epsilon: setup.epsilon,
        sigma_f1: inst.noise().sigma_f1,
        plan,
        results,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub sigma_f1: f64,
    pub algorithm: Algorithm,
    pub option: Option<LowerOption>,
    /// Slope of `ln(median calls)` against `ln(1/ε)`.
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub base_seed: u64,
    pub seeds: u64,
    pub cells: Vec<ComparisonCell>,
    pub slopes: Vec<SlopeFit>,
}

fn sweep_csv(cells: &[ComparisonCell]) -> String {
    let mut s = String::from("epsilon,sigma_f1,algorithm,option,median_calls_to_target,reached,budget\n");
    for c in cells {
        for r in &c.results {
            let alg = match r.algorithm {
                Algorithm::Accbo => "accbo",
                Algorithm::PlainMomentum => "plain_momentum",
            };
            let opt = match r.option {
                Some(LowerOption::One) => "one",
                Some(LowerOption::Two) => "two",
                None => "",
            };
            s.push_str(&format!(
                "{},{},{alg},{opt},{},{},{}\n",
                format_f64(c.epsilon),
                format_f64(c.sigma_f1),
                r.median_calls_to_target.map(format_f64).unwrap_or_else(|| "inf".into()),
                r.reached,
                r.budget.map(|b| b.to_string()).unwrap_or_default(),
            ));
        }
    }
    s
}

pub fn sweep(mut cfg: SweepConfig, flags: &Flags) -> CliResult<SweepSummary> {
    cfg.seeds = flags.seeds.unwrap_or(cfg.seeds);
    cfg.base_seed = flags.base_seed.unwrap_or(cfg.base_seed);
    check_seeds(cfg.seeds)?;
    if cfg.epsilons.is_empty() || cfg.options.is_empty() {
        return Err(CliError::config("`epsilons` and `options` must be non-empty"));
    }
    for (i, e) in cfg.epsilons.iter().enumerate() {
        check_positive(&format!("epsilons[{i}]"), *e)?;
    }
    if let Some(f) = cfg.baseline_budget_factor {
        check_positive("baseline_budget_factor", f)?;
    }
    let base = load_instance(&cfg.instance, &cfg.instance_path, &flags.base_dir)?;
    if cfg.options.contains(&LowerOption::One) && !base.has_isotropic_lower() {
        return Err(CliError::config("at `options`: option one needs an isotropic lower level"));
    }
    let sigmas = cfg.sigma_f1.clone().unwrap_or_else(|| vec![base.noise().sigma_f1]);
    prepare_out(&flags.out)?;
    let mut cells = Vec::new();
    for &sigma in &sigmas {
        let inst = base.with_noise(accbo_core::problems::NoiseModel { sigma_f1: sigma, ..*base.noise() })?;
        for &eps in &cfg.epsilons {
            let setup = CellSetup {
                schedule: &cfg.schedule,
                calibration: cfg.calibration.as_ref(),
                epsilon: eps,
                delta: cfg.delta,
                target_factor: cfg.target_factor,
                x0: cfg.x0.as_deref(),
                d0: cfg.d0,
            };
            cells.push(compare_cell(&inst, &setup, &cfg.options, cfg.baseline, cfg.baseline_budget_factor, cfg.seeds, cfg.base_seed)?);
        }
    }
    let mut methods: Vec<(Algorithm, Option<LowerOption>)> = cfg.options.iter().map(|o| (Algorithm::Accbo, Some(*o))).collect();
    if cfg.baseline {
        methods.push((Algorithm::PlainMomentum, None));
    }
    let mut slopes = Vec::new();
    for &sigma in &sigmas {
        for &(algorithm, option) in &methods {
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.sigma_f1 == sigma)
                .filter_map(|c| c.result(algorithm, option).and_then(|r| r.median_calls_to_target).map(|m| (c.epsilon, m)))
                .collect();
            slopes.push(SlopeFit { sigma_f1: sigma, algorithm, option, slope: log_log_slope(&pts) });
        }
    }
    let summary = SweepSummary { base_seed: cfg.base_seed, seeds: cfg.seeds, cells, slopes };
    write_text(&sweep_csv(&summary.cells), &flags.out.join("sweep.csv"))?;
    write_json(&summary, &flags.out.join("summary.json"))?;
    if cfg.require_speedup && cfg.baseline {
        for c in &summary.cells {
            for &o in &cfg.options {
                if !c.accbo_wins(o) {
                    return Err(CliError::Assertion(format!(
                        "eps {} sigma_f1 {}: AccBO {o:?} is not cheaper than the baseline",
                        c.epsilon, c.sigma_f1
                    )));
                }
            }
        }
    }
    Ok(summary)
}
