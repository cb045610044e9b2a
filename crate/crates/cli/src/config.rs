//! JSON configuration for every subcommand. Unknown fields are rejected and
//! every error names the offending field path.

use std::path::{Path, PathBuf};

use accbo_core::accbo::LowerOption;
use accbo_core::problems::InstanceSpec;
use accbo_core::schedule::ScheduleOverrides;
use accbo_core::snag::DriftProcess;
use accbo_core::BilevelInstance;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn one_u64() -> u64 {
    1
}

fn default_delta() -> f64 {
    0.05
}

fn default_target_factor() -> f64 {
    20.0
}

fn default_options() -> Vec<LowerOption> {
    vec![LowerOption::Two]
}

fn default_drifts() -> Vec<DriftProcess> {
    vec![DriftProcess::None]
}

fn yes() -> bool {
    true
}

/// Quadratic family for `snag-track`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Isotropic { mu: f64, dim: usize },
    Diagonal { diag: Vec<f64> },
    Matrix { h: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnagTrackConfig {
    pub family: FamilySpec,
    pub alpha: f64,
    pub sigmas: Vec<f64>,
    #[serde(default = "default_drifts")]
    pub drifts: Vec<DriftProcess>,
    pub horizon: u64,
    #[serde(default = "default_delta")]
    pub delta_prob: f64,
    pub w0: Vec<f64>,
    /// Initial minimizer; the origin when absent.
    #[serde(default)]
    pub w0_star: Option<Vec<f64>>,
    #[serde(default = "one_u64")]
    pub seeds: u64,
    #[serde(default)]
    pub base_seed: u64,
    /// Trajectory CSVs are written for the first this many seeds of each cell.
    #[serde(default = "one_u64")]
    pub trajectories: u64,
    /// Exit with an assertion failure when a cell's violation rate exceeds this.
    #[serde(default)]
    pub max_violation_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasConfig {
    #[serde(default)]
    pub instance: Option<InstanceSpec>,
    #[serde(default)]
    pub instance_path: Option<PathBuf>,
    /// Evaluation point; the origin when absent.
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    pub depths: Vec<u64>,
    #[serde(default = "one_u64")]
    pub batch: u64,
    pub samples: u64,
    #[serde(default)]
    pub base_seed: u64,
    /// Fail when a row has `bias_est > bias_bound + 4·se`.
    #[serde(default = "yes")]
    pub check: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ScheduleConfig {
    Theorem,
    Practical(ScheduleOverrides),
    /// See `ScheduleOverrides::desk`.
    Desk {
        kappa: f64,
        #[serde(default = "one_u64")]
        batch: u64,
    },
}

/// Measured `L0` and `σ̄` from `probes` Gaussian points of scale `spread`
/// around the origin plus `x0` itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_cal_samples")]
    pub samples: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_probes() -> usize {
    16
}

fn default_spread() -> f64 {
    2.0
}

fn default_cal_samples() -> u64 {
    2000
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Accbo,
    PlainMomentum,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunChecks {
    #[serde(default)]
    pub max_median_running_avg: Option<f64>,
    /// Minimum fraction of iterations satisfying each ŷ invariant, per seed.
    #[serde(default)]
    pub min_invariant_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccboConfig {
    #[serde(default)]
    pub instance: Option<InstanceSpec>,
    #[serde(default)]
    pub instance_path: Option<PathBuf>,
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub calibration: Option<CalibrationConfig>,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default = "default_option")]
    pub option: LowerOption,
    /// The running-average target is `target_factor·ε`.
    #[serde(default = "default_target_factor")]
    pub target_factor: f64,
    #[serde(default)]
    pub stop_at_target: bool,
    #[serde(default)]
    pub max_iterations: Option<u64>,
    #[serde(default)]
    pub max_calls: Option<u64>,
    #[serde(default = "one_u64")]
    pub log_stride: u64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// `Φ(x0) − inf Φ`; computed from the instance when absent.
    #[serde(default)]
    pub d0: Option<f64>,
    #[serde(default = "one_u64")]
    pub seeds: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub checks: RunChecks,
}

fn default_option() -> LowerOption {
    LowerOption::Two
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub instance: Option<InstanceSpec>,
    #[serde(default)]
    pub instance_path: Option<PathBuf>,
    pub epsilons: Vec<f64>,
    /// Upper-level noise levels; the instance's own when absent.
    #[serde(default)]
    pub sigma_f1: Option<Vec<f64>>,
    #[serde(default = "default_options")]
    pub options: Vec<LowerOption>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub calibration: Option<CalibrationConfig>,
    #[serde(default = "yes")]
    pub baseline: bool,
    /// Cap baseline runs at this multiple of the largest AccBO median.
    #[serde(default)]
    pub baseline_budget_factor: Option<f64>,
    #[serde(default = "default_target_factor")]
    pub target_factor: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub d0: Option<f64>,
    #[serde(default = "one_u64")]
    pub seeds: u64,
    #[serde(default)]
    pub base_seed: u64,
    /// Fail unless every AccBO median is strictly below the baseline median.
    #[serde(default)]
    pub require_speedup: bool,
}

pub fn parse_config<T: DeserializeOwned>(text: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(format!("at `{path}`: {}", e.inner()))
    })
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("reading {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Build the instance from exactly one of `instance` and `instance_path`;
/// relative paths are taken from `base_dir`.
pub fn load_instance(
    inline: &Option<InstanceSpec>,
    path: &Option<PathBuf>,
    base_dir: &Path,
) -> CliResult<BilevelInstance> {
    let spec = match (inline, path) {
        (Some(s), None) => s.clone(),
        (None, Some(p)) => {
            let full = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
            let text = std::fs::read_to_string(&full)
                .map_err(|e| CliError::config(format!("instance_path {}: {e}", full.display())))?;
            parse_config::<InstanceSpec>(&text)
                .map_err(|e| CliError::config(format!("instance_path {}: {e}", full.display())))?
        }
        (Some(_), Some(_)) => return Err(CliError::config("give either `instance` or `instance_path`, not both")),
        (None, None) => return Err(CliError::config("missing `instance` or `instance_path`")),
    };
    Ok(BilevelInstance::from_spec(spec)?)
}

pub(crate) fn check_seeds(seeds: u64) -> CliResult<()> {
    if seeds == 0 {
        return Err(CliError::config("at `seeds`: need at least one seed"));
    }
    Ok(())
}

pub(crate) fn check_positive(field: &str, v: f64) -> CliResult<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(CliError::config(format!("at `{field}`: must be a positive number, got {v}")));
    }
    Ok(())
}
