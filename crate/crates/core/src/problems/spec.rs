//! JSON schema for instance definitions.
//!
//! Matrices are row-major arrays of rows. The `kind` field selects the
//! variant:
//!
//! ```json
//! {
//!   "kind": "isotropic_quadratic",
//!   "mu": 1.0,
//!   "a": [[2.0, 0.0], [0.0, 1.0]],
//!   "b": [0.0, 0.0],
//!   "upper": { "wx": 1.0, "c": [1.0, -1.0], "wy": 1.0, "d": [0.0, 0.0] },
//!   "radius": 3.0,
//!   "noise": { "sigma_f1": 0.1, "sigma_g1": 0.5, "sigma_g2": 0.1 }
//! }
//! ```
//!
//! `radius` bounds `‖x‖` over the region the run is expected to stay in; the
//! bound `l_f0` on `‖∇_y f‖` is evaluated over that region.

use serde::{Deserialize, Serialize};

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub sigma_f1: f64,
    pub sigma_g1: f64,
    pub sigma_g2: f64,
}

/// `f(x, y) = (wx/2)‖x − c‖² + (wy/2)‖y − d‖²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticUpperSpec {
    #[serde(default = "one")]
    pub wx: f64,
    pub c: Vec<f64>,
    #[serde(default = "one")]
    pub wy: f64,
    pub d: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    /// `g(x, y) = (μ/2)‖y − A x − b‖²` with a quadratic upper level.
    IsotropicQuadratic {
        mu: f64,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        upper: QuadraticUpperSpec,
        radius: f64,
        noise: NoiseModel,
    },
    /// `g(x, y) = ½ yᵀ H y − yᵀ(B x + b)` with symmetric positive definite `H`.
    GeneralQuadratic {
        h: Vec<Vec<f64>>,
        b_matrix: Vec<Vec<f64>>,
        b: Vec<f64>,
        upper: QuadraticUpperSpec,
        radius: f64,
        noise: NoiseModel,
    },
    /// Isotropic lower level with `f(x, y) = exp(x·u) + ½‖y‖²`.
    ExpUpperToy {
        mu: f64,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        u: Vec<f64>,
        radius: f64,
        noise: NoiseModel,
    },
    /// Per-sample weights `σ(λ_i)` on a ridge regression, tuned on a
    /// validation loss `(val_scale/2m)‖V w − u‖²`.
    RidgeWeighting {
        train_features: Vec<Vec<f64>>,
        train_labels: Vec<f64>,
        val_features: Vec<Vec<f64>>,
        val_labels: Vec<f64>,
        c_reg: f64,
        #[serde(default = "one")]
        val_scale: f64,
        noise: NoiseModel,
    },
}

impl InstanceSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::IsotropicQuadratic { .. } => "isotropic_quadratic",
            Self::GeneralQuadratic { .. } => "general_quadratic",
            Self::ExpUpperToy { .. } => "exp_upper_toy",
            Self::RidgeWeighting { .. } => "ridge_weighting",
        }
    }

    pub fn noise(&self) -> NoiseModel {
        match self {
            Self::IsotropicQuadratic { noise, .. }
            | Self::GeneralQuadratic { noise, .. }
            | Self::ExpUpperToy { noise, .. }
            | Self::RidgeWeighting { noise, .. } => *noise,
        }
    }

    pub fn noise_mut(&mut self) -> &mut NoiseModel {
        match self {
            Self::IsotropicQuadratic { noise, .. }
            | Self::GeneralQuadratic { noise, .. }
            | Self::ExpUpperToy { noise, .. }
            | Self::RidgeWeighting { noise, .. } => noise,
        }
    }
}
