//! Lower level of the ridge data-weighting toy and its synthetic dataset.

use crate::linalg::{matrix_to_rows, operator_norm, Matrix, Vector};
use crate::stream::{gaussian_vector, RandomStream};

use super::spec::{InstanceSpec, NoiseModel};

/// Bound on `|σ''|` for the logistic sigmoid (attained at `±ln(2+√3)`).
const SIGMOID_SECOND_DERIV_MAX: f64 = 0.096_225_044_864_937_6;

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn sigmoid_deriv(t: f64) -> f64 {
    let s = sigmoid(t);
    s * (1.0 - s)
}

/// `g(λ, w) = (1/n) Σ σ(λ_i)·½(z_i·w − y_i)² + c‖w‖²`.
#[derive(Clone, Debug)]
pub(crate) struct RidgeLower {
    pub z: Matrix,
    pub labels: Vector,
    pub c_reg: f64,
}

impl RidgeLower {
    fn n(&self) -> f64 {
        self.z.nrows() as f64
    }

    fn weights(&self, lambda: &Vector) -> Vector {
        lambda.map(sigmoid)
    }

    fn residual(&self, w: &Vector) -> Vector {
        &self.z * w - &self.labels
    }

    pub fn hessian(&self, lambda: &Vector) -> Matrix {
        let s = self.weights(lambda);
        let mut zs = self.z.clone();
        for (i, mut row) in zs.row_iter_mut().enumerate() {
            row *= s[i];
        }
        let p = self.z.ncols();
        self.z.transpose() * zs / self.n() + Matrix::identity(p, p) * (2.0 * self.c_reg)
    }

    pub fn rhs(&self, lambda: &Vector) -> Vector {
        let s = self.weights(lambda);
        self.z.transpose() * s.component_mul(&self.labels) / self.n()
    }

    pub fn value(&self, lambda: &Vector, w: &Vector) -> f64 {
        let s = self.weights(lambda);
        let r = self.residual(w);
        0.5 * s.dot(&r.component_mul(&r)) / self.n() + self.c_reg * w.norm_squared()
    }

    pub fn grad_w(&self, lambda: &Vector, w: &Vector) -> Vector {
        let s = self.weights(lambda);
        let r = self.residual(w);
        self.z.transpose() * s.component_mul(&r) / self.n() + w * (2.0 * self.c_reg)
    }

    pub fn grad_lambda(&self, lambda: &Vector, w: &Vector) -> Vector {
        let r = self.residual(w);
        Vector::from_fn(lambda.len(), |i, _| 0.5 * sigmoid_deriv(lambda[i]) * r[i] * r[i] / self.n())
    }

    pub fn hvp(&self, lambda: &Vector, v: &Vector) -> Vector {
        let s = self.weights(lambda);
        let zv = &self.z * v;
        self.z.transpose() * s.component_mul(&zv) / self.n() + v * (2.0 * self.c_reg)
    }

    /// `∇²_{λw} g · v`: component `i` is `σ'(λ_i) r_i (z_i·v) / n`.
    pub fn jvp(&self, lambda: &Vector, w: &Vector, v: &Vector) -> Vector {
        let r = self.residual(w);
        let zv = &self.z * v;
        Vector::from_fn(lambda.len(), |i, _| sigmoid_deriv(lambda[i]) * r[i] * zv[i] / self.n())
    }

    /// Bound on `‖w*(λ)‖` valid for every `λ`.
    pub fn minimizer_norm_bound(&self) -> f64 {
        let s: f64 = self
            .z
            .row_iter()
            .zip(self.labels.iter())
            .map(|(row, y)| row.norm() * y.abs())
            .sum();
        s / self.n() / (2.0 * self.c_reg)
    }

    /// `(μ, l_g1, l_g2)` over `‖w‖ ≤ w_radius` and all `λ`.
    pub fn curvature_constants(&self, w_radius: f64) -> (f64, f64, f64) {
        let n = self.n();
        let mu = 2.0 * self.c_reg;
        let hmax = operator_norm(&self.z).powi(2) / n + mu;
        let row_norms: Vec<f64> = self.z.row_iter().map(|r| r.norm()).collect();
        let rbar: Vec<f64> = row_norms
            .iter()
            .zip(self.labels.iter())
            .map(|(zn, y)| zn * w_radius + y.abs())
            .collect();
        // ‖∇²_{λw} g‖ ≤ ‖diag(σ' r) Z‖/n with σ' ≤ 1/4
        let cross = 0.25 * rbar.iter().zip(&row_norms).map(|(r, z)| (r * z).powi(2)).sum::<f64>().sqrt() / n;
        let lam_lam = SIGMOID_SECOND_DERIV_MAX * 0.5 * rbar.iter().map(|r| r * r).fold(0.0, f64::max) / n;
        let l_g1 = hmax.max(lam_lam) + cross;
        let fourth = row_norms.iter().map(|z| z.powi(4)).sum::<f64>().sqrt();
        let max_rz = rbar.iter().zip(&row_norms).map(|(r, z)| r * z).fold(0.0, f64::max);
        let l_g2 = 0.25 * fourth / n + SIGMOID_SECOND_DERIV_MAX * max_rz / n;
        (mu, l_g1, l_g2)
    }
}

/// Synthetic weighting problem: Gaussian features, a planted linear model,
/// and every other training label corrupted by a large offset so that the
/// optimal weights are far from uniform.
pub fn synthetic_ridge_spec(
    stream: &RandomStream,
    n_train: usize,
    n_val: usize,
    p: usize,
    c_reg: f64,
    noise: NoiseModel,
) -> InstanceSpec {
    let mut rng = stream.rng();
    let w_true = gaussian_vector(&mut rng, p, 1.0);
    let scale = 1.0 / (p as f64).sqrt();
    let z_tr = Matrix::from_fn(n_train, p, |_, _| gaussian_vector(&mut rng, 1, scale)[0]);
    let z_va = Matrix::from_fn(n_val, p, |_, _| gaussian_vector(&mut rng, 1, scale)[0]);
    let mut y_tr = &z_tr * &w_true + gaussian_vector(&mut rng, n_train, 0.05);
    for i in (1..n_train).step_by(2) {
        y_tr[i] += if y_tr[i] >= 0.0 { -3.0 } else { 3.0 };
    }
    let y_va = &z_va * &w_true + gaussian_vector(&mut rng, n_val, 0.05);
    InstanceSpec::RidgeWeighting {
        train_features: matrix_to_rows(&z_tr),
        train_labels: y_tr.iter().copied().collect(),
        val_features: matrix_to_rows(&z_va),
        val_labels: y_va.iter().copied().collect(),
        c_reg,
        val_scale: 1.0,
        noise,
    }
}
