//! Synthetic bilevel instances with exact ground truth and noisy oracles.
//!
//! Every instance exposes closed-form `y*(x)`, `Φ(x)` and `∇Φ(x)` together with
//! the five stochastic oracles used by the estimator: `∇_y G`, `∇_x F`,
//! `∇_y F`, and the Jacobian/Hessian-vector products of `G`.
//!
//! Noise realization: lower gradient noise is iid Gaussian per entry with
//! std `σ_g1/√(8·dim_y)`, so `E‖ε‖² = σ_g1²/8` and the norm tail stays inside
//! `2exp(−2ϱ²/σ_g1²)`. Upper gradient noise has per-entry std
//! `σ_f1/√dim` on each block. Second-order noise is `ξ·‖v‖` with per-entry std
//! `σ_g2/√(output dim)`, so the perturbation is linear in `v`.

mod ridge;
mod spec;

use nalgebra::{linalg::Cholesky, Dyn};
use serde::{Deserialize, Serialize};

pub use ridge::synthetic_ridge_spec;
pub use spec::{InstanceSpec, NoiseModel, QuadraticUpperSpec};

use crate::constants::ProblemConstants;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{matrix_from_rows, operator_norm, symmetric_eigen_range, vector, Matrix, Vector};
use crate::stream::{gaussian_vector, RandomStream};
use ridge::RidgeLower;

#[derive(Clone, Debug)]
enum Lower {
    /// `(μ/2)‖y − A x − b‖²`
    Isotropic { mu: f64, a: Matrix, b: Vector },
    /// `½ yᵀ H y − yᵀ(B x + b)`
    General {
        h: Matrix,
        chol: Cholesky<f64, Dyn>,
        bm: Matrix,
        b: Vector,
    },
    Ridge(RidgeLower),
}

#[derive(Clone, Debug)]
enum Upper {
    Quadratic { wx: f64, c: Vector, wy: f64, d: Vector },
    /// `exp(x·u) + ½‖y‖²`
    Exp { u: Vector },
    /// `(scale/2m)‖V y − u‖²`
    Validation { v: Matrix, u: Vector, scale: f64 },
}

/// One synthetic bilevel problem. Immutable; serializes as its
/// [`InstanceSpec`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "InstanceSpec", into = "InstanceSpec")]
pub struct BilevelInstance {
    spec: InstanceSpec,
    lower: Lower,
    upper: Upper,
    constants: ProblemConstants,
    noise: NoiseModel,
    dim_x: usize,
    dim_y: usize,
}

impl PartialEq for BilevelInstance {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl From<BilevelInstance> for InstanceSpec {
    fn from(inst: BilevelInstance) -> Self {
        inst.spec
    }
}

impl TryFrom<InstanceSpec> for BilevelInstance {
    type Error = Error;
    fn try_from(spec: InstanceSpec) -> Result<Self> {
        Self::from_spec(spec)
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let m = matrix_from_rows(rows).ok_or_else(|| Error::Instance(format!("{name}: rows have unequal lengths")))?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Instance(format!("{name}: non-finite entry")));
    }
    Ok(m)
}

fn finite_vector(name: &str, v: &[f64]) -> Result<Vector> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Instance(format!("{name}: non-finite entry")));
    }
    Ok(vector(v))
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Instance(format!("{name} must be finite and > 0, got {v}")))
    }
}

fn expect_len(name: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Instance(format!("{name}: expected length {expected}, got {got}")));
    }
    Ok(())
}

fn check_noise(n: &NoiseModel) -> Result<()> {
    for (name, v) in [("sigma_f1", n.sigma_f1), ("sigma_g1", n.sigma_g1), ("sigma_g2", n.sigma_g2)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Instance(format!("noise.{name} must be finite and >= 0, got {v}")));
        }
    }
    Ok(())
}

fn quadratic_upper(u: &QuadraticUpperSpec, dim_x: usize, dim_y: usize) -> Result<Upper> {
    expect_len("upper.c", dim_x, u.c.len())?;
    expect_len("upper.d", dim_y, u.d.len())?;
    if !(u.wx >= 0.0 && u.wy >= 0.0 && u.wx.is_finite() && u.wy.is_finite()) {
        return Err(Error::Instance("upper weights must be finite and >= 0".into()));
    }
    Ok(Upper::Quadratic {
        wx: u.wx,
        c: finite_vector("upper.c", &u.c)?,
        wy: u.wy,
        d: finite_vector("upper.d", &u.d)?,
    })
}

/// Upper-level constants `(lx0, lx1, ly0, ly1, l_f0)` given the affine
/// minimizer map `y*(x) = M x + m` over `‖x‖ ≤ radius`.
fn affine_upper_constants(upper: &Upper, m: &Matrix, off: &Vector, radius: f64) -> [f64; 5] {
    match upper {
        Upper::Quadratic { wx, wy, d, .. } => {
            let lf0 = wy * (operator_norm(m) * radius + (off - d).norm());
            [*wx, 0.0, *wy, 0.0, lf0]
        }
        Upper::Exp { u } => {
            let lf0 = operator_norm(m) * radius + off.norm();
            [0.0, 2.0 * u.norm(), 1.0, 0.0, lf0]
        }
        Upper::Validation { .. } => unreachable!("validation upper only pairs with the ridge lower level"),
    }
}

impl BilevelInstance {
    pub fn from_spec(spec: InstanceSpec) -> Result<Self> {
        let noise = spec.noise();
        check_noise(&noise)?;
        let (lower, upper, dim_x, dim_y, c) = match &spec {
            InstanceSpec::IsotropicQuadratic { mu, a, b, upper, radius, .. } => {
                let (lower, dx, dy, l_g1) = isotropic_lower(*mu, a, b)?;
                let upper = quadratic_upper(upper, dx, dy)?;
                let radius = positive("radius", *radius)?;
                let Lower::Isotropic { a, b, .. } = &lower else { unreachable!() };
                let k = affine_upper_constants(&upper, a, b, radius);
                let c = constants_from(*mu, l_g1, 0.0, k, &noise);
                (lower, upper, dx, dy, c)
            }
            InstanceSpec::ExpUpperToy { mu, a, b, u, radius, .. } => {
                let (lower, dx, dy, l_g1) = isotropic_lower(*mu, a, b)?;
                expect_len("u", dx, u.len())?;
                let upper = Upper::Exp { u: finite_vector("u", u)? };
                let radius = positive("radius", *radius)?;
                let Lower::Isotropic { a, b, .. } = &lower else { unreachable!() };
                if dx > 0 && symmetric_eigen_range(&(a.transpose() * a)).0 <= 0.0 {
                    return Err(Error::Instance("exp_upper_toy needs A with full column rank".into()));
                }
                let k = affine_upper_constants(&upper, a, b, radius);
                let c = constants_from(*mu, l_g1, 0.0, k, &noise);
                (lower, upper, dx, dy, c)
            }
            InstanceSpec::GeneralQuadratic { h, b_matrix, b, upper, radius, .. } => {
                let h = matrix("h", h)?;
                let dy = h.nrows();
                if h.ncols() != dy || dy == 0 {
                    return Err(Error::Instance("h must be a nonempty square matrix".into()));
                }
                if (&h - h.transpose()).amax() > 1e-12 * h.amax().max(1.0) {
                    return Err(Error::Instance("h must be symmetric".into()));
                }
                let bm = matrix("b_matrix", b_matrix)?;
                expect_len("b_matrix rows", dy, bm.nrows())?;
                let dx = bm.ncols();
                expect_len("b", dy, b.len())?;
                let b = finite_vector("b", b)?;
                let (mu, hmax) = symmetric_eigen_range(&h);
                if mu <= 0.0 {
                    return Err(Error::Instance(format!("h must be positive definite (min eigenvalue {mu})")));
                }
                let chol = h
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Instance("h is not numerically positive definite".into()))?;
                let l_g1 = hmax.max(operator_norm(&bm));
                let upper = quadratic_upper(upper, dx, dy)?;
                let radius = positive("radius", *radius)?;
                let m = chol.solve(&bm);
                let off = chol.solve(&b);
                let k = affine_upper_constants(&upper, &m, &off, radius);
                let c = constants_from(mu, l_g1, 0.0, k, &noise);
                (Lower::General { h, chol, bm, b }, upper, dx, dy, c)
            }
            InstanceSpec::RidgeWeighting {
                train_features,
                train_labels,
                val_features,
                val_labels,
                c_reg,
                val_scale,
                ..
            } => {
                let z = matrix("train_features", train_features)?;
                let (n, p) = (z.nrows(), z.ncols());
                if n == 0 || p == 0 {
                    return Err(Error::Instance("train_features must be nonempty".into()));
                }
                expect_len("train_labels", n, train_labels.len())?;
                let v = matrix("val_features", val_features)?;
                if v.nrows() == 0 {
                    return Err(Error::Instance("val_features must be nonempty".into()));
                }
                expect_len("val_features columns", p, v.ncols())?;
                expect_len("val_labels", v.nrows(), val_labels.len())?;
                let lower = RidgeLower {
                    z,
                    labels: finite_vector("train_labels", train_labels)?,
                    c_reg: positive("c_reg", *c_reg)?,
                };
                let scale = positive("val_scale", *val_scale)?;
                let u = finite_vector("val_labels", val_labels)?;
                let m = v.nrows() as f64;
                let w_radius = lower.minimizer_norm_bound();
                let (mu, l_g1, l_g2) = lower.curvature_constants(w_radius);
                let vn = operator_norm(&v);
                let ly0 = scale * vn * vn / m;
                let lf0 = scale / m * vn * (vn * w_radius + u.norm());
                let c = constants_from(mu, l_g1, l_g2, [0.0, 0.0, ly0, 0.0, lf0], &noise);
                (Lower::Ridge(lower), Upper::Validation { v, u, scale }, n, p, c)
            }
        };
        c.validate()?;
        Ok(Self {
            spec,
            lower,
            upper,
            constants: c,
            noise,
            dim_x,
            dim_y,
        })
    }

    pub fn spec(&self) -> &InstanceSpec {
        &self.spec
    }

    pub fn kind_name(&self) -> &'static str {
        self.spec.kind_name()
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    pub fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Copy of this instance with a different noise model.
    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        let mut spec = self.spec.clone();
        *spec.noise_mut() = noise;
        Self::from_spec(spec)
    }

    /// True when `∇²_{yy} g = μI` everywhere.
    pub fn has_isotropic_lower(&self) -> bool {
        matches!(self.lower, Lower::Isotropic { .. })
    }

    fn check_x(&self, x: &Vector) -> Result<()> {
        check_dim("x", self.dim_x, x.len())
    }

    fn check_xy(&self, x: &Vector, y: &Vector) -> Result<()> {
        check_dim("x", self.dim_x, x.len())?;
        check_dim("y", self.dim_y, y.len())
    }

    // ---- lower level, exact ----

    pub fn lower_value(&self, x: &Vector, y: &Vector) -> Result<f64> {
        self.check_xy(x, y)?;
        Ok(match &self.lower {
            Lower::Isotropic { mu, a, b } => 0.5 * mu * (y - a * x - b).norm_squared(),
            Lower::General { h, bm, b, .. } => 0.5 * y.dot(&(h * y)) - y.dot(&(bm * x + b)),
            Lower::Ridge(r) => r.value(x, y),
        })
    }

    pub fn grad_y_g(&self, x: &Vector, y: &Vector) -> Result<Vector> {
        self.check_xy(x, y)?;
        Ok(self.grad_y_g_unchecked(x, y))
    }

    fn grad_y_g_unchecked(&self, x: &Vector, y: &Vector) -> Vector {
        match &self.lower {
            Lower::Isotropic { mu, a, b } => (y - a * x - b) * *mu,
            Lower::General { h, bm, b, .. } => h * y - bm * x - b,
            Lower::Ridge(r) => r.grad_w(x, y),
        }
    }

    /// `∇_x g`, used only by finite-difference consistency checks.
    pub fn grad_x_g(&self, x: &Vector, y: &Vector) -> Result<Vector> {
        self.check_xy(x, y)?;
        Ok(match &self.lower {
            Lower::Isotropic { mu, a, b } => -(a.transpose() * (y - a * x - b)) * *mu,
            Lower::General { bm, .. } => -(bm.transpose() * y),
            Lower::Ridge(r) => r.grad_lambda(x, y),
        })
    }

    /// `∇²_{yy} g(x, y)`.
    pub fn lower_hessian(&self, x: &Vector) -> Result<Matrix> {
        self.check_x(x)?;
        Ok(match &self.lower {
            Lower::Isotropic { mu, .. } => Matrix::identity(self.dim_y, self.dim_y) * *mu,
            Lower::General { h, .. } => h.clone(),
            Lower::Ridge(r) => r.hessian(x),
        })
    }

    /// `∇²_{yy} g(x, y) v`.
    pub fn hvp_yy_g(&self, x: &Vector, y: &Vector, v: &Vector) -> Result<Vector> {
        self.check_xy(x, y)?;
        check_dim("v", self.dim_y, v.len())?;
        Ok(self.hvp_unchecked(x, v))
    }

    fn hvp_unchecked(&self, x: &Vector, v: &Vector) -> Vector {
        match &self.lower {
            Lower::Isotropic { mu, .. } => v * *mu,
            Lower::General { h, .. } => h * v,
            Lower::Ridge(r) => r.hvp(x, v),
        }
    }

    /// `∇²_{xy} g(x, y) v`, mapping `dim_y` to `dim_x`.
    pub fn jvp_xy_g(&self, x: &Vector, y: &Vector, v: &Vector) -> Result<Vector> {
        self.check_xy(x, y)?;
        check_dim("v", self.dim_y, v.len())?;
        Ok(self.jvp_unchecked(x, y, v))
    }

    fn jvp_unchecked(&self, x: &Vector, y: &Vector, v: &Vector) -> Vector {
        match &self.lower {
            Lower::Isotropic { mu, a, .. } => -(a.transpose() * v) * *mu,
            Lower::General { bm, .. } => -(bm.transpose() * v),
            Lower::Ridge(r) => r.jvp(x, y, v),
        }
    }

    pub fn lower_minimizer(&self, x: &Vector) -> Result<Vector> {
        self.check_x(x)?;
        Ok(self.minimizer_unchecked(x))
    }

    fn minimizer_unchecked(&self, x: &Vector) -> Vector {
        match &self.lower {
            Lower::Isotropic { a, b, .. } => a * x + b,
            Lower::General { chol, bm, b, .. } => chol.solve(&(bm * x + b)),
            Lower::Ridge(r) => {
                // the ridge Hessian is bounded below by 2c·I, so this cannot fail
                let chol = r.hessian(x).cholesky().expect("ridge Hessian is positive definite");
                chol.solve(&r.rhs(x))
            }
        }
    }

    // ---- upper level, exact ----

    pub fn upper_value(&self, x: &Vector, y: &Vector) -> Result<f64> {
        self.check_xy(x, y)?;
        Ok(match &self.upper {
            Upper::Quadratic { wx, c, wy, d } => 0.5 * wx * (x - c).norm_squared() + 0.5 * wy * (y - d).norm_squared(),
            Upper::Exp { u } => x.dot(u).exp() + 0.5 * y.norm_squared(),
            Upper::Validation { v, u, scale } => 0.5 * scale * (v * y - u).norm_squared() / v.nrows() as f64,
        })
    }

    pub fn grad_x_f(&self, x: &Vector, y: &Vector) -> Result<Vector> {
        self.check_xy(x, y)?;
        Ok(self.grad_x_f_unchecked(x))
    }

    fn grad_x_f_unchecked(&self, x: &Vector) -> Vector {
        match &self.upper {
            Upper::Quadratic { wx, c, .. } => (x - c) * *wx,
            Upper::Exp { u } => u * x.dot(u).exp(),
            Upper::Validation { .. } => Vector::zeros(self.dim_x),
        }
    }

    pub fn grad_y_f(&self, x: &Vector, y: &Vector) -> Result<Vector> {
        self.check_xy(x, y)?;
        Ok(self.grad_y_f_unchecked(y))
    }

    fn grad_y_f_unchecked(&self, y: &Vector) -> Vector {
        match &self.upper {
            Upper::Quadratic { wy, d, .. } => (y - d) * *wy,
            Upper::Exp { .. } => y.clone(),
            Upper::Validation { v, u, scale } => v.transpose() * (v * y - u) * (*scale / v.nrows() as f64),
        }
    }

    // ---- composite ----

    pub fn phi_value(&self, x: &Vector) -> Result<f64> {
        let y = self.lower_minimizer(x)?;
        self.upper_value(x, &y)
    }

    /// `∇_x f − ∇²_{xy} g [∇²_{yy} g]⁻¹ ∇_y f` at `(x, y*(x))`.
    pub fn true_hypergradient(&self, x: &Vector) -> Result<Vector> {
        self.check_x(x)?;
        let y = self.minimizer_unchecked(x);
        let fy = self.grad_y_f_unchecked(&y);
        let solved = match &self.lower {
            Lower::Isotropic { mu, .. } => fy / *mu,
            Lower::General { chol, .. } => chol.solve(&fy),
            Lower::Ridge(r) => r.hessian(x).cholesky().expect("ridge Hessian is positive definite").solve(&fy),
        };
        Ok(self.grad_x_f_unchecked(x) - self.jvp_unchecked(x, &y, &solved))
    }

    /// Largest central-difference Hessian norm of `Φ` over `points`, a
    /// calibrated stand-in for `L0` where the certified constant is loose.
    /// Uses the Frobenius norm, which bounds the spectral norm from above.
    pub fn phi_curvature_estimate(&self, points: &[Vector], h: f64) -> Result<f64> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::constraint(format!("difference step must be > 0, got {h}")));
        }
        let n = self.dim_x();
        let mut worst: f64 = 0.0;
        for x in points {
            self.check_x(x)?;
            let mut hess = Matrix::zeros(n, n);
            for i in 0..n {
                let mut e = Vector::zeros(n);
                e[i] = h;
                let col = (self.true_hypergradient(&(x + &e))? - self.true_hypergradient(&(x - &e))?) / (2.0 * h);
                hess.set_column(i, &col);
            }
            worst = worst.max(hess.norm());
        }
        Ok(worst)
    }

    /// `inf_x Φ(x)` for the quadratic and exponential kinds; for the ridge
    /// toy the validation loss is only bounded below by 0, which is returned.
    pub fn phi_lower_bound(&self) -> Result<f64> {
        let (m, off) = match &self.lower {
            Lower::Isotropic { a, b, .. } => (a.clone(), b.clone()),
            Lower::General { chol, bm, b, .. } => (chol.solve(bm), chol.solve(b)),
            Lower::Ridge(_) => return Ok(0.0),
        };
        match &self.upper {
            Upper::Quadratic { wx, c, wy, d } => {
                let k = Matrix::identity(self.dim_x, self.dim_x) * *wx + m.transpose() * &m * *wy;
                let rhs = c * *wx + m.transpose() * (d - &off) * *wy;
                let x = k
                    .svd(true, true)
                    .solve(&rhs, 1e-13)
                    .map_err(|e| Error::Instance(format!("upper minimization failed: {e}")))?;
                self.phi_value(&x)
            }
            Upper::Exp { u } => self.exp_minimum(&m, &off, u),
            Upper::Validation { .. } => unreachable!(),
        }
    }

    /// Damped Newton on the convex `exp(x·u) + ½‖M x + m‖²`.
    fn exp_minimum(&self, m: &Matrix, off: &Vector, u: &Vector) -> Result<f64> {
        let phi = |x: &Vector| x.dot(u).exp() + 0.5 * (m * x + off).norm_squared();
        let mtm = m.transpose() * m;
        let mut x = Vector::zeros(self.dim_x);
        for _ in 0..200 {
            let e = x.dot(u).exp();
            let grad = u * e + m.transpose() * (m * &x + off);
            if grad.norm() <= 1e-15 * (1.0 + e) {
                break;
            }
            let hess = &mtm + u * u.transpose() * e;
            let step = hess
                .cholesky()
                .ok_or_else(|| Error::Instance("exp toy Hessian is singular".into()))?
                .solve(&grad);
            let (f0, slope) = (phi(&x), grad.dot(&step));
            let mut t = 1.0;
            while phi(&(&x - &step * t)) > f0 - 0.25 * t * slope && t > 1e-12 {
                t *= 0.5;
            }
            x -= step * t;
        }
        Ok(phi(&x))
    }

    // ---- stochastic oracles ----

    /// `∇_y G(x, y; ζ)` at the instance's noise level.
    pub fn stoch_grad_y_g(&self, x: &Vector, y: &Vector, stream: &RandomStream) -> Result<Vector> {
        self.stoch_grad_y_g_at(x, y, self.noise.sigma_g1, stream)
    }

    /// `∇_y G(x, y; ζ)` at an explicit sub-Gaussian scale `sigma_g1`.
    pub fn stoch_grad_y_g_at(&self, x: &Vector, y: &Vector, sigma_g1: f64, stream: &RandomStream) -> Result<Vector> {
        self.check_xy(x, y)?;
        Ok(self.grad_y_g_unchecked(x, y) + sub_gaussian_noise(stream, self.dim_y, sigma_g1))
    }

    /// `∇_x F(x, y; ξ)`; paired with [`Self::stoch_grad_y_f`] on the same
    /// stream it realizes one upper sample `ξ`.
    pub fn stoch_grad_x_f(&self, x: &Vector, y: &Vector, stream: &RandomStream) -> Result<Vector> {
        self.check_xy(x, y)?;
        let mut g = self.grad_x_f_unchecked(x);
        self.add_f_noise(&mut g, &stream.child("x", 0));
        Ok(g)
    }

    pub fn stoch_grad_y_f(&self, x: &Vector, y: &Vector, stream: &RandomStream) -> Result<Vector> {
        self.check_xy(x, y)?;
        let mut g = self.grad_y_f_unchecked(y);
        self.add_f_noise(&mut g, &stream.child("y", 0));
        Ok(g)
    }

    fn add_f_noise(&self, g: &mut Vector, stream: &RandomStream) {
        if self.noise.sigma_f1 > 0.0 && !g.is_empty() {
            let std = self.noise.sigma_f1 / (g.len() as f64).sqrt();
            *g += gaussian_vector(&mut stream.rng(), g.len(), std);
        }
    }

    fn add_operator_noise(&self, out: &mut Vector, vnorm: f64, stream: &RandomStream) {
        if self.noise.sigma_g2 > 0.0 && vnorm > 0.0 && !out.is_empty() {
            let std = self.noise.sigma_g2 / (out.len() as f64).sqrt() * vnorm;
            *out += gaussian_vector(&mut stream.rng(), out.len(), std);
        }
    }

    /// `∇²_{xy} G(x, y; ζ) v`.
    pub fn stoch_jvp_xy_g(&self, x: &Vector, y: &Vector, v: &Vector, stream: &RandomStream) -> Result<Vector> {
        let mut out = self.jvp_xy_g(x, y, v)?;
        self.add_operator_noise(&mut out, v.norm(), stream);
        Ok(out)
    }

    /// `∇²_{yy} G(x, y; ζ) v`.
    pub fn stoch_hvp_yy_g(&self, x: &Vector, y: &Vector, v: &Vector, stream: &RandomStream) -> Result<Vector> {
        let mut out = self.hvp_yy_g(x, y, v)?;
        self.add_operator_noise(&mut out, v.norm(), stream);
        Ok(out)
    }
}

/// Lower-gradient noise with sub-Gaussian norm scale `sigma`: iid Gaussian
/// entries of std `sigma/√(8·dim)`.
pub fn sub_gaussian_noise(stream: &RandomStream, dim: usize, sigma: f64) -> Vector {
    if sigma > 0.0 && dim > 0 {
        gaussian_vector(&mut stream.rng(), dim, sigma / (8.0 * dim as f64).sqrt())
    } else {
        Vector::zeros(dim)
    }
}

fn isotropic_lower(mu: f64, a: &[Vec<f64>], b: &[f64]) -> Result<(Lower, usize, usize, f64)> {
    let mu = positive("mu", mu)?;
    let a = matrix("a", a)?;
    let (dy, dx) = (a.nrows(), a.ncols());
    if dy == 0 {
        return Err(Error::Instance("a must have at least one row".into()));
    }
    expect_len("b", dy, b.len())?;
    let l_g1 = mu * operator_norm(&a).max(1.0);
    Ok((Lower::Isotropic { mu, a, b: finite_vector("b", b)? }, dx, dy, l_g1))
}

fn constants_from(mu: f64, l_g1: f64, l_g2: f64, k: [f64; 5], noise: &NoiseModel) -> ProblemConstants {
    let [lx0, lx1, ly0, ly1, l_f0] = k;
    ProblemConstants {
        mu,
        l_g1,
        l_g2,
        l_f0,
        lx0,
        lx1,
        ly0,
        ly1,
        sigma_f1: noise.sigma_f1,
        sigma_g1: noise.sigma_g1,
        sigma_g2: noise.sigma_g2,
    }
}

#[cfg(test)]
mod tests;
