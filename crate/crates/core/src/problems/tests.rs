use super::*;
use crate::stream::RandomStream;
use rand::Rng;

pub(crate) fn noise(f1: f64, g1: f64, g2: f64) -> NoiseModel {
    NoiseModel {
        sigma_f1: f1,
        sigma_g1: g1,
        sigma_g2: g2,
    }
}

fn upper(c: &[f64], d: &[f64]) -> QuadraticUpperSpec {
    QuadraticUpperSpec {
        wx: 1.0,
        c: c.to_vec(),
        wy: 1.0,
        d: d.to_vec(),
    }
}

/// `f = ½‖x‖² + ½‖y‖²`, `g = ½‖y − x‖²`.
fn identity_pair(dim: usize, n: NoiseModel) -> BilevelInstance {
    let a = (0..dim).map(|i| (0..dim).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    BilevelInstance::from_spec(InstanceSpec::IsotropicQuadratic {
        mu: 1.0,
        a,
        b: vec![0.0; dim],
        upper: upper(&vec![0.0; dim], &vec![0.0; dim]),
        radius: 1.0,
        noise: n,
    })
    .unwrap()
}

pub(crate) fn ridge_fixture() -> BilevelInstance {
    serde_json::from_str(include_str!("../../tests/fixtures/ridge8.json")).unwrap()
}

fn all_kinds(n: NoiseModel) -> Vec<BilevelInstance> {
    let iso = InstanceSpec::IsotropicQuadratic {
        mu: 0.5,
        a: vec![vec![1.5, -0.5], vec![0.3, 0.8], vec![0.0, 1.0]],
        b: vec![0.1, -0.2, 0.3],
        upper: QuadraticUpperSpec {
            wx: 0.7,
            c: vec![1.0, -1.0],
            wy: 1.3,
            d: vec![0.5, 0.0, -0.5],
        },
        radius: 2.0,
        noise: n,
    };
    let general = InstanceSpec::GeneralQuadratic {
        h: vec![vec![2.0, 0.5, 0.0], vec![0.5, 1.0, 0.2], vec![0.0, 0.2, 3.0]],
        b_matrix: vec![vec![1.0, 0.0], vec![0.5, -1.0], vec![0.0, 2.0]],
        b: vec![0.0, 1.0, -1.0],
        upper: upper(&[0.5, 0.5], &[1.0, 0.0, 0.0]),
        radius: 2.0,
        noise: n,
    };
    let exp = InstanceSpec::ExpUpperToy {
        mu: 1.0,
        a: vec![vec![1.0, 0.5], vec![-0.5, 1.0]],
        b: vec![0.2, -0.1],
        u: vec![0.6, -0.3],
        radius: 2.0,
        noise: n,
    };
    let mut out: Vec<_> = [iso, general, exp].into_iter().map(|s| BilevelInstance::from_spec(s).unwrap()).collect();
    out.push(ridge_fixture().with_noise(n).unwrap());
    out
}

fn random_vec(rng: &mut impl Rng, dim: usize, scale: f64) -> Vector {
    Vector::from_fn(dim, |_, _| rng.random_range(-scale..scale))
}

fn central_diff(f: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    Vector::from_fn(x.len(), |i, _| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[i] += h;
        m[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

fn rel_err(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

#[test]
fn identity_minimizer() {
    let inst = identity_pair(2, NoiseModel::default());
    let y = inst.lower_minimizer(&vector(&[1.0, 2.0])).unwrap();
    assert_eq!(y, vector(&[1.0, 2.0]));
}

#[test]
fn constant_minimizer() {
    let inst = BilevelInstance::from_spec(InstanceSpec::IsotropicQuadratic {
        mu: 1.0,
        a: vec![vec![0.0, 0.0]],
        b: vec![3.0],
        upper: upper(&[0.0, 0.0], &[0.0]),
        radius: 1.0,
        noise: NoiseModel::default(),
    })
    .unwrap();
    for x in [[0.0, 0.0], [5.0, -7.0]] {
        assert_eq!(inst.lower_minimizer(&vector(&x)).unwrap(), vector(&[3.0]));
    }
}

#[test]
fn identity_pair_phi_and_hypergradient() {
    let inst = identity_pair(1, NoiseModel::default());
    let x = vector(&[1.0]);
    assert_eq!(inst.phi_value(&x).unwrap(), 1.0);
    let g = inst.true_hypergradient(&x).unwrap();
    assert_eq!(g, vector(&[2.0]));
    let fd = central_diff(|x| inst.phi_value(x).unwrap(), &x, 1e-5);
    assert!(rel_err(&g, &fd) < 1e-8);
    assert_eq!(inst.phi_lower_bound().unwrap(), 0.0);
}

#[test]
fn zero_upper_y_weight_drops_correction() {
    let inst = BilevelInstance::from_spec(InstanceSpec::IsotropicQuadratic {
        mu: 1.0,
        a: vec![vec![2.0, 1.0]],
        b: vec![1.0],
        upper: QuadraticUpperSpec { wx: 1.0, c: vec![1.0, 2.0], wy: 0.0, d: vec![0.0] },
        radius: 1.0,
        noise: NoiseModel::default(),
    })
    .unwrap();
    let x = vector(&[0.3, -0.4]);
    let y = inst.lower_minimizer(&x).unwrap();
    assert_eq!(inst.true_hypergradient(&x).unwrap(), inst.grad_x_f(&x, &y).unwrap());
}

#[test]
fn ridge_minimizer_matches_gradient_descent() {
    let inst = ridge_fixture();
    let lam = Vector::zeros(inst.dim_x());
    let direct = inst.lower_minimizer(&lam).unwrap();
    assert!(inst.grad_y_g(&lam, &direct).unwrap().norm() <= 1e-10);
    // brute-force: plain gradient descent with step 1/l
    let step = 1.0 / inst.constants().l_g1;
    let mut w = Vector::zeros(inst.dim_y());
    for _ in 0..1_000_000 {
        let g = inst.grad_y_g(&lam, &w).unwrap();
        if g.norm() <= 1e-12 {
            break;
        }
        w -= g * step;
    }
    assert!((w - direct).norm() <= 1e-8);
}

#[test]
fn ridge_phi_is_validation_loss() {
    let inst = ridge_fixture();
    let InstanceSpec::RidgeWeighting { val_features, val_labels, val_scale, .. } = inst.spec().clone() else {
        panic!()
    };
    let mut rng = RandomStream::new(3).rng();
    for _ in 0..5 {
        let lam = random_vec(&mut rng, inst.dim_x(), 2.0);
        let w = inst.lower_minimizer(&lam).unwrap();
        let direct: f64 = val_features
            .iter()
            .zip(&val_labels)
            .map(|(row, u)| {
                let pred: f64 = row.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
                (pred - u).powi(2)
            })
            .sum::<f64>()
            * 0.5
            * val_scale
            / val_labels.len() as f64;
        let phi = inst.phi_value(&lam).unwrap();
        assert!((phi - direct).abs() <= 1e-12 * direct.max(1.0));
    }
}

#[test]
fn hypergradient_matches_finite_differences() {
    let mut rng = RandomStream::new(11).rng();
    for inst in all_kinds(NoiseModel::default()) {
        for _ in 0..10 {
            let x = random_vec(&mut rng, inst.dim_x(), 1.0);
            let g = inst.true_hypergradient(&x).unwrap();
            let fd = central_diff(|x| inst.phi_value(x).unwrap(), &x, 1e-5);
            assert!(rel_err(&g, &fd) <= 1e-4, "{}: {g} vs {fd}", inst.kind_name());
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = RandomStream::new(12).rng();
    for inst in all_kinds(NoiseModel::default()) {
        for _ in 0..20 {
            let x = random_vec(&mut rng, inst.dim_x(), 1.0);
            let y = random_vec(&mut rng, inst.dim_y(), 1.0);
            let h = 1e-5;
            let checks = [
                (inst.grad_x_f(&x, &y).unwrap(), central_diff(|x| inst.upper_value(x, &y).unwrap(), &x, h)),
                (inst.grad_y_f(&x, &y).unwrap(), central_diff(|y| inst.upper_value(&x, y).unwrap(), &y, h)),
                (inst.grad_y_g(&x, &y).unwrap(), central_diff(|y| inst.lower_value(&x, y).unwrap(), &y, h)),
                (inst.grad_x_g(&x, &y).unwrap(), central_diff(|x| inst.lower_value(x, &y).unwrap(), &x, h)),
            ];
            for (analytic, fd) in checks {
                if fd.norm() < 1e-9 {
                    assert!(analytic.norm() < 1e-7);
                } else {
                    assert!(rel_err(&analytic, &fd) <= 1e-4, "{}", inst.kind_name());
                }
            }
            // second-order products against differences of the first-order oracle
            let v = random_vec(&mut rng, inst.dim_y(), 1.0);
            let hvp = inst.hvp_yy_g(&x, &y, &v).unwrap();
            let fd_h = (inst.grad_y_g(&x, &(&y + &v * h)).unwrap() - inst.grad_y_g(&x, &(&y - &v * h)).unwrap()) / (2.0 * h);
            assert!(rel_err(&hvp, &fd_h) <= 1e-4);
            let jvp = inst.jvp_xy_g(&x, &y, &v).unwrap();
            let fd_j = (inst.grad_x_g(&x, &(&y + &v * h)).unwrap() - inst.grad_x_g(&x, &(&y - &v * h)).unwrap()) / (2.0 * h);
            assert!(rel_err(&jvp, &fd_j) <= 1e-4 || (jvp.norm() < 1e-9 && fd_j.norm() < 1e-7));
        }
    }
}

#[test]
fn minimizer_map_is_lipschitz() {
    let mut rng = RandomStream::new(13).rng();
    for inst in all_kinds(NoiseModel::default()) {
        let c = inst.constants();
        for _ in 0..100 {
            let x = random_vec(&mut rng, inst.dim_x(), 3.0);
            let xp = random_vec(&mut rng, inst.dim_x(), 3.0);
            let dy = (inst.lower_minimizer(&x).unwrap() - inst.lower_minimizer(&xp).unwrap()).norm();
            assert!(dy <= c.l_g1 / c.mu * (x - xp).norm() + 1e-10);
        }
    }
}

#[test]
fn hessian_spectrum_within_constants() {
    let mut rng = RandomStream::new(14).rng();
    for inst in all_kinds(NoiseModel::default()) {
        let c = inst.constants();
        for _ in 0..10 {
            let x = random_vec(&mut rng, inst.dim_x(), 5.0);
            let (lo, hi) = symmetric_eigen_range(&inst.lower_hessian(&x).unwrap());
            assert!(lo >= c.mu * (1.0 - 1e-12) && hi <= c.l_g1 * (1.0 + 1e-12), "{}", inst.kind_name());
        }
    }
    let iso = &all_kinds(NoiseModel::default())[0];
    assert!(iso.has_isotropic_lower());
    let h = iso.lower_hessian(&Vector::zeros(2)).unwrap();
    assert_eq!(h, Matrix::identity(3, 3) * 0.5);
}

#[test]
fn phi_lower_bound_is_the_minimum() {
    let mut rng = RandomStream::new(15).rng();
    for inst in all_kinds(NoiseModel::default()).into_iter().take(3) {
        let lb = inst.phi_lower_bound().unwrap();
        for _ in 0..200 {
            let x = random_vec(&mut rng, inst.dim_x(), 3.0);
            assert!(inst.phi_value(&x).unwrap() >= lb - 1e-12);
        }
    }
}

#[test]
fn exp_toy_minimum_is_stationary() {
    let inst = &all_kinds(NoiseModel::default())[2];
    let lb = inst.phi_lower_bound().unwrap();
    // search near the minimizer with the exact hypergradient
    let mut x = Vector::zeros(2);
    for _ in 0..20_000 {
        x -= inst.true_hypergradient(&x).unwrap() * 0.1;
    }
    assert!((inst.phi_value(&x).unwrap() - lb).abs() < 1e-12);
}

#[test]
fn zero_noise_oracles_are_exact() {
    let inst = &all_kinds(NoiseModel::default())[1];
    let s = RandomStream::new(1);
    let x = vector(&[0.2, -0.1]);
    let y = vector(&[0.3, 0.1, -0.4]);
    let v = vector(&[1.0, -1.0, 0.5]);
    assert_eq!(inst.stoch_grad_y_g(&x, &y, &s).unwrap(), inst.grad_y_g(&x, &y).unwrap());
    assert_eq!(inst.stoch_grad_x_f(&x, &y, &s).unwrap(), inst.grad_x_f(&x, &y).unwrap());
    assert_eq!(inst.stoch_grad_y_f(&x, &y, &s).unwrap(), inst.grad_y_f(&x, &y).unwrap());
    assert_eq!(inst.stoch_jvp_xy_g(&x, &y, &v, &s).unwrap(), inst.jvp_xy_g(&x, &y, &v).unwrap());
    assert_eq!(inst.stoch_hvp_yy_g(&x, &y, &v, &s).unwrap(), inst.hvp_yy_g(&x, &y, &v).unwrap());
}

#[test]
fn jvp_of_identity_coupling() {
    let inst = identity_pair(3, NoiseModel::default());
    let e1 = vector(&[1.0, 0.0, 0.0]);
    let z = Vector::zeros(3);
    assert_eq!(inst.stoch_jvp_xy_g(&z, &z, &e1, &RandomStream::new(0)).unwrap(), -e1);
}

#[test]
fn operator_noise_vanishes_on_zero_vector() {
    let inst = identity_pair(3, noise(1.0, 1.0, 1.0));
    let z = Vector::zeros(3);
    let s = RandomStream::new(5);
    assert_eq!(inst.stoch_jvp_xy_g(&z, &z, &z, &s).unwrap(), z);
    assert_eq!(inst.stoch_hvp_yy_g(&z, &z, &z, &s).unwrap(), z);
}

#[test]
fn oracles_are_deterministic() {
    let inst = &all_kinds(noise(0.3, 0.4, 0.5))[3];
    let x = Vector::zeros(inst.dim_x());
    let y = Vector::from_element(inst.dim_y(), 0.1);
    let s = RandomStream::new(99).child("t", 4);
    assert_eq!(inst.stoch_grad_y_g(&x, &y, &s).unwrap(), inst.stoch_grad_y_g(&x, &y, &s).unwrap());
    assert_eq!(inst.stoch_grad_x_f(&x, &y, &s).unwrap(), inst.stoch_grad_x_f(&x, &y, &s).unwrap());
    assert_eq!(inst.stoch_hvp_yy_g(&x, &y, &y, &s).unwrap(), inst.stoch_hvp_yy_g(&x, &y, &y, &s).unwrap());
    let other = RandomStream::new(99).child("t", 5);
    assert_ne!(inst.stoch_grad_y_g(&x, &y, &s).unwrap(), inst.stoch_grad_y_g(&x, &y, &other).unwrap());
}

const DRAWS: u64 = 100_000;

/// Componentwise `|mean − exact| ≤ 4·SE` over `DRAWS` samples.
fn assert_unbiased(exact: &Vector, draw: impl Fn(&RandomStream) -> Vector) {
    let base = RandomStream::new(2024);
    let d = exact.len();
    let mut sum = Vector::zeros(d);
    let mut sq = Vector::zeros(d);
    for k in 0..DRAWS {
        let e = draw(&base.child("draw", k)) - exact;
        sq += e.component_mul(&e);
        sum += e;
    }
    let n = DRAWS as f64;
    for i in 0..d {
        let mean = sum[i] / n;
        let var = sq[i] / n - mean * mean;
        let se = (var / n).sqrt();
        assert!(mean.abs() <= 4.0 * se, "component {i}: mean error {mean}, se {se}");
    }
}

#[test]
fn stochastic_oracles_are_unbiased() {
    let inst = &all_kinds(noise(0.5, 0.8, 0.6))[1];
    let x = vector(&[0.4, -0.3]);
    let y = vector(&[0.2, 0.1, -0.1]);
    let v = vector(&[0.5, 1.0, -0.5]);
    assert_unbiased(&inst.grad_y_g(&x, &y).unwrap(), |s| inst.stoch_grad_y_g(&x, &y, s).unwrap());
    assert_unbiased(&inst.grad_x_f(&x, &y).unwrap(), |s| inst.stoch_grad_x_f(&x, &y, s).unwrap());
    assert_unbiased(&inst.grad_y_f(&x, &y).unwrap(), |s| inst.stoch_grad_y_f(&x, &y, s).unwrap());
    assert_unbiased(&inst.jvp_xy_g(&x, &y, &v).unwrap(), |s| inst.stoch_jvp_xy_g(&x, &y, &v, s).unwrap());
    assert_unbiased(&inst.hvp_yy_g(&x, &y, &v).unwrap(), |s| inst.stoch_hvp_yy_g(&x, &y, &v, s).unwrap());
}

#[test]
fn lower_noise_tail_is_sub_gaussian() {
    let sigma = 0.7;
    let inst = identity_pair(4, noise(0.0, sigma, 0.0));
    let z = Vector::zeros(4);
    let base = RandomStream::new(77);
    let norms: Vec<f64> = (0..DRAWS)
        .map(|k| inst.stoch_grad_y_g(&z, &z, &base.child("draw", k)).unwrap().norm())
        .collect();
    for rho in [sigma / 2.0, sigma, 2.0 * sigma] {
        let frac = norms.iter().filter(|&&n| n >= rho).count() as f64 / DRAWS as f64;
        assert!(frac <= 2.0 * (-2.0 * rho * rho / (sigma * sigma)).exp(), "rho {rho}: {frac}");
    }
}

#[test]
fn operator_noise_second_moment() {
    let sigma = 0.6;
    let inst = identity_pair(3, noise(0.0, 0.0, sigma));
    let z = Vector::zeros(3);
    let v = vector(&[0.3, -1.2, 0.4]);
    let base = RandomStream::new(78);
    for jvp in [true, false] {
        let mut acc = 0.0;
        for k in 0..DRAWS {
            let s = base.child("draw", k);
            let (noisy, exact) = if jvp {
                (inst.stoch_jvp_xy_g(&z, &z, &v, &s).unwrap(), inst.jvp_xy_g(&z, &z, &v).unwrap())
            } else {
                (inst.stoch_hvp_yy_g(&z, &z, &v, &s).unwrap(), inst.hvp_yy_g(&z, &z, &v).unwrap())
            };
            acc += (noisy - exact).norm_squared() / v.norm_squared();
        }
        assert!(acc / DRAWS as f64 <= sigma * sigma * 1.05);
    }
}

#[test]
fn upper_noise_variance_within_sigma_f1() {
    let sigma = 0.4;
    let inst = identity_pair(3, noise(sigma, 0.0, 0.0));
    let z = Vector::zeros(3);
    let base = RandomStream::new(79);
    let (mut ax, mut ay) = (0.0, 0.0);
    for k in 0..DRAWS {
        let s = base.child("draw", k);
        ax += inst.stoch_grad_x_f(&z, &z, &s).unwrap().norm_squared();
        ay += inst.stoch_grad_y_f(&z, &z, &s).unwrap().norm_squared();
    }
    for a in [ax, ay] {
        assert!(a / DRAWS as f64 <= sigma * sigma * 1.05);
    }
}

#[test]
fn json_round_trip() {
    for inst in all_kinds(noise(0.1, 0.2, 0.3)) {
        let s = serde_json::to_string(&inst).unwrap();
        let back: BilevelInstance = serde_json::from_str(&s).unwrap();
        assert_eq!(back, inst);
        assert_eq!(back.constants(), inst.constants());
    }
}

#[test]
fn json_rejects_bad_documents() {
    let unknown = r#"{"kind":"isotropic_quadratic","mu":1.0,"a":[[1.0]],"b":[0.0],
        "upper":{"c":[0.0],"d":[0.0]},"radius":1.0,
        "noise":{"sigma_f1":0.0,"sigma_g1":0.0,"sigma_g2":0.0},"extra":1}"#;
    assert!(serde_json::from_str::<BilevelInstance>(unknown).unwrap_err().to_string().contains("extra"));
    let ragged = r#"{"kind":"isotropic_quadratic","mu":1.0,"a":[[1.0],[1.0,2.0]],"b":[0.0,0.0],
        "upper":{"c":[0.0],"d":[0.0,0.0]},"radius":1.0,
        "noise":{"sigma_f1":0.0,"sigma_g1":0.0,"sigma_g2":0.0}}"#;
    assert!(serde_json::from_str::<BilevelInstance>(ragged).is_err());
    let indefinite = InstanceSpec::GeneralQuadratic {
        h: vec![vec![1.0, 0.0], vec![0.0, -1.0]],
        b_matrix: vec![vec![1.0], vec![0.0]],
        b: vec![0.0, 0.0],
        upper: upper(&[0.0], &[0.0, 0.0]),
        radius: 1.0,
        noise: NoiseModel::default(),
    };
    assert!(matches!(BilevelInstance::from_spec(indefinite), Err(Error::Instance(_))));
}

#[test]
fn dimension_mismatch_is_reported() {
    let inst = identity_pair(2, NoiseModel::default());
    assert!(matches!(inst.lower_minimizer(&Vector::zeros(3)), Err(Error::Dimension { .. })));
}
