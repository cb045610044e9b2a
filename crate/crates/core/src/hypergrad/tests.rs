use super::*;
use crate::constants::tests::zero_constants;
use crate::linalg::{vector, Matrix};
use crate::problems::{InstanceSpec, NoiseModel, QuadraticUpperSpec};

fn noise(f1: f64, g2: f64) -> NoiseModel {
    NoiseModel {
        sigma_f1: f1,
        sigma_g1: 0.0,
        sigma_g2: g2,
    }
}

fn iso_instance(a: Vec<Vec<f64>>, wy: f64, n: NoiseModel) -> BilevelInstance {
    let (dy, dx) = (a.len(), a[0].len());
    BilevelInstance::from_spec(InstanceSpec::IsotropicQuadratic {
        mu: 1.0,
        a,
        b: vec![0.2; dy],
        upper: QuadraticUpperSpec {
            wx: 1.0,
            c: vec![0.5; dx],
            wy,
            d: vec![-0.3; dy],
        },
        radius: 2.0,
        noise: n,
    })
    .unwrap()
}

fn general_instance(n: NoiseModel) -> BilevelInstance {
    BilevelInstance::from_spec(InstanceSpec::GeneralQuadratic {
        h: vec![vec![1.0, 0.0], vec![0.0, 2.0]],
        b_matrix: vec![vec![1.0, 0.5], vec![0.0, 1.0]],
        b: vec![0.1, -0.1],
        upper: QuadraticUpperSpec { wx: 1.0, c: vec![0.0, 0.0], wy: 1.0, d: vec![1.0, 1.0] },
        radius: 2.0,
        noise: n,
    })
    .unwrap()
}

fn exact_hvp(h: Matrix) -> impl FnMut(&Vector, &RandomStream) -> Result<Vector> {
    move |v, _| Ok(&h * v)
}

#[test]
fn empty_product_convention() {
    let cfg = EstimatorConfig::new(1, 1, 2.0).unwrap();
    let out = neumann_inverse_apply(exact_hvp(Matrix::identity(2, 2)), &vector(&[1.0, 0.0]), &cfg, 0, &RandomStream::new(0)).unwrap();
    assert_eq!(out, vector(&[0.5, 0.0]));
}

#[test]
fn depth_out_of_range_rejected() {
    let cfg = EstimatorConfig::new(2, 1, 2.0).unwrap();
    assert!(neumann_inverse_apply(exact_hvp(Matrix::identity(1, 1)), &vector(&[1.0]), &cfg, 2, &RandomStream::new(0)).is_err());
    assert!(EstimatorConfig::new(0, 1, 1.0).is_err());
}

fn enumerate(h: &Matrix, v: &Vector, depth: u64, l: f64) -> Vector {
    let cfg = EstimatorConfig::new(depth, 1, l).unwrap();
    let mut acc = Vector::zeros(v.len());
    for q in 0..depth {
        acc += neumann_inverse_apply(exact_hvp(h.clone()), v, &cfg, q, &RandomStream::new(0)).unwrap();
    }
    acc / depth as f64
}

#[test]
fn enumerated_isotropic() {
    let v = vector(&[0.3, -1.1]);
    let avg = enumerate(&Matrix::identity(2, 2), &v, 3, 2.0);
    assert!((avg - &v * 0.875).norm() < 1e-15);
}

#[test]
fn enumerated_diagonal_closed_form() {
    let v = vector(&[1.0, 1.0]);
    let (l, depth) = (2.0, 4);
    let avg = enumerate(&Matrix::from_diagonal(&vector(&[1.0, 2.0])), &v, depth, l);
    for (i, h) in [1.0f64, 2.0].into_iter().enumerate() {
        let closed = (1.0 - (1.0 - h / l).powi(depth as i32)) / h;
        assert!((avg[i] - closed).abs() <= 1e-12);
    }
}

#[test]
fn enumerated_spd_spectral_form() {
    let m = Matrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 1.5, -0.3, 0.1, -0.3, 1.2]);
    let eig = m.clone().symmetric_eigen();
    let l = eig.eigenvalues.max() * 1.3;
    let v = vector(&[0.2, -0.7, 1.0]);
    for depth in [1, 3, 8] {
        let avg = enumerate(&m, &v, depth, l);
        let coeffs = eig.eigenvectors.transpose() * &v;
        let scaled = Vector::from_fn(3, |i, _| {
            let h = eig.eigenvalues[i];
            coeffs[i] * (1.0 - (1.0 - h / l).powi(depth as i32)) / h
        });
        assert!((avg - &eig.eigenvectors * scaled).norm() <= 1e-12);
    }
}

#[test]
fn enumerated_mean_matches_loop_form() {
    let inst = general_instance(NoiseModel::default());
    let x = vector(&[0.4, -0.2]);
    let y = inst.lower_minimizer(&x).unwrap();
    let cfg = EstimatorConfig::for_instance(&inst, 6, 1).unwrap();
    let mut acc = Vector::zeros(2);
    for q in 0..6 {
        acc += estimate_with_depth(&inst, &x, &y, &cfg, q, &RandomStream::new(0)).unwrap().value;
    }
    let direct = enumerated_mean_estimator(&inst, &x, &y, 6, cfg.l_g1).unwrap();
    assert!((acc / 6.0 - direct).norm() <= 1e-13);
}

#[test]
fn exact_single_term_on_identity_pair() {
    let inst = BilevelInstance::from_spec(InstanceSpec::IsotropicQuadratic {
        mu: 1.0,
        a: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        b: vec![0.0, 0.0],
        upper: QuadraticUpperSpec { wx: 1.0, c: vec![0.0, 0.0], wy: 1.0, d: vec![0.0, 0.0] },
        radius: 1.0,
        noise: NoiseModel::default(),
    })
    .unwrap();
    let x = vector(&[0.7, -1.3]);
    let cfg = EstimatorConfig::for_instance(&inst, 1, 1).unwrap();
    let est = estimate_hypergradient(&inst, &x, &x, &cfg, &RandomStream::new(4)).unwrap();
    assert_eq!(est.value, &x * 2.0);
    assert_eq!(est.value, inst.true_hypergradient(&x).unwrap());
}

#[test]
fn zero_upper_y_gradient_leaves_stochastic_x_part() {
    let inst = iso_instance(vec![vec![2.0, 0.0], vec![0.0, 1.0]], 0.0, noise(0.0, 0.5));
    let x = vector(&[0.1, 0.2]);
    let y = inst.lower_minimizer(&x).unwrap();
    let cfg = EstimatorConfig::for_instance(&inst, 4, 1).unwrap();
    let s = RandomStream::new(8);
    let est = estimate_hypergradient(&inst, &x, &y, &cfg, &s).unwrap();
    assert_eq!(est.value, inst.stoch_grad_x_f(&x, &y, &s.child("f", 0)).unwrap());
}

#[test]
fn bias_bound_examples() {
    let c = ProblemConstants { l_f0: 1.0, ..zero_constants(1.0, 2.0) };
    assert_eq!(bias_bound(&c, 3), 0.25);
    let flat = ProblemConstants { l_f0: 5.0, ..zero_constants(1.0, 1.0) };
    assert_eq!(bias_bound(&flat, 1), 0.0);
    for q in 1..20 {
        assert!(bias_bound(&c, q + 1) < bias_bound(&c, q));
    }
}

#[test]
fn isotropic_truncation_error_closed_form() {
    let inst = iso_instance(vec![vec![2.0, 0.0], vec![0.5, 1.0]], 1.0, NoiseModel::default());
    let c = *inst.constants();
    let x = vector(&[0.3, -0.6]);
    let y = inst.lower_minimizer(&x).unwrap();
    let jfy = inst.jvp_xy_g(&x, &y, &inst.grad_y_f(&x, &y).unwrap()).unwrap().norm();
    for depth in 1..=12 {
        let est = enumerated_mean_estimator(&inst, &x, &y, depth, c.l_g1).unwrap();
        let err = (est - inst.true_hypergradient(&x).unwrap()).norm();
        let closed = (1.0 - c.mu / c.l_g1).powi(depth as i32) * jfy / c.mu;
        assert!((err - closed).abs() <= 1e-10);
        assert!(err <= bias_bound(&c, depth));
    }
}

#[test]
fn call_accounting() {
    let inst = general_instance(noise(0.1, 0.1));
    let x = vector(&[0.0, 0.0]);
    let y = vector(&[0.0, 0.0]);
    let cfg = EstimatorConfig::for_instance(&inst, 5, 3).unwrap();
    let est = estimate_hypergradient(&inst, &x, &y, &cfg, &RandomStream::new(2)).unwrap();
    assert_eq!(est.calls, CallCounts { g1: 0, jvp: 3, hvp: 3 * est.q, f: 3 });
}

#[test]
fn shared_stream_shares_samples() {
    let inst = general_instance(noise(0.3, 0.3));
    let cfg = EstimatorConfig::for_instance(&inst, 6, 4).unwrap();
    let s = RandomStream::new(31).child("upper", 7);
    let x = vector(&[0.1, 0.1]);
    let y = vector(&[0.2, 0.0]);
    let a = estimate_hypergradient(&inst, &x, &y, &cfg, &s).unwrap();
    let b = estimate_hypergradient(&inst, &x, &y, &cfg, &s).unwrap();
    assert_eq!(a, b);
    let other = estimate_hypergradient(&inst, &x, &y, &cfg, &RandomStream::new(31).child("upper", 8)).unwrap();
    assert_ne!(a.value, other.value);
}

#[test]
fn monte_carlo_mean_within_bias_bound() {
    let inst = general_instance(noise(0.3, 0.3));
    let x = vector(&[0.5, -0.5]);
    let cfg = EstimatorConfig::for_instance(&inst, 5, 1).unwrap();
    let r = empirical_bias_and_variance(&inst, &x, &cfg, 100_000, &RandomStream::new(40)).unwrap();
    assert!(r.bias_est <= r.bias_bound + 4.0 * r.se, "{r:?}");
}

#[test]
fn zero_noise_isotropic_bias_vanishes_with_full_enumeration() {
    // with l_g1 = mu the single Neumann term is exact, so every sample is exact
    let inst = iso_instance(vec![vec![1.0, 0.0], vec![0.0, 0.5]], 1.0, NoiseModel::default());
    assert_eq!(inst.constants().l_g1, inst.constants().mu);
    let x = vector(&[0.2, 0.9]);
    let cfg = EstimatorConfig::for_instance(&inst, 1, 1).unwrap();
    let r = empirical_bias_and_variance(&inst, &x, &cfg, 1000, &RandomStream::new(41)).unwrap();
    assert!(r.bias_est <= 1e-12 && r.var_est <= 1e-24);
}

#[test]
fn standard_error_scales_as_root_n() {
    let inst = general_instance(noise(0.5, 0.5));
    let x = vector(&[0.2, 0.1]);
    let cfg = EstimatorConfig::for_instance(&inst, 4, 1).unwrap();
    let a = empirical_bias_and_variance(&inst, &x, &cfg, 5_000, &RandomStream::new(42)).unwrap();
    let b = empirical_bias_and_variance(&inst, &x, &cfg, 20_000, &RandomStream::new(43)).unwrap();
    let ratio = b.se / a.se;
    assert!((ratio - 0.5).abs() <= 0.1, "{ratio}");
}

#[test]
fn batch_mean_variance_scales_with_batch() {
    // with Q = 1 the depth is deterministic, so batching averages all randomness
    let inst = general_instance(noise(0.5, 0.5));
    let x = vector(&[0.2, 0.1]);
    let single = EstimatorConfig::for_instance(&inst, 1, 1).unwrap();
    let v1 = empirical_bias_and_variance(&inst, &x, &single, 20_000, &RandomStream::new(44)).unwrap().var_est;
    for s in [4, 16] {
        let cfg = EstimatorConfig { batch: s, ..single };
        let vs = empirical_bias_and_variance(&inst, &x, &cfg, 20_000, &RandomStream::new(45)).unwrap().var_est;
        let ratio = vs * s as f64 / v1;
        assert!((ratio - 1.0).abs() <= 0.06, "S = {s}: {ratio}");
    }
}

#[test]
fn bias_csv_columns() {
    let r = BiasReport { depth: 3, batch: 1, bias_bound: 0.25, bias_est: 0.0, var_est: 1.0, se: 0.5, n_samples: 4 };
    let csv = crate::io::to_csv(&[r]);
    assert!(csv.starts_with("Q,S,bias_bound,bias_est,var_est,se\n3,1,"));
}
