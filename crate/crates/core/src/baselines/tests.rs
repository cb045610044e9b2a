use super::*;
use crate::accbo::tests::{iso, overrides, schedule};
use crate::accbo::{run_accbo, LowerOption};
use crate::io::to_csv;
use crate::constants::{derive_sigma_bar, derive_smoothness_constants};
use crate::schedule::Calibration;
use crate::linalg::vector;
use crate::problems::NoiseModel;
use crate::schedule::{ScheduleMode, ScheduleOverrides};

#[test]
fn sgd_step_example() {
    let w = sgd_tracking_step(&vector(&[1.0]), |w, _| Ok(w.clone()), 0.5, &RandomStream::new(0)).unwrap();
    assert_eq!(w, vector(&[0.5]));
}

#[test]
fn sgd_contracts_noiselessly() {
    let fam = QuadraticFamily::diagonal(&[1.0, 3.0]).unwrap();
    let alpha = 0.2;
    let mut w = vector(&[1.0, -2.0]);
    let zero = Vector::zeros(2);
    for _ in 0..50 {
        let next = sgd_tracking_step(&w, |z, _| Ok(fam.gradient(z, &zero)), alpha, &RandomStream::new(0)).unwrap();
        assert!(next.norm() <= (1.0 - fam.mu() * alpha) * w.norm() + 1e-15);
        w = next;
    }
}

#[test]
fn snag_tracks_fixed_drift_better_than_sgd() {
    let fam = QuadraticFamily::isotropic(1.0, 3).unwrap();
    let alpha = 0.04;
    let drift = DriftProcess::FixedDirection { delta: 0.01, direction: vec![1.0, 0.0, 0.0] };
    let p = crate::snag::TrackingBoundParams {
        mu: 1.0,
        alpha,
        sigma: 0.01,
        delta_drift: 0.01,
        horizon: 600,
        delta_prob: 0.05,
        v0: 1.0,
    };
    let zero = Vector::zeros(3);
    let mut wins = Vec::new();
    for seed in 0..50 {
        let s = RandomStream::new(seed);
        let snag = crate::snag::run_tracking_experiment(&fam, &drift, &p, &zero, &zero, &s).unwrap();
        let sgd = run_sgd_tracking(&fam, &drift, alpha, p.sigma, p.horizon, &zero, &zero, &s).unwrap();
        let tail = |v: &[f64]| v[400..].iter().sum::<f64>() / v[400..].len() as f64;
        let snag_tail = tail(&snag.iter().map(|r| r.dist).collect::<Vec<_>>());
        wins.push(snag_tail - tail(&sgd));
    }
    wins.sort_by(f64::total_cmp);
    assert!(wins[25] < 0.0);
}

#[test]
fn zero_beta_is_normalized_estimator_descent() {
    let inst = iso(NoiseModel { sigma_f1: 0.1, sigma_g1: 0.1, sigma_g2: 0.1 });
    let sched = schedule(&inst, ScheduleOverrides { beta: 0.0, ..overrides() });
    let cfg = EstimatorConfig::for_instance(&inst, sched.depth, sched.batch).unwrap();
    let mut st = AccboState::new(vector(&[0.3, 0.1]), vector(&[0.0, 0.0]));
    st.t = 3;
    st.m = Some(vector(&[5.0, 5.0]));
    let s = RandomStream::new(1);
    let (m, _) = plain_momentum_update(&st, &inst, &cfg, 0.0, &s).unwrap();
    let g = estimate_hypergradient(&inst, &st.x, &st.y_hat, &cfg, &s.child("upper", 3)).unwrap().value;
    assert_eq!(m, g);
}

#[test]
fn baseline_is_deterministic_and_shares_schema() {
    let inst = iso(NoiseModel { sigma_f1: 0.1, sigma_g1: 0.1, sigma_g2: 0.1 });
    let sched = schedule(&inst, overrides());
    let opts = RunOptions::default();
    let a = run_plain_momentum_bilevel(&inst, &sched, &opts, &RandomStream::new(2)).unwrap();
    let b = run_plain_momentum_bilevel(&inst, &sched, &opts, &RandomStream::new(2)).unwrap();
    assert_eq!(to_csv(&a.logs), to_csv(&b.logs));
    let acc = run_accbo(&inst, &sched, LowerOption::One, &opts, &RandomStream::new(2)).unwrap();
    assert_eq!(a.logs.len(), acc.logs.len());
    // one estimator call per iteration
    assert_eq!(a.summary.total_calls.jvp, sched.batch * a.summary.iterations);
    assert_eq!(a.summary.method, "plain_momentum");
}

#[test]
fn baseline_overrides_follow_plain_momentum_rates() {
    let inst = iso(NoiseModel { sigma_f1: 0.3, ..NoiseModel::default() });
    let c = *inst.constants();
    let base = overrides();
    let req = ScheduleRequest {
        epsilon: 0.1,
        delta: 0.05,
        d0: 2.0,
        init_dist: 1.0,
        mode: ScheduleMode::Practical(base),
    };
    let o = plain_momentum_overrides(&base, &c, &req, None).unwrap();
    let (l0, _) = derive_smoothness_constants(&c).unwrap();
    let sb = derive_sigma_bar(&c).unwrap();
    let omb = (0.01 / (4.0 * sb * sb)).min(c.mu / (25.0 * c.l_g1));
    assert!(close(1.0 - o.beta, omb));
    assert!(close(o.eta, 0.1 * (1.0 - o.beta) / l0));
    assert_eq!(o.iterations, (4.0 * 2.0 / (o.eta * 0.1)).ceil() as u64);
    assert_eq!((o.alpha, o.batch, o.depth), (base.alpha, base.batch, base.depth));
    let cal = Calibration { l0: 0.5, sigma_bar: 1.0 };
    let k = plain_momentum_overrides(&base, &c, &req, Some(&cal)).unwrap();
    assert!(close(1.0 - k.beta, 0.01 / 4.0));
    assert!(close(k.eta, 0.1 * (1.0 - k.beta) / 0.5));
    assert!(plain_momentum_overrides(&base, &c, &req, Some(&Calibration { l0: -1.0, sigma_bar: 1.0 })).is_err());
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1e-300)
}
