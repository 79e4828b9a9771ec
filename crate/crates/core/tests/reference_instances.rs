use ewcert::catalog;
use ewcert::certify::{
    check_ewc, check_strong_monotone, check_weak_contractive, find_weight, krasnoselskij_plan,
    min_b, monotone_baseline_plan, optimize_rate, WeightMode,
};
use ewcert::iterate::{forward_step, krasnoselskij, verify_contraction_rate, IterationConfig};
use ewcert::matnorm::{Matrix, PositiveWeight};
use ewcert::operators::{AffineOp, Operator};
use ewcert::JacobianEnvelope;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn wide() -> JacobianEnvelope {
    JacobianEnvelope::constant(catalog::wide_diagonal_matrix()).unwrap()
}

fn affine() -> JacobianEnvelope {
    JacobianEnvelope::constant(catalog::affine_reference_matrix()).unwrap()
}

#[test]
fn wide_diagonal_certificate_at_b_four() {
    let env = wide();
    assert_eq!(env.diag_lower(), 7.5);
    let eta = catalog::wide_diagonal_weight();
    let cert = check_ewc(&env, 4.0, 0.0, &eta).unwrap();
    assert!(cert.feasible, "residual {}", cert.residual);
    let plan = krasnoselskij_plan(&cert).unwrap();
    assert!((plan.theta_max - 0.2).abs() < 1e-15);
    assert!(plan.theta_max_open);
    // not nonexpansive under any weight: the diagonal alone exceeds one
    assert!(!find_weight(&env, 0.0).unwrap().feasible);
}

#[test]
fn wide_diagonal_residual_map_is_strongly_monotone() {
    let f = wide().affine_map(1.0, -1.0).unwrap();
    let eta = catalog::wide_diagonal_weight();
    assert!(check_strong_monotone(&f, 0.0, &eta).unwrap().feasible);
    let c = check_strong_monotone(&f, 0.0227, &eta).unwrap();
    assert!(c.residual <= 1e-2, "residual {}", c.residual);
}

#[test]
fn wide_diagonal_rates() {
    let env = wide();
    let fixed = optimize_rate(&env, &WeightMode::Fixed(catalog::wide_diagonal_weight())).unwrap();
    assert!(
        (fixed.certificate.b - 4.006).abs() < 0.05,
        "b = {}",
        fixed.certificate.b
    );
    assert!(
        (fixed.certificate.c - 0.0227).abs() < 0.01,
        "c = {}",
        fixed.certificate.c
    );
    let free = optimize_rate(&env, &WeightMode::Perron).unwrap();
    assert!(free.certificate.feasible);
    assert!(free.rate <= fixed.rate + 1e-9);
    let mon = monotone_baseline_plan(&env).unwrap();
    assert!((mon.theta_max - 1.0 / 8.5).abs() < 1e-12);
    let mb = min_b(&env, &WeightMode::Perron).unwrap();
    assert!(mb.b <= 7.5 && mb.feasible);
    assert!(check_ewc(&env, mb.b, 0.0, &mb.eta).unwrap().feasible);
}

#[test]
fn affine_fixed_point_and_zero() {
    let t = catalog::affine_reference_operator();
    let x = catalog::AFFINE_REFERENCE_FIXED_POINT;
    let tx = t.evaluate(&x).unwrap();
    for (a, b) in tx.iter().zip(&x) {
        assert!((a - b).abs() < 0.02);
    }
    let f = catalog::affine_reference_zero_problem();
    let cfg = IterationConfig::new(0.59, 4);
    let tr = forward_step(&f, &cfg, &[0.0; 4]).unwrap();
    assert!(tr.converged);
    for (a, b) in tr.final_point().iter().zip(&x) {
        assert!((a - b).abs() < 0.01);
    }
}

/// Reference fixed point from a dense linear solve of `(I − A)x = −1`.
fn affine_solution() -> Vec<f64> {
    let a = catalog::affine_reference_matrix();
    let m = nalgebra::DMatrix::from_row_slice(4, 4, a.affine_identity(1.0, -1.0).unwrap().data());
    let rhs = nalgebra::DVector::from_element(4, -1.0);
    m.lu().solve(&rhs).unwrap().iter().cloned().collect()
}

#[test]
fn affine_rate_claims_hold_along_trajectories() {
    let f = catalog::affine_reference_zero_problem();
    let x_star = affine_solution();
    let ones = PositiveWeight::ones(4);
    for (theta, rate) in [(0.59, 0.83), (0.48, 0.86)] {
        let cfg = IterationConfig::new(theta, 4).with_stop_tol(1e-13);
        let tr = forward_step(&f, &cfg, &[0.0; 4]).unwrap();
        assert!(
            verify_contraction_rate(&tr, &x_star, rate, &ones).unwrap(),
            "θ = {theta}"
        );
    }
}

#[test]
fn contraction_rate_check_rejects_too_small_rate() {
    let f = catalog::affine_reference_zero_problem();
    let x_star = affine_solution();
    let tr = forward_step(&f, &IterationConfig::new(0.59, 4), &[0.0; 4]).unwrap();
    assert!(!verify_contraction_rate(&tr, &x_star, 0.3, &PositiveWeight::ones(4)).unwrap());
}

#[test]
fn affine_monotone_baseline_step() {
    let plan = monotone_baseline_plan(&affine()).unwrap();
    assert!((plan.theta_max - 0.48).abs() < 0.01);
    assert!(!plan.theta_max_open);
    assert!(plan.feasible);
}

#[test]
fn affine_minimal_b_below_diagonal_bound() {
    let env = affine();
    for mode in [WeightMode::ones(4), WeightMode::Perron] {
        let mb = min_b(&env, &mode).unwrap();
        assert!(mb.b <= env.diag_lower().max(0.0) + 1e-12);
    }
    let perron = min_b(&env, &WeightMode::Perron).unwrap();
    let unit = min_b(&env, &WeightMode::ones(4)).unwrap();
    assert!(perron.b <= unit.b + 1e-9);
}

#[test]
fn counterexample_has_no_weight_but_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for a in [0.1, 0.5, 0.9] {
        let m = catalog::marginal_counterexample(a);
        let env = JacobianEnvelope::constant(m.clone()).unwrap();
        let found = find_weight(&env, 0.0).unwrap();
        assert!(!check_weak_contractive(&env, &found.eta).unwrap().feasible);
        for _ in 0..1000 {
            let eta = PositiveWeight::new(vec![rng.gen_range(1e-3..1e3), rng.gen_range(1e-3..1e3)])
                .unwrap();
            assert!(!check_weak_contractive(&env, &eta).unwrap().feasible);
        }
        let op = AffineOp::linear(m).unwrap();
        let tr = krasnoselskij(&op, &IterationConfig::new(0.5, 2), &[1.0, 1.0]).unwrap();
        assert!(tr.converged && !tr.diverged);
    }
}

#[test]
fn leaky_relu_reference_certificate() {
    let op = catalog::leaky_relu_reference_operator();
    let env = op.jacobian_envelope().unwrap();
    let eta = catalog::leaky_relu_reference_weight();
    let cert = check_ewc(
        &env,
        catalog::LEAKY_RELU_REFERENCE_B,
        catalog::LEAKY_RELU_REFERENCE_C,
        &eta,
    )
    .unwrap();
    assert!(cert.feasible);
    // without the overall factor 1/2 the printed triple is tight to rounding
    let unscaled = JacobianEnvelope::vertices(vec![
        catalog::leaky_relu_reference_matrix().scale(2.0 * catalog::LEAKY_RELU_REFERENCE_ALPHA),
        catalog::leaky_relu_reference_matrix().scale(2.0),
    ])
    .unwrap();
    let tight = check_ewc(
        &unscaled,
        catalog::LEAKY_RELU_REFERENCE_B,
        catalog::LEAKY_RELU_REFERENCE_C,
        &eta,
    )
    .unwrap();
    assert!(tight.residual.abs() <= 2e-2, "residual {}", tight.residual);
}

#[test]
fn optimized_certificates_revalidate() {
    for env in [wide(), affine()] {
        let opt = optimize_rate(&env, &WeightMode::Perron).unwrap();
        let c = &opt.certificate;
        assert!(check_ewc(&env, c.b, c.c, &c.eta).unwrap().feasible);
        let plan = krasnoselskij_plan(c).unwrap();
        assert!((plan.rate_bound - opt.rate).abs() < 1e-12);
    }
}

#[test]
fn scaled_identity_matrix_plans() {
    let env = JacobianEnvelope::constant(Matrix::scaled_identity(3, 0.5)).unwrap();
    let opt = optimize_rate(&env, &WeightMode::Perron).unwrap();
    assert_eq!(opt.certificate.b, 0.0);
    assert!((opt.rate - 0.5).abs() < 1e-12);
    assert_eq!(opt.certificate.eta, PositiveWeight::ones(3));
}
