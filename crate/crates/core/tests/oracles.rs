//! Checks against independent oracles: dense eigenvalues from nalgebra,
//! central finite differences and brute-force sampling.

use ewcert::certify::check_weak_contractive;
use ewcert::envelope::{JacobianEnvelope, RowTransform};
use ewcert::matnorm::{perron, weighted_inf_norm_vec, Matrix, PerronOptions, PositiveWeight};
use ewcert::operators::{Activation, DiagNonlinAffineOp, Operator};
use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn spectrum(m: &Matrix) -> Vec<Complex<f64>> {
    to_na(m).complex_eigenvalues().iter().cloned().collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::new(n, n, (0..n * n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

#[test]
fn perron_root_matches_dense_eigen_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let m = random_matrix(&mut rng, 5, 0.0, 1.0);
        let p = perron(&m, &PerronOptions::default()).unwrap();
        let oracle = spectrum(&m).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(p.converged);
        assert!((p.rho - oracle).abs() < 1e-8, "{} vs {oracle}", p.rho);
    }
}

#[test]
fn perron_on_sparse_nonnegative_matrices() {
    // zero patterns make many of these reducible
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let n = rng.gen_range(1..=6);
        let data = (0..n * n)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    rng.gen_range(0.0..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let m = Matrix::new(n, n, data).unwrap();
        let p = perron(&m, &PerronOptions::default()).unwrap();
        let oracle = spectrum(&m).iter().map(|z| z.norm()).fold(0.0, f64::max);
        // periodic or defective structure can slow the power method; the
        // Collatz upper estimate never undershoots the oracle
        assert!(p.rho >= oracle - 1e-8, "{} < {oracle}", p.rho);
        if p.converged {
            assert!(p.rho - oracle < 1e-6, "{} vs {oracle}", p.rho);
        }
    }
}

/// Boundary eigenvalue test: modulus at most one, and every eigenvalue on
/// the unit circle has equal algebraic and geometric multiplicity.
fn assert_marginally_stable(a: &Matrix) {
    let n = a.rows();
    let eig = spectrum(a);
    for lam in &eig {
        assert!(
            lam.norm() <= 1.0 + 1e-8,
            "eigenvalue {lam} outside the unit disk"
        );
        if lam.norm() < 1.0 - 1e-8 {
            continue;
        }
        let algebraic = eig.iter().filter(|z| (*z - lam).norm() < 1e-6).count();
        let shifted = DMatrix::from_fn(n, n, |i, j| {
            Complex::new(a[(i, j)], 0.0) - if i == j { *lam } else { Complex::new(0.0, 0.0) }
        });
        let sv = shifted.svd(false, false).singular_values;
        let geometric = sv.iter().filter(|s| **s < 1e-6).count();
        assert_eq!(
            algebraic, geometric,
            "eigenvalue {lam} of {a:?} is not semi-simple"
        );
    }
}

#[test]
fn weakly_contractive_matrices_are_marginally_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    for trial in 0..300 {
        let n = rng.gen_range(1..=6);
        let eta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
        let nonneg = trial % 3 == 0;
        let mut a = random_matrix(&mut rng, n, if nonneg { 0.0 } else { -1.0 }, 1.0);
        for i in 0..n {
            let s: f64 = (0..n).map(|j| a[(i, j)].abs() * eta[j]).sum();
            let tight = if rng.gen_bool(0.7) {
                1.0
            } else {
                rng.gen_range(0.3..1.0)
            };
            for j in 0..n {
                a[(i, j)] *= tight * eta[i] / s;
            }
        }
        let env = JacobianEnvelope::constant(a.clone()).unwrap();
        let w = PositiveWeight::new(eta).unwrap();
        assert!(check_weak_contractive(&env, &w).unwrap().feasible);
        assert_marginally_stable(&a);
        checked += 1;
    }
    // structured cases with repeated unit-modulus eigenvalues
    let perm = Matrix::from_rows(&[
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![1.0, 0.0, 0.0],
    ])
    .unwrap();
    for m in [Matrix::identity(4), perm, Matrix::scaled_identity(3, -1.0)] {
        let env = JacobianEnvelope::constant(m.clone()).unwrap();
        assert!(
            check_weak_contractive(&env, &PositiveWeight::ones(m.rows()))
                .unwrap()
                .feasible
        );
        assert_marginally_stable(&m);
        checked += 1;
    }
    assert!(checked >= 300);
}

#[test]
fn defective_boundary_eigenvalue_is_detected_by_the_oracle() {
    // the oracle itself must flag a Jordan block at 1
    let j = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
    let result = std::panic::catch_unwind(|| assert_marginally_stable(&j));
    assert!(result.is_err());
}

fn central_jacobian(op: &dyn Operator, x: &[f64], h: f64) -> Matrix {
    let n = op.dim();
    let mut jac = Matrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (op.apply(&xp), op.apply(&xm));
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

#[test]
fn finite_difference_jacobians_lie_in_the_envelope() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let n = rng.gen_range(1..=6);
        let a = random_matrix(&mut rng, n, -1.0, 1.0);
        let offset: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = rng.gen_range(0.05..1.0);
        let op =
            DiagNonlinAffineOp::new(a.clone(), offset.clone(), Activation::LeakyRelu { alpha })
                .unwrap();
        let env = op.jacobian_envelope().unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        // skip points within reach of a kink
        let pre = a.matvec(&x).unwrap();
        let h = 1e-6;
        let margin = 10.0 * h * (0..n).map(|j| a[(0, j)].abs()).sum::<f64>().max(1.0) * n as f64;
        if pre.iter().zip(&offset).any(|(p, o)| (p + o).abs() < margin) {
            continue;
        }
        let jac = central_jacobian(&op, &x, h);
        assert!(env.contains(&jac, 1e-6), "{jac:?} not in envelope");
    }
}

#[test]
fn vertex_worst_rows_match_sampled_jacobians() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..50 {
        let n = rng.gen_range(1..=6);
        let a = random_matrix(&mut rng, n, -1.0, 1.0);
        let alpha = rng.gen_range(0.05..1.0);
        let op = DiagNonlinAffineOp::new(a.clone(), vec![0.0; n], Activation::LeakyRelu { alpha })
            .unwrap();
        let env = op.jacobian_envelope().unwrap();
        let eta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
        let b = rng.gen_range(0.0..2.0);
        // a true Jacobian is diag(d) A with each d_i ∈ {α, 1}
        let mut sampled = vec![f64::NEG_INFINITY; n];
        for _ in 0..64 {
            for (i, best) in sampled.iter_mut().enumerate() {
                let d = if rng.gen_bool(0.5) { alpha } else { 1.0 };
                let v: f64 = (0..n)
                    .map(|j| {
                        let e = d * a[(i, j)] + if i == j { b } else { 0.0 };
                        e.abs() * eta[j]
                    })
                    .sum();
                *best = best.max(v);
            }
        }
        for (i, s) in sampled.iter().enumerate() {
            let w = env.worst_row(i, RowTransform::Abs { shift: b }, &eta).1;
            assert!((w - s).abs() < 1e-8, "row {i}: {w} vs {s}");
        }
    }
}

#[test]
fn envelope_lipschitz_bound_holds_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..100 {
        let n = rng.gen_range(1..=6);
        let a = random_matrix(&mut rng, n, -1.0, 1.0);
        let op = DiagNonlinAffineOp::new(
            a,
            vec![0.1; n],
            Activation::LeakyRelu {
                alpha: rng.gen_range(0.0..1.0),
            },
        )
        .unwrap();
        let eta = PositiveWeight::new((0..n).map(|_| rng.gen_range(0.1..2.0)).collect()).unwrap();
        let lip = op
            .jacobian_envelope()
            .unwrap()
            .lipschitz_bound(eta.as_slice());
        for _ in 0..10 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let d: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
            let td: Vec<f64> = op
                .apply(&x)
                .iter()
                .zip(op.apply(&y))
                .map(|(p, q)| p - q)
                .collect();
            let lhs = weighted_inf_norm_vec(&td, &eta).unwrap();
            let rhs = lip * weighted_inf_norm_vec(&d, &eta).unwrap();
            assert!(lhs <= rhs + 1e-12, "{lhs} > {rhs}");
        }
    }
}
