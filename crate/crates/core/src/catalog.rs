//! Fixed reference instances used by tests and the experiment runners.

use crate::matnorm::{Matrix, PositiveWeight};
use crate::operators::{Activation, AffineOp, DiagNonlinAffineOp};

fn matrix(rows: &[[f64; 4]]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
        .expect("catalog matrices are well formed")
}

/// 4×4 affine map with `diag_lower = 1.07`, whose weak-contractivity bound
/// under unit weights is `b* = 0.55`.
pub fn affine_reference_matrix() -> Matrix {
    matrix(&[
        [-1.07, -0.17, -0.53, -0.33],
        [0.07, 0.42, -0.07, 0.15],
        [-0.13, -0.10, -0.06, -0.30],
        [0.04, 0.05, -0.21, 0.40],
    ])
}

/// `T(x) = A x − 1`, the map whose fixed point is
/// `x* ≈ [0.04, −2.14, −0.25, −1.76]`.
pub fn affine_reference_operator() -> AffineOp {
    AffineOp::new(affine_reference_matrix(), vec![-1.0; 4]).expect("4×4 with length-4 offset")
}

/// `F(x) = (I − A) x + 1`, whose zero is the fixed point above.
pub fn affine_reference_zero_problem() -> AffineOp {
    let a = affine_reference_matrix();
    let f = a.affine_identity(1.0, -1.0).expect("square");
    AffineOp::new(f, vec![1.0; 4]).expect("4×4 with length-4 offset")
}

/// Fixed point of [`affine_reference_operator`] to two decimals.
pub const AFFINE_REFERENCE_FIXED_POINT: [f64; 4] = [0.04, -2.14, -0.25, -1.76];

/// 4×4 matrix with a large negative diagonal: not nonexpansive in any
/// weighted norm, `diag_lower = 7.5`, yet `(4, 0)`-enriched weakly
/// contractive with the weight [`wide_diagonal_weight`].
pub fn wide_diagonal_matrix() -> Matrix {
    matrix(&[
        [-3.0, 0.0, 1.0, -3.0],
        [3.0, -15.0, -12.0, -1.0],
        [2.0, -1.0, -5.0, -5.0],
        [-2.0, 0.0, -1.0, -6.0],
    ])
    .scale(0.5)
}

pub fn wide_diagonal_weight() -> PositiveWeight {
    PositiveWeight::new(vec![0.09, 1.0, 0.22, 0.07]).expect("positive")
}

/// `[[1, 1], [0, a]]`: eigenvalues `{a, 1}` are semi-simple, so `x ← Ax`
/// converges, but `|A|η ≤ η` has no positive solution.
pub fn marginal_counterexample(a: f64) -> Matrix {
    Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, a]]).expect("2×2")
}

/// 5×5 matrix composed with a leaky ReLU (`α = 0.1`), printed with three
/// decimals and an overall factor 1/2.
pub fn leaky_relu_reference_matrix() -> Matrix {
    let rows = [
        [0.278, 0.111, -0.280, -0.134, -0.098],
        [-0.189, -0.739, -0.207, -0.105, -0.066],
        [-0.408, -0.355, -0.203, 0.301, 0.039],
        [0.252, 0.246, -0.225, -0.537, -0.046],
        [0.144, 0.253, 0.288, 0.225, -0.395],
    ];
    Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
        .expect("5×5")
        .scale(0.5)
}

pub const LEAKY_RELU_REFERENCE_ALPHA: f64 = 0.1;
pub const LEAKY_RELU_REFERENCE_B: f64 = 0.537;
pub const LEAKY_RELU_REFERENCE_C: f64 = 0.324;

pub fn leaky_relu_reference_weight() -> PositiveWeight {
    PositiveWeight::new(vec![2.673, 1.181, 2.215, 1.261, 1.498]).expect("positive")
}

pub fn leaky_relu_reference_operator() -> DiagNonlinAffineOp {
    DiagNonlinAffineOp::new(
        leaky_relu_reference_matrix(),
        vec![0.0; 5],
        Activation::LeakyRelu {
            alpha: LEAKY_RELU_REFERENCE_ALPHA,
        },
    )
    .expect("valid activation")
}
