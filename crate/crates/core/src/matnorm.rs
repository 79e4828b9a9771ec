//! Dense linear-algebra kernel: majorants, diagonal weights, weighted ℓ∞
//! norms and the Perron root of nonnegative matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        RawMatrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMatrix(format!(
                "dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidMatrix(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix(format!(
                "entry ({}, {}) is not finite",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidMatrix("ragged rows".into()));
        }
        Matrix::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = s;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| s * v)
    }

    /// Returns `alpha * I + beta * self`.
    pub fn affine_identity(&self, alpha: f64, beta: f64) -> Result<Matrix> {
        self.ensure_square()?;
        let mut m = self.scale(beta);
        for i in 0..self.rows {
            m[(i, i)] += alpha;
        }
        Ok(m)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.ensure_same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.add(&other.scale(-1.0))
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Parses one row per line; fields separated by commas and/or whitespace.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_csv_str(text: &str) -> Result<Matrix> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: '{}': {}", lineno + 1, s, e)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse("no matrix rows found".into()));
        }
        Matrix::from_rows(&rows)
    }

    pub fn from_json_str(text: &str) -> Result<Matrix> {
        Ok(serde_json::from_str(text)?)
    }

    pub(crate) fn ensure_square(&self) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    fn ensure_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::InvalidMatrix(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Strictly positive weight vector `η` defining `‖x‖ = max_i |x_i| / η_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PositiveWeight(Vec<f64>);

impl TryFrom<Vec<f64>> for PositiveWeight {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        PositiveWeight::new(v)
    }
}

impl From<PositiveWeight> for Vec<f64> {
    fn from(w: PositiveWeight) -> Self {
        w.0
    }
}

impl PositiveWeight {
    pub fn new(eta: Vec<f64>) -> Result<Self> {
        if eta.is_empty() {
            return Err(Error::InvalidParameter("weight vector is empty".into()));
        }
        if let Some((index, &value)) = eta
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::NonPositiveWeight { index, value });
        }
        Ok(PositiveWeight(eta))
    }

    pub fn ones(n: usize) -> Self {
        PositiveWeight(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Rescales so the largest component equals one.
    pub fn normalized(&self) -> PositiveWeight {
        let m = self.0.iter().cloned().fold(0.0, f64::max);
        PositiveWeight(self.0.iter().map(|v| v / m).collect())
    }

    /// Builds a weight from a nonnegative vector, raising entries below
    /// `rel_floor * max` to that floor.
    pub fn from_nonnegative(v: &[f64], rel_floor: f64) -> Result<Self> {
        let m = v.iter().cloned().fold(0.0, f64::max);
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::InvalidParameter(
                "vector has no positive component".into(),
            ));
        }
        let floor = rel_floor * m;
        PositiveWeight::new(v.iter().map(|&x| (x / m).max(floor / m)).collect())
    }
}

/// Entrywise absolute value `⌊M⌋`.
pub fn nonneg_majorant(m: &Matrix) -> Matrix {
    m.map(f64::abs)
}

/// Metzler majorant `⌈M⌉`: keeps the diagonal, takes absolute values elsewhere.
pub fn metzler_majorant(m: &Matrix) -> Result<Matrix> {
    m.ensure_square()?;
    let mut out = nonneg_majorant(m);
    for i in 0..m.rows() {
        out[(i, i)] = m[(i, i)];
    }
    Ok(out)
}

pub fn weighted_inf_norm_vec(x: &[f64], w: &PositiveWeight) -> Result<f64> {
    if x.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: x.len(),
        });
    }
    Ok(x.iter()
        .zip(w.as_slice())
        .map(|(xi, ei)| xi.abs() / ei)
        .fold(0.0, f64::max))
}

/// Induced norm of `‖·‖_{∞,[η]⁻¹}`: `max_i (|M| η)_i / η_i`.
pub fn weighted_inf_norm_mat(m: &Matrix, w: &PositiveWeight) -> Result<f64> {
    m.ensure_square()?;
    if m.rows() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            got: w.len(),
        });
    }
    let eta = w.as_slice();
    Ok((0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .zip(eta)
                .map(|(a, e)| a.abs() * e)
                .sum::<f64>()
                / eta[i]
        })
        .fold(0.0, f64::max))
}

pub const PERRON_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerronOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PerronOptions {
    fn default() -> Self {
        PerronOptions {
            tol: 1e-12,
            max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerronResult {
    /// Spectral radius estimate.
    pub rho: f64,
    /// Nonnegative vector with unit ∞-norm.
    pub vector: Vec<f64>,
    /// `max_i |(N v)_i − ρ v_i|`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Perron root and vector of a nonnegative square matrix.
///
/// Power iteration on `N + εI` starting from the all-ones vector. The root is
/// reported as `max_i (N v)_i / v_i` over the components with `v_i > 0`.
/// Success requires successive estimates within `tol` and an eigen-residual
/// of at most `tol · max(1, ρ)`.
pub fn perron(n: &Matrix, opts: &PerronOptions) -> Result<PerronResult> {
    perron_from(n, None, opts)
}

/// As [`perron`], optionally warm-started from a previous Perron vector.
pub fn perron_from(
    n: &Matrix,
    start: Option<&[f64]>,
    opts: &PerronOptions,
) -> Result<PerronResult> {
    n.ensure_square()?;
    let dim = n.rows();
    for i in 0..dim {
        for j in 0..dim {
            if n[(i, j)] < 0.0 {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: n[(i, j)],
                });
            }
        }
    }
    let mut v = match start {
        Some(s) if s.len() == dim && s.iter().all(|x| x.is_finite() && *x >= 0.0) => {
            // keep the warm start strictly positive so no component is lost
            let m = s.iter().cloned().fold(0.0, f64::max);
            if m > 0.0 {
                s.iter().map(|x| (x / m).max(1e-3)).collect()
            } else {
                vec![1.0; dim]
            }
        }
        Some(s) if s.len() != dim => {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.len(),
            })
        }
        _ => vec![1.0; dim],
    };

    let mut rho_prev = f64::INFINITY;
    let mut rho = 0.0;
    let mut nv = n.matvec(&v)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        let mut w: Vec<f64> = nv
            .iter()
            .zip(&v)
            .map(|(a, b)| a + PERRON_EPSILON * b)
            .collect();
        let m = w.iter().cloned().fold(0.0, f64::max);
        for x in &mut w {
            *x /= m;
        }
        v = w;
        nv = n.matvec(&v)?;
        rho = collatz_upper(&nv, &v);
        // on reducible inputs the estimate can repeat before v has settled,
        // so the eigen-residual must be small as well
        if (rho - rho_prev).abs() < opts.tol
            && eigen_residual(&nv, &v, rho) <= opts.tol * rho.max(1.0)
        {
            converged = true;
            break;
        }
        rho_prev = rho;
    }
    let residual = eigen_residual(&nv, &v, rho);
    Ok(PerronResult {
        rho,
        vector: v,
        residual,
        iterations,
        converged,
    })
}

fn eigen_residual(nv: &[f64], v: &[f64], rho: f64) -> f64 {
    nv.iter()
        .zip(v)
        .map(|(a, b)| (a - rho * b).abs())
        .fold(0.0, f64::max)
}

fn collatz_upper(nv: &[f64], v: &[f64]) -> f64 {
    nv.iter()
        .zip(v)
        .filter(|(_, vi)| **vi > 0.0)
        .map(|(a, b)| a / b)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn majorants() {
        let a = m(&[&[-1.0, 2.0], &[0.0, -3.0]]);
        assert_eq!(nonneg_majorant(&a), m(&[&[1.0, 2.0], &[0.0, 3.0]]));
        assert_eq!(metzler_majorant(&a).unwrap(), a);
        let b = m(&[&[-1.0, -2.0], &[-4.0, -3.0]]);
        assert_eq!(
            metzler_majorant(&b).unwrap(),
            m(&[&[-1.0, 2.0], &[4.0, -3.0]])
        );
        assert_eq!(nonneg_majorant(&Matrix::identity(3)), Matrix::identity(3));
        assert!(matches!(
            metzler_majorant(&Matrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn weighted_vector_norm() {
        let w = PositiveWeight::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(weighted_inf_norm_vec(&[3.0, -4.0], &w).unwrap(), 3.0);
        assert_eq!(weighted_inf_norm_vec(&[0.0, 0.0], &w).unwrap(), 0.0);
        let ones = PositiveWeight::ones(3);
        assert_eq!(
            weighted_inf_norm_vec(&[1.0, -7.0, 2.0], &ones).unwrap(),
            7.0
        );
        assert!(weighted_inf_norm_vec(&[1.0], &w).is_err());
    }

    #[test]
    fn weighted_matrix_norm() {
        let w = PositiveWeight::new(vec![0.3, 2.0, 1.1]).unwrap();
        assert!((weighted_inf_norm_mat(&Matrix::identity(3), &w).unwrap() - 1.0).abs() < 1e-15);
        let a = m(&[&[1.0, 1.0], &[0.0, 0.5]]);
        assert_eq!(
            weighted_inf_norm_mat(&a, &PositiveWeight::ones(2)).unwrap(),
            2.0
        );
        assert!(weighted_inf_norm_mat(&a, &w).is_err());
    }

    #[test]
    fn weight_validation() {
        assert!(PositiveWeight::new(vec![1.0, 0.0]).is_err());
        assert!(PositiveWeight::new(vec![1.0, f64::NAN]).is_err());
        assert!(PositiveWeight::new(vec![]).is_err());
        let w = PositiveWeight::from_nonnegative(&[2.0, 0.0, 1.0], 1e-9).unwrap();
        assert_eq!(w.as_slice()[0], 1.0);
        assert!(w.as_slice()[1] > 0.0);
    }

    #[test]
    fn matrix_parsing() {
        let a = Matrix::from_csv_str("1, 2\n# comment\n3 4\n").unwrap();
        assert_eq!(a, m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = Matrix::from_json_str(r#"{"rows":2,"cols":2,"data":[1,2,3,4]}"#).unwrap();
        assert_eq!(a, b);
        assert!(Matrix::from_json_str(r#"{"rows":2,"cols":2,"data":[1,2,3]}"#).is_err());
        assert!(Matrix::from_csv_str("1,2\n3\n").is_err());
        assert!(Matrix::new(0, 1, vec![]).is_err());
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn perron_small_cases() {
        let opts = PerronOptions::default();
        let swap = perron(&m(&[&[0.0, 1.0], &[1.0, 0.0]]), &opts).unwrap();
        assert!((swap.rho - 1.0).abs() < 1e-12);
        assert!(swap.vector.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let diag = perron(&m(&[&[2.0, 0.0], &[0.0, 1.0]]), &opts).unwrap();
        assert!((diag.rho - 2.0).abs() < 1e-10);
        assert!(diag.converged);

        let one = perron(&m(&[&[3.5]]), &opts).unwrap();
        assert!((one.rho - 3.5).abs() < 1e-12);

        let zero = perron(&Matrix::zeros(3, 3), &opts).unwrap();
        assert!(zero.rho.abs() < 1e-15);

        assert!(matches!(
            perron(&m(&[&[0.0, -1.0], &[1.0, 0.0]]), &opts),
            Err(Error::NegativeEntry { .. })
        ));
    }

    #[test]
    fn perron_reducible_upper_triangular() {
        // eigenvalues {1, a}; Perron vector concentrates on the first component
        let a = m(&[&[1.0, 1.0], &[0.0, 0.5]]);
        let r = perron(&a, &PerronOptions::default()).unwrap();
        assert!((r.rho - 1.0).abs() < 1e-9, "rho = {}", r.rho);
        assert!(r.vector[1] < 1e-6);
    }

    #[test]
    fn perron_budget_exhausted_is_flagged() {
        let a = m(&[&[1.0, 1.0], &[0.0, 0.999]]);
        let r = perron(
            &a,
            &PerronOptions {
                tol: 1e-15,
                max_iters: 5,
            },
        )
        .unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 5);
    }
}
