//! Finite descriptions of the set of Jacobians `{DT(x)}` of a Lipschitz
//! operator.
//!
//! Every condition certified in this crate is a row-wise inequality of the form
//! `Σ_j φ(J_ij) η_j ≤ κ η_i` where `φ` is convex in each entry. The worst case
//! over the Jacobian set is therefore attained at extreme points, and each
//! envelope kind knows how to find the extreme row that maximizes a given
//! nonnegative functional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matnorm::{dot, Matrix};

/// Entrywise map applied to a Jacobian row before it is paired with a weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowTransform {
    /// `|shift·δ_ij + J_ij|`, the rows of `|bI + J|`.
    Abs { shift: f64 },
    /// Diagonal kept, off-diagonal `|J_ij|`: the rows of `⌈J⌉`.
    Metzler,
    /// `J_ij` unchanged.
    Signed,
}

impl RowTransform {
    fn apply(self, diagonal: bool, x: f64) -> f64 {
        match self {
            RowTransform::Abs { shift } => {
                if diagonal {
                    (x + shift).abs()
                } else {
                    x.abs()
                }
            }
            RowTransform::Metzler => {
                if diagonal {
                    x
                } else {
                    x.abs()
                }
            }
            RowTransform::Signed => x,
        }
    }
}

/// One directed edge slope range in an [`SlopeRows`] envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeEdge {
    pub col: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub base: f64,
    pub edges: Vec<SlopeEdge>,
}

/// Jacobians whose row `i` is parametrized by independent slopes
/// `s_k ∈ [lo_k, hi_k]`, one per edge `(i, col_k)`:
///
/// `J_ii = base_i + diag_coef · Σ_k s_k`, `J_{i,col_k} = off_coef · s_k`,
/// every other entry zero.
///
/// This is the exact Jacobian set of nonlinear-Laplacian operators, where the
/// diagonal entry is coupled to the off-diagonal slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRows {
    pub n: usize,
    pub diag_coef: f64,
    pub off_coef: f64,
    pub rows: Vec<SlopeRow>,
}

impl SlopeRows {
    fn diag_at(&self, row: &SlopeRow, slopes: &[f64]) -> f64 {
        row.base + self.diag_coef * slopes.iter().sum::<f64>()
    }

    /// Row `i` as a dense vector for the given edge slopes.
    fn dense_row(&self, i: usize, slopes: &[f64]) -> Vec<f64> {
        let row = &self.rows[i];
        let mut out = vec![0.0; self.n];
        out[i] = self.diag_at(row, slopes);
        for (e, s) in row.edges.iter().zip(slopes) {
            out[e.col] += self.off_coef * s;
        }
        out
    }
}

/// Finite description of a Jacobian set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JacobianEnvelope {
    /// Convex hull of the listed matrices (row-wise: any row of any vertex may
    /// be combined with any row of another, since all conditions are row-wise).
    VertexList { vertices: Vec<Matrix> },
    /// Every entry varies independently in `[lower_ij, upper_ij]`.
    EntryInterval { lower: Matrix, upper: Matrix },
    /// Row-coupled edge slopes, see [`SlopeRows`].
    EdgeSlopes(SlopeRows),
}

impl JacobianEnvelope {
    pub fn constant(m: Matrix) -> Result<Self> {
        Self::vertices(vec![m])
    }

    pub fn vertices(vertices: Vec<Matrix>) -> Result<Self> {
        let env = JacobianEnvelope::VertexList { vertices };
        env.validate()?;
        Ok(env)
    }

    pub fn interval(lower: Matrix, upper: Matrix) -> Result<Self> {
        let env = JacobianEnvelope::EntryInterval { lower, upper };
        env.validate()?;
        Ok(env)
    }

    pub fn edge_slopes(rows: SlopeRows) -> Result<Self> {
        let env = JacobianEnvelope::EdgeSlopes(rows);
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            JacobianEnvelope::VertexList { vertices } => {
                let first = vertices
                    .first()
                    .ok_or_else(|| Error::InvalidParameter("empty vertex list".into()))?;
                first.ensure_square()?;
                for v in vertices {
                    if v.rows() != first.rows() || v.cols() != first.cols() {
                        return Err(Error::InvalidMatrix(
                            "vertices must share one square shape".into(),
                        ));
                    }
                }
            }
            JacobianEnvelope::EntryInterval { lower, upper } => {
                lower.ensure_square()?;
                if lower.rows() != upper.rows() || lower.cols() != upper.cols() {
                    return Err(Error::InvalidMatrix(
                        "interval bounds differ in shape".into(),
                    ));
                }
                if lower.data().iter().zip(upper.data()).any(|(l, u)| l > u) {
                    return Err(Error::InvalidParameter(
                        "interval lower bound exceeds upper bound".into(),
                    ));
                }
            }
            JacobianEnvelope::EdgeSlopes(s) => {
                if s.n == 0 || s.rows.len() != s.n {
                    return Err(Error::InvalidParameter(format!(
                        "edge-slope envelope declares n = {} but has {} rows",
                        s.n,
                        s.rows.len()
                    )));
                }
                for (i, row) in s.rows.iter().enumerate() {
                    for e in &row.edges {
                        if e.col >= s.n || e.col == i {
                            return Err(Error::InvalidParameter(format!(
                                "edge ({i}, {}) is out of range or a self-loop",
                                e.col
                            )));
                        }
                        if !(e.lo <= e.hi) {
                            return Err(Error::InvalidParameter(format!(
                                "edge ({i}, {}) slope range [{}, {}] is empty",
                                e.col, e.lo, e.hi
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            JacobianEnvelope::VertexList { vertices } => vertices[0].rows(),
            JacobianEnvelope::EntryInterval { lower, .. } => lower.rows(),
            JacobianEnvelope::EdgeSlopes(s) => s.n,
        }
    }

    /// Envelope of `alpha·I + beta·J` for `J` in this envelope.
    ///
    /// `(1, -1)` gives the envelope of `Id − T`; `(1 − θ, θ)` the averaged map.
    pub fn affine_map(&self, alpha: f64, beta: f64) -> Result<JacobianEnvelope> {
        Ok(match self {
            JacobianEnvelope::VertexList { vertices } => JacobianEnvelope::VertexList {
                vertices: vertices
                    .iter()
                    .map(|v| v.affine_identity(alpha, beta))
                    .collect::<Result<_>>()?,
            },
            JacobianEnvelope::EntryInterval { lower, upper } => {
                let l = lower.affine_identity(alpha, beta)?;
                let u = upper.affine_identity(alpha, beta)?;
                if beta >= 0.0 {
                    JacobianEnvelope::EntryInterval { lower: l, upper: u }
                } else {
                    JacobianEnvelope::EntryInterval { lower: u, upper: l }
                }
            }
            JacobianEnvelope::EdgeSlopes(s) => JacobianEnvelope::EdgeSlopes(SlopeRows {
                n: s.n,
                diag_coef: beta * s.diag_coef,
                off_coef: beta * s.off_coef,
                rows: s
                    .rows
                    .iter()
                    .map(|r| SlopeRow {
                        base: alpha + beta * r.base,
                        edges: r.edges.clone(),
                    })
                    .collect(),
            }),
        })
    }

    /// `sup over the envelope of max_i (−J)_ii`.
    pub fn diag_lower(&self) -> f64 {
        match self {
            JacobianEnvelope::VertexList { vertices } => vertices
                .iter()
                .flat_map(|v| v.diagonal())
                .map(|d| -d)
                .fold(f64::NEG_INFINITY, f64::max),
            JacobianEnvelope::EntryInterval { lower, .. } => lower
                .diagonal()
                .into_iter()
                .map(|d| -d)
                .fold(f64::NEG_INFINITY, f64::max),
            JacobianEnvelope::EdgeSlopes(s) => s
                .rows
                .iter()
                .map(|r| {
                    let min_sum: f64 = r
                        .edges
                        .iter()
                        .map(|e| (s.diag_coef * e.lo).min(s.diag_coef * e.hi))
                        .sum();
                    -(r.base + min_sum)
                })
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Entrywise lower and upper bounds over the envelope.
    pub fn entry_bounds(&self) -> (Matrix, Matrix) {
        match self {
            JacobianEnvelope::VertexList { vertices } => {
                let mut lo = vertices[0].clone();
                let mut hi = vertices[0].clone();
                for v in &vertices[1..] {
                    for i in 0..v.rows() {
                        for j in 0..v.cols() {
                            lo[(i, j)] = lo[(i, j)].min(v[(i, j)]);
                            hi[(i, j)] = hi[(i, j)].max(v[(i, j)]);
                        }
                    }
                }
                (lo, hi)
            }
            JacobianEnvelope::EntryInterval { lower, upper } => (lower.clone(), upper.clone()),
            JacobianEnvelope::EdgeSlopes(s) => {
                let mut lo = Matrix::zeros(s.n, s.n);
                let mut hi = Matrix::zeros(s.n, s.n);
                for (i, r) in s.rows.iter().enumerate() {
                    let (mut dlo, mut dhi) = (r.base, r.base);
                    for e in &r.edges {
                        let (a, b) = (s.diag_coef * e.lo, s.diag_coef * e.hi);
                        dlo += a.min(b);
                        dhi += a.max(b);
                        let (a, b) = (s.off_coef * e.lo, s.off_coef * e.hi);
                        lo[(i, e.col)] += a.min(b);
                        hi[(i, e.col)] += a.max(b);
                    }
                    lo[(i, i)] = dlo;
                    hi[(i, i)] = dhi;
                }
                (lo, hi)
            }
        }
    }

    /// Checks whether `j` belongs to the envelope within `tol`.
    ///
    /// Exact for interval and edge-slope envelopes and for vertex lists with
    /// at most two vertices (row-wise segment membership); larger vertex lists
    /// are checked against their entry bounds only.
    pub fn contains(&self, j: &Matrix, tol: f64) -> bool {
        let n = self.dim();
        if j.rows() != n || j.cols() != n {
            return false;
        }
        match self {
            JacobianEnvelope::VertexList { vertices } if vertices.len() <= 2 => {
                let a = &vertices[0];
                let b = vertices.get(1).unwrap_or(a);
                (0..n).all(|i| row_on_segment(j.row(i), a.row(i), b.row(i), tol))
            }
            JacobianEnvelope::VertexList { .. } | JacobianEnvelope::EntryInterval { .. } => {
                let (lo, hi) = self.entry_bounds();
                j.data()
                    .iter()
                    .zip(lo.data().iter().zip(hi.data()))
                    .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol)
            }
            JacobianEnvelope::EdgeSlopes(s) => (0..n).all(|i| {
                let r = &s.rows[i];
                let mut expected = vec![0.0; n];
                let mut slopes = Vec::with_capacity(r.edges.len());
                for e in &r.edges {
                    let slope = if s.off_coef != 0.0 {
                        j[(i, e.col)] / s.off_coef
                    } else {
                        e.lo
                    };
                    if slope < e.lo - tol || slope > e.hi + tol {
                        return false;
                    }
                    slopes.push(slope);
                    expected[e.col] = s.off_coef * slope;
                }
                expected[i] = s.diag_at(r, &slopes);
                expected
                    .iter()
                    .zip(j.row(i))
                    .all(|(a, b)| (a - b).abs() <= tol)
            }),
        }
    }

    /// The transformed row `i` that maximizes `row · v` over the envelope,
    /// together with that maximal value. `v` must be entrywise nonnegative.
    pub fn worst_row(&self, i: usize, t: RowTransform, v: &[f64]) -> (Vec<f64>, f64) {
        match self {
            JacobianEnvelope::VertexList { vertices } => {
                let mut best: Option<(Vec<f64>, f64)> = None;
                for m in vertices {
                    let row = transform_row(i, m.row(i), t);
                    let val = dot(&row, v);
                    if best.as_ref().is_none_or(|(_, b)| val > *b) {
                        best = Some((row, val));
                    }
                }
                best.expect("vertex list is nonempty")
            }
            JacobianEnvelope::EntryInterval { lower, upper } => {
                let row: Vec<f64> = lower
                    .row(i)
                    .iter()
                    .zip(upper.row(i))
                    .enumerate()
                    .map(|(j, (l, u))| t.apply(i == j, *l).max(t.apply(i == j, *u)))
                    .collect();
                let val = dot(&row, v);
                (row, val)
            }
            JacobianEnvelope::EdgeSlopes(s) => slope_worst_row(s, i, t, v),
        }
    }

    /// Row-wise worst-case value `max_i (worst_row_i · η) / η_i`.
    pub fn max_weighted_row(&self, t: RowTransform, eta: &[f64]) -> f64 {
        (0..self.dim())
            .map(|i| self.worst_row(i, t, eta).1 / eta[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Worst-case Lipschitz constant of the operator in `‖·‖_{∞,[η]⁻¹}`.
    pub fn lipschitz_bound(&self, eta: &[f64]) -> f64 {
        self.max_weighted_row(RowTransform::Abs { shift: 0.0 }, eta)
    }
}

fn transform_row(i: usize, row: &[f64], t: RowTransform) -> Vec<f64> {
    row.iter()
        .enumerate()
        .map(|(j, x)| t.apply(i == j, *x))
        .collect()
}

fn row_on_segment(x: &[f64], a: &[f64], b: &[f64], tol: f64) -> bool {
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| q - p).collect();
    let dd = dot(&d, &d);
    let lambda = if dd > 0.0 {
        let xa: Vec<f64> = x.iter().zip(a).map(|(p, q)| p - q).collect();
        (dot(&xa, &d) / dd).clamp(0.0, 1.0)
    } else {
        0.0
    };
    x.iter()
        .zip(a.iter().zip(&d))
        .all(|(xi, (ai, di))| (xi - ai - lambda * di).abs() <= tol)
}

fn slope_worst_row(s: &SlopeRows, i: usize, t: RowTransform, v: &[f64]) -> (Vec<f64>, f64) {
    let row = &s.rows[i];
    let branches: &[f64] = match t {
        RowTransform::Abs { .. } => &[1.0, -1.0],
        _ => &[1.0],
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for &sigma in branches {
        // with the diagonal's sign fixed the objective separates per edge
        let slopes: Vec<f64> = row
            .edges
            .iter()
            .map(|e| {
                let term = |x: f64| {
                    sigma * s.diag_coef * x * v[i] + t.apply(false, s.off_coef * x) * v[e.col]
                };
                if term(e.hi) >= term(e.lo) {
                    e.hi
                } else {
                    e.lo
                }
            })
            .collect();
        let dense = s.dense_row(i, &slopes);
        let tr = transform_row(i, &dense, t);
        let val = dot(&tr, v);
        if best.as_ref().is_none_or(|(_, b)| val > *b) {
            best = Some((tr, val));
        }
    }
    best.expect("at least one branch")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_slopes(n: usize, lo: f64, hi: f64) -> SlopeRows {
        SlopeRows {
            n,
            diag_coef: -1.0,
            off_coef: 1.0,
            rows: (0..n)
                .map(|i| SlopeRow {
                    base: 1.0,
                    edges: vec![
                        SlopeEdge {
                            col: (i + 1) % n,
                            lo,
                            hi,
                        },
                        SlopeEdge {
                            col: (i + n - 1) % n,
                            lo,
                            hi,
                        },
                    ],
                })
                .collect(),
        }
    }

    /// Brute-force maximum over all slope vertices of a row.
    fn brute_row_max(s: &SlopeRows, i: usize, t: RowTransform, v: &[f64]) -> f64 {
        let k = s.rows[i].edges.len();
        (0..(1usize << k))
            .map(|mask| {
                let slopes: Vec<f64> = s.rows[i]
                    .edges
                    .iter()
                    .enumerate()
                    .map(|(b, e)| if mask >> b & 1 == 1 { e.hi } else { e.lo })
                    .collect();
                dot(&transform_row(i, &s.dense_row(i, &slopes), t), v)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn slope_rows_match_vertex_enumeration() {
        let s = ring_slopes(5, 0.2, 1.0);
        let v = [0.3, 1.0, 0.7, 0.1, 0.55];
        let env = JacobianEnvelope::edge_slopes(s.clone()).unwrap();
        for t in [
            RowTransform::Abs { shift: 0.0 },
            RowTransform::Abs { shift: 0.4 },
            RowTransform::Abs { shift: 2.0 },
            RowTransform::Metzler,
            RowTransform::Signed,
        ] {
            for i in 0..5 {
                let fast = env.worst_row(i, t, &v).1;
                let slow = brute_row_max(&s, i, t, &v);
                assert!(
                    (fast - slow).abs() < 1e-12,
                    "{t:?} row {i}: {fast} vs {slow}"
                );
            }
        }
        let neg = env.affine_map(1.0, -1.0).unwrap();
        if let JacobianEnvelope::EdgeSlopes(ns) = &neg {
            for i in 0..5 {
                let fast = neg.worst_row(i, RowTransform::Metzler, &v).1;
                assert!((fast - brute_row_max(ns, i, RowTransform::Metzler, &v)).abs() < 1e-12);
            }
        } else {
            panic!("affine map changed the envelope kind");
        }
    }

    #[test]
    fn diag_lower_cases() {
        let env = JacobianEnvelope::constant(Matrix::identity(3)).unwrap();
        assert_eq!(env.diag_lower(), -1.0);
        let s = ring_slopes(4, 0.5, 1.0);
        let env = JacobianEnvelope::edge_slopes(s).unwrap();
        // diagonal ranges over [1 - 2, 1 - 1]
        assert!((env.diag_lower() - 1.0).abs() < 1e-15);
        let (lo, hi) = env.entry_bounds();
        assert_eq!(lo[(0, 0)], -1.0);
        assert_eq!(hi[(0, 0)], 0.0);
        assert_eq!(lo[(0, 1)], 0.5);
        assert_eq!(hi[(0, 1)], 1.0);
        assert_eq!(hi[(0, 2)], 0.0);
    }

    #[test]
    fn interval_affine_map_swaps_bounds() {
        let lo = Matrix::from_rows(&[vec![0.0, -1.0], vec![0.5, 0.0]]).unwrap();
        let hi = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.5, 2.0]]).unwrap();
        let env = JacobianEnvelope::interval(lo, hi).unwrap();
        let f = env.affine_map(1.0, -1.0).unwrap();
        let (l, u) = f.entry_bounds();
        assert_eq!(l[(0, 0)], 0.0);
        assert_eq!(u[(0, 0)], 1.0);
        assert_eq!(l[(1, 1)], -1.0);
        assert_eq!(u[(0, 1)], 1.0);
        assert_eq!(l[(0, 1)], -1.0);
    }

    #[test]
    fn validation_errors() {
        assert!(JacobianEnvelope::vertices(vec![]).is_err());
        assert!(
            JacobianEnvelope::vertices(vec![Matrix::identity(2), Matrix::identity(3)]).is_err()
        );
        assert!(JacobianEnvelope::interval(Matrix::identity(2), Matrix::zeros(2, 2)).is_err());
        let mut s = ring_slopes(3, 0.0, 1.0);
        s.rows[0].edges[0].col = 0;
        assert!(JacobianEnvelope::edge_slopes(s).is_err());
    }

    #[test]
    fn containment() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let env = JacobianEnvelope::vertices(vec![a.scale(0.1), a.clone()]).unwrap();
        // rows scaled independently by slopes in [0.1, 1]
        let j = Matrix::from_rows(&[vec![0.5, 1.0], vec![-0.2, 0.1]]).unwrap();
        assert!(env.contains(&j, 1e-12));
        let bad = Matrix::from_rows(&[vec![0.5, 0.2], vec![-0.2, 0.1]]).unwrap();
        assert!(!env.contains(&bad, 1e-12));
    }

    #[test]
    fn serde_round_trip() {
        let env = JacobianEnvelope::edge_slopes(ring_slopes(3, 0.1, 1.0)).unwrap();
        let text = serde_json::to_string(&env).unwrap();
        assert!(text.contains("\"kind\":\"edge_slopes\""));
        let back: JacobianEnvelope = serde_json::from_str(&text).unwrap();
        assert_eq!(back, env);
    }
}
