//! Operator models and their Jacobian envelopes.

use serde::{Deserialize, Serialize};

use crate::consensus::MasOperator;
use crate::envelope::JacobianEnvelope;
use crate::error::{Error, Result};
use crate::matnorm::Matrix;

/// `max{αx, x}`.
pub fn leaky_relu(x: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidActivation(format!(
            "leaky ReLU slope must lie in [0, 1], got {alpha}"
        )));
    }
    Ok((alpha * x).max(x))
}

/// Bounds `[d1, d2]` on the difference quotients of a scalar activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorBounds {
    pub d1: f64,
    pub d2: f64,
}

impl SectorBounds {
    pub fn new(d1: f64, d2: f64) -> Result<Self> {
        if !(d1.is_finite() && d2.is_finite() && d1 <= d2) {
            return Err(Error::InvalidParameter(format!(
                "sector bounds need d1 <= d2, got [{d1}, {d2}]"
            )));
        }
        Ok(SectorBounds { d1, d2 })
    }

    pub fn encloses(&self, other: &SectorBounds) -> bool {
        self.d1 <= other.d1 && other.d2 <= self.d2
    }
}

/// Scalar Lipschitz activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    #[serde(rename = "lrelu")]
    LeakyRelu {
        alpha: f64,
    },
    /// Linear interpolation through `points` (sorted by abscissa), extended
    /// linearly beyond the end points with the end-segment slopes.
    PiecewiseLinear {
        points: Vec<[f64; 2]>,
    },
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match self {
            Activation::Identity => Ok(()),
            Activation::LeakyRelu { alpha } => leaky_relu(0.0, *alpha).map(|_| ()),
            Activation::PiecewiseLinear { points } => {
                if points.len() < 2 {
                    return Err(Error::InvalidActivation(
                        "piecewise-linear activation needs at least two points".into(),
                    ));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidActivation("non-finite breakpoint".into()));
                }
                if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::InvalidActivation(
                        "breakpoints must be strictly increasing in x".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu { alpha } => (alpha * x).max(x),
            Activation::PiecewiseLinear { points } => {
                let k = points
                    .windows(2)
                    .position(|w| x <= w[1][0])
                    .unwrap_or(points.len() - 2);
                let ([x0, y0], [x1, y1]) = (points[k], points[k + 1]);
                y0 + (y1 - y0) / (x1 - x0) * (x - x0)
            }
        }
    }

    /// Segment slopes in order of increasing abscissa.
    pub fn slopes(&self) -> Vec<f64> {
        match self {
            Activation::Identity => vec![1.0],
            Activation::LeakyRelu { alpha } => vec![*alpha, 1.0],
            Activation::PiecewiseLinear { points } => points
                .windows(2)
                .map(|w| (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]))
                .collect(),
        }
    }

    pub fn sector(&self) -> SectorBounds {
        let s = self.slopes();
        SectorBounds {
            d1: s.iter().cloned().fold(f64::INFINITY, f64::min),
            d2: s.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.slopes().iter().map(|s| s.abs()).fold(0.0, f64::max)
    }

    /// One-sided slopes `(left, right)` at the origin.
    pub fn slopes_at_zero(&self) -> (f64, f64) {
        match self {
            Activation::Identity => (1.0, 1.0),
            Activation::LeakyRelu { alpha } => (*alpha, 1.0),
            Activation::PiecewiseLinear { points } => {
                let slopes = self.slopes();
                let seg = |x: f64| {
                    points
                        .windows(2)
                        .position(|w| x < w[1][0])
                        .unwrap_or(points.len() - 2)
                };
                let right = slopes[seg(0.0)];
                let left_idx = points
                    .windows(2)
                    .position(|w| 0.0 <= w[1][0])
                    .unwrap_or(points.len() - 2);
                (slopes[left_idx], right)
            }
        }
    }
}

/// A Lipschitz operator on ℝⁿ with a finite Jacobian description.
pub trait Operator {
    fn dim(&self) -> usize;

    /// `T(x)` without dimension checks.
    fn apply(&self, x: &[f64]) -> Vec<f64>;

    fn jacobian_envelope(&self) -> Result<JacobianEnvelope>;

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.apply(x))
    }
}

fn check_square_with_offset(matrix: &Matrix, offset: &[f64]) -> Result<()> {
    matrix.ensure_square()?;
    if offset.len() != matrix.rows() {
        return Err(Error::DimensionMismatch {
            expected: matrix.rows(),
            got: offset.len(),
        });
    }
    if offset.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "offset has non-finite entries".into(),
        ));
    }
    Ok(())
}

/// `x ↦ A x + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineOp {
    pub matrix: Matrix,
    pub offset: Vec<f64>,
}

impl AffineOp {
    pub fn new(matrix: Matrix, offset: Vec<f64>) -> Result<Self> {
        check_square_with_offset(&matrix, &offset)?;
        Ok(AffineOp { matrix, offset })
    }

    pub fn linear(matrix: Matrix) -> Result<Self> {
        let n = matrix.rows();
        Self::new(matrix, vec![0.0; n])
    }

    pub fn identity(n: usize) -> Self {
        AffineOp {
            matrix: Matrix::identity(n),
            offset: vec![0.0; n],
        }
    }
}

impl Operator for AffineOp {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                self.matrix
                    .row(i)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + self.offset[i]
            })
            .collect()
    }

    fn jacobian_envelope(&self) -> Result<JacobianEnvelope> {
        JacobianEnvelope::constant(self.matrix.clone())
    }
}

/// `x ↦ Φ(A x + offset)` with the same activation in every coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiagNonlinAffineSpec")]
pub struct DiagNonlinAffineOp {
    pub matrix: Matrix,
    pub offset: Vec<f64>,
    pub activation: Activation,
    pub sector: SectorBounds,
}

#[derive(Deserialize)]
struct DiagNonlinAffineSpec {
    matrix: Matrix,
    offset: Vec<f64>,
    activation: Activation,
    #[serde(default)]
    sector: Option<SectorBounds>,
}

impl TryFrom<DiagNonlinAffineSpec> for DiagNonlinAffineOp {
    type Error = Error;

    fn try_from(s: DiagNonlinAffineSpec) -> Result<Self> {
        let mut op = DiagNonlinAffineOp::new(s.matrix, s.offset, s.activation)?;
        if let Some(sector) = s.sector {
            op = op.with_sector(sector)?;
        }
        Ok(op)
    }
}

impl DiagNonlinAffineOp {
    pub fn new(matrix: Matrix, offset: Vec<f64>, activation: Activation) -> Result<Self> {
        check_square_with_offset(&matrix, &offset)?;
        activation.validate()?;
        let sector = activation.sector();
        Ok(DiagNonlinAffineOp {
            matrix,
            offset,
            activation,
            sector,
        })
    }

    /// Widens the sector used for certification. The given bounds must enclose
    /// the activation's own slope range.
    pub fn with_sector(mut self, sector: SectorBounds) -> Result<Self> {
        let own = self.activation.sector();
        SectorBounds::new(sector.d1, sector.d2)?;
        if !sector.encloses(&own) {
            return Err(Error::InvalidParameter(format!(
                "sector [{}, {}] does not enclose the activation slopes [{}, {}]",
                sector.d1, sector.d2, own.d1, own.d2
            )));
        }
        self.sector = sector;
        Ok(self)
    }
}

impl Operator for DiagNonlinAffineOp {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let pre = self
                    .matrix
                    .row(i)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + self.offset[i];
                self.activation.eval(pre)
            })
            .collect()
    }

    /// Each Jacobian row is `d · A_i` for a slope `d ∈ [d1, d2]`; every
    /// certified condition is convex in `d`, so the two end points suffice.
    fn jacobian_envelope(&self) -> Result<JacobianEnvelope> {
        let SectorBounds { d1, d2 } = self.sector;
        if d1 == d2 {
            return JacobianEnvelope::constant(self.matrix.scale(d1));
        }
        JacobianEnvelope::vertices(vec![self.matrix.scale(d1), self.matrix.scale(d2)])
    }
}

/// `x ↦ x − F(x)`.
pub struct IdMinus<'a, O: ?Sized>(pub &'a O);

impl<O: Operator + ?Sized> Operator for IdMinus<'_, O> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.0.apply(x)).map(|(a, b)| a - b).collect()
    }

    fn jacobian_envelope(&self) -> Result<JacobianEnvelope> {
        self.0.jacobian_envelope()?.affine_map(1.0, -1.0)
    }
}

/// The averaged map `x ↦ (1 − θ) x + θ T(x)`.
pub struct Averaged<'a, O: ?Sized> {
    pub op: &'a O,
    pub theta: f64,
}

impl<O: Operator + ?Sized> Operator for Averaged<'_, O> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.op.apply(x))
            .map(|(a, t)| (1.0 - self.theta) * a + self.theta * t)
            .collect()
    }

    fn jacobian_envelope(&self) -> Result<JacobianEnvelope> {
        self.op
            .jacobian_envelope()?
            .affine_map(1.0 - self.theta, self.theta)
    }
}

/// Any supported operator, as read from an operator spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OperatorModel {
    Affine(AffineOp),
    DiagNonlinAffine(DiagNonlinAffineOp),
    Mas(MasOperator),
}

impl OperatorModel {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let model: OperatorModel = serde_json::from_str(text)?;
        if let OperatorModel::Affine(a) = &model {
            check_square_with_offset(&a.matrix, &a.offset)?;
        }
        Ok(model)
    }

    fn inner(&self) -> &dyn Operator {
        match self {
            OperatorModel::Affine(op) => op,
            OperatorModel::DiagNonlinAffine(op) => op,
            OperatorModel::Mas(op) => op,
        }
    }
}

impl Operator for OperatorModel {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.inner().apply(x)
    }

    fn jacobian_envelope(&self) -> Result<JacobianEnvelope> {
        self.inner().jacobian_envelope()
    }
}
