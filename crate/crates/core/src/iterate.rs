//! Fixed-point engines: the Krasnoselskij iteration `x ← (1−θ)x + θT(x)` and
//! the forward-step method `x ← x − θF(x)`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matnorm::{weighted_inf_norm_vec, PositiveWeight};
use crate::operators::Operator;

/// Residual above which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationConfig {
    pub theta: f64,
    pub max_iters: usize,
    /// Stop once the weighted step residual `‖x(k+1) − x(k)‖` is at most this.
    pub stop_tol: f64,
    pub weight: PositiveWeight,
}

impl IterationConfig {
    /// Unit weights, 100 000 iterations, stop tolerance 1e−10.
    pub fn new(theta: f64, n: usize) -> Self {
        IterationConfig {
            theta,
            max_iters: 100_000,
            stop_tol: 1e-10,
            weight: PositiveWeight::ones(n),
        }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_stop_tol(mut self, stop_tol: f64) -> Self {
        self.stop_tol = stop_tol;
        self
    }

    pub fn with_weight(mut self, weight: PositiveWeight) -> Self {
        self.weight = weight;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "step size must lie in (0, 1], got {}",
                self.theta
            )));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "stop tolerance must be positive, got {}",
                self.stop_tol
            )));
        }
        if self.weight.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.weight.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    /// `x(0), x(1), …`
    pub points: Vec<Vec<f64>>,
    /// `‖x(k+1) − x(k)‖_{∞,[η]⁻¹}`, one per step.
    pub step_residuals: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
    /// Geometric mean of successive residual ratios over the tail half.
    pub empirical_rate: Option<f64>,
    stop_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub converged: bool,
    pub diverged: bool,
    pub iterations: usize,
    pub steps: usize,
    pub empirical_rate: Option<f64>,
    pub final_residual: Option<f64>,
    pub final_state: Vec<f64>,
}

impl IterationTrace {
    pub fn final_point(&self) -> &[f64] {
        self.points.last().expect("trace holds the initial point")
    }

    /// Number of update steps whose residual exceeded the stop tolerance.
    pub fn iterations(&self) -> usize {
        self.step_residuals
            .iter()
            .filter(|r| **r > self.stop_tol)
            .count()
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            converged: self.converged,
            diverged: self.diverged,
            iterations: self.iterations(),
            steps: self.step_residuals.len(),
            empirical_rate: self.empirical_rate,
            final_residual: self.step_residuals.last().copied(),
            final_state: self.final_point().to_vec(),
        }
    }

    /// Distances `‖x(k) − x*‖` for every recorded point.
    pub fn distances_to(&self, x_star: &[f64], weight: &PositiveWeight) -> Result<Vec<f64>> {
        self.points
            .iter()
            .map(|p| {
                let d: Vec<f64> = p.iter().zip(x_star).map(|(a, b)| a - b).collect();
                if p.len() != x_star.len() {
                    return Err(Error::DimensionMismatch {
                        expected: p.len(),
                        got: x_star.len(),
                    });
                }
                weighted_inf_norm_vec(&d, weight)
            })
            .collect()
    }

    /// Writes `k,x_1..x_n,residual`; the residual column of row `k` holds
    /// `‖x(k) − x(k−1)‖` and is empty for `k = 0`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.points.first().map_or(0, Vec::len);
        let mut header = vec!["k".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.push("residual".into());
        writeln!(w, "{}", header.join(","))?;
        for (k, p) in self.points.iter().enumerate() {
            let mut fields = vec![k.to_string()];
            fields.extend(p.iter().map(|v| format!("{v:.17e}")));
            fields.push(match k {
                0 => String::new(),
                _ => format!("{:.17e}", self.step_residuals[k - 1]),
            });
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

fn empirical_rate(residuals: &[f64]) -> Option<f64> {
    let ratios: Vec<f64> = residuals
        .windows(2)
        .skip(residuals.len().saturating_sub(1) / 2)
        .filter(|w| w[0] > 0.0 && w[1] > 0.0)
        .map(|w| (w[1] / w[0]).ln())
        .collect();
    if ratios.is_empty() {
        None
    } else {
        Some((ratios.iter().sum::<f64>() / ratios.len() as f64).exp())
    }
}

/// Shared driver: applies `step` until the residual drops below the stop
/// tolerance, `stop` returns true, the budget runs out or the run diverges.
pub fn run_iteration<S, P>(
    n: usize,
    cfg: &IterationConfig,
    x0: &[f64],
    mut step: S,
    mut stop: P,
) -> Result<IterationTrace>
where
    S: FnMut(&[f64]) -> Vec<f64>,
    P: FnMut(&[f64]) -> bool,
{
    cfg.validate(n)?;
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    let mut points = vec![x0.to_vec()];
    let mut step_residuals = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    let mut x = x0.to_vec();
    if stop(&x) {
        converged = true;
    }
    while !converged && step_residuals.len() < cfg.max_iters {
        let next = step(&x);
        let diff: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let res = weighted_inf_norm_vec(&diff, &cfg.weight)?;
        points.push(next.clone());
        step_residuals.push(res);
        x = next;
        if !res.is_finite() || res > DIVERGENCE_THRESHOLD {
            diverged = true;
            break;
        }
        if res <= cfg.stop_tol || stop(&x) {
            converged = true;
        }
    }
    let empirical_rate = empirical_rate(&step_residuals);
    Ok(IterationTrace {
        points,
        step_residuals,
        converged,
        diverged,
        empirical_rate,
        stop_tol: cfg.stop_tol,
    })
}

/// `x(k+1) = (1 − θ) x(k) + θ T(x(k))`.
pub fn krasnoselskij<O: Operator + ?Sized>(
    op: &O,
    cfg: &IterationConfig,
    x0: &[f64],
) -> Result<IterationTrace> {
    let theta = cfg.theta;
    run_iteration(
        op.dim(),
        cfg,
        x0,
        |x| {
            x.iter()
                .zip(op.apply(x))
                .map(|(a, t)| (1.0 - theta) * a + theta * t)
                .collect()
        },
        |_| false,
    )
}

/// `x(k+1) = x(k) − θ F(x(k))`, converging to a zero of `F`.
pub fn forward_step<O: Operator + ?Sized>(
    op_f: &O,
    cfg: &IterationConfig,
    x0: &[f64],
) -> Result<IterationTrace> {
    let theta = cfg.theta;
    run_iteration(
        op_f.dim(),
        cfg,
        x0,
        |x| {
            x.iter()
                .zip(op_f.apply(x))
                .map(|(a, f)| a - theta * f)
                .collect()
        },
        |_| false,
    )
}

/// True iff `‖x(k+1) − x*‖ ≤ rate · ‖x(k) − x*‖ + 1e−9` for every recorded step.
pub fn verify_contraction_rate(
    trace: &IterationTrace,
    x_star: &[f64],
    rate_bound: f64,
    weight: &PositiveWeight,
) -> Result<bool> {
    let d = trace.distances_to(x_star, weight)?;
    Ok(d.windows(2).all(|w| w[1] <= rate_bound * w[0] + 1e-9))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matnorm::Matrix;
    use crate::operators::AffineOp;

    fn scalar(a: f64) -> AffineOp {
        AffineOp::linear(Matrix::new(1, 1, vec![a]).unwrap()).unwrap()
    }

    #[test]
    fn identity_is_fixed_everywhere() {
        let id = AffineOp::identity(3);
        let x0 = [1.0, -2.0, 3.5];
        let tr = krasnoselskij(&id, &IterationConfig::new(0.3, 3), &x0).unwrap();
        assert!(tr.converged);
        assert_eq!(tr.iterations(), 0);
        assert!(tr.points.iter().all(|p| p == &x0));
    }

    #[test]
    fn scalar_closed_form() {
        let cfg = IterationConfig::new(0.5, 1)
            .with_max_iters(20)
            .with_stop_tol(1e-300);
        let tr = krasnoselskij(&scalar(0.5), &cfg, &[1.0]).unwrap();
        for (k, p) in tr.points.iter().enumerate() {
            assert!((p[0] - 0.75f64.powi(k as i32)).abs() < 1e-15);
        }
        assert!((tr.empirical_rate.unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn forward_step_scalar_zero() {
        let cfg = IterationConfig::new(0.5, 1)
            .with_max_iters(30)
            .with_stop_tol(1e-300);
        let tr = forward_step(&AffineOp::identity(1), &cfg, &[4.0]).unwrap();
        for (k, p) in tr.points.iter().enumerate() {
            assert!((p[0] - 4.0 * 0.5f64.powi(k as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_geometric_decay_meets_rate_with_equality() {
        let cfg = IterationConfig::new(1.0, 1).with_max_iters(40);
        let tr = krasnoselskij(&scalar(0.5), &cfg, &[3.0]).unwrap();
        let w = PositiveWeight::ones(1);
        assert!(verify_contraction_rate(&tr, &[0.0], 0.5, &w).unwrap());
        assert!(!verify_contraction_rate(&tr, &[0.0], 0.49, &w).unwrap());
    }

    #[test]
    fn divergence_is_flagged_not_raised() {
        let cfg = IterationConfig::new(1.0, 1).with_max_iters(1000);
        let tr = krasnoselskij(&scalar(3.0), &cfg, &[1.0]).unwrap();
        assert!(tr.diverged);
        assert!(!tr.converged);
        assert!(tr.step_residuals.len() < 1000);
    }

    #[test]
    fn config_validation() {
        let id = AffineOp::identity(2);
        assert!(krasnoselskij(&id, &IterationConfig::new(0.0, 2), &[0.0, 0.0]).is_err());
        assert!(krasnoselskij(&id, &IterationConfig::new(1.5, 2), &[0.0, 0.0]).is_err());
        assert!(krasnoselskij(&id, &IterationConfig::new(0.5, 3), &[0.0, 0.0]).is_err());
        assert!(krasnoselskij(&id, &IterationConfig::new(0.5, 2), &[0.0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let cfg = IterationConfig::new(0.5, 1)
            .with_max_iters(2)
            .with_stop_tol(1e-300);
        let tr = krasnoselskij(&scalar(0.5), &cfg, &[1.0]).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,x_1,residual");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(','));
        let summary = tr.summary();
        assert_eq!(summary.steps, 2);
        assert!(!summary.converged);
    }
}
