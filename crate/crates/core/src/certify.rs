//! Row-sum certificates under `‖·‖_{∞,[η]⁻¹}`, weight search, minimal `b`,
//! rate optimization and step-size plans.
//!
//! Every certificate is decided by direct residual arithmetic on the
//! envelope's worst-case rows. The Perron machinery only proposes weights.

use serde::{Deserialize, Serialize};

use crate::envelope::{JacobianEnvelope, RowTransform};
use crate::error::{Error, Result};
use crate::matnorm::{perron_from, Matrix, PerronOptions, PositiveWeight};

/// Tolerance on residuals for non-strict inequalities.
pub const FEAS_TOL: f64 = 1e-9;
/// Margin required for strict inequalities.
pub const STRICT_TOL: f64 = 1e-9;
/// Relative floor applied to Perron vectors before they are used as weights.
pub const WEIGHT_FLOOR: f64 = 1e-9;

const GRID_POINTS: usize = 1000;
const GOLDEN_TOL: f64 = 1e-6;
const BISECT_TOL: f64 = 1e-10;
const POLICY_ROUNDS: usize = 100;

/// A checked `(b, c, η)` triple for `|bI + J|η ≤ (b − c + 1)η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcCertificate {
    pub b: f64,
    pub c: f64,
    pub eta: PositiveWeight,
    /// `max_i sup_J (|bI + J|η)_i / η_i − (b − c + 1)`.
    pub residual: f64,
    pub feasible: bool,
}

impl EwcCertificate {
    /// `1 − c/(b+1)`, the Lipschitz constant of the averaged map at `θ = 1/(b+1)`.
    pub fn rate(&self) -> f64 {
        1.0 - self.c / (self.b + 1.0)
    }
}

/// Outcome of a single-parameter row-sum condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCertificate {
    pub c: f64,
    pub eta: PositiveWeight,
    /// Worst-case row value minus its bound; `≤ 0` means the condition holds.
    pub residual: f64,
    pub feasible: bool,
}

fn check_dim(env: &JacobianEnvelope, eta: &PositiveWeight) -> Result<()> {
    if env.dim() != eta.len() {
        return Err(Error::DimensionMismatch {
            expected: env.dim(),
            got: eta.len(),
        });
    }
    Ok(())
}

fn validate_bc(b: f64, c: f64) -> Result<()> {
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "b must be finite and ≥ 0, got {b}"
        )));
    }
    if !(c >= 0.0) {
        return Err(Error::InvalidParameter(format!("c must be ≥ 0, got {c}")));
    }
    if c > b + 1.0 {
        return Err(Error::InvalidParameter(format!(
            "c must not exceed b + 1 = {}, got {c}",
            b + 1.0
        )));
    }
    Ok(())
}

/// `|bI + J|η ≤ (b − c + 1)η` over the whole envelope.
pub fn check_ewc(
    env: &JacobianEnvelope,
    b: f64,
    c: f64,
    eta: &PositiveWeight,
) -> Result<EwcCertificate> {
    validate_bc(b, c)?;
    check_dim(env, eta)?;
    let worst = env.max_weighted_row(RowTransform::Abs { shift: b }, eta.as_slice());
    let residual = worst - (b - c + 1.0);
    Ok(EwcCertificate {
        b,
        c,
        eta: eta.clone(),
        residual,
        feasible: residual <= FEAS_TOL,
    })
}

/// `|J|η ≤ η`: nonexpansiveness in the weighted norm.
pub fn check_weak_contractive(
    env: &JacobianEnvelope,
    eta: &PositiveWeight,
) -> Result<EwcCertificate> {
    check_ewc(env, 0.0, 0.0, eta)
}

/// `|J|η < η` with margin [`STRICT_TOL`].
pub fn check_contractive(env: &JacobianEnvelope, eta: &PositiveWeight) -> Result<EwcCertificate> {
    let mut cert = check_ewc(env, 0.0, 0.0, eta)?;
    cert.feasible = cert.residual < -STRICT_TOL;
    Ok(cert)
}

/// `⌈−J_F⌉η ≤ −cη` over the envelope of `F`.
pub fn check_strong_monotone(
    env_f: &JacobianEnvelope,
    c: f64,
    eta: &PositiveWeight,
) -> Result<ConditionCertificate> {
    if !(c >= 0.0) {
        return Err(Error::InvalidParameter(format!("c must be ≥ 0, got {c}")));
    }
    check_dim(env_f, eta)?;
    let neg = env_f.affine_map(0.0, -1.0)?;
    let residual = neg.max_weighted_row(RowTransform::Metzler, eta.as_slice()) + c;
    Ok(ConditionCertificate {
        c,
        eta: eta.clone(),
        residual,
        feasible: residual <= FEAS_TOL,
    })
}

/// Every Jacobian entry is nonnegative (up to `1e−12`).
pub fn check_order_preserving(env: &JacobianEnvelope) -> bool {
    env.entry_bounds().0.data().iter().all(|v| *v >= -1e-12)
}

/// `Jη ≤ (1 − c)η` over the envelope, without absolute values.
pub fn check_subhomogeneous(
    env: &JacobianEnvelope,
    c: f64,
    eta: &PositiveWeight,
) -> Result<ConditionCertificate> {
    if !(c >= 0.0) {
        return Err(Error::InvalidParameter(format!("c must be ≥ 0, got {c}")));
    }
    check_dim(env, eta)?;
    let residual = env.max_weighted_row(RowTransform::Signed, eta.as_slice()) - (1.0 - c);
    Ok(ConditionCertificate {
        c,
        eta: eta.clone(),
        residual,
        feasible: residual <= FEAS_TOL,
    })
}

/// How the weight `η` is chosen during searches.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum WeightMode {
    /// Perron vector of the worst-case matrix at each `b`.
    #[default]
    Perron,
    /// A fixed weight, e.g. `η = 1`.
    Fixed(PositiveWeight),
}

impl WeightMode {
    pub fn ones(n: usize) -> Self {
        WeightMode::Fixed(PositiveWeight::ones(n))
    }
}

/// Worst-case Perron root of a row-wise family and its vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyPerron {
    pub rho: f64,
    pub vector: Vec<f64>,
    /// The worst-case matrix the root belongs to.
    pub matrix: Matrix,
}

/// Largest Perron root over all matrices whose row `i` is any transformed
/// envelope row `i`, plus `diag_shift` on the diagonal.
///
/// Policy iteration: each row picks the envelope row maximizing the current
/// Perron vector's functional. This never decreases the root and terminates
/// once the selected rows repeat. The transformed rows plus the shift must be
/// nonnegative.
pub fn family_perron(
    env: &JacobianEnvelope,
    t: RowTransform,
    diag_shift: f64,
    start: Option<&[f64]>,
    opts: &PerronOptions,
) -> Result<FamilyPerron> {
    let n = env.dim();
    let mut v = match start {
        Some(s) if s.len() == n => s.to_vec(),
        _ => vec![1.0; n],
    };
    let mut best: Option<FamilyPerron> = None;
    for _ in 0..POLICY_ROUNDS {
        let vmax = v.iter().cloned().fold(0.0, f64::max);
        let sel: Vec<f64> = v.iter().map(|x| x.max(1e-12 * vmax)).collect();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            let (mut row, _) = env.worst_row(i, t, &sel);
            row[i] += diag_shift;
            // clear rounding noise so the Perron routine accepts the matrix
            data.extend(
                row.into_iter()
                    .map(|x| if x < 0.0 && x > -1e-14 { 0.0 } else { x }),
            );
        }
        let h = Matrix::new(n, n, data)?;
        if best.as_ref().is_some_and(|b| b.matrix == h) {
            break;
        }
        let p = perron_from(&h, Some(&v), opts)?;
        v = p.vector.clone();
        let improved = best.as_ref().is_none_or(|b| p.rho >= b.rho);
        if !improved {
            break;
        }
        best = Some(FamilyPerron {
            rho: p.rho,
            vector: p.vector,
            matrix: h,
        });
    }
    Ok(best.expect("at least one policy round"))
}

/// Weight and achieved worst-case row value `max_i (|bI+J|η)_i/η_i` at `b`.
fn value_at(
    env: &JacobianEnvelope,
    b: f64,
    mode: &WeightMode,
    warm: Option<&[f64]>,
    opts: &PerronOptions,
) -> Result<(PositiveWeight, f64, Option<Vec<f64>>)> {
    let t = RowTransform::Abs { shift: b };
    match mode {
        WeightMode::Fixed(eta) => {
            check_dim(env, eta)?;
            Ok((eta.clone(), env.max_weighted_row(t, eta.as_slice()), None))
        }
        WeightMode::Perron => {
            let fp = family_perron(env, t, 0.0, warm, opts)?;
            let eta = PositiveWeight::from_nonnegative(&fp.vector, WEIGHT_FLOOR)
                .unwrap_or_else(|_| PositiveWeight::ones(env.dim()));
            let value = env.max_weighted_row(t, eta.as_slice());
            Ok((eta, value, Some(fp.vector)))
        }
    }
}

fn certificate_from_value(
    env: &JacobianEnvelope,
    b: f64,
    eta: PositiveWeight,
    value: f64,
) -> Result<EwcCertificate> {
    let c = ((b + 1.0) - value).clamp(0.0, b + 1.0);
    check_ewc(env, b, c, &eta)
}

/// Best `c` at a given `b`, with the Perron weight of the worst-case matrix
/// `H(b)`. The returned certificate is re-verified; `feasible = false` with
/// `c = 0` when no weight works at this `b`.
pub fn find_weight(env: &JacobianEnvelope, b: f64) -> Result<EwcCertificate> {
    find_weight_with(env, b, &WeightMode::Perron, &PerronOptions::default())
}

pub fn find_weight_with(
    env: &JacobianEnvelope,
    b: f64,
    mode: &WeightMode,
    opts: &PerronOptions,
) -> Result<EwcCertificate> {
    validate_bc(b, 0.0)?;
    let (eta, value, _) = value_at(env, b, mode, None, opts)?;
    certificate_from_value(env, b, eta, value)
}

/// Smallest `b ≥ 0` for which a `(b, 0)` certificate exists (to `1e−10`).
///
/// Feasibility is monotone in `b`, so a grid scan over
/// `[0, max(0, diag_lower) + 1]` brackets the threshold and bisection refines
/// it. Returns the certificate at the feasible end of the bracket.
pub fn min_b(env: &JacobianEnvelope, mode: &WeightMode) -> Result<EwcCertificate> {
    min_b_with(env, mode, &PerronOptions::default())
}

pub fn min_b_with(
    env: &JacobianEnvelope,
    mode: &WeightMode,
    opts: &PerronOptions,
) -> Result<EwcCertificate> {
    let hi_end = env.diag_lower().max(0.0) + 1.0;
    let mut warm: Option<Vec<f64>> = None;
    let margin = |b: f64, warm: &mut Option<Vec<f64>>| -> Result<(f64, PositiveWeight, f64)> {
        let (eta, value, v) = value_at(env, b, mode, warm.as_deref(), opts)?;
        if v.is_some() {
            *warm = v;
        }
        Ok(((b + 1.0) - value, eta, value))
    };
    let mut prev = 0.0;
    let mut found = None;
    for k in 0..=GRID_POINTS {
        let b = hi_end * k as f64 / GRID_POINTS as f64;
        let (m, eta, value) = margin(b, &mut warm)?;
        if m >= -FEAS_TOL {
            found = Some((b, eta, value));
            break;
        }
        prev = b;
    }
    let (mut hi, mut eta, mut value) = found
        .ok_or_else(|| Error::Infeasible(format!("no (b, 0) certificate for b up to {hi_end}")))?;
    if hi > 0.0 {
        let mut lo = prev;
        while hi - lo > BISECT_TOL {
            let mid = 0.5 * (lo + hi);
            let (m, e, v) = margin(mid, &mut warm)?;
            if m >= -FEAS_TOL {
                hi = mid;
                eta = e;
                value = v;
            } else {
                lo = mid;
            }
        }
    }
    certificate_from_value(env, hi, eta, value)
}

/// Rate-optimal certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateOptimum {
    pub certificate: EwcCertificate,
    /// `1 − c/(b+1)`.
    pub rate: f64,
}

/// Minimizes `1 − c/(b+1)` jointly over `b`, `c` and (in Perron mode) `η`.
///
/// For fixed `b` the best `c` is `(b+1) − value(b)`, so the search is over `b`
/// alone: a grid of 1,000 points on `[0, max(0, diag_lower) + 2]` plus the
/// point `b = max(0, diag_lower)`, then golden-section refinement around the
/// best grid point. Ties go to the smallest `b`.
pub fn optimize_rate(env: &JacobianEnvelope, mode: &WeightMode) -> Result<RateOptimum> {
    optimize_rate_with(env, mode, &PerronOptions::default())
}

pub fn optimize_rate_with(
    env: &JacobianEnvelope,
    mode: &WeightMode,
    opts: &PerronOptions,
) -> Result<RateOptimum> {
    let dl = env.diag_lower().max(0.0);
    let upper = dl + 2.0;
    let mut grid: Vec<f64> = (0..=GRID_POINTS)
        .map(|k| upper * k as f64 / GRID_POINTS as f64)
        .collect();
    grid.push(dl);
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut warm: Option<Vec<f64>> = None;
    let eval = |b: f64, warm: &mut Option<Vec<f64>>| -> Result<(f64, PositiveWeight, f64)> {
        let (eta, value, v) = value_at(env, b, mode, warm.as_deref(), opts)?;
        if v.is_some() {
            *warm = v;
        }
        Ok((value / (b + 1.0), eta, value))
    };

    let better = |r: f64, b: f64, best: &Option<(f64, f64, PositiveWeight, f64)>| match best {
        None => true,
        Some((br, bb, _, _)) => r < *br - 1e-15 || ((r - br).abs() <= 1e-15 && b < *bb),
    };

    let mut best: Option<(f64, f64, PositiveWeight, f64)> = None;
    let mut best_idx = 0;
    for (k, &b) in grid.iter().enumerate() {
        let (r, eta, value) = eval(b, &mut warm)?;
        if value > b + 1.0 + FEAS_TOL {
            continue;
        }
        if better(r, b, &best) {
            best = Some((r, b, eta, value));
            best_idx = k;
        }
    }
    let Some(mut best) = best else {
        return Err(Error::Infeasible(format!(
            "no feasible certificate for b in [0, {upper}]"
        )));
    };

    // golden-section search on the bracket around the best grid point
    let mut lo = grid[best_idx.saturating_sub(1)];
    let mut hi = grid[(best_idx + 1).min(grid.len() - 1)];
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = eval(x1, &mut warm)?;
    let mut f2 = eval(x2, &mut warm)?;
    while hi - lo > GOLDEN_TOL {
        if f1.0 <= f2.0 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = eval(x1, &mut warm)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = eval(x2, &mut warm)?;
        }
    }
    for (b, (r, eta, value)) in [(x1, f1), (x2, f2)] {
        if value <= b + 1.0 + FEAS_TOL && better(r, b, &Some(best.clone())) {
            best = (r, b, eta, value);
        }
    }

    let (_, b, eta, value) = best;
    let certificate = certificate_from_value(env, b, eta, value)?;
    let rate = certificate.rate();
    Ok(RateOptimum { certificate, rate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Ewc,
    MonotoneBaseline,
    ConsensusBound,
}

/// Admissible step sizes and the resulting per-step rate bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizePlan {
    pub theta_max: f64,
    /// True when `theta_max` itself is excluded.
    pub theta_max_open: bool,
    pub theta_star: f64,
    /// `1 − θ* c`, valid in the plan's weighted norm.
    pub rate_bound: f64,
    pub c: f64,
    pub eta: PositiveWeight,
    pub source: PlanSource,
    pub feasible: bool,
}

/// Concrete step strictly inside an open interval `(0, θ_max)`.
fn interior(theta_max: f64) -> f64 {
    theta_max * (1.0 - 1e-6)
}

/// Step-size plan implied by a feasible `(b, c, η)` certificate:
/// `θ ∈ (0, 1/(b+1))` when `c = 0`, `θ ∈ (0, 1/(b+1)]` when `c > 0`.
pub fn krasnoselskij_plan(cert: &EwcCertificate) -> Result<StepSizePlan> {
    if !cert.feasible {
        return Err(Error::Infeasible(format!(
            "certificate (b = {}, c = {}) has residual {}",
            cert.b, cert.c, cert.residual
        )));
    }
    let theta_max = 1.0 / (cert.b + 1.0);
    let open = cert.c <= STRICT_TOL;
    let theta_star = if open { interior(theta_max) } else { theta_max };
    Ok(StepSizePlan {
        theta_max,
        theta_max_open: open,
        theta_star,
        rate_bound: 1.0 - theta_star * cert.c,
        c: cert.c,
        eta: cert.eta.clone(),
        source: PlanSource::Ewc,
        feasible: true,
    })
}

/// The baseline from monotone operator theory: `θ_MON = 1/(1 + diag_lower)`
/// and `c_MON = 1 − μ`, where `μ` is the worst-case weighted row value of the
/// Metzler majorant `⌈J⌉` with the Perron weight of its worst-case family.
///
/// For `Φ(A·)` with sector `[d1, d2]`, `1 + diag_lower` equals
/// `1 − min_i min(d1 a_ii, d2 a_ii)`.
pub fn monotone_baseline_plan(env: &JacobianEnvelope) -> Result<StepSizePlan> {
    monotone_baseline_plan_with(env, &PerronOptions::default())
}

pub fn monotone_baseline_plan_with(
    env: &JacobianEnvelope,
    opts: &PerronOptions,
) -> Result<StepSizePlan> {
    let denom = 1.0 + env.diag_lower();
    if !(denom > 0.0) {
        return Err(Error::Infeasible(format!(
            "monotone step bound undefined: 1 + diag_lower = {denom}"
        )));
    }
    let theta = 1.0 / denom;
    let (lo, _) = env.entry_bounds();
    let min_diag = lo.diagonal().into_iter().fold(f64::INFINITY, f64::min);
    let shift = 1.0 + (-min_diag).max(0.0);
    let fp = family_perron(env, RowTransform::Metzler, shift, None, opts)?;
    let eta = PositiveWeight::from_nonnegative(&fp.vector, WEIGHT_FLOOR)
        .unwrap_or_else(|_| PositiveWeight::ones(env.dim()));
    let mu = env.max_weighted_row(RowTransform::Metzler, eta.as_slice());
    let c = (1.0 - mu).min(1.0 / theta);
    let feasible = c >= -FEAS_TOL;
    let c = c.max(0.0).min(1.0 / theta);
    let open = c <= STRICT_TOL;
    let theta_star = if open { interior(theta) } else { theta };
    Ok(StepSizePlan {
        theta_max: theta,
        theta_max_open: open,
        theta_star,
        rate_bound: 1.0 - theta_star * c,
        c,
        eta,
        source: PlanSource::MonotoneBaseline,
        feasible,
    })
}

/// JSON record combining a certificate and its plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub b: f64,
    pub c: f64,
    pub eta: PositiveWeight,
    pub residual: f64,
    pub feasible: bool,
    pub theta_max: Option<f64>,
    #[serde(default)]
    pub theta_max_open: Option<bool>,
    pub theta_star: Option<f64>,
    pub rate_bound: Option<f64>,
    pub source: PlanSource,
}

impl CertificateReport {
    pub fn new(cert: &EwcCertificate, plan: Option<&StepSizePlan>) -> Self {
        CertificateReport {
            b: cert.b,
            c: cert.c,
            eta: cert.eta.clone(),
            residual: cert.residual,
            feasible: cert.feasible,
            theta_max: plan.map(|p| p.theta_max),
            theta_max_open: plan.map(|p| p.theta_max_open),
            theta_star: plan.map(|p| p.theta_star),
            rate_bound: plan.map(|p| p.rate_bound),
            source: plan.map_or(PlanSource::Ewc, |p| p.source),
        }
    }

    /// Re-checks the recorded `(b, c, η)` against an envelope.
    pub fn recheck(&self, env: &JacobianEnvelope) -> Result<EwcCertificate> {
        check_ewc(env, self.b, self.c, &self.eta)
    }
}
