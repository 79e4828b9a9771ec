//! Experiment runners. Each writes gnuplot/spreadsheet-ready CSVs (and a JSON
//! summary where useful) into the configured output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::ValueEnum;
use ewcert::catalog;
use ewcert::certify::{
    check_ewc, check_weak_contractive, find_weight, krasnoselskij_plan, min_b,
    monotone_baseline_plan, optimize_rate, StepSizePlan, WeightMode,
};
use ewcert::consensus::{
    check_hypotheses, simulate_consensus, ConsensusOptions, Digraph, EdgeRule, HypothesisReport,
    MasModel,
};
use ewcert::iterate::{forward_step, krasnoselskij, verify_contraction_rate, IterationConfig};
use ewcert::matnorm::{perron, Matrix, PerronOptions, PositiveWeight};
use ewcert::operators::{Activation, AffineOp, DiagNonlinAffineOp, Operator};
use ewcert::{EwcCertificate, JacobianEnvelope};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::io::{ensure_dir, write_csv, write_json, write_trace};

pub const DEFAULT_SIZES: [usize; 4] = [5, 10, 20, 50];
pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_C_GRID: [f64; 7] = [0.2, 0.6, 1.0, 1.25, 1.5, 1.75, 2.0];
/// Leaky-ReLU slope used by the ratio sweep.
pub const DNL_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ExperimentName {
    Counter,
    Largerss,
    Affine,
    DnlSingle,
    DnlRatio,
    ConsensusDemo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: ExperimentName,
    pub seed: u64,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub c_grid: Vec<f64>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(name: ExperimentName, seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            name,
            seed,
            sizes: DEFAULT_SIZES.to_vec(),
            trials: DEFAULT_TRIALS,
            c_grid: DEFAULT_C_GRID.to_vec(),
            output_dir: output_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            bail!("trials must be at least 1");
        }
        if let Some(n) = self.sizes.iter().find(|n| **n < 2) {
            bail!("sizes must be at least 2, got {n}");
        }
        if self.sizes.is_empty() || self.c_grid.is_empty() {
            bail!("sizes and c_grid must be non-empty");
        }
        if let Some(c) = self.c_grid.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
            bail!("c_grid entries must be finite and ≥ 0, got {c}");
        }
        Ok(())
    }
}

/// Runs one experiment and returns the paths written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    ensure_dir(&cfg.output_dir)?;
    let dir = cfg.output_dir.as_path();
    match cfg.name {
        ExperimentName::Counter => write_counter(dir, cfg.seed),
        ExperimentName::Largerss => write_largerss(dir),
        ExperimentName::Affine => write_affine(dir),
        ExperimentName::DnlSingle => write_dnl_single(dir),
        ExperimentName::DnlRatio => write_dnl_ratio(dir, cfg),
        ExperimentName::ConsensusDemo => write_consensus_demo(dir, cfg.seed),
    }
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join(";")
}

// ---------------------------------------------------------------- counter

#[derive(Debug, Clone, Serialize)]
pub struct CounterRow {
    pub a: f64,
    /// Eigenvalues of the upper-triangular matrix are its diagonal.
    pub eig_1: f64,
    pub eig_2: f64,
    pub perron_residual: f64,
    pub perron_feasible: bool,
    pub random_weights: usize,
    pub random_feasible: usize,
    pub iteration_converged: bool,
    pub iteration_steps: usize,
}

pub const COUNTER_VALUES: [f64; 3] = [0.1, 0.5, 0.9];

pub fn counter_rows(seed: u64, random_weights: usize) -> Result<Vec<CounterRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for a in COUNTER_VALUES {
        let m = catalog::marginal_counterexample(a);
        let env = JacobianEnvelope::constant(m.clone())?;
        let found = check_weak_contractive(&env, &find_weight(&env, 0.0)?.eta)?;
        let mut random_feasible = 0;
        for _ in 0..random_weights {
            let eta =
                PositiveWeight::new(vec![rng.gen_range(1e-3..1e3), rng.gen_range(1e-3..1e3)])?;
            if check_weak_contractive(&env, &eta)?.feasible {
                random_feasible += 1;
            }
        }
        let trace = krasnoselskij(
            &AffineOp::linear(m)?,
            &IterationConfig::new(0.5, 2),
            &[1.0, 1.0],
        )?;
        rows.push(CounterRow {
            a,
            eig_1: 1.0,
            eig_2: a,
            perron_residual: found.residual,
            perron_feasible: found.feasible,
            random_weights,
            random_feasible,
            iteration_converged: trace.converged && !trace.diverged,
            iteration_steps: trace.step_residuals.len(),
        });
    }
    Ok(rows)
}

fn write_counter(dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    let path = dir.join("counter.csv");
    write_csv(&path, &counter_rows(seed, 1000)?)?;
    Ok(vec![path])
}

// ---------------------------------------------------------- certificate rows

#[derive(Debug, Clone, Serialize)]
pub struct CertificateRow {
    pub method: String,
    pub b: Option<f64>,
    pub c: f64,
    pub eta: String,
    pub residual: Option<f64>,
    pub feasible: bool,
    pub theta_max: Option<f64>,
    pub rate: Option<f64>,
}

impl CertificateRow {
    fn from_certificate(method: &str, cert: &EwcCertificate) -> Self {
        let plan = krasnoselskij_plan(cert).ok();
        CertificateRow {
            method: method.into(),
            b: Some(cert.b),
            c: cert.c,
            eta: join(cert.eta.as_slice()),
            residual: Some(cert.residual),
            feasible: cert.feasible,
            theta_max: plan.as_ref().map(|p| p.theta_max),
            rate: plan.map(|p| p.rate_bound),
        }
    }

    fn from_plan(method: &str, plan: &StepSizePlan) -> Self {
        CertificateRow {
            method: method.into(),
            b: None,
            c: plan.c,
            eta: join(plan.eta.as_slice()),
            residual: None,
            feasible: plan.feasible,
            theta_max: Some(plan.theta_max),
            rate: Some(plan.rate_bound),
        }
    }
}

pub fn largerss_rows() -> Result<Vec<CertificateRow>> {
    let env = JacobianEnvelope::constant(catalog::wide_diagonal_matrix())?;
    let eta = catalog::wide_diagonal_weight();
    let given = WeightMode::Fixed(eta.clone());
    Ok(vec![
        CertificateRow::from_certificate("given_weight_b4", &check_ewc(&env, 4.0, 0.0, &eta)?),
        CertificateRow::from_certificate(
            "optimize_given_weight",
            &optimize_rate(&env, &given)?.certificate,
        ),
        CertificateRow::from_certificate(
            "optimize_perron_weight",
            &optimize_rate(&env, &WeightMode::Perron)?.certificate,
        ),
        CertificateRow::from_certificate("min_b_perron_weight", &min_b(&env, &WeightMode::Perron)?),
        CertificateRow::from_plan("monotone_baseline", &monotone_baseline_plan(&env)?),
    ])
}

fn write_largerss(dir: &Path) -> Result<Vec<PathBuf>> {
    let path = dir.join("largerss.csv");
    write_csv(&path, &largerss_rows()?)?;
    Ok(vec![path])
}

// ----------------------------------------------------------------- affine

#[derive(Debug, Clone, Serialize)]
pub struct AffineRun {
    pub label: String,
    pub theta: f64,
    pub rate_bound: f64,
    pub steps_to_1e_8: Option<usize>,
    pub converged: bool,
    pub rate_verified: bool,
}

/// First step whose residual is at most `tol`.
pub fn steps_to_residual(residuals: &[f64], tol: f64) -> Option<usize> {
    residuals.iter().position(|r| *r <= tol).map(|k| k + 1)
}

pub struct AffineStudy {
    pub certificates: Vec<CertificateRow>,
    pub runs: Vec<AffineRun>,
    pub traces: Vec<(String, ewcert::IterationTrace)>,
}

/// Zero finding for `F(x) = (I − A)x + 1` at the rate-optimal EWC step (unit
/// weights) and at the monotone baseline step.
pub fn affine_study() -> Result<AffineStudy> {
    let env = JacobianEnvelope::constant(catalog::affine_reference_matrix())?;
    let ones = WeightMode::ones(4);
    let opt = optimize_rate(&env, &ones)?;
    let ewc_plan = krasnoselskij_plan(&opt.certificate)?;
    let mon_plan = monotone_baseline_plan(&env)?;
    let certificates = vec![
        CertificateRow::from_certificate("min_b_unit_weight", &min_b(&env, &ones)?),
        CertificateRow::from_certificate("optimize_unit_weight", &opt.certificate),
        CertificateRow::from_plan("monotone_baseline", &mon_plan),
    ];
    let f = catalog::affine_reference_zero_problem();
    let x_star = affine_fixed_point()?;
    let mut runs = Vec::new();
    let mut traces = Vec::new();
    for (label, plan) in [("ewc", &ewc_plan), ("monotone", &mon_plan)] {
        let cfg = IterationConfig::new(plan.theta_star, 4).with_stop_tol(1e-13);
        let trace = forward_step(&f, &cfg, &[0.0; 4])?;
        runs.push(AffineRun {
            label: label.into(),
            theta: plan.theta_star,
            rate_bound: plan.rate_bound,
            steps_to_1e_8: steps_to_residual(&trace.step_residuals, 1e-8),
            converged: trace.converged,
            rate_verified: verify_contraction_rate(&trace, &x_star, plan.rate_bound, &plan.eta)?,
        });
        traces.push((label.to_string(), trace));
    }
    Ok(AffineStudy {
        certificates,
        runs,
        traces,
    })
}

/// Fixed point of `x ↦ Ax − 1`, taken from a long, tightly converged run.
fn affine_fixed_point() -> Result<Vec<f64>> {
    let f = catalog::affine_reference_zero_problem();
    let cfg = IterationConfig::new(0.5, 4)
        .with_stop_tol(1e-15)
        .with_max_iters(5000);
    Ok(forward_step(&f, &cfg, &[0.0; 4])?.final_point().to_vec())
}

fn write_affine(dir: &Path) -> Result<Vec<PathBuf>> {
    let study = affine_study()?;
    let mut paths = vec![
        dir.join("affine_certificates.csv"),
        dir.join("affine_runs.csv"),
    ];
    write_csv(&paths[0], &study.certificates)?;
    write_csv(&paths[1], &study.runs)?;
    for (label, trace) in &study.traces {
        let p = dir.join(format!("affine_trace_{label}.csv"));
        write_trace(&p, trace)?;
        paths.push(p);
    }
    Ok(paths)
}

// ------------------------------------------------------------- dnl_single

pub fn dnl_single_rows() -> Result<Vec<CertificateRow>> {
    let env = catalog::leaky_relu_reference_operator().jacobian_envelope()?;
    let eta = catalog::leaky_relu_reference_weight();
    let given = check_ewc(
        &env,
        catalog::LEAKY_RELU_REFERENCE_B,
        catalog::LEAKY_RELU_REFERENCE_C,
        &eta,
    )?;
    Ok(vec![
        CertificateRow::from_certificate("given_certificate", &given),
        CertificateRow::from_certificate(
            "optimize_perron_weight",
            &optimize_rate(&env, &WeightMode::Perron)?.certificate,
        ),
        CertificateRow::from_plan("monotone_baseline", &monotone_baseline_plan(&env)?),
    ])
}

fn write_dnl_single(dir: &Path) -> Result<Vec<PathBuf>> {
    let path = dir.join("dnl_single.csv");
    write_csv(&path, &dnl_single_rows()?)?;
    Ok(vec![path])
}

// -------------------------------------------------------------- dnl_ratio

/// Per-trial generator, independent of scheduling: the stream is derived from
/// `(n, c index, trial)` under the master seed.
pub fn trial_rng(seed: u64, n: usize, c_index: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 40) | ((c_index as u64) << 20) | trial as u64);
    rng
}

/// Draws `x ↦ LReLU(Ax + u)` with Gaussian `M`, `u` (variance `1/n`) and
/// repairs `M` into an `A` admitting a `(b, c)` certificate for the target
/// `c`: diagonals are clamped into the interval where both slope extremes
/// fit, then each row's off-diagonals are shrunk uniformly under a Perron
/// weight of `|offdiag M| + I`.
pub fn generate_dnl_instance(n: usize, c: f64, rng: &mut ChaCha8Rng) -> Result<DiagNonlinAffineOp> {
    let normal = Normal::new(0.0, (1.0 / n as f64).sqrt())?;
    let mut m = Matrix::new(n, n, (0..n * n).map(|_| normal.sample(rng)).collect())?;
    let offset: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let slopes = [DNL_ALPHA, 1.0];
    let b = ((c - 1.0) * (1.0 + slopes[1] / slopes[0]) / 2.0).max(0.0) + 0.5;
    let bound = b - c + 1.0;

    // |b + d a_ii| ≤ b − c + 1 for both slopes
    let lo = slopes
        .iter()
        .map(|d| (c - 1.0 - 2.0 * b) / d)
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = slopes
        .iter()
        .map(|d| (1.0 - c) / d)
        .fold(f64::INFINITY, f64::min);
    let margin = 0.25 * (hi - lo);
    for i in 0..n {
        m[(i, i)] = m[(i, i)].clamp(lo + margin, hi - margin);
    }
    // a positive diagonal everywhere would push the monotone step past 1
    if (0..n).all(|i| m[(i, i)] > 0.0) {
        let k = (0..n)
            .min_by(|&p, &q| m[(p, p)].total_cmp(&m[(q, q)]))
            .expect("n ≥ 1");
        m[(k, k)] = 0.0;
    }

    let mut shape = m.map(f64::abs);
    for i in 0..n {
        shape[(i, i)] = 1.0;
    }
    let eta =
        PositiveWeight::from_nonnegative(&perron(&shape, &PerronOptions::default())?.vector, 1e-9)?;
    let eta = eta.as_slice();
    for i in 0..n {
        let off: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| m[(i, j)].abs() * eta[j])
            .sum();
        if off <= 0.0 {
            continue;
        }
        let room = slopes
            .iter()
            .map(|d| (bound * eta[i] - (b + d * m[(i, i)]).abs() * eta[i]) / (d * off))
            .fold(f64::INFINITY, f64::min);
        let s = room.min(1.0) * 0.999;
        for j in (0..n).filter(|&j| j != i) {
            m[(i, j)] *= s;
        }
    }
    Ok(DiagNonlinAffineOp::new(
        m,
        offset,
        Activation::LeakyRelu { alpha: DNL_ALPHA },
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnlRow {
    pub n: usize,
    pub c_target: f64,
    pub trial: usize,
    pub b_ewc: f64,
    pub c_ewc: f64,
    pub rate_ewc: f64,
    pub theta_mon: f64,
    pub c_mon: f64,
    pub rate_mon: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnlSkip {
    pub n: usize,
    pub c_target: f64,
    pub trial: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioMean {
    pub n: Option<usize>,
    pub c_target: f64,
    pub mean_ratio: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnlSweep {
    pub rows: Vec<DnlRow>,
    pub skipped: Vec<DnlSkip>,
}

impl DnlSweep {
    /// Mean ratio per target `c`, pooled over sizes.
    pub fn means_by_c(&self) -> Vec<RatioMean> {
        self.means(|_| None)
    }

    pub fn means_by_n_and_c(&self) -> Vec<RatioMean> {
        self.means(|r| Some(r.n))
    }

    fn means(&self, key: impl Fn(&DnlRow) -> Option<usize>) -> Vec<RatioMean> {
        let mut acc: BTreeMap<(Option<usize>, u64), (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            // c ≥ 0, so the bit pattern orders like the value
            let e = acc.entry((key(r), r.c_target.to_bits())).or_default();
            e.0 += r.ratio;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|((n, c), (sum, count))| RatioMean {
                n,
                c_target: f64::from_bits(c),
                mean_ratio: sum / count as f64,
                count,
            })
            .collect()
    }

    pub fn mean_at(&self, c: f64) -> Option<f64> {
        self.means_by_c()
            .into_iter()
            .find(|m| m.c_target == c)
            .map(|m| m.mean_ratio)
    }
}

fn dnl_trial(n: usize, c: f64, trial: usize, rng: &mut ChaCha8Rng) -> Result<DnlRow, String> {
    let op = generate_dnl_instance(n, c, rng).map_err(|e| format!("generator: {e}"))?;
    let env = op.jacobian_envelope().map_err(|e| e.to_string())?;
    let ewc = optimize_rate(&env, &WeightMode::Perron).map_err(|e| format!("ewc: {e}"))?;
    if !ewc.certificate.feasible {
        return Err("ewc: certificate infeasible".into());
    }
    let mon = monotone_baseline_plan(&env).map_err(|e| format!("monotone: {e}"))?;
    if !mon.feasible {
        return Err("monotone: baseline plan infeasible".into());
    }
    Ok(DnlRow {
        n,
        c_target: c,
        trial,
        b_ewc: ewc.certificate.b,
        c_ewc: ewc.certificate.c,
        rate_ewc: ewc.rate,
        theta_mon: mon.theta_star,
        c_mon: mon.c,
        rate_mon: mon.rate_bound,
        ratio: ewc.rate / mon.rate_bound,
    })
}

/// Ratio of the optimal EWC rate to the optimal monotone rate over random
/// instances. Infeasible instances are skipped and recorded.
pub fn dnl_ratio_sweep(seed: u64, sizes: &[usize], trials: usize, c_grid: &[f64]) -> DnlSweep {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &n in sizes {
        for (ci, &c) in c_grid.iter().enumerate() {
            for trial in 0..trials {
                let mut rng = trial_rng(seed, n, ci, trial);
                match dnl_trial(n, c, trial, &mut rng) {
                    Ok(row) => rows.push(row),
                    Err(reason) => skipped.push(DnlSkip {
                        n,
                        c_target: c,
                        trial,
                        reason,
                    }),
                }
            }
        }
    }
    DnlSweep { rows, skipped }
}

#[derive(Serialize)]
struct DnlSummary<'a> {
    seed: u64,
    sizes: &'a [usize],
    trials: usize,
    c_grid: &'a [f64],
    rows: usize,
    skipped: &'a [DnlSkip],
    mean_by_c: Vec<RatioMean>,
    mean_by_n_and_c: Vec<RatioMean>,
}

fn write_dnl_ratio(dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let sweep = dnl_ratio_sweep(cfg.seed, &cfg.sizes, cfg.trials, &cfg.c_grid);
    for s in &sweep.skipped {
        eprintln!(
            "skipped n={} c={} trial={}: {}",
            s.n, s.c_target, s.trial, s.reason
        );
    }
    let csv = dir.join("dnl_ratio.csv");
    let summary = dir.join("dnl_ratio_summary.json");
    write_csv(&csv, &sweep.rows)?;
    write_json(
        &summary,
        &DnlSummary {
            seed: cfg.seed,
            sizes: &cfg.sizes,
            trials: cfg.trials,
            c_grid: &cfg.c_grid,
            rows: sweep.rows.len(),
            skipped: &sweep.skipped,
            mean_by_c: sweep.means_by_c(),
            mean_by_n_and_c: sweep.means_by_n_and_c(),
        },
    )?;
    Ok(vec![csv, summary])
}

// --------------------------------------------------------- consensus_demo

#[derive(Debug, Clone, Serialize)]
pub struct ConsensusDemoSummary {
    pub n: usize,
    pub theta: f64,
    pub step_bound: f64,
    pub hypotheses: HypothesisReport,
    pub x0: Vec<f64>,
    pub steps: usize,
    pub gap: f64,
    pub consensus_value: Option<f64>,
}

/// Ring of five agents with heterogeneous leaky-ReLU edge rules at 90% of the
/// step bound.
pub fn consensus_demo(seed: u64) -> Result<(ConsensusDemoSummary, ewcert::IterationTrace)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = Digraph::ring(5)?;
    let rules = graph
        .edges()
        .map(|e| Ok((e, EdgeRule::leaky_relu(rng.gen_range(0.1..=1.0))?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let mut model = MasModel::new(graph, rules, 0.0);
    let step_bound = model.step_bound()?;
    model.theta = 0.9 * step_bound;
    let x0: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let hypotheses = check_hypotheses(&model)?;
    let out = simulate_consensus(&model, &x0, &ConsensusOptions::default())?;
    let summary = ConsensusDemoSummary {
        n: 5,
        theta: model.theta,
        step_bound,
        hypotheses,
        x0,
        steps: out.trace.step_residuals.len(),
        gap: out.gap,
        consensus_value: out.consensus_value,
    };
    Ok((summary, out.trace))
}

fn write_consensus_demo(dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    let (summary, trace) = consensus_demo(seed)?;
    let csv = dir.join("consensus_demo.csv");
    let json = dir.join("consensus_demo_summary.json");
    write_trace(&csv, &trace)?;
    write_json(&json, &summary)?;
    Ok(vec![csv, json])
}
