//! Argument definitions and subcommand implementations.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ewcert::certify::{
    check_ewc, find_weight_with, krasnoselskij_plan, min_b_with, monotone_baseline_plan_with,
    optimize_rate_with, CertificateReport, WeightMode,
};
use ewcert::consensus::{check_hypotheses, simulate_consensus, ConsensusOptions, MasSpec};
use ewcert::iterate::{forward_step, krasnoselskij, IterationConfig, IterationTrace};
use ewcert::matnorm::{PerronOptions, PositiveWeight};
use ewcert::operators::Operator;
use ewcert::Error as CoreError;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::experiments::{run_experiment, ExperimentConfig, ExperimentName};
use crate::experiments::{DEFAULT_C_GRID, DEFAULT_SIZES, DEFAULT_TRIALS};
use crate::io;

#[derive(Debug, Parser)]
#[command(
    name = "ewcert",
    version,
    about = "Weighted ℓ∞ contractivity certificates and step-size plans"
)]
pub struct Cli {
    /// Master seed for randomized experiments.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Stop tolerance on the step residual (iterate, zero) or the consensus gap.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Output directory for traces, summaries and experiment CSVs.
    #[arg(long, global = true, default_value = "ewcert-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check or search for a (b, c, η) certificate and its step-size plan.
    Certify(CertifyArgs),
    /// Krasnoselskij iteration x ← (1 − θ)x + θT(x).
    Iterate(IterateArgs),
    /// Forward-step zero finding x ← x − θF(x).
    Zero(IterateArgs),
    /// Simulate a nonlinear consensus scenario.
    Consensus(ConsensusArgs),
    /// Run a named experiment and write its CSVs.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Operator spec (JSON) or plain matrix (CSV/whitespace).
    pub operator: PathBuf,
    /// Check this b instead of searching.
    #[arg(long)]
    pub b: Option<f64>,
    /// Rate parameter for a check at fixed b.
    #[arg(long, requires = "b")]
    pub c: Option<f64>,
    /// Weight vector file (JSON array or list of numbers).
    #[arg(long, conflicts_with = "eta_ones")]
    pub eta: Option<PathBuf>,
    /// Use the unit weight.
    #[arg(long)]
    pub eta_ones: bool,
    /// Minimize the rate over (b, c) (default when no other mode is given).
    #[arg(long, conflicts_with_all = ["b", "min_b", "monotone"])]
    pub optimize: bool,
    /// Find the smallest b with a c = 0 certificate.
    #[arg(long, conflicts_with_all = ["b", "monotone"])]
    pub min_b: bool,
    /// Report the monotone-operator baseline plan instead.
    #[arg(long, conflicts_with = "b")]
    pub monotone: bool,
    #[arg(long, default_value_t = 1e-12)]
    pub perron_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub perron_iters: usize,
}

#[derive(Debug, Args)]
pub struct IterateArgs {
    /// Operator spec (JSON) or plain matrix (CSV/whitespace).
    pub operator: PathBuf,
    #[arg(long)]
    pub theta: f64,
    /// Initial point, inline ("1,2,3") or a file; zeros by default.
    #[arg(long)]
    pub x0: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    /// Weight of the residual norm; unit weight by default.
    #[arg(long)]
    pub eta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConsensusArgs {
    /// Scenario JSON: adjacency, default_rule, rules, theta or theta_fraction, x0.
    pub scenario: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    pub name: ExperimentName,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub c_grid: Option<Vec<f64>>,
}

/// Command result, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Infeasible,
    Diverged,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Infeasible => 2,
            Outcome::Diverged => 3,
        }
    }
}

/// Runs a parsed command line, printing JSON results to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<Outcome> {
    match &cli.command {
        Command::Certify(a) => certify(a, stdout),
        Command::Iterate(a) => iterate(cli, a, false, stdout),
        Command::Zero(a) => iterate(cli, a, true, stdout),
        Command::Consensus(a) => consensus(cli, a, stdout),
        Command::Experiment(a) => experiment(cli, a, stdout),
    }
}

fn print_json<T: Serialize>(stdout: &mut dyn Write, value: &T) -> Result<()> {
    writeln!(stdout, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn infeasible(stdout: &mut dyn Write, reason: String) -> Result<Outcome> {
    print_json(stdout, &json!({ "feasible": false, "error": reason }))?;
    Ok(Outcome::Infeasible)
}

fn certify(a: &CertifyArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let op = io::load_operator(&a.operator)?;
    let env = op.jacobian_envelope()?;
    let n = env.dim();
    let opts = PerronOptions {
        tol: a.perron_tol,
        max_iters: a.perron_iters,
    };
    let given = match (&a.eta, a.eta_ones) {
        (Some(path), _) => Some(io::load_weight(path)?),
        (None, true) => Some(PositiveWeight::ones(n)),
        (None, false) => None,
    };
    if let Some(eta) = &given {
        io::require_dim("weight", eta.len(), n)?;
    }

    if a.monotone {
        let plan = match monotone_baseline_plan_with(&env, &opts) {
            Ok(p) => p,
            Err(CoreError::Infeasible(msg)) => return infeasible(stdout, msg),
            Err(e) => return Err(e.into()),
        };
        print_json(stdout, &plan)?;
        return Ok(if plan.feasible {
            Outcome::Success
        } else {
            Outcome::Infeasible
        });
    }

    let mode = given.clone().map_or(WeightMode::Perron, WeightMode::Fixed);
    let searched = match a.b {
        Some(b) => {
            let c = a.c.unwrap_or(0.0);
            let eta = match given {
                Some(eta) => eta,
                None => find_weight_with(&env, b, &mode, &opts)?.eta,
            };
            Ok(check_ewc(&env, b, c, &eta)?)
        }
        None if a.min_b => min_b_with(&env, &mode, &opts),
        None => optimize_rate_with(&env, &mode, &opts).map(|r| r.certificate),
    };
    let cert = match searched {
        Ok(c) => c,
        Err(CoreError::Infeasible(msg)) => return infeasible(stdout, msg),
        Err(e) => return Err(e.into()),
    };
    let plan = krasnoselskij_plan(&cert).ok();
    print_json(stdout, &CertificateReport::new(&cert, plan.as_ref()))?;
    Ok(if cert.feasible {
        Outcome::Success
    } else {
        Outcome::Infeasible
    })
}

#[derive(Debug, Serialize)]
struct IterationReport<'a> {
    method: &'a str,
    theta: f64,
    stop_tol: f64,
    #[serde(flatten)]
    summary: ewcert::iterate::TraceSummary,
    trace_file: PathBuf,
}

fn trace_outcome(trace: &IterationTrace) -> Outcome {
    if trace.converged && !trace.diverged {
        Outcome::Success
    } else {
        Outcome::Diverged
    }
}

fn iterate(cli: &Cli, a: &IterateArgs, zero: bool, stdout: &mut dyn Write) -> Result<Outcome> {
    let op = io::load_operator(&a.operator)?;
    let n = op.dim();
    let x0 = match &a.x0 {
        Some(s) => io::parse_vector_arg(s)?,
        None => vec![0.0; n],
    };
    io::require_dim("x0", x0.len(), n)?;
    let mut cfg = IterationConfig::new(a.theta, n).with_max_iters(a.max_iters);
    if let Some(tol) = cli.tol {
        cfg = cfg.with_stop_tol(tol);
    }
    if let Some(path) = &a.eta {
        let eta = io::load_weight(path)?;
        io::require_dim("weight", eta.len(), n)?;
        cfg = cfg.with_weight(eta);
    }
    let (method, trace) = if zero {
        ("forward_step", forward_step(&op, &cfg, &x0)?)
    } else {
        ("krasnoselskij", krasnoselskij(&op, &cfg, &x0)?)
    };
    io::ensure_dir(&cli.out)?;
    let trace_file = cli.out.join(format!("{method}_trace.csv"));
    io::write_trace(&trace_file, &trace)?;
    let report = IterationReport {
        method,
        theta: a.theta,
        stop_tol: cfg.stop_tol,
        summary: trace.summary(),
        trace_file,
    };
    io::write_json(&cli.out.join(format!("{method}_summary.json")), &report)?;
    print_json(stdout, &report)?;
    Ok(trace_outcome(&trace))
}

/// Consensus scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusScenario {
    #[serde(flatten)]
    pub network: MasSpec,
    /// Absolute step size.
    #[serde(default)]
    pub theta: Option<f64>,
    /// Step size as a fraction of the step bound.
    #[serde(default)]
    pub theta_fraction: Option<f64>,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub gap_tol: Option<f64>,
}

fn consensus(cli: &Cli, a: &ConsensusArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let text = io::read_text(&a.scenario)?;
    let scenario: ConsensusScenario =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.scenario.display()))?;
    let mut model = scenario.network.to_model(0.0)?;
    let step_bound = model.step_bound()?;
    model.theta = match (scenario.theta, scenario.theta_fraction) {
        (Some(t), None) => t,
        (None, Some(f)) => f * step_bound,
        (None, None) => 0.9 * step_bound,
        (Some(_), Some(_)) => bail!("give either theta or theta_fraction, not both"),
    };
    io::require_dim("x0", scenario.x0.len(), model.graph.n())?;
    let mut opts = ConsensusOptions::default();
    if let Some(m) = scenario.max_iters {
        opts.max_iters = m;
    }
    if let Some(g) = scenario.gap_tol.or(cli.tol) {
        opts.gap_tol = g;
    }
    let hypotheses = check_hypotheses(&model)?;
    let out = simulate_consensus(&model, &scenario.x0, &opts)?;
    io::ensure_dir(&cli.out)?;
    let trace_file = cli.out.join("consensus_trace.csv");
    io::write_trace(&trace_file, &out.trace)?;
    let report = json!({
        "theta": model.theta,
        "step_bound": step_bound,
        "hypotheses": hypotheses,
        "consensus_guaranteed": hypotheses.consensus_guaranteed(),
        "steps": out.trace.step_residuals.len(),
        "gap": out.gap,
        "consensus_value": out.consensus_value,
        "diverged": out.trace.diverged,
        "final_state": out.trace.final_point(),
        "trace_file": trace_file,
    });
    io::write_json(&cli.out.join("consensus_summary.json"), &report)?;
    print_json(stdout, &report)?;
    Ok(if out.consensus_value.is_some() {
        Outcome::Success
    } else {
        Outcome::Diverged
    })
}

fn experiment(cli: &Cli, a: &ExperimentArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let cfg = ExperimentConfig {
        name: a.name,
        seed: cli.seed,
        sizes: a.sizes.clone().unwrap_or_else(|| DEFAULT_SIZES.to_vec()),
        trials: a.trials.unwrap_or(DEFAULT_TRIALS),
        c_grid: a.c_grid.clone().unwrap_or_else(|| DEFAULT_C_GRID.to_vec()),
        output_dir: cli.out.clone(),
    };
    let written = run_experiment(&cfg)?;
    print_json(stdout, &json!({ "experiment": cfg, "written": written }))?;
    Ok(Outcome::Success)
}
