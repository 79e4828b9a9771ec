//! Nonlinear consensus on digraphs.
//!
//! Agent `i` updates `x_i ← x_i − θ Σ_j a_ij f_ij(x_i − x_j)`, the
//! Krasnoselskij iteration of `T = Id − g∘f∘L` with
//! `T(x)_i = x_i − Σ_j a_ij f_ij(x_i − x_j)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::envelope::{JacobianEnvelope, SlopeEdge, SlopeRow, SlopeRows};
use crate::error::{Error, Result};
use crate::iterate::{run_iteration, IterationConfig, IterationTrace};
use crate::operators::{Activation, Averaged, Operator};

/// Directed graph with binary adjacency; `a_ij = 1` means agent `i` is
/// influenced by agent `j` (information flows from `j` to `i`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    n: usize,
    adj: Vec<Vec<bool>>,
}

impl Digraph {
    /// Builds a graph from influence pairs `(i, j)` meaning `a_ij = 1`.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut adj = vec![vec![false; n]; n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!("edge ({i}, {j}) out of range")));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            adj[i][j] = true;
        }
        Ok(Digraph { n, adj })
    }

    /// Square 0/1 adjacency with zero diagonal.
    pub fn from_adjacency(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let mut edges = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidGraph("adjacency must be square".into()));
            }
            for (j, &a) in row.iter().enumerate() {
                match a {
                    0 => {}
                    1 => edges.push((i, j)),
                    other => {
                        return Err(Error::InvalidGraph(format!(
                            "adjacency entries must be 0 or 1, got {other} at ({i}, {j})"
                        )))
                    }
                }
            }
        }
        Digraph::new(n, &edges)
    }

    /// Undirected ring: every agent listens to both ring neighbours.
    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGraph("a ring needs at least 3 nodes".into()));
        }
        let edges: Vec<_> = (0..n)
            .flat_map(|i| [(i, (i + 1) % n), (i, (i + n - 1) % n)])
            .collect();
        Digraph::new(n, &edges)
    }

    /// Directed cycle `0 → 1 → … → n−1 → 0` in the influence sense.
    pub fn directed_cycle(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Digraph::new(n, &edges)
    }

    /// Hub 0 exchanging with every leaf in both directions.
    pub fn star(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).flat_map(|l| [(0, l), (l, 0)]).collect();
        Digraph::new(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        Digraph::new(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i][j]
    }

    /// `N_i = {j : a_ij = 1}`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[i]
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(j, _)| j)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.neighbors(i).map(move |j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    pub fn max_neighbors(&self) -> usize {
        (0..self.n)
            .map(|i| self.neighbors(i).count())
            .max()
            .unwrap_or(0)
    }

    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        self.adj
            .iter()
            .map(|r| r.iter().map(|&a| u8::from(a)).collect())
            .collect()
    }

    /// `closure[i][r]` is true iff `r` can be reached from `i` following
    /// influence edges `i → j` (equivalently, `r`'s information reaches `i`).
    pub fn reachability(&self) -> Vec<Vec<bool>> {
        let mut c = self.adj.clone();
        for (i, row) in c.iter_mut().enumerate() {
            row[i] = true;
        }
        for k in 0..self.n {
            for i in 0..self.n {
                if c[i][k] {
                    let via = c[k].clone();
                    for (dst, reach) in c[i].iter_mut().zip(via) {
                        *dst |= reach;
                    }
                }
            }
        }
        c
    }

    pub fn globally_reachable_nodes(&self) -> Vec<usize> {
        let c = self.reachability();
        (0..self.n)
            .filter(|&r| (0..self.n).all(|i| c[i][r]))
            .collect()
    }
}

pub fn has_globally_reachable_node(graph: &Digraph) -> bool {
    !graph.globally_reachable_nodes().is_empty()
}

/// `1 / (L · max_i |N_i|)`.
pub fn consensus_step_bound(graph: &Digraph, lipschitz: f64) -> Result<f64> {
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "Lipschitz constant must be positive, got {lipschitz}"
        )));
    }
    match graph.max_neighbors() {
        0 => Err(Error::InvalidGraph("graph has no edges".into())),
        d => Ok(1.0 / (lipschitz * d as f64)),
    }
}

/// Interaction rule `f_ij` on one directed edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Activation", into = "Activation")]
pub struct EdgeRule {
    activation: Activation,
}

impl TryFrom<Activation> for EdgeRule {
    type Error = Error;

    fn try_from(a: Activation) -> Result<Self> {
        EdgeRule::new(a)
    }
}

impl From<EdgeRule> for Activation {
    fn from(r: EdgeRule) -> Self {
        r.activation
    }
}

impl EdgeRule {
    /// Rejects rules with a negative slope anywhere, and the unilateral
    /// leaky ReLU with `α = 0`.
    pub fn new(activation: Activation) -> Result<Self> {
        activation.validate()?;
        if let Activation::LeakyRelu { alpha } = activation {
            if alpha == 0.0 {
                return Err(Error::InvalidActivation(
                    "leaky ReLU with alpha = 0 gives unilateral interactions, \
                     which need bicolored interaction graphs and are not supported"
                        .into(),
                ));
            }
        }
        let lo = activation.sector().d1;
        if lo < 0.0 {
            return Err(Error::InvalidActivation(format!(
                "interaction rules must be nondecreasing, found slope {lo}"
            )));
        }
        Ok(EdgeRule { activation })
    }

    pub fn leaky_relu(alpha: f64) -> Result<Self> {
        Self::new(Activation::LeakyRelu { alpha })
    }

    pub fn linear() -> Self {
        EdgeRule {
            activation: Activation::Identity,
        }
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.activation.eval(x)
    }

    /// `[lo, hi]` with `0 ≤ lo ≤ hi`.
    pub fn slope_range(&self) -> (f64, f64) {
        let s = self.activation.sector();
        (s.d1, s.d2)
    }

    pub fn lipschitz(&self) -> f64 {
        self.slope_range().1
    }

    /// `f(0) = 0` with positive slopes on both sides of the origin.
    pub fn vanishes_only_at_zero(&self) -> bool {
        let (l, r) = self.activation.slopes_at_zero();
        self.eval(0.0).abs() < 1e-12 && l > 0.0 && r > 0.0
    }
}

/// Multi-agent system: graph, per-edge rules and step size.
#[derive(Debug, Clone, PartialEq)]
pub struct MasModel {
    pub graph: Digraph,
    pub rules: BTreeMap<(usize, usize), EdgeRule>,
    pub theta: f64,
}

impl MasModel {
    pub fn new(graph: Digraph, rules: BTreeMap<(usize, usize), EdgeRule>, theta: f64) -> Self {
        MasModel {
            graph,
            rules,
            theta,
        }
    }

    /// Same rule on every edge.
    pub fn uniform(graph: Digraph, rule: EdgeRule, theta: f64) -> Self {
        let rules = graph.edges().map(|e| (e, rule.clone())).collect();
        MasModel::new(graph, rules, theta)
    }

    /// Largest edge Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        self.graph
            .edges()
            .filter_map(|e| self.rules.get(&e))
            .map(EdgeRule::lipschitz)
            .fold(0.0, f64::max)
    }

    pub fn step_bound(&self) -> Result<f64> {
        consensus_step_bound(&self.graph, self.lipschitz())
    }
}

/// `T = Id − g∘f∘L` as an evaluable operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MasSpec", into = "MasSpec")]
pub struct MasOperator {
    graph: Digraph,
    /// Per agent: `(j, f_ij)` for every neighbour `j`.
    rows: Vec<Vec<(usize, EdgeRule)>>,
}

pub fn build_mas_operator(model: &MasModel) -> Result<MasOperator> {
    let g = &model.graph;
    let rows = (0..g.n())
        .map(|i| {
            g.neighbors(i)
                .map(|j| {
                    model
                        .rules
                        .get(&(i, j))
                        .cloned()
                        .map(|r| (j, r))
                        .ok_or(Error::MissingRule(i, j))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MasOperator {
        graph: g.clone(),
        rows,
    })
}

impl MasOperator {
    pub fn graph(&self) -> &Digraph {
        &self.graph
    }

    /// `g∘f∘L (x)`: the aggregated interaction term of every agent.
    pub fn interaction(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().map(|(j, f)| f.eval(x[i] - x[*j])).sum())
            .collect()
    }
}

impl Operator for MasOperator {
    fn dim(&self) -> usize {
        self.graph.n()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.interaction(x))
            .map(|(a, s)| a - s)
            .collect()
    }

    /// `DT_ii = 1 − Σ_j s_ij`, `DT_ij = s_ij` with `s_ij ∈ [lo_ij, hi_ij]`.
    fn jacobian_envelope(&self) -> Result<JacobianEnvelope> {
        JacobianEnvelope::edge_slopes(SlopeRows {
            n: self.graph.n(),
            diag_coef: -1.0,
            off_coef: 1.0,
            rows: self
                .rows
                .iter()
                .map(|row| SlopeRow {
                    base: 1.0,
                    edges: row
                        .iter()
                        .map(|(j, f)| {
                            let (lo, hi) = f.slope_range();
                            SlopeEdge { col: *j, lo, hi }
                        })
                        .collect(),
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeRuleSpec {
    pub i: usize,
    pub j: usize,
    pub rule: EdgeRule,
}

/// JSON shape of a MAS operator: adjacency, an optional rule applied to every
/// edge, and per-edge overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MasSpec {
    pub adjacency: Vec<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_rule: Option<EdgeRule>,
    #[serde(default)]
    pub rules: Vec<EdgeRuleSpec>,
}

impl MasSpec {
    pub fn to_model(&self, theta: f64) -> Result<MasModel> {
        let graph = Digraph::from_adjacency(&self.adjacency)?;
        let mut rules = BTreeMap::new();
        if let Some(r) = &self.default_rule {
            for e in graph.edges() {
                rules.insert(e, r.clone());
            }
        }
        for s in &self.rules {
            if !graph.has_edge(s.i, s.j) {
                return Err(Error::InvalidGraph(format!(
                    "rule given for ({}, {}) but the edge is absent",
                    s.i, s.j
                )));
            }
            rules.insert((s.i, s.j), s.rule.clone());
        }
        Ok(MasModel::new(graph, rules, theta))
    }
}

impl TryFrom<MasSpec> for MasOperator {
    type Error = Error;

    fn try_from(spec: MasSpec) -> Result<Self> {
        build_mas_operator(&spec.to_model(0.0)?)
    }
}

impl From<MasOperator> for MasSpec {
    fn from(op: MasOperator) -> Self {
        MasSpec {
            adjacency: op.graph.adjacency(),
            default_rule: None,
            rules: op
                .rows
                .into_iter()
                .enumerate()
                .flat_map(|(i, row)| {
                    row.into_iter()
                        .map(move |(j, rule)| EdgeRuleSpec { i, j, rule })
                })
                .collect(),
        }
    }
}

/// Status of the hypotheses guaranteeing convergence to consensus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub lipschitz: f64,
    pub step_bound: f64,
    pub theta_within_bound: bool,
    /// Nonnegative slopes on every edge.
    pub monotone_rules: bool,
    /// `f_ij(0) = 0` and positive slopes on both sides of 0, on every edge.
    pub zero_only_at_origin: bool,
    pub globally_reachable: bool,
    pub order_preserving: bool,
    pub diagnostics: Vec<String>,
}

impl HypothesisReport {
    pub fn consensus_guaranteed(&self) -> bool {
        self.theta_within_bound
            && self.monotone_rules
            && self.zero_only_at_origin
            && self.globally_reachable
    }
}

pub fn check_hypotheses(model: &MasModel) -> Result<HypothesisReport> {
    let op = build_mas_operator(model)?;
    let lipschitz = model.lipschitz();
    let step_bound = model.step_bound()?;
    let mut diagnostics = Vec::new();
    let theta_within_bound = model.theta > 0.0 && model.theta < step_bound;
    if !theta_within_bound {
        diagnostics.push(format!(
            "step size {} is outside (0, {step_bound})",
            model.theta
        ));
    }
    let mut zero_only_at_origin = true;
    for (&(i, j), r) in &model.rules {
        if !r.vanishes_only_at_zero() {
            zero_only_at_origin = false;
            diagnostics.push(format!(
                "rule on edge ({i}, {j}) does not have positive slopes on both sides of 0 \
                 (conservative reading of the nonvanishing condition)"
            ));
        }
    }
    let globally_reachable = has_globally_reachable_node(&model.graph);
    if !globally_reachable {
        diagnostics.push("graph has no globally reachable node".into());
    }
    let averaged = Averaged {
        op: &op,
        theta: model.theta,
    };
    let order_preserving = crate::certify::check_order_preserving(&averaged.jacobian_envelope()?);
    Ok(HypothesisReport {
        lipschitz,
        step_bound,
        theta_within_bound,
        // EdgeRule::new rejects negative slopes
        monotone_rules: true,
        zero_only_at_origin,
        globally_reachable,
        order_preserving,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusOptions {
    pub max_iters: usize,
    /// Consensus is declared once `max_i x_i − min_i x_i` is at most this.
    pub gap_tol: f64,
    /// Runs also stop once the step residual falls below this, which detects
    /// equilibria that are not consensus states.
    pub stop_tol: f64,
}

impl Default for ConsensusOptions {
    fn default() -> Self {
        ConsensusOptions {
            max_iters: 100_000,
            gap_tol: 1e-8,
            stop_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConsensusOutcome {
    pub trace: IterationTrace,
    pub gap: f64,
    /// Mean of the final state when consensus was reached.
    pub consensus_value: Option<f64>,
}

pub fn spread(x: &[f64]) -> f64 {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

pub fn simulate_consensus(
    model: &MasModel,
    x0: &[f64],
    opts: &ConsensusOptions,
) -> Result<ConsensusOutcome> {
    let op = build_mas_operator(model)?;
    let n = op.dim();
    let cfg = IterationConfig::new(model.theta, n)
        .with_max_iters(opts.max_iters)
        .with_stop_tol(opts.stop_tol);
    let theta = model.theta;
    let trace = run_iteration(
        n,
        &cfg,
        x0,
        |x| {
            x.iter()
                .zip(op.interaction(x))
                .map(|(a, s)| a - theta * s)
                .collect()
        },
        |x| spread(x) <= opts.gap_tol,
    )?;
    let last = trace.final_point();
    let gap = spread(last);
    let consensus_value =
        (gap <= opts.gap_tol && !trace.diverged).then(|| last.iter().sum::<f64>() / n as f64);
    Ok(ConsensusOutcome {
        trace,
        gap,
        consensus_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reachability_cases() {
        // 0 listens to 1, 1 listens to 2: node 2 is globally reachable
        let path = Digraph::new(3, &[(0, 1), (1, 2)]).unwrap();
        assert!(has_globally_reachable_node(&path));
        assert_eq!(path.globally_reachable_nodes(), vec![2]);
        let isolated = Digraph::new(2, &[]).unwrap();
        assert!(!has_globally_reachable_node(&isolated));
        let cycle = Digraph::directed_cycle(5).unwrap();
        assert_eq!(cycle.globally_reachable_nodes().len(), 5);
        let two_cycles =
            Digraph::new(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]).unwrap();
        assert!(!has_globally_reachable_node(&two_cycles));
    }

    #[test]
    fn step_bounds() {
        assert_eq!(
            consensus_step_bound(&Digraph::ring(6).unwrap(), 1.0).unwrap(),
            0.5
        );
        let star = Digraph::star(4).unwrap();
        assert_eq!(star.max_neighbors(), 3);
        assert!((consensus_step_bound(&star, 2.0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        let k4 = Digraph::complete(4).unwrap();
        assert!((consensus_step_bound(&k4, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(consensus_step_bound(&Digraph::new(3, &[]).unwrap(), 1.0).is_err());
        assert!(consensus_step_bound(&k4, 0.0).is_err());
    }

    #[test]
    fn graph_validation() {
        assert!(Digraph::new(2, &[(0, 0)]).is_err());
        assert!(Digraph::new(2, &[(0, 2)]).is_err());
        assert!(Digraph::from_adjacency(&[vec![0, 2], vec![1, 0]]).is_err());
        assert!(Digraph::from_adjacency(&[vec![1, 0], vec![1, 0]]).is_err());
    }

    #[test]
    fn rules() {
        assert!(EdgeRule::leaky_relu(0.0).is_err());
        assert!(EdgeRule::leaky_relu(0.3).unwrap().vanishes_only_at_zero());
        let decreasing = Activation::PiecewiseLinear {
            points: vec![[0.0, 0.0], [1.0, -1.0]],
        };
        assert!(EdgeRule::new(decreasing).is_err());
        // flat away from the origin: allowed, but hypothesis (ii) is not certified
        let flat_left = Activation::PiecewiseLinear {
            points: vec![[-2.0, 0.0], [-1.0, 0.0], [0.0, 0.0], [1.0, 1.0]],
        };
        let r = EdgeRule::new(flat_left).unwrap();
        assert!(!r.vanishes_only_at_zero());
    }

    #[test]
    fn swap_map() {
        let g = Digraph::new(2, &[(0, 1), (1, 0)]).unwrap();
        let m = MasModel::uniform(g, EdgeRule::linear(), 0.25);
        let op = build_mas_operator(&m).unwrap();
        assert_eq!(op.evaluate(&[3.0, -1.0]).unwrap(), vec![-1.0, 3.0]);
    }

    #[test]
    fn missing_rule_is_reported() {
        let g = Digraph::new(2, &[(0, 1), (1, 0)]).unwrap();
        let mut rules = BTreeMap::new();
        rules.insert((0, 1), EdgeRule::linear());
        let m = MasModel::new(g, rules, 0.1);
        assert!(matches!(
            build_mas_operator(&m),
            Err(Error::MissingRule(1, 0))
        ));
    }

    #[test]
    fn two_agent_symmetric_consensus() {
        let g = Digraph::new(2, &[(0, 1), (1, 0)]).unwrap();
        let m = MasModel::uniform(g, EdgeRule::linear(), 0.25);
        let out = simulate_consensus(&m, &[0.0, 1.0], &ConsensusOptions::default()).unwrap();
        assert!((out.consensus_value.unwrap() - 0.5).abs() < 1e-9);
        assert!(out.gap <= 1e-8);
    }

    #[test]
    fn spec_json_round_trip() {
        let text = r#"{"adjacency":[[0,1,0],[0,0,1],[1,0,0]],
            "default_rule":{"name":"lrelu","alpha":0.5},
            "rules":[{"i":0,"j":1,"rule":{"name":"identity"}}]}"#;
        let op: MasOperator = serde_json::from_str(text).unwrap();
        assert_eq!(op.dim(), 3);
        let back: MasOperator = serde_json::from_str(&serde_json::to_string(&op).unwrap()).unwrap();
        assert_eq!(back, op);
        let bad =
            r#"{"adjacency":[[0,1],[1,0]],"rules":[{"i":0,"j":1,"rule":{"name":"identity"}}]}"#;
        assert!(serde_json::from_str::<MasOperator>(bad).is_err());
        let alpha0 = r#"{"adjacency":[[0,1],[1,0]],"default_rule":{"name":"lrelu","alpha":0.0}}"#;
        assert!(serde_json::from_str::<MasOperator>(alpha0).is_err());
    }
}
