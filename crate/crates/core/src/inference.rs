//! Inference over hybrid networks.
//!
//! * [`forward_sample`] draws the network `n` times (roots from their
//!   priors, deterministic nodes resolved, equation nodes evaluated by
//!   sampling one branch per `Choose`), with one random stream per
//!   iteration so results do not depend on the number of worker threads.
//! * [`discrete_posterior_exact`] enumerates the joint discrete space.
//! * [`posterior`] additionally conditions on an observed equation-node
//!   value: each state of the network's driver (its single root chance node)
//!   is weighted by the conditional density of the observation, computed
//!   either by numerical convolution of the selected branch densities or by
//!   a Gaussian kernel density estimate over clamped forward samples.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistError, DistTerm, Family};
use crate::network::{
    ChooseTerm, EquationExpr, ModelError, Network, Node, NodeKind, ValidationReport,
};
use crate::rng::iteration_rng;

/// Default kernel bandwidth for continuous evidence, in sales units.
pub const DEFAULT_BANDWIDTH: f64 = 5.0;
/// Default grid step of the convolution density.
pub const DEFAULT_GRID_STEP: f64 = 0.25;
/// Default Monte Carlo iteration count.
pub const DEFAULT_ITERATIONS: usize = 10_000;
/// Samples per driver state for the kernel density estimator.
pub const DEFAULT_KDE_SAMPLES: usize = 100_000;
/// Branch grids extend to `mean + GRID_SD_SPAN * sd`.
pub const GRID_SD_SPAN: f64 = 12.0;
/// Pdf evaluations averaged per grid cell.
const CELL_SUBSAMPLES: usize = 8;
/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("invalid network:\n{0}")]
    InvalidNetwork(ValidationReport),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` has no state `{state}`")]
    UnknownState { node: String, state: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("evidence has zero probability")]
    InconsistentEvidence,
    #[error("posterior undefined: every state has zero density at {value}")]
    UndefinedPosterior { value: f64 },
    #[error("unsupported network shape: {0}")]
    UnsupportedShape(String),
}

pub type Result<T, E = InferenceError> = std::result::Result<T, E>;

/// Observation of an equation node's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousEvidence {
    pub node: String,
    pub value: f64,
    /// Kernel bandwidth in the node's units.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evidence {
    /// Observed state per discrete node.
    pub discrete: BTreeMap<String, String>,
    pub continuous: Option<ContinuousEvidence>,
}

impl Evidence {
    pub fn none() -> Self {
        Evidence::default()
    }

    pub fn state(node: impl Into<String>, state: impl Into<String>) -> Self {
        Evidence::default().with_state(node, state)
    }

    pub fn with_state(mut self, node: impl Into<String>, state: impl Into<String>) -> Self {
        self.discrete.insert(node.into(), state.into());
        self
    }

    pub fn with_value(mut self, node: impl Into<String>, value: f64, bandwidth: f64) -> Self {
        self.continuous = Some(ContinuousEvidence {
            node: node.into(),
            value,
            bandwidth,
        });
        self
    }

    pub fn is_empty(&self) -> bool {
        self.discrete.is_empty() && self.continuous.is_none()
    }

    /// Checks that every observation names an existing node and state.
    pub fn check(&self, net: &Network) -> Result<()> {
        self.resolve_discrete(net).map(|_| ())?;
        if let Some(c) = &self.continuous {
            let node = net
                .node(&c.node)
                .ok_or_else(|| InferenceError::UnknownNode(c.node.clone()))?;
            if node.is_discrete() {
                return Err(InferenceError::InvalidInput(format!(
                    "`{}` is discrete; observe a state instead of a value",
                    c.node
                )));
            }
            if !c.value.is_finite() {
                return Err(InferenceError::InvalidInput(
                    "observed value must be finite".into(),
                ));
            }
            if !(c.bandwidth > 0.0 && c.bandwidth.is_finite()) {
                return Err(InferenceError::InvalidInput(format!(
                    "bandwidth must be positive, got {}",
                    c.bandwidth
                )));
            }
        }
        Ok(())
    }

    /// Observed state index per node index.
    fn resolve_discrete(&self, net: &Network) -> Result<Vec<Option<usize>>> {
        let mut clamp = vec![None; net.len()];
        for (node, state) in &self.discrete {
            let idx = net
                .index_of(node)
                .ok_or_else(|| InferenceError::UnknownNode(node.clone()))?;
            let n = &net.nodes()[idx];
            if !n.is_discrete() {
                return Err(InferenceError::InvalidInput(format!(
                    "`{node}` is an equation node; observe a value instead of a state"
                )));
            }
            clamp[idx] =
                Some(
                    n.state_index(state)
                        .ok_or_else(|| InferenceError::UnknownState {
                            node: node.clone(),
                            state: state.clone(),
                        })?,
                );
        }
        Ok(clamp)
    }
}

fn ensure_valid(net: &Network) -> Result<()> {
    let report = net.validate();
    if report.is_valid() {
        Ok(())
    } else {
        Err(InferenceError::InvalidNetwork(report))
    }
}

/// The equation node whose values are reported (the first declared).
pub fn target_equation(net: &Network) -> Result<&Node> {
    net.equation_nodes()
        .next()
        .ok_or_else(|| InferenceError::UnsupportedShape("network has no equation node".into()))
}

fn expr_of(node: &Node) -> &EquationExpr {
    match &node.kind {
        NodeKind::Equation { expr } => expr,
        _ => unreachable!("equation node expected"),
    }
}

fn row_key(node: &Node, net: &Network, states: &[usize]) -> Vec<usize> {
    node.parents
        .iter()
        .map(|p| states[net.index_of(p).expect("validated parent")])
        .collect()
}

// ---------------------------------------------------------------------------
// Forward sampling

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub n: usize,
    pub seed: u64,
    /// Equation node the values belong to.
    pub target: String,
    pub values: Vec<f64>,
    /// Discrete nodes in declaration order; columns of `state_trace`.
    pub discrete_nodes: Vec<String>,
    /// Per-iteration state index of every discrete node.
    pub state_trace: Vec<Vec<usize>>,
}

impl SampleSet {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sample standard deviation (n - 1 denominator).
    pub fn sd(&self) -> f64 {
        let mean = self.mean();
        let ss: f64 = self.values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (self.values.len() as f64 - 1.0)).sqrt()
    }

    /// Standard error of the mean.
    pub fn standard_error(&self) -> f64 {
        self.sd() / (self.values.len() as f64).sqrt()
    }

    /// Fraction of iterations in which `node` took `state`.
    pub fn state_frequency(&self, node: &str, state: usize) -> Option<f64> {
        let col = self.discrete_nodes.iter().position(|n| n == node)?;
        let hits = self
            .state_trace
            .iter()
            .filter(|row| row[col] == state)
            .count();
        Some(hits as f64 / self.n as f64)
    }
}

/// Draws `n` joint samples. Observed discrete nodes are clamped to their
/// observed state; continuous evidence is ignored.
pub fn forward_sample(
    net: &Network,
    n: usize,
    seed: u64,
    evidence: &Evidence,
) -> Result<SampleSet> {
    ensure_valid(net)?;
    if n == 0 {
        return Err(InferenceError::InvalidInput(
            "iteration count must be at least 1".into(),
        ));
    }
    let clamp = evidence.resolve_discrete(net)?;
    let target = target_equation(net)?;
    let target_idx = net.index_of(&target.id).expect("target exists");
    let order = net.topological_indices()?;
    let discrete: Vec<usize> = (0..net.len())
        .filter(|&i| net.nodes()[i].is_discrete())
        .collect();

    let draws: Vec<(f64, Vec<usize>)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = iteration_rng(seed, i);
            let mut states = vec![0usize; net.len()];
            let mut value = 0.0;
            for &idx in &order {
                let node = &net.nodes()[idx];
                if let Some(s) = clamp[idx] {
                    states[idx] = s;
                    continue;
                }
                match &node.kind {
                    NodeKind::Chance { cpt, .. } => {
                        let row = &cpt[&row_key(node, net, &states)];
                        states[idx] = categorical(row, rand::Rng::random::<f64>(&mut rng));
                    }
                    NodeKind::Deterministic { map, .. } => {
                        states[idx] = map[&row_key(node, net, &states)];
                    }
                    NodeKind::Equation { expr } => {
                        let v = evaluate(expr, net, &states, &mut rng);
                        if idx == target_idx {
                            value = v;
                        }
                    }
                }
            }
            (value, discrete.iter().map(|&d| states[d]).collect())
        })
        .collect();

    let (values, state_trace) = draws.into_iter().unzip();
    Ok(SampleSet {
        n,
        seed,
        target: target.id.clone(),
        values,
        discrete_nodes: discrete
            .iter()
            .map(|&d| net.nodes()[d].id.clone())
            .collect(),
        state_trace,
    })
}

fn categorical(probabilities: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum: take the last state with mass
    probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn evaluate<R: rand::Rng>(
    expr: &EquationExpr,
    net: &Network,
    states: &[usize],
    rng: &mut R,
) -> f64 {
    expr.terms
        .iter()
        .map(|term| {
            let sel = net.index_of(&term.selector).expect("validated selector");
            term.branches[states[sel]].sample(rng)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanCi {
    pub fn contains(&self, x: f64) -> bool {
        (self.lower..=self.upper).contains(&x)
    }

    pub fn standard_error(&self) -> f64 {
        self.sd / (self.n as f64).sqrt()
    }
}

/// Mean with a normal-approximation 95% interval, `mean ± 1.96 sd / sqrt(n)`.
pub fn equation_mean_ci(samples: &SampleSet) -> Result<MeanCi> {
    mean_ci(&samples.values)
}

pub fn mean_ci(values: &[f64]) -> Result<MeanCi> {
    let n = values.len();
    if n < 2 {
        return Err(InferenceError::InsufficientData { needed: 2, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let half = Z_95 * sd / (n as f64).sqrt();
    Ok(MeanCi {
        mean,
        lower: mean - half,
        upper: mean + half,
        sd,
        n,
    })
}

// ---------------------------------------------------------------------------
// Exact discrete inference

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactEnumeration,
    ConvolutionDensity,
    MonteCarloKde,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ExactEnumeration => "exact-enumeration",
            Method::ConvolutionDensity => "convolution-density",
            Method::MonteCarloKde => "monte-carlo-kde",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePosterior {
    pub node: String,
    pub states: Vec<String>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub method: Method,
    pub nodes: Vec<NodePosterior>,
}

impl PosteriorReport {
    pub fn node(&self, id: &str) -> Option<&NodePosterior> {
        self.nodes.iter().find(|n| n.node == id)
    }

    pub fn probability(&self, node: &str, state: &str) -> Option<f64> {
        let n = self.node(node)?;
        let i = n.states.iter().position(|s| s == state)?;
        Some(n.probabilities[i])
    }

    /// Most probable state of `node`.
    pub fn argmax(&self, node: &str) -> Option<&str> {
        let n = self.node(node)?;
        let (i, _) = n
            .probabilities
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))?;
        Some(&n.states[i])
    }
}

fn discrete_order(net: &Network) -> Result<Vec<usize>> {
    Ok(net
        .topological_indices()?
        .into_iter()
        .filter(|&i| net.nodes()[i].is_discrete())
        .collect())
}

/// Unnormalised joint over the nodes in `order` (a topologically sorted
/// set closed under parents) consistent with the clamps.
fn walk_joint(net: &Network, order: &[usize], clamp: &[Option<usize>]) -> Vec<(Vec<usize>, f64)> {
    fn walk(
        net: &Network,
        order: &[usize],
        clamp: &[Option<usize>],
        states: &mut Vec<usize>,
        weight: f64,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        let Some((&idx, rest)) = order.split_first() else {
            out.push((states.clone(), weight));
            return;
        };
        let node = &net.nodes()[idx];
        let key = row_key(node, net, states);
        let options: Vec<(usize, f64)> = match &node.kind {
            NodeKind::Chance { cpt, .. } => cpt[&key].iter().copied().enumerate().collect(),
            NodeKind::Deterministic { map, .. } => vec![(map[&key], 1.0)],
            NodeKind::Equation { .. } => unreachable!("discrete nodes only"),
        };
        for (s, p) in options {
            if p == 0.0 || clamp[idx].is_some_and(|c| c != s) {
                continue;
            }
            states[idx] = s;
            walk(net, rest, clamp, states, weight * p, out);
        }
    }

    let mut out = Vec::new();
    walk(net, order, clamp, &mut vec![0; net.len()], 1.0, &mut out);
    out
}

/// Normalised joint distribution over discrete nodes consistent with the
/// clamps. Entries hold one state per node index (equation nodes hold 0).
fn enumerate_joint(net: &Network, clamp: &[Option<usize>]) -> Result<Vec<(Vec<usize>, f64)>> {
    let mut out = walk_joint(net, &discrete_order(net)?, clamp);
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(InferenceError::InconsistentEvidence);
    }
    for (_, w) in &mut out {
        *w /= total;
    }
    Ok(out)
}

/// Marginal of every discrete node under a weighted joint.
fn marginals(net: &Network, joint: &[(Vec<usize>, f64)], method: Method) -> PosteriorReport {
    let nodes = net
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.is_discrete())
        .map(|(idx, node)| {
            let mut probabilities = vec![0.0; node.states().len()];
            for (states, w) in joint {
                probabilities[states[idx]] += w;
            }
            let sum: f64 = probabilities.iter().sum();
            probabilities.iter_mut().for_each(|p| *p /= sum);
            NodePosterior {
                node: node.id.clone(),
                states: node.states().to_vec(),
                probabilities,
            }
        })
        .collect();
    PosteriorReport { method, nodes }
}

/// Exact posterior of every discrete node given discrete evidence.
pub fn discrete_posterior_exact(net: &Network, evidence: &Evidence) -> Result<PosteriorReport> {
    ensure_valid(net)?;
    if evidence.continuous.is_some() {
        return Err(InferenceError::InvalidInput(
            "exact enumeration takes discrete evidence only".into(),
        ));
    }
    let clamp = evidence.resolve_discrete(net)?;
    if evidence.discrete.is_empty() {
        return prior_marginals(net);
    }
    Ok(marginals(
        net,
        &enumerate_joint(net, &clamp)?,
        Method::ExactEnumeration,
    ))
}

/// Marginals without evidence. Each node is enumerated over its ancestors
/// only and nothing is renormalised, so root nodes return their priors
/// exactly.
fn prior_marginals(net: &Network) -> Result<PosteriorReport> {
    let order = discrete_order(net)?;
    let free = vec![None; net.len()];
    let mut nodes: Vec<(usize, NodePosterior)> = order
        .iter()
        .map(|&idx| {
            let mut closure = vec![false; net.len()];
            let mut stack = vec![idx];
            while let Some(i) = stack.pop() {
                if !std::mem::replace(&mut closure[i], true) {
                    stack.extend(
                        net.nodes()[i]
                            .parents
                            .iter()
                            .filter_map(|p| net.index_of(p)),
                    );
                }
            }
            let sub: Vec<usize> = order.iter().copied().filter(|&i| closure[i]).collect();
            let node = &net.nodes()[idx];
            let mut probabilities = vec![0.0; node.states().len()];
            for (states, w) in walk_joint(net, &sub, &free) {
                probabilities[states[idx]] += w;
            }
            (
                idx,
                NodePosterior {
                    node: node.id.clone(),
                    states: node.states().to_vec(),
                    probabilities,
                },
            )
        })
        .collect();
    nodes.sort_by_key(|(idx, _)| *idx);
    Ok(PosteriorReport {
        method: Method::ExactEnumeration,
        nodes: nodes.into_iter().map(|(_, n)| n).collect(),
    })
}

// ---------------------------------------------------------------------------
// Driver-state analysis

/// The network's single root chance node, which must determine every
/// `Choose` selector of the target equation node.
pub fn driver_node(net: &Network) -> Result<&Node> {
    let roots: Vec<&Node> = net
        .nodes()
        .iter()
        .filter(|n| n.is_root() && matches!(n.kind, NodeKind::Chance { .. }))
        .collect();
    match roots[..] {
        [driver] => Ok(driver),
        [] => Err(InferenceError::UnsupportedShape(
            "no root chance node".into(),
        )),
        _ => Err(InferenceError::UnsupportedShape(format!(
            "{} root chance nodes; expected a single driver",
            roots.len()
        ))),
    }
}

/// Branch terms selected by each `Choose` when the driver is in `state`.
pub fn state_branches(net: &Network, state: &str) -> Result<Vec<DistTerm>> {
    ensure_valid(net)?;
    let driver = driver_node(net)?;
    let d = net.index_of(&driver.id).expect("driver exists");
    let s = driver
        .state_index(state)
        .ok_or_else(|| InferenceError::UnknownState {
            node: driver.id.clone(),
            state: state.to_owned(),
        })?;
    let mut clamp = vec![None; net.len()];
    clamp[d] = Some(s);
    let joint = enumerate_joint(net, &clamp)?;
    let expr = expr_of(target_equation(net)?);
    expr.terms
        .iter()
        .map(|term| {
            let sel = net.index_of(&term.selector).expect("validated selector");
            let first = joint[0].0[sel];
            if joint
                .iter()
                .any(|(states, w)| *w > 0.0 && states[sel] != first)
            {
                return Err(InferenceError::UnsupportedShape(format!(
                    "selector `{}` is not determined by `{}`",
                    term.selector, driver.id
                )));
            }
            Ok(term.branches[first])
        })
        .collect()
}

/// Closed-form mean of the target equation node given the driver state.
pub fn analytic_state_mean(net: &Network, state: &str) -> Result<f64> {
    Ok(state_branches(net, state)?.iter().map(DistTerm::mean).sum())
}

/// Closed-form `(mean, variance)` given the driver state; branches are
/// sampled independently, so variances add.
pub fn analytic_state_moments(net: &Network, state: &str) -> Result<(f64, f64)> {
    Ok(state_branches(net, state)?
        .iter()
        .map(DistTerm::mean_variance)
        .fold((0.0, 0.0), |(m, v), (bm, bv)| (m + bm, v + bv)))
}

/// Prior-weighted mixture mean over the driver's states.
pub fn analytic_mean(net: &Network) -> Result<f64> {
    let driver = driver_node(net)?;
    let prior = driver.prior().expect("root chance node has a prior");
    driver
        .states()
        .iter()
        .zip(prior)
        .map(|(s, p)| Ok(p * analytic_state_mean(net, s)?))
        .sum()
}

// ---------------------------------------------------------------------------
// Convolution density

/// Density of a sum of independent terms tabulated on a uniform grid
/// starting at zero.
#[derive(Debug, Clone)]
pub struct GridDensity {
    pub step: f64,
    pub values: Vec<f64>,
}

impl GridDensity {
    /// Pdf of one term over `[0, mean + 12 sd]`, averaged over each grid
    /// cell and normalised to unit mass.
    pub fn of_term(term: &DistTerm, step: f64) -> Self {
        let (_, hi) = term.support();
        let upper = hi.min(term.mean() + GRID_SD_SPAN * term.sd());
        let len = (upper / step).ceil() as usize + 1;
        let cell_average = |k: usize| {
            let left = (k as f64 - 0.5) * step;
            (0..CELL_SUBSAMPLES)
                .map(|j| term.pdf(left + (j as f64 + 0.5) * step / CELL_SUBSAMPLES as f64))
                .sum::<f64>()
                / CELL_SUBSAMPLES as f64
        };
        let mut values: Vec<f64> = (0..len).map(cell_average).collect();
        let mass: f64 = values.iter().sum::<f64>() * step;
        if mass > 0.0 {
            values.iter_mut().for_each(|v| *v /= mass);
        }
        GridDensity { step, values }
    }

    /// Density of the sum of two independent variables.
    pub fn convolve(&self, other: &GridDensity) -> GridDensity {
        debug_assert_eq!(self.step, other.step);
        let mut out = vec![0.0; self.values.len() + other.values.len() - 1];
        for (i, a) in self.values.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.values.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        out.iter_mut().for_each(|v| *v *= self.step);
        GridDensity {
            step: self.step,
            values: out,
        }
    }

    pub fn of_sum(terms: &[DistTerm], step: f64) -> Self {
        let mut grids = terms.iter().map(|t| GridDensity::of_term(t, step));
        let first = grids.next().expect("at least one term");
        grids.fold(first, |acc, g| acc.convolve(&g))
    }

    /// Linear interpolation; zero outside the grid.
    pub fn density_at(&self, x: f64) -> f64 {
        if !(x >= 0.0) {
            return 0.0;
        }
        let pos = x / self.step;
        let k = pos.floor() as usize;
        if k + 1 >= self.values.len() {
            return if k + 1 == self.values.len() && pos == k as f64 {
                self.values[k]
            } else {
                0.0
            };
        }
        let frac = pos - k as f64;
        self.values[k] * (1.0 - frac) + self.values[k + 1] * frac
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.step
    }
}

/// Density of the target equation node at `value` given the driver state,
/// by discretising each selected branch and convolving.
pub fn conditional_density_oracle(
    net: &Network,
    state: &str,
    value: f64,
    grid_step: f64,
) -> Result<f64> {
    Ok(conditional_density_grid(net, state, grid_step)?.density_at(value))
}

pub fn conditional_density_grid(net: &Network, state: &str, grid_step: f64) -> Result<GridDensity> {
    if !(grid_step > 0.0) {
        return Err(InferenceError::InvalidInput(format!(
            "grid step must be positive, got {grid_step}"
        )));
    }
    Ok(GridDensity::of_sum(&state_branches(net, state)?, grid_step))
}

// ---------------------------------------------------------------------------
// Posterior with an observed equation value

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityMethod {
    Convolution { grid_step: f64 },
    Kde { samples: usize, seed: u64 },
}

impl DensityMethod {
    pub fn convolution() -> Self {
        DensityMethod::Convolution {
            grid_step: DEFAULT_GRID_STEP,
        }
    }

    pub fn kde(seed: u64) -> Self {
        DensityMethod::Kde {
            samples: DEFAULT_KDE_SAMPLES,
            seed,
        }
    }

    pub fn method(&self) -> Method {
        match self {
            DensityMethod::Convolution { .. } => Method::ConvolutionDensity,
            DensityMethod::Kde { .. } => Method::MonteCarloKde,
        }
    }
}

/// Gaussian kernel density estimate at `x`.
pub fn kde_at(samples: &[f64], x: f64, bandwidth: f64) -> f64 {
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    norm * samples
        .iter()
        .map(|s| {
            let z = (x - s) / bandwidth;
            (-0.5 * z * z).exp()
        })
        .sum::<f64>()
}

/// Seed of the clamped run for driver state `state` of a KDE posterior.
fn state_seed(seed: u64, state: usize) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed ^ (state as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Density of the observed value under each driver state.
pub fn state_densities(
    net: &Network,
    value: f64,
    bandwidth: f64,
    method: DensityMethod,
) -> Result<Vec<f64>> {
    let driver = driver_node(net)?;
    driver
        .states()
        .iter()
        .enumerate()
        .map(|(i, state)| match method {
            DensityMethod::Convolution { grid_step } => {
                conditional_density_oracle(net, state, value, grid_step)
            }
            DensityMethod::Kde { samples, seed } => {
                let run = forward_sample(
                    net,
                    samples,
                    state_seed(seed, i),
                    &Evidence::state(driver.id.clone(), state.clone()),
                )?;
                Ok(kde_at(&run.values, value, bandwidth))
            }
        })
        .collect()
}

/// Posterior of every discrete node given the evidence. Without continuous
/// evidence this is exact enumeration; with it, driver states are weighted
/// by the conditional density of the observed value.
pub fn posterior(
    net: &Network,
    evidence: &Evidence,
    method: DensityMethod,
) -> Result<PosteriorReport> {
    ensure_valid(net)?;
    evidence.check(net)?;
    let Some(obs) = &evidence.continuous else {
        return discrete_posterior_exact(net, evidence);
    };
    let target = target_equation(net)?;
    if obs.node != target.id {
        return Err(InferenceError::UnsupportedShape(format!(
            "value evidence is supported on `{}` only",
            target.id
        )));
    }
    let driver = driver_node(net)?;
    let d = net.index_of(&driver.id).expect("driver exists");
    let clamp = evidence.resolve_discrete(net)?;
    let joint = enumerate_joint(net, &clamp)?;
    let densities = state_densities(net, obs.value, obs.bandwidth, method)?;

    let mut weighted: Vec<(Vec<usize>, f64)> = joint
        .into_iter()
        .map(|(states, w)| {
            let density = densities[states[d]];
            (states, w * density)
        })
        .collect();
    let total: f64 = weighted.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(InferenceError::UndefinedPosterior { value: obs.value });
    }
    weighted.iter_mut().for_each(|(_, w)| *w /= total);
    Ok(marginals(net, &weighted, method.method()))
}

/// Posterior given only an observed value of the target equation node.
pub fn posterior_given_equation_evidence(
    net: &Network,
    value: f64,
    bandwidth: f64,
    method: DensityMethod,
) -> Result<PosteriorReport> {
    let target = target_equation(net)?;
    posterior(
        net,
        &Evidence::none().with_value(target.id.clone(), value, bandwidth),
        method,
    )
}

// ---------------------------------------------------------------------------
// Term weights

/// Current weight of a `Choose` term. Triangular branches carry it as their
/// scale; lognormal branches may have it folded into `mu`, so they only
/// decide when the term has no triangular branch.
pub fn term_weight(term: &ChooseTerm) -> Result<f64> {
    let tri: Vec<f64> = term
        .branches
        .iter()
        .filter(|b| matches!(b.family, Family::Triangular { .. }))
        .map(|b| b.scale)
        .collect();
    let candidates = if tri.is_empty() {
        term.branches.iter().map(|b| b.scale).collect()
    } else {
        tri
    };
    let w = candidates[0];
    if candidates
        .iter()
        .any(|&c| (c - w).abs() > 1e-12 * w.abs().max(1.0))
    {
        return Err(InferenceError::UnsupportedShape(format!(
            "cannot infer the weight of Choose on `{}`",
            term.selector
        )));
    }
    Ok(w)
}

/// Rebuilds the target equation with new per-term weights (in term order).
/// Each branch is first reduced to its unit-weight form; lognormals keep
/// their weight folded into `mu`. Zero-weight terms are dropped.
pub fn reweight(net: &Network, weights: &[f64]) -> Result<Network> {
    ensure_valid(net)?;
    let target = target_equation(net)?.id.clone();
    let expr = expr_of(net.require(&target)?);
    if weights.len() != expr.terms.len() {
        return Err(InferenceError::InvalidInput(format!(
            "{} weights given for {} Choose terms",
            weights.len(),
            expr.terms.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(InferenceError::InvalidInput(format!(
            "weight {w} must be non-negative"
        )));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(InferenceError::InvalidInput(
            "at least one weight must be positive".into(),
        ));
    }
    let mut terms = Vec::new();
    for (term, &w) in expr.terms.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let current = term_weight(term)?;
        let branches = term
            .branches
            .iter()
            .map(|b| {
                let unit = DistTerm {
                    scale: b.scale / current,
                    ..*b
                };
                let rescaled = unit.scaled(w)?;
                Ok(match rescaled.family {
                    Family::Lognormal { .. } => rescaled.folded(),
                    Family::Triangular { .. } => rescaled,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        terms.push(ChooseTerm {
            selector: term.selector.clone(),
            branches,
        });
    }
    let nodes = net
        .nodes()
        .iter()
        .map(|n| {
            if n.id == target {
                Node {
                    kind: NodeKind::Equation {
                        expr: EquationExpr {
                            terms: terms.clone(),
                        },
                    },
                    ..n.clone()
                }
            } else {
                n.clone()
            }
        })
        .collect();
    Network::validated(net.name(), nodes).map_err(InferenceError::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub w_promotions: f64,
    pub w_location: f64,
    pub mc_mean: f64,
    pub mc_standard_error: f64,
    pub analytic_mean: f64,
}

/// Re-runs the model for alternative splits of the second and third `Choose`
/// weights, keeping the first term's weight fixed. Each split must sum to
/// the weight the two terms currently share.
pub fn sensitivity_weights(
    net: &Network,
    splits: &[(f64, f64)],
    n: usize,
    seed: u64,
) -> Result<Vec<SensitivityRow>> {
    ensure_valid(net)?;
    let expr = expr_of(target_equation(net)?);
    if expr.terms.len() != 3 {
        return Err(InferenceError::UnsupportedShape(format!(
            "sensitivity analysis needs 3 Choose terms, found {}",
            expr.terms.len()
        )));
    }
    let fixed = term_weight(&expr.terms[0])?;
    let shared = term_weight(&expr.terms[1])? + term_weight(&expr.terms[2])?;
    splits
        .iter()
        .map(|&(w_promotions, w_location)| {
            if (w_promotions + w_location - shared).abs() > 1e-9 {
                return Err(InferenceError::InvalidInput(format!(
                    "split ({w_promotions}, {w_location}) must sum to {shared}"
                )));
            }
            let rebuilt = reweight(net, &[fixed, w_promotions, w_location])?;
            let run = forward_sample(&rebuilt, n, seed, &Evidence::none())?;
            Ok(SensitivityRow {
                w_promotions,
                w_location,
                mc_mean: run.mean(),
                mc_standard_error: run.standard_error(),
                analytic_mean: analytic_mean(&rebuilt)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_network;

    fn promo_model() -> Network {
        parse_network(crate::BUNDLED_MODEL).unwrap()
    }

    #[test]
    fn no_promotion_single_draw_in_support() {
        let net = promo_model();
        for seed in 0..50 {
            let s = forward_sample(&net, 1, seed, &Evidence::state("Promotions", "NoPromotion"))
                .unwrap();
            assert_eq!(s.values.len(), 1);
            assert!((9.6..=24.0).contains(&s.values[0]), "{}", s.values[0]);
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let net = promo_model();
        let a = forward_sample(&net, 2_000, 9, &Evidence::none()).unwrap();
        let b = forward_sample(&net, 2_000, 9, &Evidence::none()).unwrap();
        assert_eq!(a, b);
        let c = forward_sample(&net, 2_000, 10, &Evidence::none()).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn bad_evidence_and_sizes() {
        let net = promo_model();
        assert!(matches!(
            forward_sample(&net, 10, 0, &Evidence::state("Weather", "Sunny")),
            Err(InferenceError::UnknownNode(_))
        ));
        assert!(matches!(
            forward_sample(&net, 10, 0, &Evidence::state("Promotions", "Sunny")),
            Err(InferenceError::UnknownState { .. })
        ));
        assert!(forward_sample(&net, 0, 0, &Evidence::none()).is_err());
    }

    #[test]
    fn ci_edge_cases() {
        let constant = SampleSet {
            n: 3,
            seed: 0,
            target: "S".into(),
            values: vec![4.0; 3],
            discrete_nodes: vec![],
            state_trace: vec![vec![]; 3],
        };
        let ci = equation_mean_ci(&constant).unwrap();
        assert_eq!((ci.mean, ci.lower, ci.upper), (4.0, 4.0, 4.0));
        let single = SampleSet {
            n: 1,
            values: vec![1.0],
            state_trace: vec![vec![]],
            ..constant
        };
        assert!(matches!(
            equation_mean_ci(&single),
            Err(InferenceError::InsufficientData { .. })
        ));
    }

    #[test]
    fn analytic_state_means() {
        let net = promo_model();
        let none = analytic_state_mean(&net, "NoPromotion").unwrap();
        assert!((none - 15.2).abs() < 1e-9);
        let cat = analytic_state_mean(&net, "Catalogue").unwrap();
        // 81.5920 + 2 * 122.4535
        assert!((cat - 326.4991).abs() < 1e-3, "{cat}");
        let instore = analytic_state_mean(&net, "InStore").unwrap();
        // 25.4672 + 2 * 38.2555
        assert!((instore - 101.9783).abs() < 1e-3, "{instore}");
        assert!(analytic_state_mean(&net, "Sometimes").is_err());
    }

    #[test]
    fn exact_posteriors() {
        let net = promo_model();
        let prior = discrete_posterior_exact(&net, &Evidence::none()).unwrap();
        assert_eq!(
            prior.node("Promotions").unwrap().probabilities,
            [0.47, 0.08, 0.45]
        );
        let price = prior.node("Price").unwrap();
        assert_eq!(
            price.states,
            ["Normal", "DiscountedInstore", "DiscountedCatalogue"]
        );
        assert_eq!(price.probabilities, [0.45, 0.08, 0.47]);

        let cat =
            discrete_posterior_exact(&net, &Evidence::state("Promotions", "Catalogue")).unwrap();
        assert_eq!(cat.probability("ProductLocation", "Fixture"), Some(1.0));

        let normal = discrete_posterior_exact(&net, &Evidence::state("Price", "Normal")).unwrap();
        assert_eq!(normal.probability("Promotions", "NoPromotion"), Some(1.0));

        let clash = Evidence::state("Price", "Normal").with_state("Promotions", "Catalogue");
        assert_eq!(
            discrete_posterior_exact(&net, &clash),
            Err(InferenceError::InconsistentEvidence)
        );
    }

    #[test]
    fn grid_density_normalisation() {
        let net = promo_model();
        let none = conditional_density_grid(&net, "NoPromotion", DEFAULT_GRID_STEP).unwrap();
        assert!((none.integral() - 1.0).abs() < 1e-3);
        assert_eq!(none.density_at(175.0), 0.0);
        assert_eq!(
            conditional_density_oracle(&net, "NoPromotion", 175.0, 0.25).unwrap(),
            0.0
        );
        let instore = conditional_density_oracle(&net, "InStore", 175.0, 0.25).unwrap();
        let catalogue = conditional_density_oracle(&net, "Catalogue", 175.0, 0.25).unwrap();
        assert!(instore > catalogue, "{instore} vs {catalogue}");
        assert!(conditional_density_oracle(&net, "InStore", 1.0, 0.0).is_err());
    }

    #[test]
    fn grid_density_matches_closed_form_moments() {
        let net = promo_model();
        for state in ["Catalogue", "InStore", "NoPromotion"] {
            let g = conditional_density_grid(&net, state, DEFAULT_GRID_STEP).unwrap();
            let mean: f64 = g
                .values
                .iter()
                .enumerate()
                .map(|(k, v)| k as f64 * g.step * v)
                .sum::<f64>()
                * g.step;
            let (m, _) = analytic_state_moments(&net, state).unwrap();
            assert!((mean - m).abs() / m < 1e-3, "{state}: {mean} vs {m}");
        }
    }

    #[test]
    fn posterior_needs_some_density() {
        let net = promo_model();
        let err = posterior_given_equation_evidence(&net, -5.0, 5.0, DensityMethod::convolution());
        assert!(matches!(
            err,
            Err(InferenceError::UndefinedPosterior { .. })
        ));
    }

    #[test]
    fn low_sales_point_to_no_promotion() {
        let net = promo_model();
        let report = posterior_given_equation_evidence(
            &net,
            15.0,
            DEFAULT_BANDWIDTH,
            DensityMethod::convolution(),
        )
        .unwrap();
        assert!(report.probability("Promotions", "NoPromotion").unwrap() > 0.99);
        let cat_mean = analytic_state_mean(&net, "Catalogue").unwrap();
        let report = posterior_given_equation_evidence(
            &net,
            cat_mean,
            DEFAULT_BANDWIDTH,
            DensityMethod::convolution(),
        )
        .unwrap();
        assert_eq!(report.argmax("Promotions"), Some("Catalogue"));
        assert_eq!(report.argmax("ProductLocation"), Some("Fixture"));
    }

    #[test]
    fn term_weights_and_reweighting() {
        let net = promo_model();
        let expr = expr_of(target_equation(&net).unwrap());
        let weights: Vec<f64> = expr.terms.iter().map(|t| term_weight(t).unwrap()).collect();
        assert_eq!(weights, [0.25, 0.375, 0.375]);
        let same = reweight(&net, &weights).unwrap();
        for state in ["Catalogue", "InStore", "NoPromotion"] {
            let a = analytic_state_mean(&net, state).unwrap();
            let b = analytic_state_mean(&same, state).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
        let dropped = reweight(&net, &[0.25, 0.75, 0.0]).unwrap();
        assert_eq!(expr_of(target_equation(&dropped).unwrap()).terms.len(), 2);
        assert!(reweight(&net, &[0.25, 0.75]).is_err());
        assert!(reweight(&net, &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn sensitivity_rejects_bad_split() {
        let net = promo_model();
        assert!(matches!(
            sensitivity_weights(&net, &[(0.5, 0.5)], 10, 0),
            Err(InferenceError::InvalidInput(_))
        ));
    }

    #[test]
    fn driver_shape_checks() {
        let two_roots = parse_network(
            r#"network "x" {
  node A { kind: chance; states: [a, b]; prior: [0.5, 0.5]; }
  node B { kind: chance; states: [a, b]; prior: [0.5, 0.5]; }
  node S { kind: equation; parents: [A, B];
    equation: Choose(A, Triangular(0, 1, 2), Triangular(1, 2, 3)) + Choose(B, Triangular(0, 1, 2), Triangular(1, 2, 3)); }
}"#,
        )
        .unwrap();
        assert!(matches!(
            analytic_state_mean(&two_roots, "a"),
            Err(InferenceError::UnsupportedShape(_))
        ));

        let noisy_child = parse_network(
            r#"network "x" {
  node A { kind: chance; states: [a, b]; prior: [0.5, 0.5]; }
  node B { kind: chance; parents: [A]; states: [a, b]; cpt { (a): [0.9, 0.1]; (b): [0.2, 0.8]; } }
  node S { kind: equation; parents: [B];
    equation: Choose(B, Triangular(0, 1, 2), Triangular(1, 2, 3)); }
}"#,
        )
        .unwrap();
        assert!(matches!(
            analytic_state_mean(&noisy_child, "a"),
            Err(InferenceError::UnsupportedShape(_))
        ));
        // exact inference still works on it
        let post = discrete_posterior_exact(&noisy_child, &Evidence::state("B", "a")).unwrap();
        let pa = post.probability("A", "a").unwrap();
        assert!((pa - 0.45 / (0.45 + 0.1)).abs() < 1e-12);
    }
}
