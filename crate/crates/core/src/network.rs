//! Graph model for hybrid Bayesian networks.
//!
//! A [`Network`] is an ordered list of named [`Node`]s. Edges are not stored
//! separately: they are derived from each node's `parents` list. Discrete
//! nodes (chance and deterministic) carry ordered state names, and the
//! declaration order of those states is significant: it is the position used
//! by `Choose` branches in equation nodes.
//!
//! Conditional tables are keyed by parent *state indices* in parent order, so
//! a node with parents `[A, B]` has one row per `(a, b)` pair. Root chance
//! nodes keep their prior under the empty key.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::dist::DistTerm;

/// Absolute tolerance for probability vectors summing to one.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

/// Probability rows keyed by parent-state tuple. Roots use the empty tuple.
pub type Cpt = BTreeMap<Vec<usize>, Vec<f64>>;

/// Deterministic mapping from parent-state tuple to one own state.
pub type DetMap = BTreeMap<Vec<usize>, usize>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("network contains a directed cycle through {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` has no state `{state}`")]
    UnknownState { node: String, state: String },
    #[error("node `{node}` is not a deterministic node")]
    NotDeterministic { node: String },
    #[error("deterministic node `{node}` has no mapping for parent states {parents:?}")]
    MissingMapping { node: String, parents: Vec<usize> },
    #[error("invalid network:\n{0}")]
    Invalid(ValidationReport),
}

/// One equation-node summand: `Choose(selector, branch_0, branch_1, ...)`.
///
/// Branch `i` is used when the selector is in its `i`-th declared state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChooseTerm {
    pub selector: String,
    pub branches: Vec<DistTerm>,
}

impl ChooseTerm {
    pub fn new(selector: impl Into<String>, branches: Vec<DistTerm>) -> Self {
        ChooseTerm {
            selector: selector.into(),
            branches,
        }
    }
}

/// Sum of `Choose` terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EquationExpr {
    pub terms: Vec<ChooseTerm>,
}

impl EquationExpr {
    pub fn new(terms: Vec<ChooseTerm>) -> Self {
        EquationExpr { terms }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Chance { states: Vec<String>, cpt: Cpt },
    Deterministic { states: Vec<String>, map: DetMap },
    Equation { expr: EquationExpr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub parents: Vec<String>,
    pub kind: NodeKind,
}

impl Node {
    /// A root chance node with the given prior.
    pub fn chance_root(id: impl Into<String>, states: &[&str], prior: Vec<f64>) -> Self {
        let mut cpt = Cpt::new();
        cpt.insert(Vec::new(), prior);
        Node {
            id: id.into(),
            parents: Vec::new(),
            kind: NodeKind::Chance {
                states: owned(states),
                cpt,
            },
        }
    }

    pub fn chance(id: impl Into<String>, parents: &[&str], states: &[&str], cpt: Cpt) -> Self {
        Node {
            id: id.into(),
            parents: owned(parents),
            kind: NodeKind::Chance {
                states: owned(states),
                cpt,
            },
        }
    }

    pub fn deterministic(
        id: impl Into<String>,
        parents: &[&str],
        states: &[&str],
        map: DetMap,
    ) -> Self {
        Node {
            id: id.into(),
            parents: owned(parents),
            kind: NodeKind::Deterministic {
                states: owned(states),
                map,
            },
        }
    }

    pub fn equation(id: impl Into<String>, parents: &[&str], expr: EquationExpr) -> Self {
        Node {
            id: id.into(),
            parents: owned(parents),
            kind: NodeKind::Equation { expr },
        }
    }

    /// Ordered state names; empty for equation nodes.
    pub fn states(&self) -> &[String] {
        match &self.kind {
            NodeKind::Chance { states, .. } | NodeKind::Deterministic { states, .. } => states,
            NodeKind::Equation { .. } => &[],
        }
    }

    pub fn state_index(&self, state: &str) -> Option<usize> {
        self.states().iter().position(|s| s == state)
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self.kind, NodeKind::Equation { .. })
    }

    pub fn is_root(&self) -> bool {
        self.parents.is_empty()
    }

    /// Prior of a root chance node.
    pub fn prior(&self) -> Option<&[f64]> {
        match &self.kind {
            NodeKind::Chance { cpt, .. } if self.parents.is_empty() => {
                cpt.get(&Vec::new()).map(Vec::as_slice)
            }
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            NodeKind::Chance { .. } => "chance",
            NodeKind::Deterministic { .. } => "deterministic",
            NodeKind::Equation { .. } => "equation",
        }
    }
}

fn owned(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| (*s).to_owned()).collect()
}

/// Returns the state a deterministic node takes for the given parent states.
pub fn resolve_deterministic(node: &Node, parent_states: &[usize]) -> Result<usize, ModelError> {
    match &node.kind {
        NodeKind::Deterministic { map, .. } => {
            map.get(parent_states)
                .copied()
                .ok_or_else(|| ModelError::MissingMapping {
                    node: node.id.clone(),
                    parents: parent_states.to_vec(),
                })
        }
        _ => Err(ModelError::NotDeterministic {
            node: node.id.clone(),
        }),
    }
}

/// All parent-state tuples for the given radices, first parent most significant.
pub fn parent_combinations(radices: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = radices.iter().product();
    let mut out = Vec::with_capacity(total);
    if radices.contains(&0) {
        return out;
    }
    let mut current = vec![0; radices.len()];
    for _ in 0..total {
        out.push(current.clone());
        for pos in (0..radices.len()).rev() {
            current[pos] += 1;
            if current[pos] < radices[pos] {
                break;
            }
            current[pos] = 0;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateNode,
    UnknownParent,
    DuplicateParent,
    NonDiscreteParent,
    Cycle,
    EquationHasChildren,
    TooFewStates,
    DuplicateState,
    BadProbabilities,
    MissingRow,
    ExtraRow,
    BadMapping,
    EmptyEquation,
    BadSelector,
    ArityMismatch,
    InvalidTerm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub node: Option<String>,
    pub kind: ViolationKind,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(node) => write!(f, "node `{}`: {}", node, self.reason),
            None => write!(f, "{}", self.reason),
        }
    }
}

/// Every invariant violation found in a network. Empty means valid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, node: Option<&str>, kind: ViolationKind, reason: impl Into<String>) {
        self.violations.push(Violation {
            node: node.map(str::to_owned),
            kind,
            reason: reason.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// A hybrid Bayesian network.
///
/// Construction never fails; call [`Network::validate`] (or
/// [`Network::validated`]) before handing the network to inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    name: String,
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
}

impl Network {
    pub fn new(name: impl Into<String>, nodes: Vec<Node>) -> Self {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            index.entry(node.id.clone()).or_insert(i);
        }
        Network {
            name: name.into(),
            nodes,
            index,
        }
    }

    /// Builds the network and rejects it unless it passes validation.
    pub fn validated(name: impl Into<String>, nodes: Vec<Node>) -> Result<Self, ModelError> {
        let net = Network::new(name, nodes);
        let report = net.validate();
        if report.is_valid() {
            Ok(net)
        } else {
            Err(ModelError::Invalid(report))
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn into_nodes(self) -> Vec<Node> {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.index_of(id).map(|i| &self.nodes[i])
    }

    pub fn require(&self, id: &str) -> Result<&Node, ModelError> {
        self.node(id)
            .ok_or_else(|| ModelError::UnknownNode(id.to_owned()))
    }

    /// Derived `(parent, child)` edges, skipping unresolved parents.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (child, node) in self.nodes.iter().enumerate() {
            for parent in &node.parents {
                if let Some(p) = self.index_of(parent) {
                    edges.push((p, child));
                }
            }
        }
        edges
    }

    pub fn children(&self, id: &str) -> Vec<&Node> {
        self.nodes
            .iter()
            .filter(|n| n.parents.iter().any(|p| p == id))
            .collect()
    }

    pub fn equation_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| !n.is_discrete())
    }

    pub fn discrete_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_discrete())
    }

    /// Node ids with every parent before its children. Ties are broken by
    /// declaration order, so the result is deterministic.
    pub fn topological_order(&self) -> Result<Vec<&str>, ModelError> {
        Ok(self
            .topological_indices()?
            .into_iter()
            .map(|i| self.nodes[i].id.as_str())
            .collect())
    }

    pub(crate) fn topological_indices(&self) -> Result<Vec<usize>, ModelError> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for (p, c) in self.edges() {
            indegree[c] += 1;
            children[p].push(c);
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(next) = ready.pop_first() {
            order.push(next);
            for &c in &children[next] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(ModelError::Cycle(
                self.cycle_members()
                    .into_iter()
                    .map(|i| self.nodes[i].id.clone())
                    .collect(),
            ))
        }
    }

    /// Indices of nodes that lie on at least one directed cycle.
    fn cycle_members(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut children = vec![Vec::new(); n];
        for (p, c) in self.edges() {
            children[p].push(c);
        }
        (0..n)
            .filter(|&start| {
                let mut seen = vec![false; n];
                let mut stack = children[start].clone();
                while let Some(v) = stack.pop() {
                    if v == start {
                        return true;
                    }
                    if !std::mem::replace(&mut seen[v], true) {
                        stack.extend(children[v].iter().copied());
                    }
                }
                false
            })
            .collect()
    }

    /// Checks every structural and numerical invariant, reporting all
    /// violations rather than stopping at the first.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();

        let mut seen = HashMap::new();
        for node in &self.nodes {
            if seen.insert(node.id.as_str(), ()).is_some() {
                report.push(
                    Some(&node.id),
                    ViolationKind::DuplicateNode,
                    "duplicate node name",
                );
            }
        }

        for node in &self.nodes {
            self.validate_parents(node, &mut report);
        }

        let cycle = self.cycle_members();
        if !cycle.is_empty() {
            let names: Vec<&str> = cycle.iter().map(|&i| self.nodes[i].id.as_str()).collect();
            report.push(
                Some(names[0]),
                ViolationKind::Cycle,
                format!("directed cycle through {}", names.join(", ")),
            );
        }

        for node in &self.nodes {
            match &node.kind {
                NodeKind::Chance { states, cpt } => {
                    self.validate_states(node, states, &mut report);
                    self.validate_cpt(node, states.len(), cpt, &mut report);
                }
                NodeKind::Deterministic { states, map } => {
                    self.validate_states(node, states, &mut report);
                    self.validate_map(node, states.len(), map, &mut report);
                }
                NodeKind::Equation { expr } => {
                    let children = self.children(&node.id);
                    if !children.is_empty() {
                        report.push(
                            Some(&node.id),
                            ViolationKind::EquationHasChildren,
                            format!("equation node has child `{}`", children[0].id),
                        );
                    }
                    self.validate_expr(node, expr, &mut report);
                }
            }
        }
        report
    }

    fn validate_parents(&self, node: &Node, report: &mut ValidationReport) {
        let mut seen = BTreeSet::new();
        for parent in &node.parents {
            if !seen.insert(parent.as_str()) {
                report.push(
                    Some(&node.id),
                    ViolationKind::DuplicateParent,
                    format!("parent `{parent}` listed twice"),
                );
            }
            match self.node(parent) {
                None => report.push(
                    Some(&node.id),
                    ViolationKind::UnknownParent,
                    format!("unknown parent `{parent}`"),
                ),
                Some(p) if !p.is_discrete() && node.is_discrete() => report.push(
                    Some(&node.id),
                    ViolationKind::NonDiscreteParent,
                    format!("parent `{parent}` is an equation node"),
                ),
                _ => {}
            }
        }
    }

    fn validate_states(&self, node: &Node, states: &[String], report: &mut ValidationReport) {
        if states.len() < 2 {
            report.push(
                Some(&node.id),
                ViolationKind::TooFewStates,
                format!("needs at least 2 states, has {}", states.len()),
            );
        }
        let mut seen = BTreeSet::new();
        for s in states {
            if !seen.insert(s.as_str()) {
                report.push(
                    Some(&node.id),
                    ViolationKind::DuplicateState,
                    format!("duplicate state `{s}`"),
                );
            }
        }
    }

    /// Radices of the node's parents, or `None` when some parent is unusable
    /// (already reported elsewhere).
    fn parent_radices(&self, node: &Node) -> Option<Vec<usize>> {
        node.parents
            .iter()
            .map(|p| {
                self.node(p)
                    .filter(|n| n.is_discrete())
                    .map(|n| n.states().len())
            })
            .collect()
    }

    fn validate_cpt(&self, node: &Node, arity: usize, cpt: &Cpt, report: &mut ValidationReport) {
        let Some(radices) = self.parent_radices(node) else {
            return;
        };
        let combos = parent_combinations(&radices);
        for combo in &combos {
            match cpt.get(combo) {
                None => report.push(
                    Some(&node.id),
                    ViolationKind::MissingRow,
                    if combo.is_empty() {
                        "root chance node has no prior".to_owned()
                    } else {
                        format!("no probability row for parent states {combo:?}")
                    },
                ),
                Some(row) => {
                    if let Err(reason) = check_distribution(row, arity) {
                        report.push(Some(&node.id), ViolationKind::BadProbabilities, reason);
                    }
                }
            }
        }
        for key in cpt.keys() {
            if !is_valid_combo(key, &radices) {
                report.push(
                    Some(&node.id),
                    ViolationKind::ExtraRow,
                    format!("row for parent states {key:?} does not match the parents"),
                );
            }
        }
    }

    fn validate_map(&self, node: &Node, arity: usize, map: &DetMap, report: &mut ValidationReport) {
        let Some(radices) = self.parent_radices(node) else {
            return;
        };
        for combo in parent_combinations(&radices) {
            match map.get(&combo) {
                None => report.push(
                    Some(&node.id),
                    ViolationKind::MissingRow,
                    format!("deterministic map has no entry for parent states {combo:?}"),
                ),
                Some(&s) if s >= arity => report.push(
                    Some(&node.id),
                    ViolationKind::BadMapping,
                    format!("maps {combo:?} to state index {s}, node has {arity} states"),
                ),
                Some(_) => {}
            }
        }
        for key in map.keys() {
            if !is_valid_combo(key, &radices) {
                report.push(
                    Some(&node.id),
                    ViolationKind::ExtraRow,
                    format!("map entry {key:?} does not match the parents"),
                );
            }
        }
    }

    fn validate_expr(&self, node: &Node, expr: &EquationExpr, report: &mut ValidationReport) {
        if expr.terms.is_empty() {
            report.push(
                Some(&node.id),
                ViolationKind::EmptyEquation,
                "equation has no terms",
            );
        }
        for term in &expr.terms {
            if !node.parents.iter().any(|p| p == &term.selector) {
                report.push(
                    Some(&node.id),
                    ViolationKind::BadSelector,
                    format!("Choose selector `{}` is not a parent", term.selector),
                );
            } else if let Some(sel) = self.node(&term.selector).filter(|n| n.is_discrete()) {
                let arity = sel.states().len();
                if term.branches.len() != arity {
                    report.push(
                        Some(&node.id),
                        ViolationKind::ArityMismatch,
                        format!(
                            "arity: Choose on `{}` has {} branches but the selector has {} states",
                            term.selector,
                            term.branches.len(),
                            arity
                        ),
                    );
                }
            }
            for branch in &term.branches {
                if let Err(e) = branch.validate() {
                    report.push(Some(&node.id), ViolationKind::InvalidTerm, e.to_string());
                }
            }
        }
    }
}

fn is_valid_combo(key: &[usize], radices: &[usize]) -> bool {
    key.len() == radices.len() && key.iter().zip(radices).all(|(k, r)| k < r)
}

/// Checks length, range and normalisation of a probability vector.
pub fn check_distribution(row: &[f64], arity: usize) -> Result<(), String> {
    if row.len() != arity {
        return Err(format!(
            "probability row has {} entries, expected {}",
            row.len(),
            arity
        ));
    }
    if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("probability {p} outside [0, 1]"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(format!("probabilities sum to {sum}, not 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DistTerm;

    pub(crate) fn promo_model() -> Network {
        crate::parser::parse_network(crate::BUNDLED_MODEL).unwrap()
    }

    fn two_state_root(id: &str) -> Node {
        Node::chance_root(id, &["a", "b"], vec![0.5, 0.5])
    }

    fn copy_of(id: &str, parent: &str) -> Node {
        let map = DetMap::from([(vec![0], 0), (vec![1], 1)]);
        Node::deterministic(id, &[parent], &["a", "b"], map)
    }

    #[test]
    fn bundled_model_is_valid() {
        let net = promo_model();
        assert_eq!(net.len(), 4);
        let report = net.validate();
        assert!(report.is_valid(), "{report}");
        assert_eq!(
            net.node("Promotions").unwrap().prior().unwrap(),
            &[0.47, 0.08, 0.45]
        );
    }

    #[test]
    fn single_state_root_is_rejected() {
        let net = Network::new("n", vec![Node::chance_root("A", &["only"], vec![1.0])]);
        let report = net.validate();
        assert_eq!(report.len(), 1, "{report}");
        assert!(report.has(ViolationKind::TooFewStates));
    }

    #[test]
    fn two_cycle_is_reported() {
        let net = Network::new("n", vec![copy_of("A", "B"), copy_of("B", "A")]);
        let report = net.validate();
        assert!(report.has(ViolationKind::Cycle), "{report}");
        assert!(matches!(net.topological_order(), Err(ModelError::Cycle(_))));
    }

    #[test]
    fn unknown_parent_and_bad_prior() {
        let net = Network::new(
            "n",
            vec![
                Node::chance_root("A", &["x", "y"], vec![0.6, 0.6]),
                copy_of("B", "Missing"),
            ],
        );
        let report = net.validate();
        assert!(report.has(ViolationKind::BadProbabilities));
        assert!(report.has(ViolationKind::UnknownParent));
    }

    #[test]
    fn incomplete_deterministic_map() {
        let map = DetMap::from([(vec![0], 0)]);
        let net = Network::new(
            "n",
            vec![
                two_state_root("A"),
                Node::deterministic("B", &["A"], &["a", "b"], map),
            ],
        );
        assert!(net.validate().has(ViolationKind::MissingRow));
        let b = net.node("B").unwrap();
        assert_eq!(resolve_deterministic(b, &[0]).unwrap(), 0);
        assert!(matches!(
            resolve_deterministic(b, &[1]),
            Err(ModelError::MissingMapping { .. })
        ));
    }

    #[test]
    fn equation_with_children_and_bad_arity() {
        let tri = DistTerm::triangular(0.0, 1.0, 2.0).unwrap();
        let expr = EquationExpr::new(vec![ChooseTerm::new("A", vec![tri])]);
        let net = Network::new(
            "n",
            vec![
                two_state_root("A"),
                Node::equation("S", &["A"], expr),
                copy_of("C", "S"),
            ],
        );
        let report = net.validate();
        assert!(report.has(ViolationKind::EquationHasChildren), "{report}");
        assert!(report.has(ViolationKind::ArityMismatch));
        assert!(report.has(ViolationKind::NonDiscreteParent));
    }

    #[test]
    fn selector_must_be_parent() {
        let tri = DistTerm::triangular(0.0, 1.0, 2.0).unwrap();
        let expr = EquationExpr::new(vec![ChooseTerm::new("A", vec![tri, tri])]);
        let net = Network::new(
            "n",
            vec![two_state_root("A"), Node::equation("S", &[], expr)],
        );
        assert!(net.validate().has(ViolationKind::BadSelector));
    }

    #[test]
    fn topological_orders() {
        assert_eq!(
            promo_model().topological_order().unwrap(),
            ["Promotions", "Price", "ProductLocation", "Sales"]
        );
        let single = Network::new("n", vec![two_state_root("A")]);
        assert_eq!(single.topological_order().unwrap(), ["A"]);
        // declared out of order on purpose
        let chain = Network::new(
            "n",
            vec![copy_of("C", "B"), copy_of("B", "A"), two_state_root("A")],
        );
        assert!(chain.validate().is_valid());
        assert_eq!(chain.topological_order().unwrap(), ["A", "B", "C"]);
    }

    #[test]
    fn price_and_location_follow_promotions() {
        let net = promo_model();
        let promotions = net.node("Promotions").unwrap();
        let price = net.node("Price").unwrap();
        let location = net.node("ProductLocation").unwrap();
        let catalogue = promotions.state_index("Catalogue").unwrap();
        let none = promotions.state_index("NoPromotion").unwrap();

        let p = resolve_deterministic(price, &[catalogue]).unwrap();
        assert_eq!(price.states()[p], "DiscountedCatalogue");
        let l = resolve_deterministic(location, &[none]).unwrap();
        assert_eq!(location.states()[l], "Gondola_NP");
        let l = resolve_deterministic(location, &[catalogue]).unwrap();
        assert_eq!(location.states()[l], "Fixture");
    }

    #[test]
    fn identity_map() {
        let net = Network::new("n", vec![two_state_root("A"), copy_of("B", "A")]);
        let b = net.node("B").unwrap();
        for s in 0..2 {
            assert_eq!(resolve_deterministic(b, &[s]).unwrap(), s);
        }
        assert!(matches!(
            resolve_deterministic(net.node("A").unwrap(), &[]),
            Err(ModelError::NotDeterministic { .. })
        ));
    }

    #[test]
    fn combinations_are_lexicographic() {
        assert_eq!(parent_combinations(&[]), vec![Vec::<usize>::new()]);
        assert_eq!(
            parent_combinations(&[2, 3]),
            vec![
                vec![0, 0],
                vec![0, 1],
                vec![0, 2],
                vec![1, 0],
                vec![1, 1],
                vec![1, 2]
            ]
        );
    }
}
