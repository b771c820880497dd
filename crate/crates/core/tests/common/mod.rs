#![allow(dead_code)]

use std::collections::BTreeMap;

use promo_bn::network::{parent_combinations, Cpt, DetMap};
use promo_bn::{ChooseTerm, DistTerm, EquationExpr, Network, Node};
use proptest::prelude::*;

/// Names that exercise quoting: plain identifiers, keywords and names with
/// spaces or punctuation.
const NAMES: &[&str] = &[
    "A",
    "Weather",
    "node",
    "Promo_Type",
    "store 1",
    "price-band",
    "x2",
    "states",
    "Choose",
    "déjà",
];

const STATE_NAMES: &[&str] = &["lo", "mid", "hi", "on", "off", "cpt", "n/a", "big one"];

/// Probability vector of `arity` entries on a 4-decimal grid, every entry
/// at least 0.0001.
pub fn grid_row(arity: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::btree_set(1u32..10_000, arity - 1).prop_map(move |cuts| {
        let mut points: Vec<u32> = std::iter::once(0)
            .chain(cuts)
            .chain(std::iter::once(10_000))
            .collect();
        points.dedup();
        points
            .windows(2)
            .map(|w| f64::from(w[1] - w[0]) / 10_000.0)
            .collect()
    })
}

fn grid(lo: i32, hi: i32) -> impl Strategy<Value = f64> {
    (lo..hi).prop_map(|k| f64::from(k) / 10_000.0)
}

pub fn term() -> impl Strategy<Value = DistTerm> {
    let tri = (
        grid(0, 500_000),
        grid(1, 200_000),
        grid(1, 200_000),
        grid(1, 30_000),
    )
        .prop_map(|(min, a, b, scale)| {
            let mode = min + a;
            DistTerm::triangular(min, mode, mode + b)
                .unwrap()
                .scaled(scale)
                .unwrap()
        });
    let logn = (grid(-20_000, 60_000), grid(100, 15_000), grid(1, 30_000)).prop_map(
        |(mu, sigma, scale)| {
            DistTerm::lognormal(mu, sigma)
                .unwrap()
                .scaled(scale)
                .unwrap()
        },
    );
    prop_oneof![tri, logn]
}

#[derive(Debug, Clone)]
struct Plan {
    arities: Vec<usize>,
    parents: Vec<Vec<usize>>,
    deterministic: Vec<bool>,
}

fn plan(max_nodes: usize) -> impl Strategy<Value = Plan> {
    (1..=max_nodes)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(2usize..=4, n),
                proptest::collection::vec(
                    proptest::collection::vec(any::<prop::sample::Index>(), 0..=2),
                    n,
                ),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
        .prop_map(|(arities, raw_parents, det)| {
            let parents: Vec<Vec<usize>> = raw_parents
                .iter()
                .enumerate()
                .map(|(i, picks)| {
                    if i == 0 {
                        return Vec::new();
                    }
                    let mut p: Vec<usize> = picks.iter().map(|ix| ix.index(i)).collect();
                    p.sort_unstable();
                    p.dedup();
                    p
                })
                .collect();
            let deterministic = det
                .iter()
                .zip(&parents)
                .map(|(d, p)| *d && !p.is_empty())
                .collect();
            Plan {
                arities,
                parents,
                deterministic,
            }
        })
}

/// Random valid network: discrete nodes in a DAG followed by one equation
/// leaf with a `Choose` term per selected discrete node.
pub fn network(max_nodes: usize) -> impl Strategy<Value = Network> {
    plan(max_nodes).prop_flat_map(|plan| {
        let n = plan.arities.len();
        let rows: Vec<BoxedStrategy<Vec<Vec<f64>>>> = (0..n)
            .map(|i| {
                let combos: usize = plan.parents[i].iter().map(|&p| plan.arities[p]).product();
                proptest::collection::vec(grid_row(plan.arities[i]), combos).boxed()
            })
            .collect();
        let maps: Vec<BoxedStrategy<Vec<usize>>> = (0..n)
            .map(|i| {
                let combos: usize = plan.parents[i].iter().map(|&p| plan.arities[p]).product();
                proptest::collection::vec(0..plan.arities[i], combos).boxed()
            })
            .collect();
        let selectors = proptest::collection::btree_set(0..n, 1..=n.min(3));
        let terms = proptest::collection::vec(term(), 12);
        (
            Just(plan),
            rows,
            maps,
            selectors,
            terms,
            proptest::sample::subsequence(NAMES.to_vec(), n + 1),
        )
            .prop_map(|(plan, rows, maps, selectors, terms, names)| {
                build(&plan, rows, maps, selectors, terms, &names)
            })
    })
}

fn build(
    plan: &Plan,
    rows: Vec<Vec<Vec<f64>>>,
    maps: Vec<Vec<usize>>,
    selectors: std::collections::BTreeSet<usize>,
    terms: Vec<DistTerm>,
    names: &[&str],
) -> Network {
    let n = plan.arities.len();
    let mut nodes = Vec::new();
    for i in 0..n {
        let states: Vec<&str> = STATE_NAMES[..plan.arities[i]].to_vec();
        let parents: Vec<&str> = plan.parents[i].iter().map(|&p| names[p]).collect();
        let radices: Vec<usize> = plan.parents[i].iter().map(|&p| plan.arities[p]).collect();
        let combos = parent_combinations(&radices);
        let node = if parents.is_empty() {
            Node::chance_root(names[i], &states, rows[i][0].clone())
        } else if plan.deterministic[i] {
            let map: DetMap = combos.into_iter().zip(maps[i].iter().copied()).collect();
            Node::deterministic(names[i], &parents, &states, map)
        } else {
            let cpt: Cpt = combos
                .into_iter()
                .zip(rows[i].iter().cloned())
                .collect::<BTreeMap<_, _>>();
            Node::chance(names[i], &parents, &states, cpt)
        };
        nodes.push(node);
    }
    let mut pool = terms.into_iter().cycle();
    let choose: Vec<ChooseTerm> = selectors
        .iter()
        .map(|&s| {
            ChooseTerm::new(
                names[s],
                (0..plan.arities[s]).map(|_| pool.next().unwrap()).collect(),
            )
        })
        .collect();
    let parents: Vec<&str> = selectors.iter().map(|&s| names[s]).collect();
    nodes.push(Node::equation(
        names[n],
        &parents,
        EquationExpr::new(choose),
    ));
    Network::validated("random net", nodes).expect("generator builds valid networks")
}
