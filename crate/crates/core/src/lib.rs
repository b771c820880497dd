//! Hybrid discrete/continuous Bayesian networks for promotional sales
//! forecasting.
//!
//! The crate is organised bottom-up:
//!
//! * [`network`] holds the graph model (chance, deterministic and equation
//!   nodes) and its structural validation.
//! * [`dist`] provides the scaled triangular / lognormal terms used by
//!   equation nodes, plus fitting and outlier helpers.
//! * [`parser`] reads and writes the `.bnet` text format.
//! * [`inference`] runs seeded forward sampling, exact discrete posteriors,
//!   and posteriors given an observed sales value.
//! * [`eval`] ingests weekly sales data and reproduces the forecast-accuracy
//!   comparison table.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod eval;
pub mod inference;
pub mod network;
pub mod parser;
pub mod rng;

pub use dist::{DistTerm, Family};
pub use inference::{Evidence, PosteriorReport, SampleSet};
pub use network::{ChooseTerm, EquationExpr, Network, Node, NodeKind};
pub use parser::{parse_network, serialize_network, ParseError};

/// Source of the bundled promotional-sales model (`fixtures/fig2.bnet`).
pub const BUNDLED_MODEL: &str = include_str!("../../../fixtures/fig2.bnet");
