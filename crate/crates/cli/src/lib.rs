//! Command-line tool and HTTP service for the promotional sales network.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod service;
