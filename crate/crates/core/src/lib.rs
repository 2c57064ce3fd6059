// `!(x > 0.0)` is used on purpose: it also rejects NaN. Index loops mirror
// the quadrature formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod coefficients;
pub mod config;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod grid;
pub mod operators;
pub mod quasiregular;
pub mod solver;
pub mod verification;
