// Negated comparisons are the NaN-rejecting validity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod lossmetrics;
pub mod model;
pub mod synthgen;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
