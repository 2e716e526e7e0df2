//! Experiment driver and command-line front end for certified coreset selection.

// `!(x > 0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod experiment;

pub use error::{CliError, Result};
