//! Library half of the `nsfold` command-line tool: experiment files,
//! provenance headers and the subcommands.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
