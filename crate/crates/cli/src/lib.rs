//! Command-line front end for `spdnorm`: square-root benchmarks, gradient
//! checks, synthetic data generation, training, evaluation and the
//! ablation benchmark, with CSV reports and a binary container for
//! datasets and models.

pub mod ablation;
pub mod bench;
pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod manifest;

pub use error::{CliError, CliResult};
