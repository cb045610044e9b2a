//! Experiment harness around `accbo-core`: tracking checks, hypergradient bias
//! diagnostics, single AccBO runs and ε sweeps against the plain-momentum
//! baseline. Every command reads a JSON config and writes JSON summaries and
//! CSV logs into an output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use commands::Flags;
pub use error::{CliError, CliResult};
