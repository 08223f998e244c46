//! Command-line front end: dataset preparation, mask generation, training,
//! evaluation tables, single-image inference, the four-setting comparison and
//! the HTTP service.

pub mod ablation;
pub mod args;
pub mod commands;
pub mod error;
pub mod eval;
pub mod output;

pub use args::Cli;
pub use commands::run;
pub use error::{CliError, CliResult};
