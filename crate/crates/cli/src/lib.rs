//! Library side of the `lmp` binary: each subcommand is a function taking a
//! plain argument struct, so tests and the acceptance suite can call them
//! without spawning a process.

pub mod commands;
pub mod error;
pub mod format;
pub mod input;
pub mod output;

pub use error::{CliError, CliResult};
