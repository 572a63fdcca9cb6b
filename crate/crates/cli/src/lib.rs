//! Command-line front end: configuration, experiment runs, verification
//! batteries, schedule tables, sweeps and plots.

pub mod cli;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;
pub mod presets;
pub mod runner;
pub mod sweep;
pub mod table1;
pub mod verify;

pub use error::{CliError, CliResult};
