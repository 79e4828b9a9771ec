//! Command-line front end for `ewcert`: certificate and iteration commands,
//! consensus scenarios, and the experiment runners.

pub mod commands;
pub mod experiments;
pub mod io;

pub use commands::{run, Cli, Command, Outcome};
pub use experiments::{run_experiment, ExperimentConfig, ExperimentName};
