//! Command-line shell around `led-core`: run configuration, PNG and
//! checkpoint files, and the train/degrade/enhance/refine/eval/phantom
//! commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{run, Outcome};
pub use config::{Mode, Overrides, RunConfig};
pub use error::CliError;
