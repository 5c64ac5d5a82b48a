//! Configuration, archives and the collect → synth → simulate pipeline
//! behind the `ddvel` command.

pub mod archive;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod seeds;
pub mod verify;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
