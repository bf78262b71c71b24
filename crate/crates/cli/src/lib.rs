//! Library side of the `regnn` binary: configuration, the synthetic corpus,
//! file formats and command implementations.

pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod synth;

pub use config::RunConfig;
pub use error::{CliError, Result};
