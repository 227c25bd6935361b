//! Simulator front-end for the `edgeqos-core` admission policies: network
//! checkpoint files, the experiment harness, and the configuration used by
//! the `edgeqos` command-line tool.

pub mod checkpoint;
pub mod clock;
pub mod config;
mod error;
pub mod harness;

pub use error::Error;
