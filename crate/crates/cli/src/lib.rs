//! Library surface of the CLI, exposed so integration tests drive the same
//! configuration parsing and command implementations as the binary.

pub mod commands;
pub mod config;
