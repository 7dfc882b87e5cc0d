//! External surfaces: trace files, the controller bridge and the CLI.

pub mod bridge;
pub mod cli;
pub mod trace;
