//! Command-line orchestration for the optswitch solvers. Every command
//! writes its artifacts plus a `manifest.toml` into `--out`.

pub mod args;
pub mod commands;
pub mod fit;
pub mod manifest;

pub use args::{Cli, Command};
pub use commands::execute;
