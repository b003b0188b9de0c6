//! Dual reconstruction networks for single-image super-resolution, with a
//! gradient-sensitive training loss. Pure Rust, CPU only, deterministic.

pub mod bounds;
pub mod cli;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// CLI entry point; returns the process exit code.
pub fn run() -> i32 {
    cli::run_from(std::env::args_os())
}
