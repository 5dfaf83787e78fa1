//! Host-side tooling around [`fediskit_core`]: IDX file loading, TOML run
//! configuration, a threaded client executor, the scaling and sweep
//! benchmarks, CSV/markdown reports and the `fediskit` command line.

pub mod bench;
pub mod cli;
pub mod config;
mod error;
pub mod exec;
pub mod io;
pub mod report;

pub use error::{Error, Result};
pub use fediskit_core as core;
