//! Federated distillation with client-side density-ratio filtering.
//!
//! Clients hold private labelled data, donate a small fraction of it to a
//! shared proxy pool, and in every round exchange soft predictions on a random
//! slice of that pool. Before sharing, each client runs a two-stage filter:
//! samples it donated itself are always kept, everything else must pass a
//! density-ratio test against the client's private distribution. The server
//! averages whatever survives and clients distill against those averages.
//!
//! Two density-ratio estimators are provided:
//!
//! * [`dre::CentroidModel`]: k-means centroids, score = distance to the
//!   nearest centroid. Linear in the number of samples.
//! * [`dre::KulsifModel`]: kernel unconstrained least-squares importance
//!   fitting. Cubic in the number of auxiliary samples; kept as a baseline.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, timing,
//! configuration and the command-line front end live in the `fediskit` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod diagnostics;
pub mod dre;
mod error;
pub mod learner;
pub mod linalg;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};
