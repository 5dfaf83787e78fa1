//! Density-ratio estimation for separating in-distribution proxy samples from
//! out-of-distribution ones.

mod kmeans;
mod kulsif;
mod threshold;

pub use kmeans::{kmeans_fit, kmeans_fit_traced, CentroidModel, KMeansParams};
pub use kulsif::{generate_auxiliary, kulsif_learn, median_heuristic_sigma, KulsifModel};
pub use threshold::{calibrate_threshold, is_id, nearest_rank, Direction, IdThreshold};

use crate::Result;

/// Either estimator, as held by a filtering client.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityModel {
    Centroids(CentroidModel),
    Kulsif(KulsifModel),
}

impl DensityModel {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        match self {
            DensityModel::Centroids(m) => m.score(x),
            DensityModel::Kulsif(m) => m.score(x),
        }
    }

    pub fn direction(&self) -> Direction {
        match self {
            DensityModel::Centroids(_) => Direction::BelowIsId,
            DensityModel::Kulsif(_) => Direction::AboveIsId,
        }
    }
}

/// Analytic byte counts for the learn and estimate phases, matching the
/// asymptotic space terms of each estimator. All reals are 8 bytes.
pub mod cost {
    const REAL: u64 = 8;
    const WORD: u64 = core::mem::size_of::<usize>() as u64;

    /// `K11` (m²), `K12` (n·m) and the α vector (m).
    pub fn kulsif_learn_bytes(n: u64, m: u64) -> u64 {
        REAL * (m * m + n * m + m)
    }

    /// Distances from each of `t` test points to all private and auxiliary
    /// samples.
    pub fn kulsif_estimate_bytes(t: u64, n: u64, m: u64) -> u64 {
        REAL * t * (n + m)
    }

    /// Centroids plus one cluster label per training point.
    pub fn kmeans_learn_bytes(n: u64, c: u64, d: u64) -> u64 {
        REAL * c * d + WORD * n
    }

    /// Centroids plus one boolean verdict per test point.
    pub fn kmeans_estimate_bytes(t: u64, c: u64, d: u64) -> u64 {
        REAL * c * d + t
    }

}
