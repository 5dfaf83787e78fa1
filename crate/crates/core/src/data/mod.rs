//! Labelled samples, client partitioning and proxy-pool construction.

mod idx;
mod partition;
mod proxy;
mod synthetic;

pub use idx::{encode_idx_images, encode_idx_labels, parse_idx};
pub use partition::{partition, PartitionSpec, Scheme};
pub use proxy::{extract_proxy, ProxyDataset, ProxyFeatures};
pub use synthetic::{gen_gaussian_mixture, random_class_means};

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::index;

use crate::rng;
use crate::{Error, Result};

/// A feature vector with its class id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, label: usize) -> Result<Self> {
        if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "features",
                alloc::format!("non-finite value at position {bad}"),
            ));
        }
        Ok(LabeledSample { features, label })
    }
}

/// One client's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    client_id: usize,
    samples: Vec<LabeledSample>,
    label_set: BTreeSet<usize>,
}

impl ClientDataset {
    pub fn new(client_id: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Infeasible(alloc::format!(
                "client {client_id} would receive no samples"
            )));
        }
        let label_set = samples.iter().map(|s| s.label).collect();
        Ok(ClientDataset {
            client_id,
            samples,
            label_set,
        })
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn label_set(&self) -> &BTreeSet<usize> {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(|s| s.features.as_slice())
    }
}

/// Number of classes implied by the largest label (`max + 1`).
pub fn num_classes(samples: &[LabeledSample]) -> usize {
    samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
}

/// Feature dimension shared by all samples, or an error if they disagree.
pub fn feature_dim(samples: &[LabeledSample]) -> Result<usize> {
    let d = samples.first().map_or(0, |s| s.features.len());
    for s in samples {
        if s.features.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.features.len(),
            });
        }
    }
    Ok(d)
}

/// Uniform subsample of `n` samples (all of them if `n >= len`), preserving
/// input order.
pub fn subsample(samples: &[LabeledSample], n: usize, seed: u64) -> Vec<LabeledSample> {
    if n >= samples.len() {
        return samples.to_vec();
    }
    let mut rng = rng::stream(seed, rng::Purpose::Partition, u64::MAX, 0);
    let mut picked = index::sample(&mut rng, samples.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| samples[i].clone()).collect()
}
