//! The shared proxy pool built from client donations.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::seq::index;

use super::ClientDataset;
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// Pooled proxy samples with per-client provenance.
///
/// True labels are kept for diagnostics only. Protocol code receives a
/// [`ProxyFeatures`] view, which has no way to reach them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyDataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    donors: Vec<usize>,
    contributions: BTreeMap<usize, BTreeSet<usize>>,
}

/// Label-free, read-only view of the proxy pool.
#[derive(Debug, Clone, Copy)]
pub struct ProxyFeatures<'a> {
    features: &'a [Vec<f64>],
}

impl<'a> ProxyFeatures<'a> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Features of proxy sample `index`. Panics if out of range.
    pub fn get(&self, index: usize) -> &'a [f64] {
        &self.features[index]
    }
}

impl ProxyDataset {
    /// Number of pooled samples, `P`.
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn view(&self) -> ProxyFeatures<'_> {
        ProxyFeatures {
            features: &self.features,
        }
    }

    /// Global indices donated by `client_id` (empty if it donated nothing).
    pub fn contributions(&self, client_id: usize) -> BTreeSet<usize> {
        self.contributions
            .get(&client_id)
            .cloned()
            .unwrap_or_default()
    }

    pub fn contributors(&self) -> impl Iterator<Item = (usize, &BTreeSet<usize>)> {
        self.contributions.iter().map(|(c, s)| (*c, s))
    }

    pub fn donor(&self, index: usize) -> usize {
        self.donors[index]
    }

    /// Ground-truth label of a proxy sample. Diagnostics only; the exchange
    /// protocol must never depend on it.
    pub fn diagnostic_label(&self, index: usize) -> usize {
        self.labels[index]
    }
}

/// Samples `⌈alpha·|D_c|⌉` donations per client, uniformly without
/// replacement, and pools them.
///
/// Donations are copies; clients keep every sample they donate. Global
/// indices run over clients in slice order, then donation order.
pub fn extract_proxy(clients: &[ClientDataset], alpha: f64, seed: u64) -> Result<ProxyDataset> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param(
            "alpha",
            alloc::format!("{alpha} not in (0, 1]"),
        ));
    }
    let mut pool = ProxyDataset {
        features: Vec::new(),
        labels: Vec::new(),
        donors: Vec::new(),
        contributions: BTreeMap::new(),
    };
    for client in clients {
        let n = client.len();
        let k = donation_size(n, alpha);
        let mut rng = rng::stream(seed, Purpose::Proxy, client.client_id() as u64, 0);
        let picked = index::sample(&mut rng, n, k);
        let set = pool.contributions.entry(client.client_id()).or_default();
        for i in picked.iter() {
            let s = &client.samples()[i];
            set.insert(pool.features.len());
            pool.features.push(s.features.clone());
            pool.labels.push(s.label);
            pool.donors.push(client.client_id());
        }
    }
    Ok(pool)
}

/// `⌈alpha·n⌉`, computed so that products which are integral in exact
/// arithmetic are not pushed up by representation error.
pub fn donation_size(n: usize, alpha: f64) -> usize {
    let exact = alpha * n as f64;
    let rounded = libm::round(exact);
    let k = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        libm::ceil(exact)
    };
    (k as usize).min(n)
}
