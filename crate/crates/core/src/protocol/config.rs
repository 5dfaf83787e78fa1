use alloc::vec::Vec;

use crate::data::{PartitionSpec, Scheme};
use crate::learner::SgdParams;
use crate::{Error, Result};

/// How clients filter proxy samples before sharing predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Centroid-distance filter (the default method).
    KMeans,
    /// Kernel density-ratio filter (baseline).
    Kulsif,
    /// Share predictions on every sampled index.
    None,
    /// No collaboration at all: supervised training only.
    IndLearn,
}

impl FilterMode {
    pub fn name(&self) -> &'static str {
        match self {
            FilterMode::KMeans => "kmeans",
            FilterMode::Kulsif => "kulsif",
            FilterMode::None => "none",
            FilterMode::IndLearn => "indlearn",
        }
    }

    pub fn uses_density_model(&self) -> bool {
        matches!(self, FilterMode::KMeans | FilterMode::Kulsif)
    }
}

/// Where each client's ID threshold comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// Calibrate on the client's own private scores.
    Quantile(f64),
    /// Use this value for every client.
    Raw(f64),
    /// Calibrate, then widen the ID region by `factor` (distances are
    /// multiplied, ratios divided).
    Loosened { quantile: f64, factor: f64 },
}

impl ThresholdRule {
    pub fn quantile(&self) -> Option<f64> {
        match *self {
            ThresholdRule::Quantile(q) | ThresholdRule::Loosened { quantile: q, .. } => Some(q),
            ThresholdRule::Raw(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterRule {
    /// One centroid for strong non-IID, one per held label otherwise.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KulsifParams {
    /// Kernel width; `None` selects the median heuristic.
    pub sigma: Option<f64>,
    pub lambda: f64,
    /// Auxiliary sample count; `None` matches the private sample count.
    pub aux_count: Option<usize>,
    pub aux_margin: f64,
}

impl Default for KulsifParams {
    fn default() -> Self {
        KulsifParams {
            sigma: None,
            lambda: 0.1,
            aux_count: None,
            aux_margin: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerParams {
    /// Hidden-layer widths per client: one plan shared by all, or one per
    /// client.
    pub hidden_plans: Vec<Vec<usize>>,
    pub supervised: SgdParams,
    pub distill: SgdParams,
    pub temperature: f64,
}

impl Default for LearnerParams {
    fn default() -> Self {
        LearnerParams {
            hidden_plans: alloc::vec![alloc::vec![128]],
            supervised: SgdParams {
                epochs: 1,
                lr: 0.3,
                batch_size: 32,
            },
            distill: SgdParams {
                epochs: 3,
                lr: 0.3,
                batch_size: 32,
            },
            temperature: 2.0,
        }
    }
}

impl LearnerParams {
    pub fn plan_for(&self, client: usize) -> &[usize] {
        &self.hidden_plans[client % self.hidden_plans.len()]
    }
}

/// Everything a single experiment needs besides the data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub num_clients: usize,
    pub alpha: f64,
    pub filter_mode: FilterMode,
    pub threshold: ThresholdRule,
    pub clusters: ClusterRule,
    pub rounds: usize,
    /// Proxy indices sampled per round, capped at the proxy size.
    pub proxy_batch: usize,
    pub learner: LearnerParams,
    pub kulsif: KulsifParams,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scheme: Scheme::StrongNonIid,
            num_clients: 10,
            alpha: 0.2,
            filter_mode: FilterMode::KMeans,
            threshold: ThresholdRule::Quantile(0.95),
            clusters: ClusterRule::Auto,
            rounds: 40,
            proxy_batch: DEFAULT_PROXY_BATCH,
            learner: LearnerParams::default(),
            kulsif: KulsifParams::default(),
            kmeans_max_iters: 100,
            kmeans_tol: 1e-6,
            seed: 0,
        }
    }
}

pub const DEFAULT_PROXY_BATCH: usize = 256;

impl ExperimentConfig {
    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            scheme: self.scheme,
            num_clients: self.num_clients,
            seed: crate::rng::derive_seed(self.seed, crate::rng::Purpose::Partition, 0, 0),
        }
    }

    pub fn proxy_batch_for(&self, proxy_len: usize) -> usize {
        self.proxy_batch.min(proxy_len)
    }

    /// Range checks that do not need the data, plus the label-count
    /// feasibility of the partition.
    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param(
                "alpha",
                alloc::format!("{} not in (0, 1]", self.alpha),
            ));
        }
        match self.threshold {
            ThresholdRule::Quantile(q) | ThresholdRule::Loosened { quantile: q, .. }
                if !(q > 0.0 && q < 1.0) =>
            {
                return Err(Error::param(
                    "quantile",
                    alloc::format!("{q} not in (0, 1)"),
                ));
            }
            ThresholdRule::Loosened { factor, .. } if !(factor > 0.0 && factor.is_finite()) => {
                return Err(Error::param("factor", "must be positive"));
            }
            ThresholdRule::Raw(t) if !t.is_finite() => {
                return Err(Error::param("threshold", "must be finite"));
            }
            _ => {}
        }
        if let ClusterRule::Fixed(0) = self.clusters {
            return Err(Error::param("clusters", "must be at least 1"));
        }
        if self.proxy_batch == 0 {
            return Err(Error::param("proxy_batch", "must be at least 1"));
        }
        let plans = self.learner.hidden_plans.len();
        if plans != 1 && plans != self.num_clients {
            return Err(Error::param(
                "hidden_plans",
                alloc::format!("{plans} plans for {} clients", self.num_clients),
            ));
        }
        if self.learner.hidden_plans.iter().flatten().any(|&w| w == 0) {
            return Err(Error::param(
                "hidden_plans",
                "layer widths must be positive",
            ));
        }
        if !(self.learner.temperature > 0.0 && self.learner.temperature.is_finite()) {
            return Err(Error::param("temperature", "must be positive"));
        }
        for (name, p) in [
            ("lr", &self.learner.supervised),
            ("distill_lr", &self.learner.distill),
        ] {
            if !(p.lr > 0.0 && p.lr.is_finite()) {
                return Err(Error::param(name, "must be positive"));
            }
            if p.batch_size == 0 {
                return Err(Error::param("batch_size", "must be at least 1"));
            }
        }
        if !(self.kulsif.lambda > 0.0) {
            return Err(Error::param("lambda", "must be positive"));
        }
        if let Some(s) = self.kulsif.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::param("sigma", "must be positive"));
            }
        }
        if self.kulsif.aux_count == Some(0) {
            return Err(Error::param("aux_count", "must be at least 1"));
        }
        if !(self.kmeans_tol >= 0.0) {
            return Err(Error::param("kmeans_tol", "must be non-negative"));
        }
        self.partition_spec().validate(num_labels)
    }
}
