//! TOML run configuration.
//!
//! A config is one document of top-level scalars plus optional tables for
//! the dataset, threshold, learner, estimators, benchmark and sweep. Every
//! key has a default, so an empty document is a valid (synthetic) run.
//! Unknown keys are rejected. Relative dataset paths resolve against the
//! directory holding the config file.
//!
//! ```toml
//! num_clients = 10
//! scheme = "strong"
//! filter_mode = "kmeans"
//!
//! [dataset]
//! kind = "idx"
//! train_images = "data/train-images-idx3-ubyte"
//! train_labels = "data/train-labels-idx1-ubyte"
//! test_images = "data/test-images-idx3-ubyte"
//! test_labels = "data/test-labels-idx1-ubyte"
//!
//! [threshold]
//! quantile = 0.95
//!
//! [learner]
//! hidden = [[128], [64, 32]]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fediskit_core::data::{gen_gaussian_mixture, random_class_means, LabeledSample, Scheme};
use fediskit_core::learner::SgdParams;
use fediskit_core::protocol::{
    ClusterRule, ExperimentConfig, FilterMode, KulsifParams, LearnerParams, ThresholdRule,
    DEFAULT_PROXY_BATCH,
};

use crate::{io, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub num_clients: usize,
    pub scheme: SchemeName,
    /// Labels per client under the weak scheme.
    pub labels_per_client: usize,
    /// Fraction of each client's private data donated to the proxy pool.
    pub alpha: f64,
    pub filter_mode: Mode,
    pub clusters: Clusters,
    pub rounds: usize,
    /// Proxy indices sampled per round, capped at the proxy size.
    pub proxy_batch: usize,
    /// Worker threads for client steps; 0 uses every core.
    pub threads: usize,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub threshold: ThresholdSpec,
    pub learner: LearnerSpec,
    pub kulsif: KulsifSpec,
    pub kmeans: KMeansSpec,
    pub bench: BenchSpec,
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Strong,
    Weak,
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Kmeans,
    Kulsif,
    None,
    Indlearn,
}

impl From<Mode> for FilterMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Kmeans => FilterMode::KMeans,
            Mode::Kulsif => FilterMode::Kulsif,
            Mode::None => FilterMode::None,
            Mode::Indlearn => FilterMode::IndLearn,
        }
    }
}

/// `"auto"` or a fixed centroid count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Clusters {
    Fixed(usize),
    Auto(AutoWord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoWord {
    #[serde(rename = "auto")]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Idx(IdxPaths),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// Gaussian classes around means drawn from the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub stddev: f64,
    /// Fixed independently of the run seed, so seeds vary the protocol and
    /// not the data.
    pub data_seed: u64,
}

/// Either `quantile` (calibrated per client) or `raw` (shared value).
/// `loosen` widens a calibrated threshold by that factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantile: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loosen: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSpec {
    /// Hidden widths: one plan for every client, or one per client.
    pub hidden: Vec<Vec<usize>>,
    pub lr: f64,
    pub epochs: usize,
    pub distill_lr: f64,
    pub distill_epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KulsifSpec {
    /// Kernel width; median heuristic when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub lambda: f64,
    /// Auxiliary samples; the private sample count when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_count: Option<usize>,
    pub aux_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansSpec {
    pub max_iters: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSpec {
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub clusters: Vec<usize>,
    pub repeats: usize,
    /// Lloyd iterations per fit; convergence checks are off while timing.
    pub kmeans_iters: usize,
    /// Each timed sample loops the operation for at least this long.
    pub min_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub thresholds: Vec<ThresholdSpec>,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        RunConfig {
            seed: 0,
            num_clients: exp.num_clients,
            scheme: SchemeName::Strong,
            labels_per_client: 3,
            alpha: exp.alpha,
            filter_mode: Mode::Kmeans,
            clusters: Clusters::Auto(AutoWord::Auto),
            rounds: exp.rounds,
            proxy_batch: DEFAULT_PROXY_BATCH,
            threads: 0,
            output_dir: PathBuf::from("fediskit-out"),
            dataset: DatasetSpec::Synthetic(SyntheticSpec::default()),
            threshold: ThresholdSpec::default(),
            learner: LearnerSpec::default(),
            kulsif: KulsifSpec::default(),
            kmeans: KMeansSpec::default(),
            bench: BenchSpec::default(),
            sweep: SweepSpec::default(),
        }
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            dim: 16,
            train_per_class: 100,
            test_per_class: 30,
            stddev: 0.15,
            data_seed: 7,
        }
    }
}

impl Default for LearnerSpec {
    fn default() -> Self {
        let p = LearnerParams::default();
        LearnerSpec {
            hidden: p.hidden_plans,
            lr: p.supervised.lr,
            epochs: p.supervised.epochs,
            distill_lr: p.distill.lr,
            distill_epochs: p.distill.epochs,
            batch_size: p.supervised.batch_size,
            temperature: p.temperature,
        }
    }
}

impl Default for KulsifSpec {
    fn default() -> Self {
        let p = KulsifParams::default();
        KulsifSpec {
            sigma: p.sigma,
            lambda: p.lambda,
            aux_count: p.aux_count,
            aux_margin: p.aux_margin,
        }
    }
}

impl Default for KMeansSpec {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        KMeansSpec {
            max_iters: e.kmeans_max_iters,
            tol: e.kmeans_tol,
        }
    }
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            sizes: vec![250, 500, 1000, 2000],
            dim: 50,
            clusters: vec![1, 10],
            repeats: 3,
            kmeans_iters: 20,
            min_seconds: 0.005,
        }
    }
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            thresholds: vec![
                ThresholdSpec {
                    quantile: Some(0.95),
                    ..ThresholdSpec::default()
                },
                ThresholdSpec {
                    quantile: Some(0.95),
                    loosen: Some(10.0),
                    ..ThresholdSpec::default()
                },
            ],
            alphas: vec![0.2, 0.8],
            seeds: vec![0, 1, 2],
        }
    }
}

const DEFAULT_QUANTILE: f64 = 0.95;

impl ThresholdSpec {
    pub fn rule(&self) -> Result<ThresholdRule> {
        match (self.quantile, self.raw, self.loosen) {
            (Some(_), Some(_), _) => Err(Error::Config(
                "threshold: set either quantile or raw, not both".into(),
            )),
            (None, Some(_), Some(_)) => Err(Error::Config(
                "threshold.loosen: only applies to a calibrated quantile".into(),
            )),
            (None, Some(t), None) => Ok(ThresholdRule::Raw(t)),
            (q, None, None) => Ok(ThresholdRule::Quantile(q.unwrap_or(DEFAULT_QUANTILE))),
            (q, None, Some(factor)) => Ok(ThresholdRule::Loosened {
                quantile: q.unwrap_or(DEFAULT_QUANTILE),
                factor,
            }),
        }
    }
}

/// Top-level scalars that may be overridden from the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub filter_mode: Option<Mode>,
}

fn range<T: PartialOrd + std::fmt::Display>(name: &str, v: T, ok: bool, want: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v}: must be {want}")))
    }
}

fn named(e: fediskit_core::Error) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    /// Parses a document; relative dataset paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let DatasetSpec::Idx(paths) = &mut cfg.dataset {
            for p in [
                &mut paths.train_images,
                &mut paths.train_labels,
                &mut paths.test_images,
                &mut paths.test_labels,
            ] {
                if p.is_relative() {
                    *p = base_dir.join(&*p);
                }
            }
        }
        cfg.check_ranges()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() {
            Path::new(".")
        } else {
            base
        };
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.rounds {
            self.rounds = r;
        }
        if let Some(m) = o.filter_mode {
            self.filter_mode = m;
        }
        self.check_ranges()
    }

    /// The fully resolved document, suitable for re-running.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Label-independent range checks, plus the partition feasibility
    /// check when the label count is known from the config alone.
    fn check_ranges(&self) -> Result<()> {
        range(
            "num_clients",
            self.num_clients,
            self.num_clients >= 1,
            "at least 1",
        )?;
        range(
            "alpha",
            self.alpha,
            self.alpha > 0.0 && self.alpha <= 1.0,
            "in (0, 1]",
        )?;
        range(
            "proxy_batch",
            self.proxy_batch,
            self.proxy_batch >= 1,
            "at least 1",
        )?;
        if let Clusters::Fixed(c) = self.clusters {
            range("clusters", c, c >= 1, "at least 1 or \"auto\"")?;
        }
        self.threshold.rule()?;
        self.check_learner()?;
        let b = &self.bench;
        range("bench.repeats", b.repeats, b.repeats >= 3, "at least 3")?;
        range("bench.dim", b.dim, b.dim >= 1, "at least 1")?;
        range(
            "bench.kmeans_iters",
            b.kmeans_iters,
            b.kmeans_iters >= 1,
            "at least 1",
        )?;
        range(
            "bench.min_seconds",
            b.min_seconds,
            b.min_seconds >= 0.0,
            "non-negative",
        )?;
        if b.sizes.windows(2).any(|w| w[0] >= w[1]) || b.sizes.contains(&0) {
            return Err(Error::Config(
                "bench.sizes: must be positive and strictly ascending".into(),
            ));
        }
        if b.clusters.is_empty() || b.clusters.contains(&0) {
            return Err(Error::Config(
                "bench.clusters: must be non-empty and positive".into(),
            ));
        }
        let s = &self.sweep;
        if s.thresholds.is_empty() || s.alphas.is_empty() || s.seeds.is_empty() {
            return Err(Error::Config(
                "sweep: thresholds, alphas and seeds must be non-empty".into(),
            ));
        }
        for t in &s.thresholds {
            t.rule()?;
        }
        for &a in &s.alphas {
            range("sweep.alphas", a, a > 0.0 && a <= 1.0, "in (0, 1]")?;
        }
        if let DatasetSpec::Synthetic(syn) = &self.dataset {
            range(
                "dataset.classes",
                syn.classes,
                syn.classes >= 2,
                "at least 2",
            )?;
            range("dataset.dim", syn.dim, syn.dim >= 1, "at least 1")?;
            range(
                "dataset.train_per_class",
                syn.train_per_class,
                syn.train_per_class >= 1,
                "at least 1",
            )?;
            range(
                "dataset.test_per_class",
                syn.test_per_class,
                syn.test_per_class >= 1,
                "at least 1",
            )?;
            range("dataset.stddev", syn.stddev, syn.stddev > 0.0, "positive")?;
            self.check_feasible(syn.classes)?;
        } else {
            // everything except the label count
            self.experiment()?.validate(usize::MAX).map_err(named)?;
        }
        Ok(())
    }

    fn check_learner(&self) -> Result<()> {
        let l = &self.learner;
        range(
            "learner.lr",
            l.lr,
            l.lr > 0.0 && l.lr.is_finite(),
            "positive",
        )?;
        range(
            "learner.distill_lr",
            l.distill_lr,
            l.distill_lr > 0.0 && l.distill_lr.is_finite(),
            "positive",
        )?;
        range(
            "learner.batch_size",
            l.batch_size,
            l.batch_size >= 1,
            "at least 1",
        )?;
        range(
            "learner.temperature",
            l.temperature,
            l.temperature > 0.0 && l.temperature.is_finite(),
            "positive",
        )?;
        if l.hidden.len() != 1 && l.hidden.len() != self.num_clients {
            return Err(Error::Config(format!(
                "learner.hidden: {} plans for {} clients; give one plan or one per client",
                l.hidden.len(),
                self.num_clients
            )));
        }
        if l.hidden.iter().flatten().any(|&w| w == 0) {
            return Err(Error::Config(
                "learner.hidden: layer widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Fails if the partition scheme cannot be realised with `num_labels`
    /// labels.
    pub fn check_feasible(&self, num_labels: usize) -> Result<()> {
        self.experiment()?.validate(num_labels).map_err(named)
    }

    pub fn scheme(&self) -> Scheme {
        match self.scheme {
            SchemeName::Strong => Scheme::StrongNonIid,
            SchemeName::Weak => Scheme::WeakNonIid {
                labels_per_client: self.labels_per_client,
            },
            SchemeName::Iid => Scheme::Iid,
        }
    }

    /// The protocol view of this config.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let l = &self.learner;
        Ok(ExperimentConfig {
            scheme: self.scheme(),
            num_clients: self.num_clients,
            alpha: self.alpha,
            filter_mode: self.filter_mode.into(),
            threshold: self.threshold.rule()?,
            clusters: match self.clusters {
                Clusters::Fixed(c) => ClusterRule::Fixed(c),
                Clusters::Auto(_) => ClusterRule::Auto,
            },
            rounds: self.rounds,
            proxy_batch: self.proxy_batch,
            learner: LearnerParams {
                hidden_plans: l.hidden.clone(),
                supervised: SgdParams {
                    epochs: l.epochs,
                    lr: l.lr,
                    batch_size: l.batch_size,
                },
                distill: SgdParams {
                    epochs: l.distill_epochs,
                    lr: l.distill_lr,
                    batch_size: l.batch_size,
                },
                temperature: l.temperature,
            },
            kulsif: KulsifParams {
                sigma: self.kulsif.sigma,
                lambda: self.kulsif.lambda,
                aux_count: self.kulsif.aux_count,
                aux_margin: self.kulsif.aux_margin,
            },
            kmeans_max_iters: self.kmeans.max_iters,
            kmeans_tol: self.kmeans.tol,
            seed: self.seed,
        })
    }

    /// Loads or generates the train and test sets, then checks the
    /// partition is feasible for the labels actually present.
    pub fn load_data(&self) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
        let (train, test) = match &self.dataset {
            DatasetSpec::Idx(p) => (
                io::load_idx(&p.train_images, &p.train_labels)?,
                io::load_idx(&p.test_images, &p.test_labels)?,
            ),
            DatasetSpec::Synthetic(s) => {
                let means = random_class_means(s.classes, s.dim, s.data_seed);
                (
                    gen_gaussian_mixture(s.train_per_class, &means, s.stddev, s.data_seed)?,
                    gen_gaussian_mixture(s.test_per_class, &means, s.stddev, s.data_seed ^ 0x7e57)?,
                )
            }
        };
        let labels =
            fediskit_core::data::num_classes(&train).max(fediskit_core::data::num_classes(&test));
        self.check_feasible(labels)?;
        Ok((train, test))
    }
}
