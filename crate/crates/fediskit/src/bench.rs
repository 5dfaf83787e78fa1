//! Density-ratio estimator scaling benchmarks and threshold/proxy sweeps.

use std::hint::black_box;
use std::time::Instant;

use fediskit_core::data::{gen_gaussian_mixture, LabeledSample};
use fediskit_core::dre::{self, cost, KMeansParams};
use fediskit_core::linalg::{fit_slope, median};
use fediskit_core::protocol::{
    run_experiment_with, ClientExecutor, ExperimentConfig, ExperimentResult, NoClock, ThresholdRule,
};
use fediskit_core::rng::{derive_seed, Purpose};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Estimator {
    KMeans,
    Kulsif,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::KMeans => "kmeans",
            Estimator::Kulsif => "kulsif",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kmeans" => Some(Estimator::KMeans),
            "kulsif" => Some(Estimator::Kulsif),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Learn,
    Estimate,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Learn => "learn",
            Phase::Estimate => "estimate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "learn" => Some(Phase::Learn),
            "estimate" => Some(Phase::Estimate),
            _ => None,
        }
    }
}

/// One timed grid point.
///
/// For the learn phase `size` is the number of private samples (KuLSIF also
/// uses that many auxiliary samples). For the estimate phase it is the
/// number of scored points; the model is the one fitted at the smallest
/// grid size. `clusters` is 0 for KuLSIF, which has none.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRecord {
    pub estimator: Estimator,
    pub phase: Phase,
    pub size: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Number of timed repeats the median was taken over.
    pub repeats: usize,
    /// Median seconds per call.
    pub wall_s: f64,
    pub bytes: u64,
}

/// Least-squares slope of log(time) against log(size) for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub estimator: Estimator,
    pub phase: Phase,
    pub clusters: usize,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingParams {
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub clusters: Vec<usize>,
    pub repeats: usize,
    pub kmeans_iters: usize,
    pub min_seconds: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub records: Vec<ScalingRecord>,
    pub slopes: Vec<SlopeFit>,
}

impl ScalingReport {
    pub fn slope(&self, estimator: Estimator, phase: Phase, clusters: usize) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.estimator == estimator && s.phase == phase && s.clusters == clusters)
            .map(|s| s.slope)
    }
}

/// Median over `repeats` of the per-call time of `op`. One untimed warm-up
/// call comes first; each timed sample repeats `op` until at least
/// `min_seconds` have passed, so fast operations are not lost in timer
/// resolution.
pub fn time_median<F: FnMut() -> Result<()>>(
    repeats: usize,
    min_seconds: f64,
    mut op: F,
) -> Result<f64> {
    op()?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let mut calls = 0u32;
        loop {
            op()?;
            calls += 1;
            if start.elapsed().as_secs_f64() >= min_seconds {
                break;
            }
        }
        samples.push(start.elapsed().as_secs_f64() / calls as f64);
    }
    median(&mut samples).ok_or_else(|| Error::Bench("no timing samples".into()))
}

fn points(n: usize, dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let samples = gen_gaussian_mixture(n, &[vec![0.0; dim]], 1.0, seed)?;
    Ok(samples.into_iter().map(|s| s.features).collect())
}

/// Fits a log-log slope per (estimator, phase, clusters) series.
pub fn fit_slopes(records: &[ScalingRecord]) -> Result<Vec<SlopeFit>> {
    let mut keys: Vec<(Estimator, Phase, usize)> = records
        .iter()
        .map(|r| (r.estimator, r.phase, r.clusters))
        .collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(estimator, phase, clusters)| {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| (r.estimator, r.phase, r.clusters) == (estimator, phase, clusters))
                .map(|r| ((r.size as f64).ln(), r.wall_s.max(f64::MIN_POSITIVE).ln()))
                .collect();
            let slope = fit_slope(&pts).ok_or_else(|| {
                Error::Bench(format!(
                    "{} {} needs at least two distinct sizes to fit a slope",
                    estimator.name(),
                    phase.name()
                ))
            })?;
            Ok(SlopeFit {
                estimator,
                phase,
                clusters,
                slope,
            })
        })
        .collect()
}

/// Times learning and estimation of both estimators over `sizes` and fits
/// the growth exponents.
pub fn bench_dre_scaling(p: &ScalingParams) -> Result<ScalingReport> {
    if p.sizes.len() < 2 {
        return Err(Error::Bench(
            "at least two sizes are needed to fit a slope".into(),
        ));
    }
    if p.sizes.windows(2).any(|w| w[0] >= w[1]) || p.sizes[0] == 0 {
        return Err(Error::Bench(
            "sizes must be positive and strictly ascending".into(),
        ));
    }
    if p.repeats < 3 {
        return Err(Error::Bench("at least three repeats are needed".into()));
    }
    let largest = *p.sizes.last().expect("checked non-empty");
    let private = points(
        largest,
        p.dim,
        derive_seed(p.seed, Purpose::Synthetic, 0, 0),
    )?;
    let aux = points(
        largest,
        p.dim,
        derive_seed(p.seed, Purpose::Synthetic, 1, 0),
    )?;
    let queries = points(
        largest,
        p.dim,
        derive_seed(p.seed, Purpose::Synthetic, 2, 0),
    )?;
    let base = p.sizes[0];
    let (d, u) = (p.dim, p.dim as u64);
    let mut records = Vec::new();
    let mut push = |estimator, phase, size: usize, clusters, wall_s, bytes| {
        records.push(ScalingRecord {
            estimator,
            phase,
            size,
            dim: d,
            clusters,
            repeats: p.repeats,
            wall_s,
            bytes,
        })
    };

    for &c in &p.clusters {
        let params = KMeansParams {
            clusters: c,
            max_iters: p.kmeans_iters,
            tol: 0.0,
            seed: p.seed,
        };
        for &n in &p.sizes {
            let t = time_median(p.repeats, p.min_seconds, || {
                black_box(dre::kmeans_fit(&private[..n], &params)?);
                Ok(())
            })?;
            push(
                Estimator::KMeans,
                Phase::Learn,
                n,
                c,
                t,
                cost::kmeans_learn_bytes(n as u64, c as u64, u),
            );
        }
        let model = dre::kmeans_fit(&private[..base], &params)?;
        for &t_len in &p.sizes {
            let t = time_median(p.repeats, p.min_seconds, || {
                for q in &queries[..t_len] {
                    black_box(model.score(q)?);
                }
                Ok(())
            })?;
            push(
                Estimator::KMeans,
                Phase::Estimate,
                t_len,
                c,
                t,
                cost::kmeans_estimate_bytes(t_len as u64, c as u64, u),
            );
        }
    }

    let sigma = dre::median_heuristic_sigma(&private[..base], 500, p.seed);
    for &n in &p.sizes {
        let t = time_median(p.repeats, p.min_seconds, || {
            black_box(dre::kulsif_learn(&private[..n], &aux[..n], sigma, 0.1)?);
            Ok(())
        })?;
        push(
            Estimator::Kulsif,
            Phase::Learn,
            n,
            0,
            t,
            cost::kulsif_learn_bytes(n as u64, n as u64),
        );
    }
    let model = dre::kulsif_learn(&private[..base], &aux[..base], sigma, 0.1)?;
    for &t_len in &p.sizes {
        let t = time_median(p.repeats, p.min_seconds, || {
            for q in &queries[..t_len] {
                black_box(model.score(q)?);
            }
            Ok(())
        })?;
        push(
            Estimator::Kulsif,
            Phase::Estimate,
            t_len,
            0,
            t,
            cost::kulsif_estimate_bytes(t_len as u64, base as u64, base as u64),
        );
    }

    let slopes = fit_slopes(&records)?;
    Ok(ScalingReport { records, slopes })
}

/// One sweep grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    /// Mean threshold value applied across filtering clients; absent when
    /// the mode does not filter.
    pub threshold: Option<f64>,
    /// Calibration quantile; absent for raw thresholds.
    pub quantile: Option<f64>,
    pub alpha: f64,
    pub seed: u64,
    pub mean_acc: f64,
    /// Absent when no truly in-distribution sample was ever scored.
    pub id_kept: Option<f64>,
    /// Absent when no truly out-of-distribution sample was ever scored.
    pub ood_leak: Option<f64>,
}

impl SweepRecord {
    pub fn from_result(rule: &ThresholdRule, alpha: f64, r: &ExperimentResult) -> SweepRecord {
        let values: Vec<f64> = r.thresholds.iter().flatten().copied().collect();
        SweepRecord {
            threshold: (!values.is_empty())
                .then(|| values.iter().sum::<f64>() / values.len() as f64),
            quantile: rule.quantile(),
            alpha,
            seed: r.seed,
            mean_acc: r.mean_accuracy,
            id_kept: r.confusion.id_kept_fraction(),
            ood_leak: r.confusion.ood_leak_fraction(),
        }
    }
}

/// Runs the full cross product of threshold rules, proxy fractions and
/// seeds, in that nesting order.
pub fn sweep<E: ClientExecutor>(
    base: &ExperimentConfig,
    thresholds: &[ThresholdRule],
    alphas: &[f64],
    seeds: &[u64],
    train: &[LabeledSample],
    test: &[LabeledSample],
    executor: &E,
) -> Result<Vec<SweepRecord>> {
    if thresholds.is_empty() || alphas.is_empty() || seeds.is_empty() {
        return Err(Error::Bench("sweep grids must be non-empty".into()));
    }
    let mut out = Vec::with_capacity(thresholds.len() * alphas.len() * seeds.len());
    for rule in thresholds {
        for &alpha in alphas {
            for &seed in seeds {
                let config = ExperimentConfig {
                    threshold: *rule,
                    alpha,
                    seed,
                    ..base.clone()
                };
                let r = run_experiment_with(train, test, &config, executor, &NoClock)?;
                log::info!(
                    "sweep {:?} alpha={alpha} seed={seed}: mean accuracy {:.4}",
                    rule,
                    r.mean_accuracy
                );
                out.push(SweepRecord::from_result(rule, alpha, &r));
            }
        }
    }
    Ok(out)
}
