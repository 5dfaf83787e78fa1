//! The federated exchange: initialization, per-round index selection,
//! two-stage client filtering, server aggregation and local updates.
//!
//! Rounds are bulk-synchronous. All clients filter and submit, the server
//! averages, then all clients update. Client steps go through a
//! [`ClientExecutor`] and draw randomness only from streams keyed by client
//! and round, so sequential and parallel execution agree bit for bit.

mod config;
mod exec;

pub use config::{
    ClusterRule, ExperimentConfig, FilterMode, KulsifParams, LearnerParams, ThresholdRule,
    DEFAULT_PROXY_BATCH,
};
pub use exec::{ClientExecutor, Clock, NoClock, Sequential};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::seq::index;

use crate::data::{self, ClientDataset, LabeledSample, ProxyDataset, ProxyFeatures, Scheme};
use crate::diagnostics::{self, FilterConfusion};
use crate::dre::{self, DensityModel, Direction, IdThreshold, KMeansParams};
use crate::learner::{self, softmax_t, MlpModel, SoftTarget};
use crate::rng::{self, derive_seed, Purpose};
use crate::{Error, Result};

/// Everything one client holds between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_id: usize,
    pub dataset: ClientDataset,
    pub model: MlpModel,
    filter: Option<(DensityModel, IdThreshold)>,
    pub contributed: BTreeSet<usize>,
}

impl ClientState {
    pub fn new(
        dataset: ClientDataset,
        model: MlpModel,
        filter: Option<(DensityModel, IdThreshold)>,
        contributed: BTreeSet<usize>,
    ) -> Self {
        ClientState {
            client_id: dataset.client_id(),
            dataset,
            model,
            filter,
            contributed,
        }
    }

    pub fn density_model(&self) -> Option<&DensityModel> {
        self.filter.as_ref().map(|f| &f.0)
    }

    pub fn threshold(&self) -> Option<&IdThreshold> {
        self.filter.as_ref().map(|f| &f.1)
    }
}

/// Proxy indices sampled for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPlan {
    pub round: usize,
    pub indices: Vec<usize>,
}

/// One client's filtered submission: proxy index → class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub client_id: usize,
    pub entries: BTreeMap<usize, Vec<f64>>,
    /// Indices kept because the client donated them.
    pub own_hits: usize,
}

/// Server-side mean prediction and contributor count per proxy index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregatedTargets {
    pub entries: BTreeMap<usize, (Vec<f64>, usize)>,
}

impl AggregatedTargets {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distillation targets: each mean re-softened to temperature `τ`,
    /// i.e. `softmax(ln p / τ)`.
    pub fn soft_targets(&self, temperature: f64) -> Vec<SoftTarget> {
        self.entries
            .iter()
            .map(|(&idx, (mean, _))| {
                let logp: Vec<f64> = mean
                    .iter()
                    .map(|p| libm::log(p.max(f64::MIN_POSITIVE)))
                    .collect();
                SoftTarget {
                    proxy_index: idx,
                    probs: softmax_t(&logp, temperature),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Test accuracy per client after the round's update.
    pub accuracy: Vec<f64>,
    /// Indices each client submitted.
    pub kept: Vec<usize>,
    /// Indices sampled this round.
    pub candidates: usize,
    /// Indices with at least one submission.
    pub aggregated: usize,
    pub uplink_floats: usize,
    pub downlink_floats: usize,
    pub confusion: FilterConfusion,
    pub wall_seconds: f64,
}

impl RoundMetrics {
    pub fn mean_accuracy(&self) -> f64 {
        mean(&self.accuracy)
    }

    pub fn kept_fraction(&self, client: usize) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.kept[client] as f64 / self.candidates as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub filter_mode: FilterMode,
    pub scheme: Scheme,
    pub seed: u64,
    pub proxy_size: usize,
    /// Threshold value per client, when filtering.
    pub thresholds: Vec<Option<f64>>,
    pub initial_accuracy: Vec<f64>,
    pub rounds: Vec<RoundMetrics>,
    pub final_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub confusion: FilterConfusion,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn cluster_count(config: &ExperimentConfig, dataset: &ClientDataset) -> usize {
    match config.clusters {
        ClusterRule::Fixed(c) => c,
        ClusterRule::Auto => match config.scheme {
            Scheme::StrongNonIid => 1,
            _ => dataset.label_set().len(),
        },
    }
}

fn fit_filter(
    dataset: &ClientDataset,
    config: &ExperimentConfig,
) -> Result<Option<(DensityModel, IdThreshold)>> {
    let client = dataset.client_id() as u64;
    let points: Vec<&[f64]> = dataset.features().collect();
    let model = match config.filter_mode {
        FilterMode::KMeans => {
            let params = KMeansParams {
                clusters: cluster_count(config, dataset),
                max_iters: config.kmeans_max_iters,
                tol: config.kmeans_tol,
                seed: derive_seed(config.seed, Purpose::KMeans, client, 0),
            };
            DensityModel::Centroids(dre::kmeans_fit(&points, &params)?)
        }
        FilterMode::Kulsif => {
            let k = &config.kulsif;
            let seed = derive_seed(config.seed, Purpose::Auxiliary, client, 0);
            let m = k.aux_count.unwrap_or(points.len());
            let aux = dre::generate_auxiliary(&points, m, k.aux_margin, seed)?;
            let sigma = k
                .sigma
                .unwrap_or_else(|| dre::median_heuristic_sigma(&points, 500, seed));
            DensityModel::Kulsif(dre::kulsif_learn(&points, &aux, sigma, k.lambda)?)
        }
        FilterMode::None | FilterMode::IndLearn => return Ok(None),
    };
    let direction = model.direction();
    let calibrate = |q: f64| -> Result<IdThreshold> {
        let scores = points
            .iter()
            .map(|p| model.score(p))
            .collect::<Result<Vec<_>>>()?;
        dre::calibrate_threshold(&scores, q, direction)
    };
    let threshold = match config.threshold {
        ThresholdRule::Quantile(q) => calibrate(q)?,
        ThresholdRule::Raw(t) => IdThreshold::raw(t, direction)?,
        ThresholdRule::Loosened { quantile, factor } => {
            let t = calibrate(quantile)?;
            match direction {
                Direction::BelowIsId => t.scaled(factor),
                Direction::AboveIsId => t.scaled(1.0 / factor),
            }
        }
    };
    Ok(Some((model, threshold)))
}

/// Fits each client's density model and threshold, initializes its
/// classifier and pools the proxy donations.
pub fn initialize<E: ClientExecutor>(
    clients: Vec<ClientDataset>,
    num_classes: usize,
    config: &ExperimentConfig,
    executor: &E,
) -> Result<(Vec<ClientState>, ProxyDataset)> {
    config.validate(num_classes)?;
    if clients.len() != config.num_clients {
        return Err(Error::param(
            "num_clients",
            alloc::format!(
                "{} datasets for {} clients",
                clients.len(),
                config.num_clients
            ),
        ));
    }
    let proxy = data::extract_proxy(
        &clients,
        config.alpha,
        derive_seed(config.seed, Purpose::Proxy, 0, 0),
    )?;
    let mut slots: Vec<Option<ClientDataset>> = clients.into_iter().map(Some).collect();
    let proxy_ref = &proxy;
    let states = executor.map(&mut slots, |slot| -> Result<ClientState> {
        let dataset = slot.take().expect("each slot is visited once");
        let id = dataset.client_id();
        let dim = data::feature_dim(dataset.samples())?;
        let mut sizes = alloc::vec![dim];
        sizes.extend_from_slice(config.learner.plan_for(id));
        sizes.push(num_classes);
        let model = MlpModel::new(
            &sizes,
            derive_seed(config.seed, Purpose::ModelInit, id as u64, 0),
        )?;
        let filter = fit_filter(&dataset, config)?;
        let contributed = proxy_ref.contributions(id);
        Ok(ClientState::new(dataset, model, filter, contributed))
    });
    let states = states.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((states, proxy))
}

/// Uniform sample of `batch` distinct proxy indices for round `round`.
pub fn select_round_indices(
    proxy_len: usize,
    batch: usize,
    seed: u64,
    round: usize,
) -> Result<RoundPlan> {
    if batch == 0 || batch > proxy_len {
        return Err(Error::param(
            "proxy_batch",
            alloc::format!("{batch} not in [1, {proxy_len}]"),
        ));
    }
    let mut rng = rng::stream(seed, Purpose::RoundIndices, 0, round as u64);
    Ok(RoundPlan {
        round,
        indices: index::sample(&mut rng, proxy_len, batch).into_vec(),
    })
}

/// Predicts on the planned indices and keeps those that pass the two-stage
/// test: donated by this client, or scored ID by its density model.
pub fn client_filter(
    state: &ClientState,
    proxy: ProxyFeatures<'_>,
    plan: &RoundPlan,
) -> Result<PredictionSet> {
    let mut entries = BTreeMap::new();
    let mut own_hits = 0;
    for &idx in &plan.indices {
        let x = proxy.get(idx);
        let keep = if state.contributed.contains(&idx) {
            own_hits += 1;
            true
        } else {
            match &state.filter {
                Some((model, threshold)) => dre::is_id(model.score(x)?, threshold),
                None => true,
            }
        };
        if keep {
            entries.insert(idx, softmax_t(&state.model.forward(x)?, 1.0));
        }
    }
    Ok(PredictionSet {
        client_id: state.client_id,
        entries,
        own_hits,
    })
}

/// Averages submissions per index, summing in ascending client order.
/// Indices nobody submitted are left out. Entries outside the plan are
/// ignored.
pub fn server_aggregate(submissions: &[PredictionSet], plan: &RoundPlan) -> AggregatedTargets {
    let mut ordered: Vec<&PredictionSet> = submissions.iter().collect();
    ordered.sort_by_key(|s| s.client_id);
    let planned: BTreeSet<usize> = plan.indices.iter().copied().collect();
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for sub in ordered {
        for (idx, probs) in &sub.entries {
            if !planned.contains(idx) {
                continue;
            }
            let slot = sums
                .entry(*idx)
                .or_insert_with(|| (alloc::vec![0.0; probs.len()], 0));
            slot.0.iter_mut().zip(probs).for_each(|(s, p)| *s += p);
            slot.1 += 1;
        }
    }
    for (sum, count) in sums.values_mut() {
        let inv = 1.0 / *count as f64;
        sum.iter_mut().for_each(|s| *s *= inv);
    }
    AggregatedTargets { entries: sums }
}

fn local_update(
    state: &mut ClientState,
    proxy: ProxyFeatures<'_>,
    targets: &[SoftTarget],
    config: &ExperimentConfig,
    round: usize,
) -> Result<()> {
    let id = state.client_id as u64;
    let learner = &config.learner;
    learner::train_supervised(
        &mut state.model,
        state.dataset.samples(),
        &learner.supervised,
        derive_seed(config.seed, Purpose::Supervised, id, round as u64),
    )?;
    learner::distill(
        &mut state.model,
        proxy,
        targets,
        &learner.distill,
        learner.temperature,
        derive_seed(config.seed, Purpose::Distill, id, round as u64),
    )?;
    Ok(())
}

fn accuracies<E: ClientExecutor>(
    states: &mut [ClientState],
    test: &[LabeledSample],
    executor: &E,
) -> Result<Vec<f64>> {
    executor
        .map(states, |s| learner::evaluate(&s.model, test))
        .into_iter()
        .collect()
}

/// Side inputs a round needs beyond client state.
pub struct RoundContext<'a, E, C> {
    pub proxy: &'a ProxyDataset,
    pub test: &'a [LabeledSample],
    pub config: &'a ExperimentConfig,
    pub executor: &'a E,
    pub clock: &'a C,
}

/// One bulk-synchronous round: filter, aggregate, update, evaluate.
pub fn run_round<E: ClientExecutor, C: Clock>(
    states: &mut [ClientState],
    plan: &RoundPlan,
    ctx: &RoundContext<'_, E, C>,
) -> Result<RoundMetrics> {
    let start = ctx.clock.now();
    let config = ctx.config;
    let proxy = ctx.proxy.view();
    let num_classes = states.first().map_or(0, |s| s.model.num_classes());

    let (kept, aggregated, uplink, downlink, confusion) =
        if config.filter_mode == FilterMode::IndLearn {
            ctx.executor
                .map(states, |s| {
                    learner::train_supervised(
                        &mut s.model,
                        s.dataset.samples(),
                        &config.learner.supervised,
                        derive_seed(
                            config.seed,
                            Purpose::Supervised,
                            s.client_id as u64,
                            plan.round as u64,
                        ),
                    )
                    .map(|_| ())
                })
                .into_iter()
                .collect::<Result<()>>()?;
            (
                alloc::vec![0; states.len()],
                0,
                0,
                0,
                FilterConfusion::default(),
            )
        } else {
            let submissions = ctx
                .executor
                .map(states, |s| client_filter(s, proxy, plan))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let confusion = diagnostics::tally(ctx.proxy, states, &submissions, plan);
            let aggregated = server_aggregate(&submissions, plan);
            let targets = aggregated.soft_targets(config.learner.temperature);
            ctx.executor
                .map(states, |s| {
                    local_update(s, proxy, &targets, config, plan.round)
                })
                .into_iter()
                .collect::<Result<()>>()?;
            let kept: Vec<usize> = submissions.iter().map(|s| s.entries.len()).collect();
            let uplink = kept.iter().sum::<usize>() * num_classes;
            let downlink = aggregated.len() * num_classes * states.len();
            (kept, aggregated.len(), uplink, downlink, confusion)
        };

    let accuracy = accuracies(states, ctx.test, ctx.executor)?;
    Ok(RoundMetrics {
        round: plan.round,
        accuracy,
        kept,
        candidates: if config.filter_mode == FilterMode::IndLearn {
            0
        } else {
            plan.indices.len()
        },
        aggregated,
        uplink_floats: uplink,
        downlink_floats: downlink,
        confusion,
        wall_seconds: ctx.clock.now() - start,
    })
}

/// Partitions `train`, initializes every client and runs all rounds.
pub fn run_experiment_with<E: ClientExecutor, C: Clock>(
    train: &[LabeledSample],
    test: &[LabeledSample],
    config: &ExperimentConfig,
    executor: &E,
    clock: &C,
) -> Result<ExperimentResult> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let num_classes = data::num_classes(train).max(data::num_classes(test));
    config.validate(num_classes)?;
    let clients = data::partition(train, &config.partition_spec())?;
    let (mut states, proxy) = initialize(clients, num_classes, config, executor)?;
    let initial_accuracy = accuracies(&mut states, test, executor)?;
    let batch = config.proxy_batch_for(proxy.len());
    let ctx = RoundContext {
        proxy: &proxy,
        test,
        config,
        executor,
        clock,
    };
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut confusion = FilterConfusion::default();
    for r in 1..=config.rounds {
        let plan = select_round_indices(proxy.len(), batch, config.seed, r)?;
        let m = run_round(&mut states, &plan, &ctx)?;
        confusion += m.confusion;
        rounds.push(m);
    }
    let final_accuracy = rounds
        .last()
        .map_or_else(|| initial_accuracy.clone(), |m| m.accuracy.clone());
    Ok(ExperimentResult {
        filter_mode: config.filter_mode,
        scheme: config.scheme,
        seed: config.seed,
        proxy_size: proxy.len(),
        thresholds: states
            .iter()
            .map(|s| s.threshold().map(|t| t.value))
            .collect(),
        initial_accuracy,
        mean_accuracy: mean(&final_accuracy),
        final_accuracy,
        rounds,
        confusion,
    })
}

/// [`run_experiment_with`] on the calling thread, without timing.
pub fn run_experiment(
    train: &[LabeledSample],
    test: &[LabeledSample],
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    run_experiment_with(train, test, config, &Sequential, &NoClock)
}
