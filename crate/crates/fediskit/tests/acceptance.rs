//! Acceptance criteria 1–9. Each test prints exactly one line,
//! `criterion N: PASS|FAIL ...`, before asserting; run with `--nocapture`
//! (or `--show-output`) to see them.
//!
//! The digits experiments (criteria 1, 2, 3, 7, 8) use the shipped
//! `configs/digits.toml`: ten clients on the 8×8 handwritten-digit corpus,
//! R = 40 rounds, α = 0.2, q = 0.95, centroid filter with c = 1. Runs are
//! cached so criteria sharing a configuration share the work, and a global
//! lock runs the criteria one at a time so the runtime bounds measure the
//! criterion alone.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fediskit::bench::{bench_dre_scaling, Estimator, Phase, ScalingParams};
use fediskit::config::{Mode, RunConfig, SchemeName};
use fediskit::core::data::{gen_gaussian_mixture, LabeledSample};
use fediskit::core::dre::{self, kulsif_learn, median_heuristic_sigma, Direction, KMeansParams};
use fediskit::core::learner::{loss_and_gradient, softmax_t, MlpModel};
use fediskit::core::linalg::median;
use fediskit::core::protocol::{
    run_experiment, server_aggregate, ExperimentResult, PredictionSet, RoundPlan, ThresholdRule,
};

static GATE: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|p| p.into_inner())
}

fn report(n: usize, pass: bool, detail: String) {
    println!(
        "criterion {n}: {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

struct Digits {
    config: RunConfig,
    train: Vec<LabeledSample>,
    test: Vec<LabeledSample>,
}

fn digits() -> &'static Digits {
    static DIGITS: OnceLock<Digits> = OnceLock::new();
    DIGITS.get_or_init(|| {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/digits.toml");
        let config = RunConfig::load(&path).expect("shipped config parses");
        let (train, test) = config.load_data().expect("shipped digits load");
        Digits {
            config,
            train,
            test,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Threshold {
    Calibrated,
    TenfoldLoose,
}

type Key = (SchemeName, Mode, u64, Threshold, u64);

/// Runs (or recalls) one digits experiment.
fn experiment(
    scheme: SchemeName,
    mode: Mode,
    alpha: f64,
    threshold: Threshold,
    seed: u64,
) -> ExperimentResult {
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<OnceLock<ExperimentResult>>>>> = OnceLock::new();
    let key = (scheme, mode, alpha.to_bits(), threshold, seed);
    let cell = CACHE
        .get_or_init(Default::default)
        .lock()
        .unwrap()
        .entry(key)
        .or_default()
        .clone();
    cell.get_or_init(|| {
        let d = digits();
        let mut cfg = d.config.clone();
        cfg.scheme = scheme;
        cfg.filter_mode = mode;
        cfg.alpha = alpha;
        cfg.seed = seed;
        let mut exp = cfg.experiment().unwrap();
        if threshold == Threshold::TenfoldLoose {
            exp.threshold = ThresholdRule::Loosened {
                quantile: 0.95,
                factor: 10.0,
            };
        }
        run_experiment(&d.train, &d.test, &exp).unwrap()
    })
    .clone()
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn accuracies(scheme: SchemeName, mode: Mode, alpha: f64, threshold: Threshold) -> Vec<f64> {
    SEEDS
        .iter()
        .map(|&s| experiment(scheme, mode, alpha, threshold, s).mean_accuracy)
        .collect()
}

fn med(v: &[f64]) -> f64 {
    median(&mut v.to_vec()).unwrap()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|a| format!("{a:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

#[test]
fn criterion_1_strong_non_iid_ordering() {
    let _g = serial();
    let start = Instant::now();
    let strong = |m| accuracies(SchemeName::Strong, m, 0.2, Threshold::Calibrated);
    let ind = strong(Mode::Indlearn);
    let edge = strong(Mode::Kmeans);
    let none = strong(Mode::None);
    let kulsif = strong(Mode::Kulsif);
    let secs = start.elapsed().as_secs_f64();
    let (mi, me, mn, mk) = (med(&ind), med(&edge), med(&none), med(&kulsif));
    let checks = [
        (0.08..=0.13).contains(&mi),
        me >= 0.80,
        me >= mn,
        (mk - me).abs() <= 0.05,
        secs <= 600.0,
    ];
    report(
        1,
        checks.iter().all(|c| *c),
        format!(
            "medians over seeds {SEEDS:?}: indlearn {mi:.4} in [0.08, 0.13]: {}; edgefd {me:.4} >= 0.80: {}; \
             edgefd >= no-filter {mn:.4}: {}; |kulsif {mk:.4} - edgefd| <= 0.05: {}; {secs:.0}s <= 600s: {} \
             (indlearn {}, edgefd {}, none {}, kulsif {})",
            checks[0], checks[1], checks[2], checks[3], checks[4],
            fmt(&ind), fmt(&edge), fmt(&none), fmt(&kulsif)
        ),
    );
}

#[test]
fn strong_desk_run_improves_over_rounds() {
    let _g = serial();
    let improving = SEEDS
        .iter()
        .filter(|&&s| {
            let r = experiment(
                SchemeName::Strong,
                Mode::Kmeans,
                0.2,
                Threshold::Calibrated,
                s,
            );
            r.rounds.last().unwrap().mean_accuracy() > r.rounds[0].mean_accuracy()
        })
        .count();
    println!("round trend: mean accuracy rose from round 1 to round 40 in {improving} of 3 seeds");
    assert!(improving >= 2);
}

#[test]
fn criterion_2_iid_closeness() {
    let _g = serial();
    let start = Instant::now();
    let ind = accuracies(SchemeName::Iid, Mode::Indlearn, 0.2, Threshold::Calibrated);
    let edge = accuracies(SchemeName::Iid, Mode::Kmeans, 0.2, Threshold::Calibrated);
    let secs = start.elapsed().as_secs_f64();
    let gap = med(&edge) - med(&ind);
    let pass = gap.abs() <= 0.02 && secs <= 600.0;
    report(
        2,
        pass,
        format!(
            "iid median edgefd {:.4} vs indlearn {:.4}: |gap| {:.4} <= 0.02: {}; {secs:.0}s <= 600s: {} \
             (indlearn {}, edgefd {})",
            med(&edge),
            med(&ind),
            gap.abs(),
            gap.abs() <= 0.02,
            secs <= 600.0,
            fmt(&ind),
            fmt(&edge)
        ),
    );
}

#[test]
fn criterion_3_weak_non_iid_lift() {
    let _g = serial();
    let ind = accuracies(SchemeName::Weak, Mode::Indlearn, 0.2, Threshold::Calibrated);
    let edge = accuracies(SchemeName::Weak, Mode::Kmeans, 0.2, Threshold::Calibrated);
    let lift = med(&edge) - med(&ind);
    report(
        3,
        lift >= 0.30,
        format!(
            "3 labels per client, median edgefd {:.4} - indlearn {:.4} = {lift:.4} >= 0.30 (indlearn {}, edgefd {})",
            med(&edge),
            med(&ind),
            fmt(&ind),
            fmt(&edge)
        ),
    );
}

#[test]
fn criterion_4_complexity_slopes() {
    let _g = serial();
    let start = Instant::now();
    let params = ScalingParams {
        sizes: vec![250, 500, 1000, 2000],
        dim: 50,
        clusters: vec![1, 10],
        repeats: 3,
        kmeans_iters: 20,
        min_seconds: 0.005,
        seed: 0,
    };
    let r = bench_dre_scaling(&params).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let kulsif_learn_slope = r.slope(Estimator::Kulsif, Phase::Learn, 0).unwrap();
    let mut ok = kulsif_learn_slope >= 1.8;
    let mut detail = format!("kulsif learn slope {kulsif_learn_slope:.3} >= 1.8");
    for c in [1, 10] {
        let learn = r.slope(Estimator::KMeans, Phase::Learn, c).unwrap();
        let est = r.slope(Estimator::KMeans, Phase::Estimate, c).unwrap();
        ok &= learn <= 1.3 && (0.7..=1.3).contains(&est);
        detail +=
            &format!("; kmeans c={c} learn {learn:.3} <= 1.3, estimate {est:.3} in [0.7, 1.3]");
    }
    let bytes_exact = r
        .records
        .iter()
        .filter(|x| (x.estimator, x.phase) == (Estimator::Kulsif, Phase::Learn))
        .all(|x| {
            let m = x.size as u64;
            x.bytes == 8 * (m * m + m * m + m)
        });
    let kulsif_times: Vec<f64> = r
        .records
        .iter()
        .filter(|x| (x.estimator, x.phase) == (Estimator::Kulsif, Phase::Learn))
        .map(|x| x.wall_s)
        .collect();
    let monotone = kulsif_times.windows(2).all(|w| w[0] <= w[1]);
    ok &= bytes_exact && monotone && secs <= 300.0;
    detail += &format!(
        "; kulsif bytes = 8(m^2+nm+m): {bytes_exact}; kulsif learn time nondecreasing: {monotone}; {secs:.0}s <= 300s"
    );
    report(4, ok, detail);
}

#[test]
fn criterion_5_filter_quality() {
    let _g = serial();
    let sigma_g = 1.0;
    let mut worst_recall = 1.0f64;
    let mut worst_leak = 0.0f64;
    for seed in 0..5u64 {
        let private = gen_gaussian_mixture(500, &[vec![0.0, 0.0]], sigma_g, seed).unwrap();
        let points: Vec<&[f64]> = private.iter().map(|s| s.features.as_slice()).collect();
        let model = dre::kmeans_fit(&points, &KMeansParams::new(1, seed)).unwrap();
        let scores: Vec<f64> = points.iter().map(|p| model.score(p).unwrap()).collect();
        let t = dre::calibrate_threshold(&scores, 0.99, Direction::BelowIsId).unwrap();
        let fresh_id = gen_gaussian_mixture(1000, &[vec![0.0, 0.0]], sigma_g, seed + 1000).unwrap();
        let fresh_ood =
            gen_gaussian_mixture(1000, &[vec![6.0 * sigma_g, 0.0]], sigma_g, seed + 2000).unwrap();
        let kept = |set: &[LabeledSample]| {
            set.iter()
                .filter(|s| dre::is_id(model.score(&s.features).unwrap(), &t))
                .count() as f64
                / 1000.0
        };
        worst_recall = worst_recall.min(kept(&fresh_id));
        worst_leak = worst_leak.max(kept(&fresh_ood));
    }
    report(
        5,
        worst_recall >= 0.95 && worst_leak <= 0.05,
        format!(
            "two 2-D clusters 6 sigma apart, c=1, q=0.99, 1000 fresh points per side, 5 seeds: \
             worst ID recall {worst_recall:.4} >= 0.95, worst OOD leak {worst_leak:.4} <= 0.05"
        ),
    );
}

#[test]
fn criterion_6_kulsif_sanity() {
    let _g = serial();
    let mut ratios = Vec::new();
    for seed in 0..5u64 {
        let draw = |n, s| -> Vec<Vec<f64>> {
            gen_gaussian_mixture(n, &[vec![0.0, 0.0]], 1.0, s)
                .unwrap()
                .into_iter()
                .map(|x| x.features)
                .collect()
        };
        let private = draw(500, seed);
        let aux = draw(500, seed + 100);
        let held_out = draw(500, seed + 200);
        let sigma = median_heuristic_sigma(&private, 500, seed);
        let m = kulsif_learn(&private, &aux, sigma, 0.1).unwrap();
        ratios.push(held_out.iter().map(|x| m.score(x).unwrap()).sum::<f64>() / 500.0);
    }
    let pass = ratios.iter().all(|r| (0.5..=2.0).contains(r));
    report(
        6,
        pass,
        format!(
            "matched distributions, mean ratio over 500 held-out points per seed {} in [0.5, 2.0]",
            fmt(&ratios)
        ),
    );
}

#[test]
fn criterion_7_threshold_trend() {
    let _g = serial();
    let calibrated = accuracies(SchemeName::Strong, Mode::Kmeans, 0.2, Threshold::Calibrated);
    let loose = accuracies(
        SchemeName::Strong,
        Mode::Kmeans,
        0.2,
        Threshold::TenfoldLoose,
    );
    report(
        7,
        med(&loose) <= med(&calibrated),
        format!(
            "median accuracy at 10x calibrated threshold {:.4} <= at q=0.95 {:.4} (loose {}, calibrated {})",
            med(&loose),
            med(&calibrated),
            fmt(&loose),
            fmt(&calibrated)
        ),
    );
}

#[test]
fn criterion_8_proxy_fraction_insensitivity() {
    let _g = serial();
    let small = accuracies(SchemeName::Strong, Mode::Kmeans, 0.2, Threshold::Calibrated);
    let large = accuracies(SchemeName::Strong, Mode::Kmeans, 0.8, Threshold::Calibrated);
    let gain = med(&large) - med(&small);
    let per_seed: Vec<f64> = large.iter().zip(&small).map(|(a, b)| a - b).collect();
    report(
        8,
        gain <= 0.03,
        format!(
            "median accuracy alpha=0.8 {:.4} - alpha=0.2 {:.4} = {gain:.4} <= 0.03 (per-seed gains {})",
            med(&large),
            med(&small),
            fmt(&per_seed)
        ),
    );
}

fn finite_difference_error(sizes: &[usize], temperature: f64, rng: &mut ChaCha8Rng) -> f64 {
    let mut model = MlpModel::new(sizes, rng.random()).unwrap();
    let classes = *sizes.last().unwrap();
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    for _ in 0..4 {
        xs.push(
            (0..sizes[0])
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>(),
        );
        let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(-2.0..2.0)).collect();
        ts.push(softmax_t(&raw, 1.0));
    }
    let batch: Vec<(&[f64], &[f64])> = xs
        .iter()
        .zip(&ts)
        .map(|(x, t)| (x.as_slice(), t.as_slice()))
        .collect();
    let (_, grad) = loss_and_gradient(&model, &batch, temperature);
    let base = model.parameters();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        model.set_parameters(&p).unwrap();
        let up = loss_and_gradient(&model, &batch, temperature).0;
        p[i] = base[i] - h;
        model.set_parameters(&p).unwrap();
        let down = loss_and_gradient(&model, &batch, temperature).0;
        let numeric = (up - down) / (2.0 * h);
        let err = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-3);
        worst = worst.max(err);
    }
    model.set_parameters(&base).unwrap();
    worst
}

fn random_submissions(
    rng: &mut ChaCha8Rng,
    clients: usize,
    plan: &[usize],
    classes: usize,
) -> Vec<PredictionSet> {
    let mut subs = Vec::new();
    for c in 0..clients {
        let mut entries = std::collections::BTreeMap::new();
        for &i in plan {
            if rng.random_bool(0.6) {
                let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(-5.0..5.0)).collect();
                entries.insert(i, softmax_t(&raw, 1.0));
            }
        }
        subs.push(PredictionSet {
            client_id: c,
            entries,
            own_hits: 0,
        });
    }
    subs
}

#[test]
fn criterion_9_numerical_properties() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    let mut grad_err = 0.0f64;
    for sizes in [&[3, 4][..], &[5, 7, 4], &[4, 6, 5, 3]] {
        for tau in [1.0, 2.0] {
            grad_err = grad_err.max(finite_difference_error(sizes, tau, &mut rng));
        }
    }

    let mut softmax_err = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..12);
        let scale = [1.0, 50.0, 1000.0][rng.random_range(0..3)];
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let tau = rng.random_range(0.1..10.0);
        softmax_err = softmax_err.max((softmax_t(&logits, tau).iter().sum::<f64>() - 1.0).abs());
    }

    let mut inertia_monotone = true;
    for seed in 0..20u64 {
        let mut pts = Vec::new();
        for _ in 0..200 {
            pts.push(vec![
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
            ]);
        }
        let params = KMeansParams {
            tol: 0.0,
            max_iters: 30,
            ..KMeansParams::new(1 + (seed as usize % 6), seed)
        };
        let (_, trace) = dre::kmeans_fit_traced(&pts, &params).unwrap();
        inertia_monotone &= trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    }

    let mut simplex_err = 0.0f64;
    let mut order_err = 0.0f64;
    for _ in 0..200 {
        let plan = RoundPlan {
            round: 1,
            indices: (0..30).collect(),
        };
        let subs = random_submissions(&mut rng, 7, &plan.indices, 10);
        let agg = server_aggregate(&subs, &plan);
        for (mean, _) in agg.entries.values() {
            simplex_err = simplex_err.max((mean.iter().sum::<f64>() - 1.0).abs());
        }
        let mut shuffled = subs.clone();
        shuffled.reverse();
        shuffled.rotate_left(3);
        let other = server_aggregate(&shuffled, &plan);
        for (idx, (mean, _)) in &agg.entries {
            for (a, b) in mean.iter().zip(&other.entries[idx].0) {
                order_err = order_err.max((a - b).abs());
            }
        }
    }

    // whole-run determinism through the command line: identical CSV bytes
    let cfg = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/quick.toml");
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let code = fediskit::cli::main_with(
            ["fediskit", "run", "-c", cfg.to_str().unwrap()],
            Some(out.clone().into_os_string()),
        );
        assert_eq!(code, 0);
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let identical = run("a") == run("b");

    let pass = grad_err <= 1e-4
        && softmax_err <= 1e-6
        && inertia_monotone
        && simplex_err <= 1e-6
        && order_err <= 1e-12
        && identical;
    report(
        9,
        pass,
        format!(
            "gradient rel err {grad_err:.2e} <= 1e-4; softmax |sum-1| {softmax_err:.2e} <= 1e-6; \
             kmeans inertia non-increasing: {inertia_monotone}; aggregate |sum-1| {simplex_err:.2e} <= 1e-6; \
             submission-order diff {order_err:.2e} <= 1e-12; byte-identical metrics.csv: {identical}"
        ),
    );
}
