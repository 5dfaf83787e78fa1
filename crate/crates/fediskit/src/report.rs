//! CSV artifacts and the markdown summary.
//!
//! Column orders are fixed:
//!
//! | file | columns |
//! |------|---------|
//! | `metrics.csv` | `scenario,method,seed,round,client,accuracy,kept,candidates,uplink_floats` |
//! | `scaling.csv` | `estimator,phase,size,dim,clusters,repeat,wall_s,bytes` |
//! | `sweep.csv` | `threshold,quantile,alpha,seed,mean_acc,id_kept,ood_leak` |
//!
//! Accuracies, fractions, thresholds and proxy fractions are written with
//! four decimals; wall times with four decimals of mantissa in scientific
//! notation, since they span several orders of magnitude. Missing values
//! are empty fields. Round 0 in `metrics.csv` is the accuracy right after
//! initialization. Wall-clock time is deliberately not part of
//! `metrics.csv`, so identical runs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use fediskit_core::protocol::ExperimentResult;

use crate::bench::{fit_slopes, Estimator, Phase, ScalingRecord, SweepRecord};
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SCALING_FILE: &str = "scaling.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const REPORT_FILE: &str = "report.md";
pub const MANIFEST_FILE: &str = "manifest.txt";

const METRICS_HEADER: [&str; 9] = [
    "scenario",
    "method",
    "seed",
    "round",
    "client",
    "accuracy",
    "kept",
    "candidates",
    "uplink_floats",
];
const SCALING_HEADER: [&str; 8] = [
    "estimator",
    "phase",
    "size",
    "dim",
    "clusters",
    "repeat",
    "wall_s",
    "bytes",
];
const SWEEP_HEADER: [&str; 7] = [
    "threshold",
    "quantile",
    "alpha",
    "seed",
    "mean_acc",
    "id_kept",
    "ood_leak",
];

/// One client's accuracy after one round.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub round: usize,
    pub client: usize,
    pub accuracy: f64,
    pub kept: usize,
    pub candidates: usize,
    pub uplink_floats: usize,
}

pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt4).unwrap_or_default()
}

pub fn metrics_rows(r: &ExperimentResult) -> Vec<MetricsRow> {
    let scenario = r.scheme.name().to_string();
    let method = r.filter_mode.name().to_string();
    let row = |round, client, accuracy, kept, candidates, uplink_floats| MetricsRow {
        scenario: scenario.clone(),
        method: method.clone(),
        seed: r.seed,
        round,
        client,
        accuracy,
        kept,
        candidates,
        uplink_floats,
    };
    let mut rows: Vec<MetricsRow> = r
        .initial_accuracy
        .iter()
        .enumerate()
        .map(|(c, &a)| row(0, c, a, 0, 0, 0))
        .collect();
    for m in &r.rounds {
        let per_client = m
            .uplink_floats
            .checked_div(m.kept.iter().sum())
            .unwrap_or(0);
        for (c, &a) in m.accuracy.iter().enumerate() {
            let kept = m.kept[c];
            rows.push(row(m.round, c, a, kept, m.candidates, kept * per_client));
        }
    }
    rows
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn write_all<const N: usize>(
    path: &Path,
    header: [&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_all<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let found = r.headers().map_err(|e| Error::csv(path, e))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Config(format!(
            "{}: expected header `{}`",
            path.display(),
            header.join(",")
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_all(
        path,
        METRICS_HEADER,
        rows.iter().map(|r| {
            [
                r.scenario.clone(),
                r.method.clone(),
                r.seed.to_string(),
                r.round.to_string(),
                r.client.to_string(),
                fmt4(r.accuracy),
                r.kept.to_string(),
                r.candidates.to_string(),
                r.uplink_floats.to_string(),
            ]
        }),
    )
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    read_all(path, &METRICS_HEADER)
}

pub fn write_scaling(path: &Path, records: &[ScalingRecord]) -> Result<()> {
    write_all(
        path,
        SCALING_HEADER,
        records.iter().map(|r| {
            [
                r.estimator.name().to_string(),
                r.phase.name().to_string(),
                r.size.to_string(),
                r.dim.to_string(),
                r.clusters.to_string(),
                r.repeats.to_string(),
                format!("{:.4e}", r.wall_s),
                r.bytes.to_string(),
            ]
        }),
    )
}

#[derive(Deserialize)]
struct ScalingRow {
    estimator: String,
    phase: String,
    size: usize,
    dim: usize,
    clusters: usize,
    repeat: usize,
    wall_s: f64,
    bytes: u64,
}

pub fn read_scaling(path: &Path) -> Result<Vec<ScalingRecord>> {
    read_all::<ScalingRow>(path, &SCALING_HEADER)?
        .into_iter()
        .map(|r| {
            let bad = |what: &str, v: &str| {
                Error::Config(format!("{}: unknown {what} `{v}`", path.display()))
            };
            Ok(ScalingRecord {
                estimator: Estimator::parse(&r.estimator)
                    .ok_or_else(|| bad("estimator", &r.estimator))?,
                phase: Phase::parse(&r.phase).ok_or_else(|| bad("phase", &r.phase))?,
                size: r.size,
                dim: r.dim,
                clusters: r.clusters,
                repeats: r.repeat,
                wall_s: r.wall_s,
                bytes: r.bytes,
            })
        })
        .collect()
}

pub fn write_sweep(path: &Path, records: &[SweepRecord]) -> Result<()> {
    write_all(
        path,
        SWEEP_HEADER,
        records.iter().map(|r| {
            [
                fmt_opt(r.threshold),
                fmt_opt(r.quantile),
                fmt4(r.alpha),
                r.seed.to_string(),
                fmt4(r.mean_acc),
                fmt_opt(r.id_kept),
                fmt_opt(r.ood_leak),
            ]
        }),
    )
}

#[derive(Deserialize)]
struct SweepRow {
    threshold: Option<f64>,
    quantile: Option<f64>,
    alpha: f64,
    seed: u64,
    mean_acc: f64,
    id_kept: Option<f64>,
    ood_leak: Option<f64>,
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRecord>> {
    Ok(read_all::<SweepRow>(path, &SWEEP_HEADER)?
        .into_iter()
        .map(|r| SweepRecord {
            threshold: r.threshold,
            quantile: r.quantile,
            alpha: r.alpha,
            seed: r.seed,
            mean_acc: r.mean_acc,
            id_kept: r.id_kept,
            ood_leak: r.ood_leak,
        })
        .collect())
}

fn method_label(method: &str) -> &str {
    match method {
        "indlearn" => "IndLearn",
        "none" => "No filter",
        "kulsif" => "KuLSIF filter",
        "kmeans" => "KMeans filter",
        other => other,
    }
}

fn scenario_rank(s: &str) -> usize {
    ["strong_noniid", "weak_noniid", "iid"]
        .iter()
        .position(|x| *x == s)
        .unwrap_or(3)
}

fn method_rank(m: &str) -> usize {
    ["indlearn", "none", "kulsif", "kmeans"]
        .iter()
        .position(|x| *x == m)
        .unwrap_or(4)
}

/// Final-round mean client accuracy for every (scenario, method, seed).
pub fn final_accuracies(rows: &[MetricsRow]) -> BTreeMap<(String, String, u64), f64> {
    let mut last: BTreeMap<(String, String, u64), usize> = BTreeMap::new();
    for r in rows {
        let k = last
            .entry((r.scenario.clone(), r.method.clone(), r.seed))
            .or_insert(0);
        *k = (*k).max(r.round);
    }
    last.into_iter()
        .map(|(key, round)| {
            let accs: Vec<f64> = rows
                .iter()
                .filter(|r| {
                    r.round == round && (&r.scenario, &r.method, r.seed) == (&key.0, &key.1, key.2)
                })
                .map(|r| r.accuracy)
                .collect();
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            (key, mean)
        })
        .collect()
}

/// Scenario × method accuracy table, one row per pair.
pub fn accuracy_table(rows: &[MetricsRow]) -> String {
    let mut groups: BTreeMap<(usize, String, usize, String), Vec<f64>> = BTreeMap::new();
    for ((scenario, method, _), acc) in final_accuracies(rows) {
        groups
            .entry((
                scenario_rank(&scenario),
                scenario,
                method_rank(&method),
                method,
            ))
            .or_default()
            .push(acc);
    }
    let mut out =
        String::from("| Scenario | Method | Seeds | Mean accuracy (%) | Min (%) | Max (%) |\n");
    out.push_str("|---|---|---:|---:|---:|---:|\n");
    for ((_, scenario, _, method), accs) in groups {
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let min = accs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            out,
            "| {scenario} | {} | {} | {:.2} | {:.2} | {:.2} |",
            method_label(&method),
            accs.len(),
            100.0 * mean,
            100.0 * min,
            100.0 * max
        );
    }
    out
}

pub fn sweep_table(records: &[SweepRecord]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "–".to_string(), fmt4);
    let mut out = String::from(
        "| Threshold | Quantile | Alpha | Seed | Mean accuracy | ID kept | OOD leak |\n",
    );
    out.push_str("|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in records {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            opt(r.threshold),
            opt(r.quantile),
            fmt4(r.alpha),
            r.seed,
            fmt4(r.mean_acc),
            opt(r.id_kept),
            opt(r.ood_leak)
        );
    }
    out
}

pub fn scaling_table(records: &[ScalingRecord]) -> Result<String> {
    let mut out =
        String::from("| Estimator | Phase | Clusters | log-log slope |\n|---|---|---:|---:|\n");
    for s in fit_slopes(records)? {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.3} |",
            s.estimator.name(),
            s.phase.name(),
            s.clusters,
            s.slope
        );
    }
    out.push_str("\n| Estimator | Phase | Clusters | Size | Median time (s) | Accounted bytes |\n");
    out.push_str("|---|---|---:|---:|---:|---:|\n");
    for r in records {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.4e} | {} |",
            r.estimator.name(),
            r.phase.name(),
            r.clusters,
            r.size,
            r.wall_s,
            r.bytes
        );
    }
    Ok(out)
}

/// `metrics.csv` files in `dir` and its immediate subdirectories, sorted.
fn metrics_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let own = dir.join(METRICS_FILE);
    if own.is_file() {
        found.push(own);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    found.extend(
        subdirs
            .into_iter()
            .map(|d| d.join(METRICS_FILE))
            .filter(|p| p.is_file()),
    );
    Ok(found)
}

/// Builds the markdown summary of every artifact found under `dir`.
/// Metrics from immediate subdirectories are pooled, so a directory of
/// per-method runs becomes one accuracy table.
pub fn render_report(dir: &Path) -> Result<String> {
    let mut out = String::from("# fediskit report\n");
    let mut sections = 0;
    let metrics = metrics_files(dir)?;
    if !metrics.is_empty() {
        let mut rows = Vec::new();
        for p in &metrics {
            rows.extend(read_metrics(p)?);
        }
        out.push_str("\n## Final test accuracy\n\n");
        out.push_str(&accuracy_table(&rows));
        sections += 1;
    }
    let sweep = dir.join(SWEEP_FILE);
    if sweep.is_file() {
        out.push_str("\n## Threshold and proxy-fraction sweep\n\n");
        out.push_str(&sweep_table(&read_sweep(&sweep)?));
        sections += 1;
    }
    let scaling = dir.join(SCALING_FILE);
    if scaling.is_file() {
        out.push_str("\n## Estimator scaling\n\n");
        out.push_str(&scaling_table(&read_scaling(&scaling)?)?);
        sections += 1;
    }
    if sections == 0 {
        return Err(Error::Config(format!(
            "{}: no {METRICS_FILE}, {SWEEP_FILE} or {SCALING_FILE} found",
            dir.display()
        )));
    }
    Ok(out)
}

pub fn write_report(dir: &Path) -> Result<PathBuf> {
    let text = render_report(dir)?;
    let path = dir.join(REPORT_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
