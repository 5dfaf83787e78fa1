//! The `fediskit` command line.
//!
//! ```text
//! fediskit run -c cfg.toml [--seed N] [--rounds R] [--filter-mode M]
//! fediskit bench-dre -c cfg.toml
//! fediskit sweep -c cfg.toml
//! fediskit report <dir>
//! ```
//!
//! Outputs go to the config's `output_dir`, or to `$FEDISKIT_OUT` when set.
//! Exit status is 0 on success, 1 on a runtime failure and 2 on a usage
//! error (bad arguments, or a config that is missing, malformed or out of
//! range).

use std::ffi::OsString;
use std::io::Write as _;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use fediskit_core::protocol::run_experiment_with;

use crate::bench::{self, ScalingParams};
use crate::config::{Mode, Overrides, RunConfig};
use crate::exec::{StdClock, Threaded};
use crate::report::{self, MANIFEST_FILE, METRICS_FILE, SCALING_FILE, SWEEP_FILE};
use crate::{Error, Result};

pub const OUT_ENV: &str = "FEDISKIT_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "fediskit",
    version,
    about = "Federated distillation with client-side ID filtering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv, manifest.txt and report.md.
    Run(ConfigArgs),
    /// Time both density-ratio estimators and write scaling.csv.
    BenchDre(ConfigArgs),
    /// Run the threshold × proxy-fraction × seed grid and write sweep.csv.
    Sweep(ConfigArgs),
    /// Regenerate report.md from the CSV files in a directory.
    Report { dir: PathBuf },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML run configuration (a manifest.txt works too).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, value_enum)]
    filter_mode: Option<Mode>,
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e),
            other => Failure::Runtime(other),
        }
    }
}

/// Runs the command line and returns the process exit status.
/// `out_env` is the value of `FEDISKIT_OUT`, if set.
pub fn main_with<I, T>(args: I, out_env: Option<OsString>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => with_config(&a, out_env, "run", cmd_run),
        Command::BenchDre(a) => with_config(&a, out_env, "bench-dre", cmd_bench),
        Command::Sweep(a) => with_config(&a, out_env, "sweep", cmd_sweep),
        Command::Report { dir } => report::write_report(&dir)
            .map(|p| println!("wrote {}", p.display()))
            .map_err(Failure::from),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Job {
    config: RunConfig,
    out: PathBuf,
    command: &'static str,
}

fn with_config(
    args: &ConfigArgs,
    out_env: Option<OsString>,
    command: &'static str,
    f: fn(&Job) -> Result<()>,
) -> std::result::Result<(), Failure> {
    let mut config = RunConfig::load(&args.config).map_err(|e| match e {
        Error::Io { .. } | Error::Config(_) => Failure::Usage(e),
        other => Failure::Runtime(other),
    })?;
    config.apply(&Overrides {
        seed: args.seed,
        rounds: args.rounds,
        filter_mode: args.filter_mode,
    })?;
    let out = out_env
        .map(PathBuf::from)
        .unwrap_or_else(|| config.output_dir.clone());
    config.output_dir = out.clone();
    std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(Error::io(&out, e)))?;
    let job = Job {
        config,
        out,
        command,
    };
    write_manifest(&job)?;
    f(&job).map_err(Failure::Runtime)
}

fn executor(config: &RunConfig) -> Threaded {
    match NonZeroUsize::new(config.threads) {
        Some(n) => Threaded::new(n),
        None => Threaded::available(),
    }
}

/// `#` comment lines with the hash, seed and versions, then the resolved
/// config. The whole file parses as a config, so it can be fed back to `-c`.
pub fn manifest_text(config: &RunConfig, command: &str) -> Result<String> {
    let body = config.to_toml()?;
    let digest = Sha256::digest(body.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(format!(
        "# fediskit {} (fediskit-core {}, {} {})\n# command: {command}\n# config_sha256: {hex}\n# seed: {}\n\
         # rerun: fediskit {command} -c {MANIFEST_FILE}\n{body}",
        env!("CARGO_PKG_VERSION"),
        // the workspace versions both crates together
        env!("CARGO_PKG_VERSION"),
        std::env::consts::OS,
        std::env::consts::ARCH,
        config.seed,
    ))
}

fn write_manifest(job: &Job) -> Result<()> {
    let path = job.out.join(MANIFEST_FILE);
    let text = manifest_text(&job.config, job.command)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn finish(out: &Path) -> Result<()> {
    let path = report::write_report(out)?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "wrote {}", path.display());
    Ok(())
}

fn cmd_run(job: &Job) -> Result<()> {
    let cfg = &job.config;
    let (train, test) = cfg.load_data()?;
    let exp = cfg.experiment()?;
    log::info!(
        "run: {} clients, {}, filter {}, {} rounds, seed {}",
        exp.num_clients,
        exp.scheme.name(),
        exp.filter_mode.name(),
        exp.rounds,
        exp.seed
    );
    let result = run_experiment_with(&train, &test, &exp, &executor(cfg), &StdClock::start())?;
    for m in &result.rounds {
        log::info!(
            "round {}/{}: mean accuracy {:.4}, {} targets, {:.2}s",
            m.round,
            exp.rounds,
            m.mean_accuracy(),
            m.aggregated,
            m.wall_seconds
        );
    }
    let path = job.out.join(METRICS_FILE);
    report::write_metrics(&path, &report::metrics_rows(&result))?;
    println!(
        "{} {} seed {}: mean accuracy {:.4}",
        exp.scheme.name(),
        exp.filter_mode.name(),
        exp.seed,
        result.mean_accuracy
    );
    finish(&job.out)
}

fn cmd_bench(job: &Job) -> Result<()> {
    let b = &job.config.bench;
    let params = ScalingParams {
        sizes: b.sizes.clone(),
        dim: b.dim,
        clusters: b.clusters.clone(),
        repeats: b.repeats,
        kmeans_iters: b.kmeans_iters,
        min_seconds: b.min_seconds,
        seed: job.config.seed,
    };
    let r = bench::bench_dre_scaling(&params)?;
    report::write_scaling(&job.out.join(SCALING_FILE), &r.records)?;
    for s in &r.slopes {
        println!(
            "{} {} (c={}): log-log slope {:.3}",
            s.estimator.name(),
            s.phase.name(),
            s.clusters,
            s.slope
        );
    }
    finish(&job.out)
}

fn cmd_sweep(job: &Job) -> Result<()> {
    let cfg = &job.config;
    let (train, test) = cfg.load_data()?;
    let base = cfg.experiment()?;
    let rules = cfg
        .sweep
        .thresholds
        .iter()
        .map(|t| t.rule())
        .collect::<Result<Vec<_>>>()?;
    let records = bench::sweep(
        &base,
        &rules,
        &cfg.sweep.alphas,
        &cfg.sweep.seeds,
        &train,
        &test,
        &executor(cfg),
    )?;
    report::write_sweep(&job.out.join(SWEEP_FILE), &records)?;
    println!("{} sweep points", records.len());
    finish(&job.out)
}
