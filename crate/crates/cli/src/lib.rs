//! The `reparam` command line: single runs, baseline-versus-candidate
//! benchmarks, and graph and point-cloud generation.

pub mod config;
pub mod error;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use reparam_core::experiment::ModelMode;
use reparam_core::graph::TopEigenvalueReport;
use reparam_core::graph::{format_edge_list, generate};
use reparam_core::persistence::PointCloud;
use reparam_core::rng::{substream, Stream};
use reparam_core::runner::{median, speedup, DEFAULT_MARGIN};
use reparam_core::{Error as CoreError, GraphSpec, RunRecord, SpeedupReport, StateMatrix};
use serde::Serialize;

pub use config::{parse_config, read_config, serialize_config, RunConfig};
pub use error::{CliError, CliResult};

const WARMUP_ITERS: usize = 200;

/// Environment variable holding the `bench` worker count.
pub const THREADS_VAR: &str = "REPARAM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "reparam", version, about = "Gradient descent on graph problems, plain or through a GCN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one trajectory; writes trajectory.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config, defaults to ".".
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare plain descent against the configured mode over several seeds.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// First seed; overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Relative margin above the baseline's final loss.
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        /// Directory for bench.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated graph as an edge list.
    GenGraph {
        #[arg(long)]
        spec: GraphSpec,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print top Laplacian eigenvalue estimates.
        #[arg(long)]
        report: bool,
    },
    /// Write a uniform random point cloud as `x,y` rows.
    GenCloud {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        range: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs the command line and returns the process exit code.
pub fn execute<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let result = match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out),
        Command::Bench {
            config,
            seeds,
            seed,
            margin,
            out,
        } => cmd_bench(&config, seeds, seed, margin, out),
        Command::GenGraph {
            spec,
            out,
            seed,
            report,
        } => cmd_gen_graph(&spec, &out, seed, report),
        Command::GenCloud { n, range, seed, out } => cmd_gen_cloud(n, range, seed, &out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

static TEMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Validation(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let written = fs::File::create(&tmp).and_then(|mut f| {
        f.write_all(bytes)?;
        f.sync_all()
    });
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: Option<f64>,
    pub final_order_param: Option<f64>,
    pub switch_iter: Option<usize>,
    pub prefit_ms: f64,
    pub wall_ms: f64,
}

fn state_csv(w: &StateMatrix) -> String {
    let mut out = String::new();
    for row in w.values().row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<()> {
    let mut cfg = read_config(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let out = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    let plan = cfg.plan(cfg.seed)?;
    let outcome = plan.run(cfg.model.mode)?;
    let record = &outcome.record;

    let mut csv = Vec::new();
    record.write_csv(&mut csv)?;
    write_atomic(&out.join("trajectory.csv"), &csv)?;
    write_atomic(&out.join("final_state.csv"), state_csv(&record.final_state).as_bytes())?;
    if let Some(model) = &outcome.model {
        let mut bytes = Vec::new();
        model.write_checkpoint(&mut bytes)?;
        write_atomic(&out.join("model.ckpt"), &bytes)?;
    }
    let summary = Summary {
        config: &cfg,
        seed: cfg.seed,
        iterations: record.iterations_run(),
        converged: record.converged,
        final_loss: record.final_loss(),
        final_order_param: record.final_order_param(),
        switch_iter: record.switch_iter,
        prefit_ms: record.prefit_ms,
        wall_ms: record.history.last().map_or(0.0, |r| r.wall_ms),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&out.join("summary.json"), json.as_bytes())?;
    println!(
        "{} iterations, final loss {:?}, converged {}; wrote {}",
        summary.iterations,
        summary.final_loss.unwrap_or(f64::NAN),
        summary.converged,
        out.display()
    );
    Ok(())
}

/// Outcome of one seed in a benchmark sweep.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub seed: u64,
    /// `None` when the candidate never reached the threshold.
    pub report: Option<SpeedupReport>,
    pub baseline_iterations: usize,
    pub candidate_iterations: usize,
}

/// Runs the baseline and the configured mode for each seed.
pub fn bench_rows(cfg: &RunConfig, seeds: &[u64], margin: f64, threads: usize) -> CliResult<Vec<BenchRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&seed| bench_one(cfg, seed, margin)).collect())
}

fn bench_one(cfg: &RunConfig, seed: u64, margin: f64) -> CliResult<BenchRow> {
    let plan = cfg.plan(seed)?;
    // Untimed pass so neither timed run pays for cold caches.
    let mut warm = plan.clone();
    warm.stop.max_iters = warm.stop.max_iters.min(WARMUP_ITERS);
    warm.switch_at = warm.switch_at.min(warm.stop.max_iters);
    warm.run(ModelMode::Linear)?;
    let baseline: RunRecord = plan.run(ModelMode::Linear)?.record;
    let candidate = plan.run(cfg.model.mode)?.record;
    let report = match speedup(&baseline, &candidate, margin) {
        Ok(r) => Some(r),
        Err(CoreError::ThresholdNotReached(_)) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(BenchRow {
        seed,
        report,
        baseline_iterations: baseline.iterations_run(),
        candidate_iterations: candidate.iterations_run(),
    })
}

/// Worker count from [`THREADS_VAR`], 1 when unset.
pub fn thread_count() -> CliResult<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Validation(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Medians of the iteration and wall-clock speedups; a seed that never
/// reached the threshold counts as 0.
pub fn bench_medians(rows: &[BenchRow]) -> (f64, f64) {
    let iter: Vec<f64> = rows
        .iter()
        .map(|r| r.report.map_or(0.0, |s| s.iter_speedup_to_threshold))
        .collect();
    let wall: Vec<f64> = rows
        .iter()
        .map(|r| r.report.map_or(0.0, |s| s.wallclock_speedup))
        .collect();
    (median(&iter), median(&wall))
}

fn bench_table(rows: &[BenchRow]) -> String {
    let mut out = format!(
        "{:>6} {:>10} {:>10} {:>10} {:>10} {:>16} {:>16} {:>16} {:>10} {:>10}\n",
        "seed",
        "base_hit",
        "cand_hit",
        "iter_x",
        "wall_x",
        "threshold",
        "base_final",
        "cand_final",
        "base_iters",
        "cand_iters"
    );
    for r in rows {
        match &r.report {
            Some(s) => out.push_str(&format!(
                "{:>6} {:>10} {:>10} {:>10.3} {:>10.3} {:>16.8e} {:>16.8e} {:>16.8e} {:>10} {:>10}\n",
                r.seed,
                s.baseline_iters,
                s.candidate_iters,
                s.iter_speedup_to_threshold,
                s.wallclock_speedup,
                s.threshold_loss,
                s.baseline_final_loss,
                s.candidate_final_loss,
                r.baseline_iterations,
                r.candidate_iterations
            )),
            None => out.push_str(&format!(
                "{:>6} {:>10} {:>10} {:>10} {:>10} {:>16} {:>16} {:>16} {:>10} {:>10}\n",
                r.seed, "-", "never", "0", "0", "-", "-", "-", r.baseline_iterations, r.candidate_iterations
            )),
        }
    }
    let (iter, wall) = bench_medians(rows);
    let reached = rows.iter().filter(|r| r.report.is_some()).count();
    out.push_str(&format!(
        "median iter_speedup {iter:.3} wallclock_speedup {wall:.3} ({reached}/{} seeds reached the threshold)\n",
        rows.len()
    ));
    out
}

fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "seed,iter_speedup,wallclock_speedup,threshold_loss,baseline_final_loss,candidate_final_loss,baseline_iters,candidate_iters\n",
    );
    for r in rows {
        match &r.report {
            Some(s) => out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?},{},{}\n",
                r.seed,
                s.iter_speedup_to_threshold,
                s.wallclock_speedup,
                s.threshold_loss,
                s.baseline_final_loss,
                s.candidate_final_loss,
                s.baseline_iters,
                s.candidate_iters
            )),
            None => out.push_str(&format!("{},,,,,,,\n", r.seed)),
        }
    }
    out
}

fn cmd_bench(path: &Path, seeds: u64, seed: Option<u64>, margin: f64, out: Option<PathBuf>) -> CliResult<()> {
    let cfg = read_config(path)?;
    if seeds == 0 {
        return Err(CliError::Validation("--seeds must be >= 1".into()));
    }
    if !(margin >= 0.0) {
        return Err(CliError::Validation(format!("--margin must be non-negative, got {margin}")));
    }
    let first = seed.unwrap_or(cfg.seed);
    let seeds: Vec<u64> = (0..seeds).map(|k| first.wrapping_add(k)).collect();
    let rows = bench_rows(&cfg, &seeds, margin, thread_count()?)?;
    print!("{}", bench_table(&rows));
    if let Some(dir) = out {
        write_atomic(&dir.join("bench.csv"), bench_csv(&rows).as_bytes())?;
    }
    Ok(())
}

fn cmd_gen_graph(spec: &GraphSpec, out: &Path, seed: u64, report: bool) -> CliResult<()> {
    let g = generate(spec, seed)?;
    write_atomic(out, format_edge_list(&g).as_bytes())?;
    println!("{} nodes, {} edges; wrote {}", g.n(), g.edge_count(), out.display());
    if report {
        let r = TopEigenvalueReport::for_graph(&g, 200, seed)?;
        println!("average degree          {:.6}", r.average_degree);
        println!("one-shot (D + A)        {:.6}", r.one_shot_signless);
        println!("power iteration on L    {:.6}", r.power_iteration);
    }
    Ok(())
}

fn cmd_gen_cloud(n: usize, range: f64, seed: u64, out: &Path) -> CliResult<()> {
    let mut rng = substream(seed, Stream::Cloud);
    let cloud = PointCloud::random(n, range, &mut rng)?;
    write_atomic(out, cloud.to_csv().as_bytes())?;
    println!("{n} points in [-{range}, {range}]^2; wrote {}", out.display());
    Ok(())
}
