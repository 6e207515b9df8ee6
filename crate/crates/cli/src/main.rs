//! `accmer`: train, benchmark, evaluate and simulate from the command line.
//!
//! Configuration layers, lowest to highest precedence: built-in defaults,
//! `--preset`, `--config FILE`, the `ACCMER_SEED` environment variable, then
//! explicit flags (`--seed`, `--alpha`, `--mode`, `--t-max`, `--set k=v`).
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use accmer::config::{self, canonicalize, parse_kv_text, preset, RawConfig, RunConfig};
use accmer::learner::train::{evaluate, train_run, write_curves, RunArtifacts};
use accmer::learner::{read_params, write_params, LearnerParams};
use accmer::locality::{self, CacheConfig, ModeRun, Workload};
use accmer::{AccessTrace, PredatorPrey, RngStreams, SamplerMode, Scalar};

const BUILD_ID: &str = concat!("accmer-", env!("CARGO_PKG_VERSION"), "-", env!("ACCMER_GIT_DESCRIBE"));

#[derive(Debug, Parser)]
#[command(name = "accmer", version, about = "Locality-aware prioritized multi-agent experience replay")]
struct Cli {
    /// Run seed (overrides config file and ACCMER_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "accmer-out")]
    out: PathBuf,
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a learner and write curves, trace and checkpoints.
    Train(TrainArgs),
    /// Compare the three sampler modes on one workload or recorded traces.
    Bench(BenchArgs),
    /// Greedy evaluation of a parameter checkpoint.
    Eval(EvalArgs),
    /// Run the cache simulator over a trace file.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
struct ConfigArgs {
    /// Named preset: pp0, pp15 or pp-scale.
    #[arg(long)]
    preset: Option<String>,
    /// Reuse ratio α.
    #[arg(long)]
    alpha: Option<f64>,
    /// Sampler mode: uniform, prioritized or accmer.
    #[arg(long)]
    mode: Option<String>,
    /// Total environment steps.
    #[arg(long = "t-max")]
    t_max: Option<u64>,
    /// Any config key, repeatable: `--set batch_size=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
    /// Also write the replay buffer and weight table checkpoint.
    #[arg(long)]
    save_replay: bool,
    /// Path where an external profiler wrapping this process writes its
    /// output; recorded in the manifest only.
    #[arg(long)]
    profiler_output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct CacheArgs {
    #[arg(long, default_value_t = 1 << 20)]
    capacity_bytes: u64,
    #[arg(long, default_value_t = 64)]
    line_bytes: u64,
    #[arg(long, default_value_t = 8)]
    associativity: u64,
    #[arg(long, default_value_t = 256)]
    transition_bytes: u64,
}

impl CacheArgs {
    fn config(&self) -> CacheConfig {
        CacheConfig {
            capacity_bytes: self.capacity_bytes,
            line_bytes: self.line_bytes,
            associativity: self.associativity,
            transition_bytes: self.transition_bytes,
        }
    }
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    cache: CacheArgs,
    /// Sampling calls per mode for the synthetic workload.
    #[arg(long, default_value_t = 5000)]
    calls: u64,
    /// Compare recorded trace files instead of running a workload.
    #[arg(long = "trace")]
    traces: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Parameter checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of greedy episodes.
    #[arg(long, default_value_t = 32)]
    episodes: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Binary or CSV access trace.
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    cache: CacheArgs,
}

/// Error tagged with the exit code it maps to.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(&cli, a),
        Command::Bench(a) => cmd_bench(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Simulate(a) => cmd_simulate(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn merge(base: &mut RawConfig, layer: &RawConfig) -> Result<(), Failure> {
    base.extend(canonicalize(layer).map_err(config_err)?);
    Ok(())
}

fn resolve_config(cli: &Cli, args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut raw = RawConfig::new();
    if let Some(name) = &args.preset {
        merge(&mut raw, &preset(name).map_err(config_err)?)?;
    }
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Config)?;
        merge(&mut raw, &parse_kv_text(&text).map_err(config_err)?)?;
    }
    config::apply_env_overrides(&mut raw);
    let mut flags = RawConfig::new();
    if let Some(s) = cli.seed {
        flags.insert("seed".into(), s.to_string());
    }
    if let Some(a) = args.alpha {
        flags.insert("reuse_ratio".into(), a.to_string());
    }
    if let Some(m) = &args.mode {
        flags.insert("sampler_mode".into(), m.clone());
    }
    if let Some(t) = args.t_max {
        flags.insert("total_steps".into(), t.to_string());
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(anyhow!("--set expects KEY=VALUE, got {kv:?}")))?;
        flags.insert(k.trim().into(), v.trim().into());
    }
    merge(&mut raw, &flags)?;
    config::validate_config(&raw).map_err(config_err)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Artifacts {
    curves: PathBuf,
    trace: PathBuf,
    checkpoint: PathBuf,
    replay: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    build_id: &'static str,
    command: Vec<String>,
    config: RunConfig,
    /// The resolved config in `key = value` form, loadable with `--config`.
    config_text: String,
    precision: &'static str,
    started_unix: u64,
    finished_unix: Option<u64>,
    status: &'static str,
    artifacts: Artifacts,
    profiler_output: Option<PathBuf>,
    episodes: Option<u64>,
    updates: Option<u64>,
    mean_sample_ns: Option<f64>,
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), Failure> {
    let cfg = resolve_config(cli, &args.cfg)?;
    let out = &cli.out;
    fs::create_dir_all(out.join("checkpoints")).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = RunManifest {
        build_id: BUILD_ID,
        command: std::env::args().collect(),
        config: cfg.clone(),
        config_text: cfg.to_kv_text(),
        precision: match args.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        },
        started_unix: unix_now(),
        finished_unix: None,
        status: "running",
        artifacts: Artifacts {
            curves: out.join("curves.csv"),
            trace: out.join("trace.bin"),
            checkpoint: out.join("checkpoints").join("final.bin"),
            replay: args.save_replay.then(|| out.join("checkpoints").join("replay.bin")),
        },
        profiler_output: args.profiler_output.clone(),
        episodes: None,
        updates: None,
        mean_sample_ns: None,
    };
    let manifest_path = out.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    let result = match args.precision {
        Precision::F32 => train_and_save::<f32>(&cfg, &manifest.artifacts),
        Precision::F64 => train_and_save::<f64>(&cfg, &manifest.artifacts),
    };
    manifest.finished_unix = Some(unix_now());
    match result {
        Ok(summary) => {
            manifest.status = "ok";
            manifest.episodes = Some(summary.episodes);
            manifest.updates = Some(summary.updates);
            manifest.mean_sample_ns = Some(summary.mean_sample_ns);
            write_json(&manifest_path, &manifest)?;
            println!(
                "trained {} steps ({} episodes, {} updates); artifacts in {}",
                cfg.total_steps,
                summary.episodes,
                summary.updates,
                out.display()
            );
            Ok(())
        }
        Err(e) => {
            manifest.status = "failed";
            write_json(&manifest_path, &manifest)?;
            Err(Failure::Runtime(e))
        }
    }
}

struct Summary {
    episodes: u64,
    updates: u64,
    mean_sample_ns: f64,
}

fn train_and_save<T: Scalar>(cfg: &RunConfig, paths: &Artifacts) -> anyhow::Result<Summary> {
    let run: RunArtifacts<T> = train_run(cfg)?;
    let mut f = BufWriter::new(File::create(&paths.curves)?);
    write_curves(&mut f, &run.curves)?;
    f.flush()?;
    run.trace.write_binary(BufWriter::new(File::create(&paths.trace)?))?;
    write_params(BufWriter::new(File::create(&paths.checkpoint)?), &run.params, cfg)?;
    if let Some(p) = &paths.replay {
        accmer::replay::write_checkpoint(BufWriter::new(File::create(p)?), &run.buffer, &run.table)?;
    }
    Ok(Summary {
        episodes: run.episodes,
        updates: run.updates,
        mean_sample_ns: run.sampling.mean_ns(),
    })
}

#[derive(Debug, Serialize)]
struct BenchOutput {
    build_id: &'static str,
    workload: Option<Workload>,
    window: usize,
    reuse_count: usize,
    calls: u64,
    report: locality::LocalityReport,
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> Result<(), Failure> {
    let cfg = resolve_config(cli, &args.cfg)?;
    let cache = args.cache.config();
    cache.validate().map_err(config_err)?;
    let (workload, runs) = if args.traces.is_empty() {
        let w = Workload {
            capacity: cfg.buffer_capacity,
            batch_size: cfg.batch_size,
            alpha: cfg.reuse_ratio,
            weight_decay: cfg.weight_decay,
            calls: args.calls,
            seed: cfg.seed,
        };
        let runs = SamplerMode::ALL
            .iter()
            .map(|&m| locality::run_workload(&w, m))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| anyhow!(e))?;
        (Some(w), runs)
    } else {
        let mut runs = Vec::new();
        for path in &args.traces {
            let bytes = fs::read(path).with_context(|| format!("reading trace {}", path.display()))?;
            let trace = AccessTrace::read_any(&bytes).with_context(|| format!("parsing {}", path.display()))?;
            let label = path.file_stem().map_or_else(|| trace.mode.to_string(), |s| s.to_string_lossy().into());
            runs.push(ModeRun {
                label,
                trace,
                sample_wall_ms: 0.0,
            });
        }
        (None, runs)
    };
    let report = locality::compare_modes(&cache, &runs).map_err(|e| anyhow!(e))?;
    let (d, b) = match &workload {
        Some(w) => (w.capacity, w.batch_size),
        None => (runs[0].trace.capacity as usize, runs[0].trace.batch_size as usize),
    };
    let output = BenchOutput {
        build_id: BUILD_ID,
        workload,
        window: (d / b.max(1)).max(1),
        reuse_count: config::reuse_count(cfg.reuse_ratio, b),
        calls: runs[0].trace.batches(),
        report,
    };
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    write_json(&cli.out.join("report.json"), &output)?;
    println!(
        "d={d} b={b} window={} |S-|={} calls={} cache={}B/{}B lines/{}-way",
        output.window, output.reuse_count, output.calls, cache.capacity_bytes, cache.line_bytes, cache.associativity
    );
    print!("{}", output.report.table());
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<(), Failure> {
    if args.episodes == 0 {
        return Err(Failure::Config(anyhow!("need ≥1 episode")));
    }
    let bytes = fs::read(&args.checkpoint).with_context(|| format!("reading {}", args.checkpoint.display()))?;
    // scalar width lives at byte 12 of the header
    let returns = match bytes.get(12) {
        Some(4) => eval_with::<f32>(cli, &bytes, args.episodes)?,
        _ => eval_with::<f64>(cli, &bytes, args.episodes)?,
    };
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    println!("{mean:.4} ± {std:.4} over {} episodes", returns.len());
    if cli.out.is_dir() {
        write_json(
            &cli.out.join("eval.json"),
            &serde_json::json!({ "mean": mean, "std": std, "episodes": returns.len(), "returns": returns }),
        )?;
    }
    Ok(())
}

fn eval_with<T: Scalar>(cli: &Cli, bytes: &[u8], episodes: usize) -> anyhow::Result<Vec<f64>> {
    let (params, mut cfg): (LearnerParams<T>, RunConfig) =
        read_params(bytes).context("corrupt checkpoint")?;
    if let Some(path) = &cli.config {
        let raw = canonicalize(&parse_kv_text(&fs::read_to_string(path)?)?)?;
        if let Some(limit) = raw.get("episode_limit") {
            cfg.episode_limit = limit.parse().context("episode_limit")?;
        }
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let task = PredatorPrey::from_config(&cfg);
    Ok(evaluate(&params, &task, &RngStreams::new(cfg.seed), 0, episodes)?)
}

#[derive(Debug, Serialize)]
struct SimulateOutput {
    trace: PathBuf,
    records: usize,
    cache: CacheConfig,
    hits: u64,
    misses: u64,
    miss_rate: f64,
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), Failure> {
    let cache = args.cache.config();
    cache.validate().map_err(config_err)?;
    let bytes = fs::read(&args.trace).with_context(|| format!("reading trace {}", args.trace.display()))?;
    let trace = AccessTrace::read_any(&bytes).context("malformed trace")?;
    let stats = locality::simulate_trace(&trace, &cache).map_err(|e| anyhow!(e))?;
    let output = SimulateOutput {
        trace: args.trace.clone(),
        records: trace.records.len(),
        cache,
        hits: stats.hits,
        misses: stats.misses,
        miss_rate: stats.miss_rate(),
    };
    println!("hits {} misses {} miss_rate {:.6}", output.hits, output.misses, output.miss_rate);
    if cli.out.is_dir() {
        write_json(&cli.out.join("simulate.json"), &output)?;
    }
    Ok(())
}
