//! Command-line front end: config layering, subcommands and result files.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gpenkf::enkf::rng::mix_seed;
use gpenkf::experiments::{
    run_classic, run_synthetic, run_timing, ExperimentConfig, ParamSummary, RefitPolicy, RunFailure, SyntheticReport,
};
use gpenkf::geo::{run_geo, GeoConfig};
use gpenkf::ingest::{load_csv, Standardizer};
use gpenkf::{Centering, ClassicGpOptions, FilterMode, FilterState};
use serde::Serialize;

use config::{FileConfig, FilterOverrides};

pub const SCHEMA_VERSION: u32 = 1;
pub const OUT_DIR_ENV: &str = "GPENKF_OUT_DIR";
const GEO_SHUFFLE_STREAM: u64 = 0x6E0;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<gpenkf::Error> for CliError {
    fn from(e: gpenkf::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn usage(e: gpenkf::Error) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "gpenkf", version, about = "Online GP regression with ensemble Kalman filters")]
pub struct Cli {
    /// TOML config file with [experiment], [filter], [timing] and [geo] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for result files.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "results")]
    pub out_dir: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo runs on the 1-D synthetic target.
    Synthetic(SyntheticArgs),
    /// Wall time against the number of steps.
    Timing(TimingArgs),
    /// Stream geocoded price records through a 2-D filter.
    Geo(GeoArgs),
    /// Summarize a saved filter snapshot.
    SnapshotInspect {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct FilterFlags {
    /// Ensemble size N.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Liu-West discount factor.
    #[arg(long)]
    pub delta: Option<f64>,
    /// `observation` or `ensemble-mean`.
    #[arg(long, value_parser = parse_centering)]
    pub centering: Option<Centering>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl FilterFlags {
    fn overrides(&self) -> FilterOverrides {
        FilterOverrides {
            n_members: self.n,
            delta: self.delta,
            centering: self.centering,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SyntheticArgs {
    /// `dual`, `liu-west`, `joint` or `all`.
    #[arg(long, default_value = "all")]
    pub mode: String,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Number of steps.
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// Grid size.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Observations per step.
    #[arg(long = "S")]
    pub s: Option<usize>,
    /// Also fit the batch GP on each run's full history.
    #[arg(long)]
    pub classic: bool,
    #[command(flatten)]
    pub filter: FilterFlags,
}

#[derive(Debug, Clone, Args)]
pub struct TimingArgs {
    /// Comma-separated horizons.
    #[arg(long = "T", value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long = "S")]
    pub s: Option<usize>,
    /// Skip the batch GP.
    #[arg(long)]
    pub no_classic: bool,
    #[command(flatten)]
    pub filter: FilterFlags,
}

#[derive(Debug, Clone, Args)]
pub struct GeoArgs {
    /// CSV with longitude, latitude and price columns.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    /// Grid points per axis.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Records per batch.
    #[arg(long = "S")]
    pub s: Option<usize>,
    /// Number of batches.
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long)]
    pub lon_column: Option<String>,
    #[arg(long)]
    pub lat_column: Option<String>,
    #[arg(long)]
    pub value_column: Option<String>,
    #[command(flatten)]
    pub filter: FilterFlags,
}

fn parse_centering(s: &str) -> Result<Centering, String> {
    match s {
        "observation" => Ok(Centering::Observation),
        "ensemble-mean" => Ok(Centering::EnsembleMean),
        _ => Err(format!("unknown centering '{s}' (expected observation or ensemble-mean)")),
    }
}

fn parse_modes(s: &str) -> Result<Vec<FilterMode>, CliError> {
    if s == "all" {
        return Ok(FilterMode::ALL.to_vec());
    }
    s.parse::<FilterMode>().map(|m| vec![m]).map_err(usage)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    if let Command::SnapshotInspect { path } = &cli.command {
        return cmd_snapshot_inspect(path, &mut std::io::stdout().lock());
    }
    let file = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Synthetic(a) => cmd_synthetic(&file, a, &cli.out_dir),
        Command::Timing(a) => cmd_timing(&file, a, &cli.out_dir),
        Command::Geo(a) => cmd_geo(&file, a, &cli.out_dir),
        Command::SnapshotInspect { .. } => unreachable!(),
    }
}

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn experiment_from(file: &FileConfig, f: &FilterFlags) -> ExperimentConfig {
    let mut e = file.experiment();
    f.overrides().apply(&mut e.filter);
    if let Some(seed) = f.seed {
        e.seed = seed;
    }
    e
}

#[derive(Serialize)]
struct MethodSummary {
    mode: FilterMode,
    label: &'static str,
    mean_final_nmse: f64,
    final_nmse: Vec<f64>,
    params: Vec<[ParamSummary; 3]>,
    failures: Vec<RunFailure>,
}

#[derive(Serialize)]
struct ClassicSummary {
    mean_final_nmse: f64,
    final_nmse: Vec<f64>,
    /// Natural-scale (variance, lengthscale, noise variance) per run.
    params: Vec<(f64, f64, f64)>,
}

#[derive(Serialize)]
struct SyntheticResults {
    schema_version: u32,
    command: &'static str,
    experiment: serde_json::Value,
    excluded_test_points: usize,
    methods: Vec<MethodSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    classic: Option<ClassicSummary>,
}

pub fn cmd_synthetic(file: &FileConfig, a: &SyntheticArgs, out: &Path) -> Result<(), CliError> {
    let modes = parse_modes(&a.mode)?;
    let mut cfg = experiment_from(file, &a.filter);
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if let Some(t) = a.t {
        cfg.t = t;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(s) = a.s {
        cfg.s = s;
    }
    cfg.validate().map_err(usage)?;
    prepare_out_dir(out)?;

    let mut reports: Vec<SyntheticReport> = Vec::new();
    for &mode in &modes {
        let report = run_synthetic(&ExperimentConfig { mode, ..cfg.clone() })?;
        println!(
            "{:<24} NMSE {:.4}  time {:.2} s  ({} runs, {} failed)",
            mode.label(),
            report.mean_final_nmse,
            report.mean_elapsed_s,
            report.runs.len(),
            report.failures.len()
        );
        for f in &report.failures {
            eprintln!("warning: {} run {} (seed {}) failed: {}", mode, f.run, f.seed, f.error);
        }
        reports.push(report);
    }

    let mut classic = None;
    let mut classic_elapsed = Vec::new();
    if a.classic {
        let opts = ClassicGpOptions::default();
        let mut finals = Vec::new();
        let mut params = Vec::new();
        for run in 0..cfg.runs {
            let r = run_classic(&cfg, run, RefitPolicy::FinalOnly, &opts)?;
            finals.push(r.final_nmse);
            params.push(r.params.to_natural());
            classic_elapsed.push(r.elapsed_s);
        }
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        println!(
            "{:<24} NMSE {:.4}  time {:.2} s  ({} runs)",
            "classic GP",
            mean,
            classic_elapsed.iter().sum::<f64>() / classic_elapsed.len() as f64,
            cfg.runs
        );
        classic = Some(ClassicSummary {
            mean_final_nmse: mean,
            final_nmse: finals,
            params,
        });
    }

    let mut experiment = serde_json::to_value(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(obj) = experiment.as_object_mut() {
        obj.remove("mode");
        if let Some(serde_json::Value::Object(f)) = obj.get_mut("filter") {
            f.remove("seed");
        }
    }
    let results = SyntheticResults {
        schema_version: SCHEMA_VERSION,
        command: "synthetic",
        experiment,
        excluded_test_points: reports[0].excluded_test_points,
        methods: reports
            .iter()
            .map(|r| MethodSummary {
                mode: r.mode,
                label: r.mode.label(),
                mean_final_nmse: r.mean_final_nmse,
                final_nmse: r.runs.iter().map(|x| x.final_nmse).collect(),
                params: r.runs.iter().map(|x| x.params).collect(),
                failures: r.failures.clone(),
            })
            .collect(),
        classic,
    };
    write_json(&out.join("synthetic_results.json"), &results)?;

    let mut w = csv_writer(&out.join("synthetic_nmse.csv"))?;
    w.write_record(["method", "step", "run", "nmse"]).map_err(csv_err)?;
    for r in &reports {
        for run in &r.runs {
            for (step, v) in run.nmse_trace.iter().enumerate() {
                w.write_record(&[r.mode.to_string(), (step + 1).to_string(), run.run.to_string(), v.to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    // wall-clock numbers live in their own file so the others stay reproducible
    let mut w = csv_writer(&out.join("synthetic_elapsed.csv"))?;
    w.write_record(["method", "run", "elapsed_s"]).map_err(csv_err)?;
    for r in &reports {
        for run in &r.runs {
            w.write_record(&[r.mode.to_string(), run.run.to_string(), run.elapsed_s.to_string()])
                .map_err(csv_err)?;
        }
    }
    for (run, s) in classic_elapsed.iter().enumerate() {
        w.write_record(&["classic".to_string(), run.to_string(), s.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

pub fn cmd_timing(file: &FileConfig, a: &TimingArgs, out: &Path) -> Result<(), CliError> {
    let mut cfg = experiment_from(file, &a.filter);
    cfg.runs = 1;
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(s) = a.s {
        cfg.s = s;
    }
    let mut timing = file.timing.clone();
    if let Some(h) = &a.horizons {
        timing.horizons = h.clone();
    }
    if let Some(r) = a.repeats {
        timing.repeats = r;
    }
    if a.no_classic {
        timing.include_classic = false;
    }
    if timing.horizons.is_empty() || timing.horizons.contains(&0) || timing.repeats == 0 {
        return Err(CliError::Usage("timing needs positive horizons and at least one repeat".into()));
    }
    cfg.t = *timing.horizons.iter().max().expect("non-empty");
    cfg.validate().map_err(usage)?;
    prepare_out_dir(out)?;

    let table = run_timing(&cfg, &timing)?;
    println!("{:<10} {:>6} {:>10}", "method", "T", "seconds");
    for r in &table.rows {
        println!("{:<10} {:>6} {:>10.3}", r.method, r.t, r.seconds);
    }
    for (mode, fit) in &table.fits {
        println!("{mode}: {:.4} s/step, R^2 {:.4}", fit.slope, fit.r_squared);
    }
    #[derive(Serialize)]
    struct TimingResults<'a> {
        schema_version: u32,
        command: &'static str,
        timing: &'a gpenkf::experiments::TimingConfig,
        table: &'a gpenkf::experiments::TimingTable,
    }
    write_json(
        &out.join("timing_results.json"),
        &TimingResults {
            schema_version: SCHEMA_VERSION,
            command: "timing",
            timing: &timing,
            table: &table,
        },
    )?;
    let mut w = csv_writer(&out.join("timing.csv"))?;
    w.write_record(["method", "T", "seconds"]).map_err(csv_err)?;
    for r in &table.rows {
        w.write_record(&[r.method.clone(), r.t.to_string(), r.seconds.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

#[derive(Serialize)]
struct GeoResults<'a> {
    schema_version: u32,
    command: &'static str,
    input: String,
    records: usize,
    parse_skipped: usize,
    invalid_skipped: usize,
    mode: FilterMode,
    k_per_axis: usize,
    batch_size: usize,
    steps: usize,
    seed: u64,
    standardizer: Standardizer,
    /// Log-domain (mean, std) of variance, lengthscale, noise variance.
    params: [(f64, f64); 3],
    snapshots: [&'a str; 2],
    filter_snapshot: &'static str,
}

pub fn cmd_geo(file: &FileConfig, a: &GeoArgs, out: &Path) -> Result<(), CliError> {
    let mut g = file.geo.clone();
    let seed = a.filter.seed.unwrap_or(file.experiment.seed);
    a.filter.overrides().apply(&mut g.filter);
    if let Some(m) = &a.mode {
        g.mode = m.parse().map_err(usage)?;
    }
    if let Some(k) = a.k {
        g.k_per_axis = k;
    }
    if let Some(s) = a.s {
        g.batch_size = s;
    }
    if let Some(t) = a.t {
        g.steps = Some(t);
    }
    for (slot, flag) in [
        (&mut g.columns.longitude, &a.lon_column),
        (&mut g.columns.latitude, &a.lat_column),
        (&mut g.columns.value, &a.value_column),
    ] {
        if let Some(v) = flag {
            *slot = v.clone();
        }
    }
    let input = match (&a.input, &g.input) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => return Err(CliError::Usage("geo needs --input or geo.input".into())),
    };
    if !input.is_file() {
        return Err(CliError::Usage(format!("input file {} not found", input.display())));
    }
    g.filter.seed = seed;
    g.filter.validate().map_err(usage)?;
    if g.k_per_axis < 2 || g.batch_size == 0 || g.steps == Some(0) {
        return Err(CliError::Usage("geo needs K >= 2, S >= 1 and T >= 1".into()));
    }
    prepare_out_dir(out)?;

    let loaded = load_csv(&input, &g.columns)?;
    let available = loaded.records.len() / g.batch_size;
    let steps = g.steps.unwrap_or(available);
    if steps > available {
        return Err(CliError::Runtime(format!(
            "{} records give only {available} complete batches of {}, {steps} requested",
            loaded.records.len(),
            g.batch_size
        )));
    }
    let run = run_geo(
        &loaded.records,
        &GeoConfig {
            mode: g.mode,
            k_per_axis: g.k_per_axis,
            batch_size: g.batch_size,
            shuffle_seed: mix_seed(seed, GEO_SHUFFLE_STREAM),
            max_steps: Some(steps),
            filter: g.filter,
        },
    )?;

    let first_name = "geo_step1.csv";
    let last_name = format!("geo_step{}.csv", run.steps);
    run.first.write_csv(out.join(first_name))?;
    run.last.write_csv(out.join(&last_name))?;
    fs::write(out.join("geo_filter.json"), run.filter.to_snapshot_json()?).map_err(io_err(out))?;
    write_json(
        &out.join("geo_results.json"),
        &GeoResults {
            schema_version: SCHEMA_VERSION,
            command: "geo",
            input: input.display().to_string(),
            records: loaded.records.len(),
            parse_skipped: loaded.parse_skipped,
            invalid_skipped: loaded.invalid_skipped,
            mode: g.mode,
            k_per_axis: g.k_per_axis,
            batch_size: g.batch_size,
            steps: run.steps,
            seed,
            standardizer: run.standardizer,
            params: run.filter.param_summary(),
            snapshots: [first_name, &last_name],
            filter_snapshot: "geo_filter.json",
        },
    )?;
    println!(
        "{}: {} records ({} unparsable, {} invalid), {} steps of {} on a {}x{} grid",
        g.mode.label(),
        loaded.records.len(),
        loaded.parse_skipped,
        loaded.invalid_skipped,
        run.steps,
        g.batch_size,
        g.k_per_axis,
        g.k_per_axis
    );
    println!("wrote {first_name}, {last_name}, geo_filter.json to {}", out.display());
    Ok(())
}

pub fn cmd_snapshot_inspect(path: &Path, out: &mut impl Write) -> Result<(), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read snapshot {}: {e}", path.display())))?;
    let f = FilterState::from_snapshot_json(&text)?;
    let c = f.config();
    let g = f.grid();
    let state = f.state_ensemble();
    let mean = state.mean();
    let (lo, hi) = mean
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let names = ["variance", "lengthscale", "noise variance"];
    let mut text = format!(
        "mode        {} ({})\nstep        {}\nseed        {}\nmembers     {}\ngrid        {} points in {}-D{}\ncentering   {}\n",
        f.mode(),
        f.mode().label(),
        f.t(),
        c.seed,
        c.n_members,
        g.len(),
        g.dim(),
        if g.axes().is_some() { " (lattice)" } else { "" },
        match c.centering {
            Centering::Observation => "observation",
            Centering::EnsembleMean => "ensemble-mean",
        }
    );
    for (name, (m, s)) in names.iter().zip(f.param_summary()) {
        text.push_str(&format!("{name:<15} log {m:+.4} +- {s:.4}  (exp {:.4})\n", m.exp()));
    }
    text.push_str(&format!("grid mean   min {lo:.4}  max {hi:.4}\n"));
    out.write_all(text.as_bytes()).map_err(|e| CliError::Runtime(e.to_string()))
}
