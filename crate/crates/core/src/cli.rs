//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for unusable input (bad flags, unreadable or
//! malformed files), 2 when an algorithm fails outright.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench::{run_bias_bench, BenchConfig, DEFAULT_SIGMAS_DEG};
use crate::gyro::BiasMethod;
use crate::ingest::{write_jsonl, Dataset, IngestError};
use crate::observability::{ObsConfig, ObsTrace, TraceStep, DEFAULT_PARALLAX_TH, DEFAULT_RHO_CHANGE_TH};
use crate::pipeline::{
    attempt_starts, groundtruth_attitudes, records, run_attempt, run_attempts, InitInput, PipelineConfig,
    PipelineError, ResultRecord, RotationSource, TimingRecord, DEFAULT_ATTEMPT_INTERVAL, DEFAULT_MAX_FRAMES,
};
use crate::synth::{generate, Motion, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_ALGORITHM: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vinit", version, about = "Closed-form visual-inertial initialization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenarios and run initialization attempts on them.
    SynthRun(SynthRunArgs),
    /// Run initialization attempts on recorded IMU, tracks and ground truth.
    EurocRun(EurocRunArgs),
    /// Compare the gyroscope-bias solvers under rotation noise.
    BiasBench(BiasBenchArgs),
    /// Write the per-frame parallax and ρ of one attempt as CSV.
    ObsTrace(ObsTraceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GateArgs {
    /// Stage-1 mean parallax threshold, pixels.
    #[arg(long, default_value_t = DEFAULT_PARALLAX_TH)]
    pub parallax_th: f64,
    /// Stage-2 threshold on the relative change of ρ.
    #[arg(long, default_value_t = DEFAULT_RHO_CHANGE_TH)]
    pub rho_th: f64,
    #[arg(long, default_value_t = BiasMethod::Arithmetic)]
    pub bias_method: BiasMethod,
    /// Noise on the first-pair ground-truth rotation, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub sigma_rot_deg: f64,
    /// Frames examined per attempt before giving up.
    #[arg(long, default_value_t = DEFAULT_MAX_FRAMES)]
    pub max_frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl GateArgs {
    fn pipeline(&self) -> Result<PipelineConfig, CliError> {
        let obs = ObsConfig::new(self.parallax_th, self.rho_th).map_err(|e| CliError::Input(e.to_string()))?;
        if !(self.sigma_rot_deg >= 0.0 && self.sigma_rot_deg.is_finite()) {
            return Err(CliError::Input("--sigma-rot-deg must be non-negative".into()));
        }
        if self.max_frames < 2 {
            return Err(CliError::Input("--max-frames must be at least 2".into()));
        }
        Ok(PipelineConfig {
            obs,
            bias_method: self.bias_method,
            max_frames: self.max_frames,
            ..PipelineConfig::default()
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    #[arg(long, default_value_t = Motion::Sinusoidal)]
    pub motion: Motion,
    /// Seconds of data per trial.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Add IMU and pixel noise typical of a MEMS IMU and feature tracker.
    #[arg(long)]
    pub noisy: bool,
}

impl ScenarioArgs {
    fn config(&self, seed: u64) -> ScenarioConfig {
        let base = if self.noisy {
            ScenarioConfig::noisy_preset(self.motion)
        } else {
            ScenarioConfig::preset(self.motion)
        };
        ScenarioConfig {
            duration: self.duration,
            seed,
            ..base
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthRunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub gate: GateArgs,
    /// Independent scenarios; trial `k` uses seed `seed + k`.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Seconds between attempt starts.
    #[arg(long, default_value_t = DEFAULT_ATTEMPT_INTERVAL)]
    pub interval: f64,
    /// Results file (JSONL); timings go to `<out stem>.timings.jsonl`.
    #[arg(long, default_value = "results.jsonl")]
    pub out: PathBuf,
    /// Also write the first trial's data as IMU CSV, tracks and ground truth.
    #[arg(long)]
    pub export_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EurocRunArgs {
    #[arg(long)]
    pub imu: PathBuf,
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub groundtruth: PathBuf,
    #[command(flatten)]
    pub gate: GateArgs,
    #[arg(long, default_value_t = DEFAULT_ATTEMPT_INTERVAL)]
    pub interval: f64,
    #[arg(long, default_value = "results.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BiasBenchArgs {
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    /// Single noise level in degrees; without it the standard sweep runs.
    #[arg(long)]
    pub sigma_rot_deg: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Repetitions per timed solver call.
    #[arg(long, default_value_t = 200)]
    pub timing_reps: usize,
    /// Optional JSONL report; timings go to `<out stem>.timings.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ObsTraceArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub gate: GateArgs,
    /// Recorded IMU CSV; with --tracks and --groundtruth replaces the
    /// synthetic scenario.
    #[arg(long, requires_all = ["tracks", "groundtruth"])]
    pub imu: Option<PathBuf>,
    #[arg(long, requires = "imu")]
    pub tracks: Option<PathBuf>,
    #[arg(long, requires = "imu")]
    pub groundtruth: Option<PathBuf>,
    /// First frame of the attempt.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    /// CSV output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Algorithm(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Algorithm(_) => EXIT_ALGORITHM,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Algorithm(m) => f.write_str(m),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Input(e.to_string())
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::SynthRun(a) => synth_run(a),
        Command::EurocRun(a) => euroc_run(a),
        Command::BiasBench(a) => bias_bench(a),
        Command::ObsTrace(a) => obs_trace(a),
    }
}

/// `results.jsonl` → `results.timings.jsonl`.
pub fn timings_path(out: &Path) -> PathBuf {
    out.with_extension("timings.jsonl")
}

fn rotation_source(ds: &Dataset, gate: &GateArgs) -> Result<RotationSource, CliError> {
    let gt = ds
        .groundtruth
        .as_ref()
        .ok_or_else(|| CliError::Input("ground truth is required for rotations".into()))?;
    let attitudes = groundtruth_attitudes(gt, &ds.frame_ns).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(RotationSource::GroundTruthPerturbed {
        attitudes,
        sigma: gate.sigma_rot_deg.to_radians(),
        seed: gate.seed,
    })
}

/// Runs attempts every `interval` seconds over `ds`.
pub fn run_dataset(
    ds: &Dataset,
    gate: &GateArgs,
    interval: f64,
    trial: usize,
) -> Result<(Vec<ResultRecord>, Vec<TimingRecord>), CliError> {
    let cfg = gate.pipeline()?;
    if !(interval > 0.0 && interval.is_finite()) {
        return Err(CliError::Input("--interval must be positive".into()));
    }
    let rotations = rotation_source(ds, gate)?;
    let starts = attempt_starts(&ds.frame_times, interval);
    if starts.is_empty() {
        return Err(CliError::Input("need at least two camera frames".into()));
    }
    let outcomes = run_attempts(&InitInput::from_dataset(ds), &starts, &rotations, &cfg);
    Ok(records(trial, &outcomes, &ds.frame_ns, ds.groundtruth.as_ref()))
}

/// Aggregate statistics of a results file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub attempts: usize,
    pub status: BTreeMap<String, usize>,
    pub mean_window_s: Option<f64>,
    pub gravity_rmse_deg: Option<f64>,
    pub velocity_rmse: Option<f64>,
    pub ba_rmse: Option<f64>,
}

pub fn summarize(recs: &[ResultRecord]) -> Summary {
    let mut s = Summary {
        attempts: recs.len(),
        ..Summary::default()
    };
    for r in recs {
        *s.status.entry(r.status.clone()).or_default() += 1;
    }
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    s.mean_window_s = mean(recs.iter().filter_map(|r| r.window_s).collect());
    let errs: Vec<_> = recs.iter().filter_map(|r| r.errors).collect();
    let rms = |f: &dyn Fn(&crate::pipeline::ErrorMetrics) -> f64| {
        mean(errs.iter().map(|e| f(e).powi(2)).collect()).map(f64::sqrt)
    };
    s.gravity_rmse_deg = rms(&|e| e.gravity_dir_err_deg);
    s.velocity_rmse = rms(&|e| e.vel_err);
    s.ba_rmse = rms(&|e| e.ba_err);
    s
}

fn print_summary(s: &Summary, out: &Path) {
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!("attempts: {}", s.attempts);
    for (k, v) in &s.status {
        println!("  {k}: {v}");
    }
    println!("mean window [s]: {}", opt(s.mean_window_s));
    println!("gravity direction RMSE [deg]: {}", opt(s.gravity_rmse_deg));
    println!("velocity RMSE [m/s]: {}", opt(s.velocity_rmse));
    println!("accelerometer bias RMSE [m/s^2]: {}", opt(s.ba_rmse));
    println!("results: {}", out.display());
}

fn write_results(out: &Path, results: &[ResultRecord], timings: &[TimingRecord]) -> Result<(), CliError> {
    write_jsonl(out, results)?;
    write_jsonl(&timings_path(out), timings)?;
    Ok(())
}

fn synth_run(a: &SynthRunArgs) -> Result<(), CliError> {
    let mut results = Vec::new();
    let mut timings = Vec::new();
    for trial in 0..a.trials.max(1) {
        let cfg = a.scenario.config(a.gate.seed.wrapping_add(trial as u64));
        let sc = generate(&cfg).map_err(|e| CliError::Input(e.to_string()))?;
        let ds = Dataset::from_scenario(&sc);
        if trial == 0 {
            if let Some(dir) = &a.export_dir {
                std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
                ds.export(dir)?;
            }
        }
        let (r, t) = run_dataset(&ds, &a.gate, a.interval, trial)?;
        results.extend(r);
        timings.extend(t);
    }
    write_results(&a.out, &results, &timings)?;
    print_summary(&summarize(&results), &a.out);
    Ok(())
}

fn euroc_run(a: &EurocRunArgs) -> Result<(), CliError> {
    let ds = Dataset::load(&a.imu, &a.tracks, Some(&a.groundtruth))?;
    let (results, timings) = run_dataset(&ds, &a.gate, a.interval, 0)?;
    write_results(&a.out, &results, &timings)?;
    print_summary(&summarize(&results), &a.out);
    Ok(())
}

fn bias_bench(a: &BiasBenchArgs) -> Result<(), CliError> {
    if a.trials == 0 {
        return Err(CliError::Input("--trials must be positive".into()));
    }
    let sigmas_deg = match a.sigma_rot_deg {
        Some(s) if s >= 0.0 && s.is_finite() => vec![s],
        Some(_) => return Err(CliError::Input("--sigma-rot-deg must be non-negative".into())),
        None => DEFAULT_SIGMAS_DEG.to_vec(),
    };
    let cfg = BenchConfig {
        trials: a.trials,
        sigmas_deg,
        seed: a.seed,
        timing_reps: a.timing_reps,
        ..BenchConfig::default()
    };
    let rep = run_bias_bench(&cfg).map_err(|e| CliError::Algorithm(e.to_string()))?;
    println!(
        "{:>9} {:>13} {:>12} {:>12} {:>12} {:>10} {:>10} {:>8}",
        "sigma_deg", "method", "mean_err", "median_err", "max_err", "mean_gap", "paired_gap", "failures"
    );
    for r in &rep.rows {
        println!(
            "{:>9} {:>13} {:>12.6e} {:>12.6e} {:>12.6e} {:>10.3e} {:>10.3e} {:>8}",
            r.sigma_deg,
            r.method.name(),
            r.mean_err,
            r.median_err,
            r.max_err,
            r.gap_vs_baseline,
            r.paired_gap,
            r.failures
        );
    }
    for t in &rep.timings {
        println!("median time {:>13}: {:.2} us", t.method.name(), t.median_us);
    }
    if let Some(out) = &a.out {
        write_jsonl(out, &rep.rows)?;
        write_jsonl(&timings_path(out), &rep.timings)?;
    }
    Ok(())
}

/// One CSV row per frame examined by stage 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub frame: usize,
    pub t_s: f64,
    pub parallax_px: f64,
    pub stage1_pass: bool,
    pub rho: Option<f64>,
    pub rho_change: Option<f64>,
    pub stage2_pass: Option<bool>,
}

pub fn trace_rows(trace: &ObsTrace, frame_times: &[f64], start: usize) -> Vec<TraceRow> {
    let mut rows: Vec<TraceRow> = Vec::new();
    for step in &trace.steps {
        match *step {
            TraceStep::Stage1 { frame, parallax, pass } => rows.push(TraceRow {
                frame,
                t_s: frame_times[frame] - frame_times[start],
                parallax_px: parallax,
                stage1_pass: pass,
                rho: None,
                rho_change: None,
                stage2_pass: None,
            }),
            TraceStep::Stage2 { frame, rho, pass } => {
                if let Some(row) = rows.last_mut().filter(|r| r.frame == frame) {
                    row.rho = Some(rho);
                    row.stage2_pass = Some(pass);
                    row.rho_change = trace
                        .rho
                        .iter()
                        .find(|(f, _, _)| *f == frame)
                        .and_then(|(_, _, c)| *c);
                }
            }
            _ => {}
        }
    }
    rows
}

fn obs_trace(a: &ObsTraceArgs) -> Result<(), CliError> {
    let ds = match (&a.imu, &a.tracks, &a.groundtruth) {
        (Some(imu), Some(tracks), Some(gt)) => Dataset::load(imu, tracks, Some(gt))?,
        _ => {
            let sc = generate(&a.scenario.config(a.gate.seed)).map_err(|e| CliError::Input(e.to_string()))?;
            Dataset::from_scenario(&sc)
        }
    };
    let cfg = a.gate.pipeline()?;
    let rotations = rotation_source(&ds, &a.gate)?;
    if a.start + 1 >= ds.frame_times.len() {
        return Err(CliError::Input(format!("--start {} leaves no later frame", a.start)));
    }
    let (res, trace) = run_attempt(&InitInput::from_dataset(&ds), a.start, &rotations, &cfg);
    let rows = trace_rows(&trace, &ds.frame_times, a.start);

    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(File::create(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?),
        None => Box::new(io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::Input(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Input(e.to_string()))?;

    match res {
        Ok(r) => {
            eprintln!("triggered at frame {} after {:.3} s", r.trigger_frame, r.window_s);
            Ok(())
        }
        Err(e @ PipelineError::NeverObservable { .. }) => {
            eprintln!("{e}");
            Ok(())
        }
        Err(e) => Err(CliError::Algorithm(e.to_string())),
    }
}
