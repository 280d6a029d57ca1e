//! Initialization attempts: rotation and gyro bias from the first frame pair,
//! then a growing window of frames gated by the two observability stages,
//! then the linear solve.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::camera::{FeatureTrack, Intrinsics};
use crate::gyro::{BiasMethod, GyroError};
use crate::imu::{ImuError, ImuWindow};
use crate::ingest::{Dataset, GroundTruth, IngestError};
use crate::lie::{Rotation, Vec3};
use crate::linear::{build_system, solve_with, FramePreint, InitState, LinearError, SolveMethod};
use crate::observability::{
    full_obs_test, mean_parallax, translation_obs_test, ObsConfig, ObsError, ObsTrace, TraceStep,
};
use crate::synth::{perturb_rotation, window_tracks, STANDARD_GRAVITY};

/// Frames examined per attempt before giving up.
pub const DEFAULT_MAX_FRAMES: usize = 60;
/// Seconds between attempt start times.
pub const DEFAULT_ATTEMPT_INTERVAL: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("attempt at frame {start} needs at least two frames")]
    NotEnoughFrames { start: usize },
    #[error("state never became observable within {frames} frames")]
    NeverObservable { frames: usize },
    #[error("vector has zero length")]
    ZeroVector,
    #[error("rotation source has no attitude for frame {frame}")]
    MissingRotation { frame: usize },
    #[error(transparent)]
    Gyro(#[from] GyroError),
    #[error(transparent)]
    Imu(#[from] ImuError),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl PipelineError {
    /// Short machine-readable status label.
    pub fn status(&self) -> &'static str {
        match self {
            PipelineError::NeverObservable { .. } => "never_observable",
            PipelineError::Linear(LinearError::RankDeficient { .. }) => "rank_deficient",
            _ => "error",
        }
    }
}

/// Where the first-frame-pair rotation comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum RotationSource {
    /// Body-to-world attitude of every frame; `R_ij = A_iᵀ A_j`.
    Provided(Vec<Rotation>),
    /// Ground-truth attitudes with `R_ij` perturbed by `Exp(η)`,
    /// `η ~ N(0, σ²I)`, drawn per attempt from `seed`.
    GroundTruthPerturbed {
        attitudes: Vec<Rotation>,
        sigma: f64,
        seed: u64,
    },
}

impl RotationSource {
    pub fn relative(&self, i: usize, j: usize) -> Result<Rotation, PipelineError> {
        let attitudes = match self {
            RotationSource::Provided(a) => a,
            RotationSource::GroundTruthPerturbed { attitudes, .. } => attitudes,
        };
        let get = |f: usize| attitudes.get(f).ok_or(PipelineError::MissingRotation { frame: f });
        let r_ij = get(i)?.transpose() * get(j)?;
        Ok(match self {
            RotationSource::Provided(_) => r_ij,
            RotationSource::GroundTruthPerturbed { sigma, seed, .. } => {
                perturb_rotation(&r_ij, *sigma, attempt_seed(*seed, i))
            }
        })
    }
}

/// Per-attempt seed; attempts at different frames draw independent noise.
pub fn attempt_seed(seed: u64, start: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(start as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub obs: ObsConfig,
    pub bias_method: BiasMethod,
    pub solve: SolveMethod,
    pub max_frames: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            obs: ObsConfig::default(),
            bias_method: BiasMethod::Arithmetic,
            solve: SolveMethod::default(),
            max_frames: DEFAULT_MAX_FRAMES,
        }
    }
}

/// Sensor data shared by all attempts of a run.
#[derive(Debug, Clone, Copy)]
pub struct InitInput<'a> {
    pub imu: &'a ImuWindow,
    /// Tracks indexed by global frame number.
    pub tracks: &'a [FeatureTrack],
    /// Frame times in the IMU time base.
    pub frame_times: &'a [f64],
    pub intrinsics: &'a Intrinsics,
}

impl<'a> InitInput<'a> {
    pub fn from_dataset(ds: &'a Dataset) -> Self {
        Self {
            imu: &ds.imu,
            tracks: &ds.tracks,
            frame_times: &ds.frame_times,
            intrinsics: &ds.intrinsics,
        }
    }
}

/// Wall-clock microseconds spent in each stage of one attempt.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StageTimings {
    pub bias_us: f64,
    pub stage1_us: f64,
    pub stage2_us: f64,
    pub solve_us: f64,
    pub total_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitAttemptResult {
    pub start_frame: usize,
    /// Frame at which the solve ran.
    pub trigger_frame: usize,
    pub init: InitState,
    pub bg: Vec3,
    /// Rotation between the first two frames used for the bias.
    pub r_ij: Rotation,
    pub trace: ObsTrace,
    pub window_s: f64,
    pub timings: StageTimings,
}

fn elapsed_us(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e6
}

/// One initialization attempt whose first frame is `start`.
///
/// Returns the trace alongside the outcome so that failed attempts can still
/// be inspected.
pub fn run_attempt(
    input: &InitInput,
    start: usize,
    rotations: &RotationSource,
    cfg: &PipelineConfig,
) -> (Result<InitAttemptResult, PipelineError>, ObsTrace) {
    let mut trace = ObsTrace::default();
    let res = attempt(input, start, rotations, cfg, &mut trace);
    (res, trace)
}

pub fn run_initialization(
    input: &InitInput,
    start: usize,
    rotations: &RotationSource,
    cfg: &PipelineConfig,
) -> Result<InitAttemptResult, PipelineError> {
    run_attempt(input, start, rotations, cfg).0
}

fn attempt(
    input: &InitInput,
    start: usize,
    rotations: &RotationSource,
    cfg: &PipelineConfig,
    trace: &mut ObsTrace,
) -> Result<InitAttemptResult, PipelineError> {
    cfg.obs.validate()?;
    let total = Instant::now();
    let times = input.frame_times;
    if start + 1 >= times.len() {
        return Err(PipelineError::NotEnoughFrames { start });
    }
    let t_i = times[start];

    let r_ij = rotations.relative(start, start + 1)?;
    trace.steps.push(TraceStep::Rotation);

    let clock = Instant::now();
    let first_pair = input.imu.between(t_i, times[start + 1])?;
    let bg = cfg.bias_method.solve(&r_ij, &first_pair)?;
    trace.steps.push(TraceStep::GyroBias);
    let mut timings = StageTimings {
        bias_us: elapsed_us(clock),
        ..StageTimings::default()
    };

    let last = (start + cfg.max_frames).min(times.len() - 1);
    let mut preints: Vec<FramePreint> = Vec::new();
    let mut prev_rho = None;
    let mut passes = 0;
    for frame in start + 1..=last {
        let j = frame - start;
        let clock = Instant::now();
        let pre = FramePreint::integrate(input.imu, t_i, times[frame], j, &bg)?;
        let tracks = window_tracks(input.tracks, start, j + 1);
        let parallax = mean_parallax(&tracks, j, &pre.rotation, input.intrinsics)
            .map(|p| p.mean)
            .unwrap_or(0.0);
        let stage1 = translation_obs_test(parallax, &cfg.obs);
        preints.push(pre);
        timings.stage1_us += elapsed_us(clock);
        trace.parallax.push((frame, parallax));
        trace.steps.push(TraceStep::Stage1 {
            frame,
            parallax,
            pass: stage1,
        });
        if !stage1 {
            continue;
        }
        trace.trigger_frame_stage1.get_or_insert(frame);

        let clock = Instant::now();
        let sys = build_system(&tracks, &preints, input.intrinsics)?;
        let full = full_obs_test(&sys, prev_rho, &cfg.obs)?;
        timings.stage2_us += elapsed_us(clock);
        prev_rho = Some(full.rho);
        passes = if full.pass { passes + 1 } else { 0 };
        let triggered = passes >= cfg.obs.consecutive;
        trace.rho.push((frame, full.rho, full.change));
        trace.steps.push(TraceStep::Stage2 {
            frame,
            rho: full.rho,
            pass: triggered,
        });
        if !triggered {
            continue;
        }
        trace.trigger_frame_stage2 = Some(frame);

        let clock = Instant::now();
        let init = solve_with(&sys, cfg.solve)?;
        timings.solve_us = elapsed_us(clock);
        trace.steps.push(TraceStep::Solve { frame });
        timings.total_us = elapsed_us(total);
        return Ok(InitAttemptResult {
            start_frame: start,
            trigger_frame: frame,
            init,
            bg,
            r_ij,
            trace: trace.clone(),
            window_s: times[frame] - t_i,
            timings,
        });
    }
    Err(PipelineError::NeverObservable { frames: last - start + 1 })
}

/// Frames at which attempts start: the first frame, then the first frame at
/// or after every further `interval` seconds. Frames without a successor are
/// skipped.
pub fn attempt_starts(frame_times: &[f64], interval: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let Some(&t0) = frame_times.first() else {
        return out;
    };
    let mut next = t0;
    for (f, &t) in frame_times.iter().enumerate() {
        // Frame stamps are rounded to nanoseconds; compare with a margin.
        if t + 1e-9 >= next && f + 1 < frame_times.len() {
            out.push(f);
            while next <= t + 1e-9 {
                next += interval;
            }
        }
    }
    out
}

/// Outcome of one attempt in a multi-attempt run.
#[derive(Debug)]
pub struct AttemptOutcome {
    pub start_frame: usize,
    pub result: Result<InitAttemptResult, PipelineError>,
    pub trace: ObsTrace,
}

/// Runs attempts at `starts` in parallel; outcomes keep the order of `starts`.
pub fn run_attempts(
    input: &InitInput,
    starts: &[usize],
    rotations: &RotationSource,
    cfg: &PipelineConfig,
) -> Vec<AttemptOutcome> {
    starts
        .par_iter()
        .map(|&s| {
            let (result, trace) = run_attempt(input, s, rotations, cfg);
            AttemptOutcome {
                start_frame: s,
                result,
                trace,
            }
        })
        .collect()
}

/// `arccos(ĝ_est · ĝ_true)` in degrees.
pub fn gravity_direction_error(g_est: &Vec3, g_true: &Vec3) -> Result<f64, PipelineError> {
    let (a, b) = (g_est.norm(), g_true.norm());
    if !(a > 0.0 && b > 0.0) {
        return Err(PipelineError::ZeroVector);
    }
    Ok((g_est.dot(g_true) / (a * b)).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Ground-truth states at an attempt's first frame, expressed in its body
/// frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthAt {
    pub g: Vec3,
    pub v: Vec3,
    pub bg: Vec3,
    pub ba: Vec3,
}

impl TruthAt {
    /// Looks up frame `frame_ns` in `gt`, assuming world gravity along −z.
    pub fn from_groundtruth(gt: &GroundTruth, frame_ns: i64) -> Result<Self, PipelineError> {
        let e = gt.nearest(frame_ns)?;
        let rt = e.rotation.transpose();
        Ok(Self {
            g: rt * Vec3::new(0.0, 0.0, -STANDARD_GRAVITY),
            v: rt * e.velocity,
            bg: e.bg,
            ba: e.ba,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorMetrics {
    pub gravity_dir_err_deg: f64,
    pub vel_err: f64,
    pub bg_err: f64,
    pub ba_err: f64,
}

pub fn evaluate(res: &InitAttemptResult, truth: &TruthAt) -> Result<ErrorMetrics, PipelineError> {
    Ok(ErrorMetrics {
        gravity_dir_err_deg: gravity_direction_error(&res.init.g, &truth.g)?,
        vel_err: (res.init.v - truth.v).norm(),
        bg_err: (res.bg - truth.bg).norm(),
        ba_err: (res.init.ba - truth.ba).norm(),
    })
}

/// Attitudes of every frame from ground truth.
pub fn groundtruth_attitudes(gt: &GroundTruth, frame_ns: &[i64]) -> Result<Vec<Rotation>, PipelineError> {
    frame_ns
        .iter()
        .map(|&ns| Ok(gt.nearest(ns)?.rotation))
        .collect()
}

/// Deterministic per-attempt record of a results file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub trial: usize,
    pub attempt: usize,
    pub start_frame: usize,
    pub start_ts_ns: i64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trigger_frame: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trigger_ts_ns: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1_frame: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bg: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ba: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none", flatten)]
    pub errors: Option<ErrorMetrics>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// Timing record, kept apart from [`ResultRecord`] so results files stay
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRecord {
    pub trial: usize,
    pub attempt: usize,
    #[serde(flatten)]
    pub timings: StageTimings,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Builds result and timing records; errors vs ground truth are filled in
/// when `gt` is given.
pub fn records(
    trial: usize,
    outcomes: &[AttemptOutcome],
    frame_ns: &[i64],
    gt: Option<&GroundTruth>,
) -> (Vec<ResultRecord>, Vec<TimingRecord>) {
    let mut results = Vec::with_capacity(outcomes.len());
    let mut timings = Vec::new();
    for (attempt, o) in outcomes.iter().enumerate() {
        let mut rec = ResultRecord {
            trial,
            attempt,
            start_frame: o.start_frame,
            start_ts_ns: frame_ns[o.start_frame],
            status: "ok".to_string(),
            message: None,
            trigger_frame: None,
            trigger_ts_ns: None,
            window_s: None,
            stage1_frame: o.trace.trigger_frame_stage1,
            bg: None,
            g: None,
            v: None,
            ba: None,
            errors: None,
            diagnostics: Vec::new(),
        };
        match &o.result {
            Ok(r) => {
                rec.trigger_frame = Some(r.trigger_frame);
                rec.trigger_ts_ns = Some(frame_ns[r.trigger_frame]);
                rec.window_s = Some(r.window_s);
                rec.bg = Some(arr(&r.bg));
                rec.g = Some(arr(&r.init.g));
                rec.v = Some(arr(&r.init.v));
                rec.ba = Some(arr(&r.init.ba));
                rec.diagnostics = r.init.diagnostics();
                if let Some(gt) = gt {
                    match TruthAt::from_groundtruth(gt, frame_ns[o.start_frame]).and_then(|t| evaluate(r, &t)) {
                        Ok(e) => rec.errors = Some(e),
                        Err(e) => rec.diagnostics.push(format!("no error metrics: {e}")),
                    }
                }
                timings.push(TimingRecord {
                    trial,
                    attempt,
                    timings: r.timings,
                });
            }
            Err(e) => {
                rec.status = e.status().to_string();
                rec.message = Some(e.to_string());
            }
        }
        results.push(rec);
    }
    (results, timings)
}

/// Median wall-clock duration of `f` in microseconds over `reps` runs after
/// `reps / 10 + 1` warm-up runs.
pub fn median_time_us<T>(reps: usize, mut f: impl FnMut() -> T) -> f64 {
    let reps = reps.max(1);
    for _ in 0..reps / 10 + 1 {
        std::hint::black_box(f());
    }
    let mut samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            elapsed_us(t)
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}
