//! Synthetic scenarios with exact ground truth.
//!
//! Trajectories are closed-form, so position, velocity, acceleration,
//! attitude and body rate are all known analytically at every IMU sample.
//! The camera frame coincides with the body frame.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{backproject, project, FeatureTrack, ImageBounds, Intrinsics, Pixel};
use crate::imu::{ImuSample, ImuWindow};
use crate::lie::{Rotation, Vec3};
use crate::linear::InitState;

/// Independent random streams derived from one seed.
const STREAM_LANDMARKS: u64 = 1;
const STREAM_GYRO: u64 = 2;
const STREAM_ACCEL: u64 = 3;
const STREAM_PIXELS: u64 = 4;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario configuration: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Static,
    PureRotation,
    ConstantVelocity,
    Sinusoidal,
}

impl Motion {
    pub const ALL: [Motion; 4] = [
        Motion::Static,
        Motion::PureRotation,
        Motion::ConstantVelocity,
        Motion::Sinusoidal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Motion::Static => "static",
            Motion::PureRotation => "pure_rotation",
            Motion::ConstantVelocity => "constant_velocity",
            Motion::Sinusoidal => "sinusoidal",
        }
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Motion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Motion::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown motion '{s}'"))
    }
}

/// How IMU readings are derived from the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImuModel {
    /// Readings average the motion over each sample interval: the gyro
    /// reading is `Log(R_kᵀ R_k+1)/Δt` and the accelerometer reading yields
    /// the exact velocity increment. Discrete integration of clean readings
    /// reproduces attitude and velocity at every sample exactly.
    #[default]
    Integrated,
    /// Readings are the body rate and specific force at the sample instant.
    Instantaneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub motion: Motion,
    pub imu_model: ImuModel,
    /// Seconds.
    pub duration: f64,
    /// Hz; must be an integer multiple of `cam_rate`.
    pub imu_rate: f64,
    pub cam_rate: f64,
    pub true_bg: Vec3,
    pub true_ba: Vec3,
    /// World-frame gravity.
    pub gravity: Vec3,
    /// Per-sample standard deviations.
    pub gyro_noise_sigma: f64,
    pub accel_noise_sigma: f64,
    pub pixel_noise_sigma: f64,
    /// Default perturbation applied to ground-truth rotations by consumers.
    pub rot_perturb_sigma: f64,
    /// Landmarks spawned per batch.
    pub n_landmarks: usize,
    /// A new batch of landmarks is spawned in the camera frustum every this
    /// many seconds; `0` spawns only at the first frame.
    pub spawn_interval: f64,
    /// Range of landmark depth along the spawning optical axis, metres.
    pub depth_range: (f64, f64),
    pub seed: u64,
    pub intrinsics: Intrinsics,
    pub image: ImageBounds,
    /// Body-to-world attitude at `t = 0` as a rotation vector.
    pub initial_attitude: Vec3,
    /// World-frame velocity of the constant-velocity motion.
    pub velocity: Vec3,
    /// Body angular rate of the constant-velocity motion, rad/s.
    pub angular_rate: Vec3,
    /// Per-axis position amplitude (m) and frequency (Hz) of the sinusoidal
    /// motion.
    pub position_amplitude: Vec3,
    pub position_frequency: Vec3,
    /// Roll, pitch and yaw amplitudes (rad) and frequencies (Hz) of the
    /// oscillating attitude used by the pure-rotation and sinusoidal motions.
    pub attitude_amplitude: Vec3,
    pub attitude_frequency: Vec3,
}

impl Default for ScenarioConfig {
    /// Noise-free, level, constant-velocity motion at 200 Hz IMU / 20 Hz camera.
    fn default() -> Self {
        Self {
            motion: Motion::ConstantVelocity,
            imu_model: ImuModel::default(),
            duration: 2.0,
            imu_rate: 200.0,
            cam_rate: 20.0,
            true_bg: Vec3::zeros(),
            true_ba: Vec3::zeros(),
            gravity: Vec3::new(0.0, 0.0, -STANDARD_GRAVITY),
            gyro_noise_sigma: 0.0,
            accel_noise_sigma: 0.0,
            pixel_noise_sigma: 0.0,
            rot_perturb_sigma: 0.0,
            n_landmarks: 60,
            spawn_interval: 0.0,
            depth_range: (2.0, 8.0),
            seed: 0,
            intrinsics: Intrinsics::euroc(),
            image: ImageBounds {
                width: 752.0,
                height: 480.0,
            },
            initial_attitude: Vec3::zeros(),
            velocity: Vec3::new(0.5, 0.0, 0.0),
            angular_rate: Vec3::zeros(),
            position_amplitude: Vec3::new(0.3, 0.2, 0.1),
            position_frequency: Vec3::new(0.4, 0.55, 0.7),
            attitude_amplitude: Vec3::new(0.1, 0.1, 0.15),
            attitude_frequency: Vec3::new(0.3, 0.45, 0.25),
        }
    }
}

impl ScenarioConfig {
    /// Drone-like setup: camera looking horizontally, biases and motion of
    /// the magnitude seen in indoor flight recordings, no noise.
    pub fn preset(motion: Motion) -> Self {
        Self {
            motion,
            true_bg: Vec3::new(0.003, -0.002, 0.004),
            true_ba: Vec3::new(0.05, -0.04, 0.08),
            initial_attitude: Vec3::new(-FRAC_PI_2, 0.0, 0.0),
            velocity: Vec3::new(0.6, 0.3, 0.1),
            angular_rate: Vec3::new(0.15, -0.2, 0.1),
            attitude_amplitude: Vec3::new(0.2, 0.2, 0.3),
            spawn_interval: 0.5,
            ..Self::default()
        }
    }

    /// [`ScenarioConfig::preset`] with sensor noise typical of a MEMS IMU and
    /// a feature tracker.
    pub fn noisy_preset(motion: Motion) -> Self {
        Self {
            // Continuous densities 1.7e-4 rad/s/√Hz and 2e-3 m/s²/√Hz at 200 Hz.
            gyro_noise_sigma: 1.7e-4 * 200f64.sqrt(),
            accel_noise_sigma: 2.0e-3 * 200f64.sqrt(),
            pixel_noise_sigma: 0.5,
            ..Self::preset(motion)
        }
    }

    /// IMU samples per camera frame.
    pub fn imu_per_frame(&self) -> usize {
        (self.imu_rate / self.cam_rate).round() as usize
    }

    /// IMU sample period in integer nanoseconds.
    pub fn imu_period_ns(&self) -> i64 {
        (1e9 / self.imu_rate).round() as i64
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::ConfigInvalid(m.to_string()));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.imu_rate > 0.0 && self.cam_rate > 0.0) {
            return bad("rates must be positive");
        }
        let ratio = self.imu_rate / self.cam_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return bad("imu_rate must be an integer multiple of cam_rate");
        }
        let period = 1e9 / self.imu_rate;
        if (period - period.round()).abs() > 1e-6 {
            return bad("IMU period must be a whole number of nanoseconds");
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad("depth_range must satisfy 0 < min <= max");
        }
        if self.n_landmarks == 0 {
            return bad("n_landmarks must be positive");
        }
        if !(self.spawn_interval >= 0.0 && self.spawn_interval.is_finite()) {
            return bad("spawn_interval must be non-negative");
        }
        let sigmas = [
            self.gyro_noise_sigma,
            self.accel_noise_sigma,
            self.pixel_noise_sigma,
            self.rot_perturb_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("noise levels must be non-negative");
        }
        if !(self.image.width > 0.0 && self.image.height > 0.0) {
            return bad("image size must be positive");
        }
        Ok(())
    }
}

/// Kinematic state of the body at one instant, world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    /// Body-to-world attitude.
    pub rotation: Rotation,
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    /// Angular rate in the body frame.
    pub body_rate: Vec3,
}

/// Ground-truth pose and velocity at a camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueState {
    pub rotation: Rotation,
    pub position: Vec3,
    pub velocity: Vec3,
}

/// Roll–pitch–yaw attitude `Rz(ψ)·Ry(θ)·Rx(φ)` with each angle oscillating
/// as `A·sin(2πf·t)`; returns the rotation and its body rate.
fn oscillating_attitude(amp: &Vec3, freq: &Vec3, t: f64) -> (Rotation, Vec3) {
    let angle = |i: usize| amp[i] * (TAU * freq[i] * t).sin();
    let rate = |i: usize| amp[i] * TAU * freq[i] * (TAU * freq[i] * t).cos();
    let (phi, theta, psi) = (angle(0), angle(1), angle(2));
    let (rx, ry, rz) = (
        Rotation::about_x(phi),
        Rotation::about_y(theta),
        Rotation::about_z(psi),
    );
    let rot = rz * ry * rx;
    let body_rate = (ry * rx).transpose() * Vec3::new(0.0, 0.0, rate(2))
        + rx.transpose() * Vec3::new(0.0, rate(1), 0.0)
        + Vec3::new(rate(0), 0.0, 0.0);
    (rot, body_rate)
}

/// Closed-form trajectory of `cfg.motion` at time `t`.
pub fn kinematics(cfg: &ScenarioConfig, t: f64) -> Kinematics {
    let r0 = Rotation::exp(&cfg.initial_attitude);
    let still = |rotation, body_rate| Kinematics {
        rotation,
        position: Vec3::zeros(),
        velocity: Vec3::zeros(),
        acceleration: Vec3::zeros(),
        body_rate,
    };
    match cfg.motion {
        Motion::Static => still(r0, Vec3::zeros()),
        Motion::PureRotation => {
            let (rot, rate) = oscillating_attitude(&cfg.attitude_amplitude, &cfg.attitude_frequency, t);
            still(r0 * rot, rate)
        }
        Motion::ConstantVelocity => Kinematics {
            rotation: r0 * Rotation::exp(&(cfg.angular_rate * t)),
            position: cfg.velocity * t,
            velocity: cfg.velocity,
            acceleration: Vec3::zeros(),
            body_rate: cfg.angular_rate,
        },
        Motion::Sinusoidal => {
            let (rot, rate) = oscillating_attitude(&cfg.attitude_amplitude, &cfg.attitude_frequency, t);
            let w = cfg.position_frequency * TAU;
            let a = &cfg.position_amplitude;
            Kinematics {
                rotation: r0 * rot,
                position: Vec3::from_fn(|i, _| a[i] * (w[i] * t).sin()),
                velocity: Vec3::from_fn(|i, _| a[i] * w[i] * (w[i] * t).cos()),
                acceleration: Vec3::from_fn(|i, _| -a[i] * w[i] * w[i] * (w[i] * t).sin()),
                body_rate: rate,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub imu: ImuWindow,
    pub imu_clean: ImuWindow,
    /// Camera timestamps, seconds from the first IMU sample.
    pub frame_times: Vec<f64>,
    /// Camera timestamps in nanoseconds.
    pub frame_ns: Vec<i64>,
    /// IMU sample index of each camera frame.
    pub frame_imu_index: Vec<usize>,
    pub true_states: Vec<TrueState>,
    /// World-frame landmark positions; track `id` is the landmark index.
    pub landmarks: Vec<Vec3>,
    pub tracks: Vec<FeatureTrack>,
}

impl Scenario {
    pub fn n_frames(&self) -> usize {
        self.frame_times.len()
    }

    /// True `R_ij` between frames `i` and `j`.
    pub fn true_rotation(&self, i: usize, j: usize) -> Rotation {
        self.true_states[i].rotation.transpose() * self.true_states[j].rotation
    }

    /// Ground-truth initialization state expressed in the body frame of
    /// frame `i`, with the distance of every landmark visible in frames
    /// `i..i + count` keyed by frame offset from `i`.
    pub fn truth(&self, i: usize, count: usize) -> InitState {
        let s = &self.true_states[i];
        let rt = s.rotation.transpose();
        let mut depths = BTreeMap::new();
        for t in &self.tracks {
            for (&f, _) in t.obs.range(i..i + count) {
                let d = (self.landmarks[t.id as usize] - self.true_states[f].position).norm();
                depths.insert((f - i, t.id), d);
            }
        }
        InitState {
            g: rt * self.config.gravity,
            v: rt * s.velocity,
            ba: self.config.true_ba,
            depths,
        }
    }

    /// Tracks restricted to frames `i..i + count`, re-indexed from 0, keeping
    /// only those seen in frame `i` and at least one later frame.
    pub fn window_tracks(&self, i: usize, count: usize) -> Vec<FeatureTrack> {
        window_tracks(&self.tracks, i, count)
    }
}

/// See [`Scenario::window_tracks`].
pub fn window_tracks(tracks: &[FeatureTrack], i: usize, count: usize) -> Vec<FeatureTrack> {
    tracks
        .iter()
        .filter(|t| t.obs.contains_key(&i))
        .map(|t| t.window(i, count))
        .filter(|t| t.obs.contains_key(&0) && t.obs.len() >= 2)
        .collect()
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal3(rng: &mut ChaCha20Rng) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario, SynthError> {
    cfg.validate()?;
    let period_ns = cfg.imu_period_ns();
    let dt = period_ns as f64 * 1e-9;
    let n_samples = (cfg.duration / dt).round() as usize + 1;
    let per_frame = cfg.imu_per_frame();

    let mut gyro_rng = stream(cfg.seed, STREAM_GYRO);
    let mut accel_rng = stream(cfg.seed, STREAM_ACCEL);
    let mut clean = Vec::with_capacity(n_samples);
    let mut noisy = Vec::with_capacity(n_samples);
    let mut frame_times = Vec::new();
    let mut frame_ns = Vec::new();
    let mut frame_imu_index = Vec::new();
    let mut true_states = Vec::new();
    for k in 0..n_samples {
        let ns = k as i64 * period_ns;
        let t = ns as f64 * 1e-9;
        let kin = kinematics(cfg, t);
        let (rate, force) = match cfg.imu_model {
            ImuModel::Instantaneous => (kin.body_rate, kin.acceleration),
            ImuModel::Integrated => {
                let next = kinematics(cfg, (ns + period_ns) as f64 * 1e-9);
                let step = (kin.rotation.transpose() * next.rotation)
                    .log()
                    .map_err(|e| SynthError::ConfigInvalid(format!("rotation too fast for the IMU rate: {e}")))?;
                (step / dt, (next.velocity - kin.velocity) / dt)
            }
        };
        let gyro = rate + cfg.true_bg;
        let accel = kin.rotation.transpose() * (force - cfg.gravity) + cfg.true_ba;
        clean.push(ImuSample::new(t, gyro, accel));
        noisy.push(ImuSample::new(
            t,
            gyro + normal3(&mut gyro_rng) * cfg.gyro_noise_sigma,
            accel + normal3(&mut accel_rng) * cfg.accel_noise_sigma,
        ));
        if k % per_frame == 0 {
            frame_times.push(t);
            frame_ns.push(ns);
            frame_imu_index.push(k);
            true_states.push(TrueState {
                rotation: kin.rotation,
                position: kin.position,
                velocity: kin.velocity,
            });
        }
    }
    let invalid = |e: crate::imu::ImuError| SynthError::ConfigInvalid(e.to_string());
    let imu_clean = ImuWindow::new(clean, dt).map_err(invalid)?;
    let imu = ImuWindow::new(noisy, dt).map_err(invalid)?;

    let k = &cfg.intrinsics;
    let mut lm_rng = stream(cfg.seed, STREAM_LANDMARKS);
    let spawn_every = (cfg.spawn_interval * cfg.cam_rate).round() as usize;
    let mut landmarks = Vec::new();
    for (f, st) in true_states.iter().enumerate() {
        if f != 0 && (spawn_every == 0 || f % spawn_every != 0) {
            continue;
        }
        for _ in 0..cfg.n_landmarks {
            let z = Pixel::new(
                lm_rng.random_range(0.0..cfg.image.width),
                lm_rng.random_range(0.0..cfg.image.height),
            );
            let depth = lm_rng.random_range(cfg.depth_range.0..=cfg.depth_range.1);
            landmarks.push(st.rotation * (k.unproject(&z) * depth) + st.position);
        }
    }

    let mut px_rng = stream(cfg.seed, STREAM_PIXELS);
    let mut tracks = Vec::new();
    for (id, lm) in landmarks.iter().enumerate() {
        let mut obs = BTreeMap::new();
        for (f, st) in true_states.iter().enumerate() {
            let local = st.rotation.transpose() * (lm - st.position);
            // Noise is drawn for every (landmark, frame) pair so the stream
            // stays aligned regardless of visibility.
            let noise = Pixel::new(px_rng.sample(StandardNormal), px_rng.sample(StandardNormal))
                * cfg.pixel_noise_sigma;
            if let Ok(z) = project(&local, k) {
                let z = z + noise;
                if cfg.image.contains(&z) {
                    obs.insert(f, z);
                }
            }
        }
        if obs.len() >= 2 {
            tracks.push(FeatureTrack::new(id as u64, obs));
        }
    }

    Ok(Scenario {
        config: cfg.clone(),
        imu,
        imu_clean,
        frame_times,
        frame_ns,
        frame_imu_index,
        true_states,
        landmarks,
        tracks,
    })
}

/// `Exp(σ·z)·R` with `z` a standard normal vector drawn from `seed`.
///
/// The direction `z` depends only on the seed, so perturbations at different
/// `sigma` with the same seed are scaled copies of one another.
pub fn perturb_rotation(r: &Rotation, sigma: f64, seed: u64) -> Rotation {
    if sigma == 0.0 {
        return *r;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Rotation::exp(&(normal3(&mut rng) * sigma)) * r
}

/// Bearing of a landmark seen from a pose.
pub fn bearing(st: &TrueState, landmark: &Vec3, k: &Intrinsics) -> Option<Vec3> {
    let local = st.rotation.transpose() * (landmark - st.position);
    project(&local, k).ok().map(|z| backproject(&z, k))
}
