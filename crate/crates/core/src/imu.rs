//! IMU sample containers and bias-corrected preintegration.
//!
//! The integrators are deterministic: measurement noise only exists in the
//! readings themselves. Biases are constant over a window.

use thiserror::Error;

use crate::lie::{self, Mat3, Rotation, Vec3};

/// Relative gap tolerance between consecutive samples.
pub const GAP_TOLERANCE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImuError {
    #[error("IMU window is empty")]
    Empty,
    #[error("sampling interval must be positive and finite, got {0}")]
    InvalidDt(f64),
    #[error("sample {index} has a non-finite value")]
    NonFinite { index: usize },
    #[error("sample {index} does not advance in time")]
    NonMonotonic { index: usize },
    #[error("gap before sample {index} is {gap} s, more than 10% off the nominal interval")]
    IrregularGap { index: usize, gap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Seconds, relative to the window's time origin.
    pub t: f64,
    /// Angular rate reading, rad/s.
    pub gyro: Vec3,
    /// Specific force reading, m/s².
    pub accel: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vec3, accel: Vec3) -> Self {
        Self { t, gyro, accel }
    }
}

/// Uniformly sampled IMU readings.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow {
    samples: Vec<ImuSample>,
    dt: f64,
    /// Absolute timestamp (ns) of `t = 0`.
    origin_ns: i64,
}

impl ImuWindow {
    pub fn new(samples: Vec<ImuSample>, dt: f64) -> Result<Self, ImuError> {
        Self::with_origin(samples, dt, 0)
    }

    pub fn with_origin(samples: Vec<ImuSample>, dt: f64, origin_ns: i64) -> Result<Self, ImuError> {
        if samples.is_empty() {
            return Err(ImuError::Empty);
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(ImuError::InvalidDt(dt));
        }
        for (index, s) in samples.iter().enumerate() {
            let finite = s.t.is_finite()
                && s.gyro.iter().all(|x| x.is_finite())
                && s.accel.iter().all(|x| x.is_finite());
            if !finite {
                return Err(ImuError::NonFinite { index });
            }
        }
        for (index, pair) in samples.windows(2).enumerate() {
            let gap = pair[1].t - pair[0].t;
            if gap <= 0.0 {
                return Err(ImuError::NonMonotonic { index: index + 1 });
            }
            if (gap - dt).abs() > GAP_TOLERANCE * dt {
                return Err(ImuError::IrregularGap { index: index + 1, gap });
            }
        }
        Ok(Self { samples, dt, origin_ns })
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn origin_ns(&self) -> i64 {
        self.origin_ns
    }

    /// Number of samples, `L`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `L·Δt`.
    pub fn span(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn start(&self) -> f64 {
        self.samples[0].t
    }

    /// Samples with `t_start <= t < t_end`, judged at half-interval resolution
    /// so that stamps equal to a frame time up to rounding land on the right side.
    pub fn between(&self, t_start: f64, t_end: f64) -> Result<ImuWindow, ImuError> {
        let half = 0.5 * self.dt;
        let samples: Vec<ImuSample> = self
            .samples
            .iter()
            .filter(|s| s.t >= t_start - half && s.t < t_end - half)
            .copied()
            .collect();
        if samples.is_empty() {
            return Err(ImuError::Empty);
        }
        Ok(ImuWindow {
            samples,
            dt: self.dt,
            origin_ns: self.origin_ns,
        })
    }

    /// Copy with every gyro reading replaced by `f(reading)`.
    pub fn map_gyro(&self, f: impl Fn(&Vec3) -> Vec3) -> ImuWindow {
        let samples = self
            .samples
            .iter()
            .map(|s| ImuSample::new(s.t, f(&s.gyro), s.accel))
            .collect();
        ImuWindow {
            samples,
            dt: self.dt,
            origin_ns: self.origin_ns,
        }
    }
}

/// Output of [`preintegrate_state`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreintState {
    /// Relative rotation `R_ij` over the window.
    pub rotation: Rotation,
    /// Velocity at the end of the window, `v_j`.
    pub velocity: Vec3,
    /// Displacement `t_j - t_i`.
    pub translation: Vec3,
}

/// Per-sample rotation increments `Exp((ω̃_k - b_g)Δt)`.
fn increments<'a>(w: &'a ImuWindow, bg: &'a Vec3) -> impl Iterator<Item = Rotation> + 'a {
    let dt = w.dt;
    w.samples.iter().map(move |s| Rotation::exp(&((s.gyro - bg) * dt)))
}

/// `∏ₖ Exp((ω̃_k - b_g)Δt)`, multiplied left to right.
pub fn preintegrate_rotation(w: &ImuWindow, bg: &Vec3) -> Rotation {
    lie::product(increments(w, bg))
}

/// Euler integration of rotation, velocity and translation with the body
/// starting at attitude `r0` and velocity `v0`.
pub fn preintegrate_state(
    w: &ImuWindow,
    bg: &Vec3,
    ba: &Vec3,
    g: &Vec3,
    r0: &Rotation,
    v0: &Vec3,
) -> PreintState {
    let dt = w.dt;
    let mut attitude = *r0;
    let mut relative = Rotation::identity();
    let mut v = *v0;
    let mut t = Vec3::zeros();
    for (k, (s, step)) in w.samples.iter().zip(increments(w, bg)).enumerate() {
        let acc = attitude * (s.accel - ba);
        t += v * dt + (g + acc) * (0.5 * dt * dt);
        v += (g + acc) * dt;
        attitude = attitude * step;
        relative = relative * step;
        if (k + 1) % lie::RENORMALIZE_EVERY == 0 {
            attitude = attitude.renormalized();
            relative = relative.renormalized();
        }
    }
    PreintState {
        rotation: relative,
        velocity: v,
        translation: t,
    }
}

/// Double integrals `s = ∫(t_end - τ) R_iτ ã_τ dτ` and `Γ = ∫(t_end - τ) R_iτ dτ`.
///
/// Each sample contributes over `[t_k, t_k + Δt)` with weight
/// `(t_end - t_k - Δt/2)·Δt`, which is exactly the accumulation performed by
/// the Euler translation update of [`preintegrate_state`]. With this weight
/// `R_iᵀ(p_j - p_i) = v·T + ½g·T² + s - Γ·b_a` holds for the discrete
/// integrator without any residual quadrature term.
pub fn compute_s_gamma(w: &ImuWindow, bg: &Vec3, t_end: f64) -> (Vec3, Mat3) {
    let dt = w.dt;
    let mut s = Vec3::zeros();
    let mut gamma = Mat3::zeros();
    let mut rot = Rotation::identity();
    for (k, (sample, step)) in w.samples.iter().zip(increments(w, bg)).enumerate() {
        let weight = (t_end - sample.t - 0.5 * dt) * dt;
        s += (rot * sample.accel) * weight;
        gamma += rot.matrix() * weight;
        rot = rot * step;
        if (k + 1) % lie::RENORMALIZE_EVERY == 0 {
            rot = rot.renormalized();
        }
    }
    (s, gamma)
}
