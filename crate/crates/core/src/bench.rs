//! Gyroscope-bias benchmark: every solver on the same first-frame-pair
//! windows, with the reference relative rotation corrupted by increasing
//! amounts of rotation noise.

use serde::Serialize;
use thiserror::Error;

use crate::gyro::BiasMethod;
use crate::imu::{ImuError, ImuWindow};
use crate::lie::{Rotation, Vec3};
use crate::pipeline::{attempt_seed, median_time_us};
use crate::synth::{generate, perturb_rotation, Motion, Scenario, ScenarioConfig, SynthError};

/// Rotation-noise levels of the standard sweep, degrees.
pub const DEFAULT_SIGMAS_DEG: [f64; 4] = [0.0, 0.006, 0.03, 0.06];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Imu(#[from] ImuError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub trials: usize,
    pub sigmas_deg: Vec<f64>,
    pub seed: u64,
    pub true_bg: Vec3,
    /// Repetitions per timed solver call.
    pub timing_reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            trials: 500,
            sigmas_deg: DEFAULT_SIGMAS_DEG.to_vec(),
            seed: 0,
            true_bg: Vec3::new(0.02, -0.01, 0.03),
            timing_reps: 200,
        }
    }
}

/// Error statistics of one solver at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub sigma_deg: f64,
    pub method: BiasMethod,
    pub trials: usize,
    pub failures: usize,
    /// Mean, median and maximum of `‖b̂g − bg‖`, rad/s.
    pub mean_err: f64,
    pub median_err: f64,
    pub max_err: f64,
    /// `|mean_err − mean_err(Gauss-Newton)| / mean_err(Gauss-Newton)`.
    pub gap_vs_baseline: f64,
    /// Mean per-trial `‖b̂g − b̂g(Gauss-Newton)‖` over `mean_err(Gauss-Newton)`,
    /// on trials where both succeeded.
    pub paired_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchTiming {
    pub method: BiasMethod,
    pub median_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub timings: Vec<BenchTiming>,
}

impl BenchReport {
    pub fn row(&self, sigma_deg: f64, method: BiasMethod) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.sigma_deg == sigma_deg && r.method == method)
    }

    pub fn timing(&self, method: BiasMethod) -> Option<f64> {
        self.timings.iter().find(|t| t.method == method).map(|t| t.median_us)
    }
}

/// First-frame-pair windows of a noise-free drone-like trajectory; trial `k`
/// starts at frame `k` modulo the sequence length.
struct Windows {
    scenario: Scenario,
}

impl Windows {
    fn new(cfg: &BenchConfig) -> Result<Self, SynthError> {
        let frames = cfg.trials.max(1) + 1;
        let sc = ScenarioConfig {
            true_bg: cfg.true_bg,
            seed: cfg.seed,
            n_landmarks: 1,
            duration: frames as f64 / 20.0,
            ..ScenarioConfig::preset(Motion::Sinusoidal)
        };
        Ok(Self {
            scenario: generate(&sc)?,
        })
    }

    fn get(&self, trial: usize) -> Result<(ImuWindow, Rotation), ImuError> {
        let sc = &self.scenario;
        let i = trial % (sc.n_frames() - 1);
        let w = sc
            .imu_clean
            .between(sc.frame_times[i], sc.frame_times[i + 1])?;
        Ok((w, sc.true_rotation(i, i + 1)))
    }
}

fn median(sorted: &[f64]) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Runs every solver on `cfg.trials` windows at every noise level.
///
/// The perturbation direction of trial `k` is the same at every noise level,
/// so levels differ only in magnitude.
pub fn run_bias_bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    let windows = Windows::new(cfg)?;
    let mut rows = Vec::new();
    for &sigma_deg in &cfg.sigmas_deg {
        let sigma = sigma_deg.to_radians();
        let mut errors: Vec<Vec<f64>> = vec![Vec::new(); BiasMethod::ALL.len()];
        let mut paired: Vec<Vec<f64>> = vec![Vec::new(); BiasMethod::ALL.len()];
        let mut failures = vec![0; BiasMethod::ALL.len()];
        for trial in 0..cfg.trials {
            let (w, r_true) = windows.get(trial)?;
            let r_ij = perturb_rotation(&r_true, sigma, attempt_seed(cfg.seed, trial));
            let solved: Vec<_> = BiasMethod::ALL.iter().map(|m| m.solve(&r_ij, &w).ok()).collect();
            for (m, b) in solved.iter().enumerate() {
                match b {
                    Some(b) => errors[m].push((b - cfg.true_bg).norm()),
                    None => failures[m] += 1,
                }
                if let (Some(b), Some(base)) = (b, &solved[0]) {
                    paired[m].push((b - base).norm());
                }
            }
        }
        let mean = |e: &[f64]| e.iter().sum::<f64>() / e.len() as f64;
        let baseline = mean(&errors[0]);
        for (m, method) in BiasMethod::ALL.iter().enumerate() {
            let e = &mut errors[m];
            e.sort_by(f64::total_cmp);
            let mean_err = mean(e);
            rows.push(BenchRow {
                sigma_deg,
                method: *method,
                trials: cfg.trials,
                failures: failures[m],
                mean_err,
                median_err: median(e),
                max_err: e.last().copied().unwrap_or(f64::NAN),
                gap_vs_baseline: (mean_err - baseline).abs() / baseline,
                paired_gap: mean(&paired[m]) / baseline,
            });
        }
    }

    let (w, r_ij) = windows.get(0)?;
    let timings = BiasMethod::ALL
        .iter()
        .map(|m| BenchTiming {
            method: *m,
            median_us: median_time_us(cfg.timing_reps, || m.solve(&r_ij, &w)),
        })
        .collect();
    Ok(BenchReport { rows, timings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_errors_are_small_and_baseline_exact() {
        let cfg = BenchConfig {
            trials: 40,
            sigmas_deg: vec![0.0],
            timing_reps: 1,
            ..BenchConfig::default()
        };
        let rep = run_bias_bench(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 4);
        assert!(rep.row(0.0, BiasMethod::GaussNewton).unwrap().mean_err < 1e-8);
        for m in [BiasMethod::Average, BiasMethod::Arithmetic, BiasMethod::Commutative] {
            let r = rep.row(0.0, m).unwrap();
            assert_eq!(r.failures, 0);
            assert!(r.mean_err < 1e-3, "{m}: {}", r.mean_err);
        }
        assert_eq!(rep.timings.len(), 4);
    }

    #[test]
    fn noise_dominates_at_the_largest_level() {
        let cfg = BenchConfig {
            trials: 60,
            sigmas_deg: vec![0.06],
            timing_reps: 1,
            ..BenchConfig::default()
        };
        let rep = run_bias_bench(&cfg).unwrap();
        let base = rep.row(0.06, BiasMethod::GaussNewton).unwrap().mean_err;
        // 0.06° over one 50 ms frame interval is of order 0.02 rad/s.
        assert!(base > 5e-3 && base < 0.1, "{base}");
        assert!(rep.rows.iter().all(|r| r.gap_vs_baseline < 0.05));
        assert!(rep.rows.iter().all(|r| r.paired_gap < 0.05));
    }

    #[test]
    fn paired_gap_shrinks_with_noise() {
        let cfg = BenchConfig {
            trials: 50,
            timing_reps: 1,
            ..BenchConfig::default()
        };
        let rep = run_bias_bench(&cfg).unwrap();
        for m in [BiasMethod::Average, BiasMethod::Arithmetic, BiasMethod::Commutative] {
            let gaps: Vec<f64> = cfg.sigmas_deg.iter().map(|&s| rep.row(s, m).unwrap().paired_gap).collect();
            assert!(gaps.windows(2).all(|g| g[1] < g[0]), "{m}: {gaps:?}");
        }
        assert_eq!(rep.row(0.03, BiasMethod::GaussNewton).unwrap().paired_gap, 0.0);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 5.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
