//! Two-stage trigger deciding when the linear solve is well posed.
//!
//! Stage 1 measures the mean pixel parallax that rotation cannot explain.
//! Stage 2 marginalizes the depths out of `H = Ξᵀ Σ⁻¹ Ξ` and watches the
//! singular-value ratio of the 9×9 reduced Hessian settle as frames are added.

use nalgebra::{DVector, SMatrix, SVector};
use serde::Serialize;
use thiserror::Error;

use crate::camera::{predict_rotation_only, FeatureTrack, Intrinsics};
use crate::lie::{Rotation, Vec3};
use crate::linear::{LinearSystem, MOTION_DIM};

pub type Mat9 = SMatrix<f64, MOTION_DIM, MOTION_DIM>;
type Vec9 = SVector<f64, MOTION_DIM>;

/// Pivots of `H_λλ` at or below this fraction of its largest diagonal entry
/// are treated as zero when marginalizing the depths.
pub const HESSIAN_PINV_CUTOFF: f64 = 1e-12;
/// Singular values of the reduced Hessian below this fraction of the largest
/// do not count as nonzero when forming the ratio.
pub const RHO_CUTOFF: f64 = 1e-12;

pub const DEFAULT_PARALLAX_TH: f64 = 2.0;
pub const DEFAULT_RHO_CHANGE_TH: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObsError {
    #[error("no feature is usable for parallax between frame 0 and frame {frame}")]
    NoValidFeatures { frame: usize },
    #[error("parallax threshold must be positive, got {0}")]
    BadParallaxThreshold(f64),
    #[error("rho change threshold must lie in (0, 1), got {0}")]
    BadRhoThreshold(f64),
    #[error("consecutive pass count must be at least 1")]
    BadConsecutive,
    #[error("row weights must be positive and finite")]
    BadWeights,
    #[error("{got} row weights given for a system with {rows} rows")]
    WeightLength { got: usize, rows: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObsConfig {
    /// Pixels; stage 1 passes when the mean parallax strictly exceeds this.
    pub parallax_th: f64,
    /// Stage 2 passes when the relative change of ρ is below this.
    pub rho_change_th: f64,
    /// Per-row variances (diagonal of Σ). `None` means Σ = I.
    pub sigma_weights: Option<Vec<f64>>,
    /// Number of consecutive stage-2 passes required before triggering.
    pub consecutive: usize,
}

impl Default for ObsConfig {
    fn default() -> Self {
        Self {
            parallax_th: DEFAULT_PARALLAX_TH,
            rho_change_th: DEFAULT_RHO_CHANGE_TH,
            sigma_weights: None,
            consecutive: 1,
        }
    }
}

impl ObsConfig {
    pub fn new(parallax_th: f64, rho_change_th: f64) -> Result<Self, ObsError> {
        let cfg = Self {
            parallax_th,
            rho_change_th,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ObsError> {
        if !(self.parallax_th > 0.0 && self.parallax_th.is_finite()) {
            return Err(ObsError::BadParallaxThreshold(self.parallax_th));
        }
        if !(self.rho_change_th > 0.0 && self.rho_change_th < 1.0) {
            return Err(ObsError::BadRhoThreshold(self.rho_change_th));
        }
        if self.consecutive == 0 {
            return Err(ObsError::BadConsecutive);
        }
        if let Some(w) = &self.sigma_weights {
            if w.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(ObsError::BadWeights);
            }
        }
        Ok(())
    }
}

/// One step of an initialization attempt, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum TraceStep {
    Rotation,
    GyroBias,
    Stage1 { frame: usize, parallax: f64, pass: bool },
    Stage2 { frame: usize, rho: f64, pass: bool },
    Solve { frame: usize },
}

/// Per-frame record of both observability stages.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ObsTrace {
    /// `(frame, mean parallax)` for every frame where stage 1 ran.
    pub parallax: Vec<(usize, f64)>,
    /// `(frame, ρ, relative change)`; the change is absent on the first
    /// evaluation.
    pub rho: Vec<(usize, f64, Option<f64>)>,
    pub trigger_frame_stage1: Option<usize>,
    pub trigger_frame_stage2: Option<usize>,
    pub steps: Vec<TraceStep>,
}

/// Mean rotation-compensated pixel displacement between frame 0 and a later
/// frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parallax {
    pub mean: f64,
    /// Features contributing to the mean.
    pub used: usize,
    /// Features seen in both frames whose rotated ray fell behind the camera.
    pub excluded: usize,
}

/// Averages `‖z_j − ẑ_j‖` over the features observed in frames 0 and `frame_j`,
/// where `ẑ_j` is the rotation-only prediction under `r_ij`.
pub fn mean_parallax(
    tracks: &[FeatureTrack],
    frame_j: usize,
    r_ij: &Rotation,
    k: &Intrinsics,
) -> Result<Parallax, ObsError> {
    let mut sum = 0.0;
    let mut used = 0;
    let mut excluded = 0;
    for t in tracks {
        let (Some(z_i), Some(z_j)) = (t.obs.get(&0), t.obs.get(&frame_j)) else {
            continue;
        };
        match predict_rotation_only(z_i, k, r_ij) {
            Ok(pred) => {
                sum += (z_j - pred).norm();
                used += 1;
            }
            Err(_) => excluded += 1,
        }
    }
    if used == 0 {
        return Err(ObsError::NoValidFeatures { frame: frame_j });
    }
    Ok(Parallax {
        mean: sum / used as f64,
        used,
        excluded,
    })
}

pub fn translation_obs_test(parallax: f64, cfg: &ObsConfig) -> bool {
    parallax > cfg.parallax_th
}

fn row_weights(sys: &LinearSystem, cfg: &ObsConfig) -> Result<Option<DVector<f64>>, ObsError> {
    match &cfg.sigma_weights {
        None => Ok(None),
        Some(w) if w.len() != sys.nrows() => Err(ObsError::WeightLength {
            got: w.len(),
            rows: sys.nrows(),
        }),
        Some(w) => Ok(Some(DVector::from_iterator(w.len(), w.iter().map(|s| 1.0 / s)))),
    }
}

/// `H* = H_θθ − H_θλ H_λλ⁺ H_λθ` for `H = Ξᵀ Σ⁻¹ Ξ`.
///
/// Depths of different features never share a row, so `H_λλ` is block
/// diagonal with one block per feature. Within a feature the first-frame
/// depth touches every row while each later depth touches one row block,
/// making the block an arrowhead matrix: the later depths are eliminated
/// through their scalar diagonal, then the first-frame depth through what
/// remains. Pivots at or below the cutoff are dropped, as a pseudoinverse
/// would.
pub fn reduced_hessian(sys: &LinearSystem, cfg: &ObsConfig) -> Result<Mat9, ObsError> {
    let weights = row_weights(sys, cfg)?;
    let weight = |b: usize| match &weights {
        Some(w) => Vec3::new(w[3 * b], w[3 * b + 1], w[3 * b + 2]),
        None => Vec3::repeat(1.0),
    };

    struct Part {
        h_tt: Mat9,
        h_t0: Vec9,
        h_00: f64,
        /// `(h_θq, h_0q, h_qq)` for each later observation.
        later: Vec<(Vec9, f64, f64)>,
    }
    let mut parts = Vec::new();
    let mut max_diag: f64 = 0.0;
    for ids in sys.blocks_by_feature() {
        let mut p = Part {
            h_tt: Mat9::zeros(),
            h_t0: Vec9::zeros(),
            h_00: 0.0,
            later: Vec::with_capacity(ids.len()),
        };
        for b in ids {
            let blk = &sys.blocks()[b];
            let w = weight(b);
            let w_root = blk.root_bearing.component_mul(&w);
            let w_bearing = blk.bearing.component_mul(&w);
            let w_motion = SMatrix::<f64, 3, MOTION_DIM>::from_fn(|r, c| w[r] * blk.motion[(r, c)]);
            p.h_tt += blk.motion.transpose() * w_motion;
            p.h_t0 += blk.motion.transpose() * w_root;
            p.h_00 += blk.root_bearing.dot(&w_root);
            let h_qq = blk.bearing.dot(&w_bearing);
            max_diag = max_diag.max(h_qq);
            p.later.push((blk.motion.transpose() * w_bearing, blk.root_bearing.dot(&w_bearing), h_qq));
        }
        max_diag = max_diag.max(p.h_00);
        parts.push(p);
    }

    let cutoff = HESSIAN_PINV_CUTOFF * max_diag;
    let mut h = Mat9::zeros();
    for p in parts {
        let mut h_tt = p.h_tt;
        let mut h_t0 = p.h_t0;
        let mut h_00 = p.h_00;
        for (h_tq, h_0q, h_qq) in p.later {
            if h_qq > cutoff {
                h_tt -= h_tq * h_tq.transpose() / h_qq;
                h_t0 -= h_tq * (h_0q / h_qq);
                h_00 -= h_0q * h_0q / h_qq;
            }
        }
        if h_00 > cutoff {
            h_tt -= h_t0 * h_t0.transpose() / h_00;
        }
        h += h_tt;
    }
    Ok((h + h.transpose()) * 0.5)
}

/// `σ_max / σ_min` over the nonzero singular values of `h`; infinite when
/// `h` vanishes.
pub fn singular_value_ratio(h: &Mat9) -> f64 {
    let sv = h.singular_values();
    let max = sv.max();
    if !(max > 0.0) {
        return f64::INFINITY;
    }
    let min = sv
        .iter()
        .copied()
        .filter(|&s| s > RHO_CUTOFF * max)
        .fold(f64::INFINITY, f64::min);
    max / min
}

/// Result of one stage-2 evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullObs {
    pub pass: bool,
    pub rho: f64,
    /// `|ρ − ρ_prev| / ρ_prev` when a previous value exists.
    pub change: Option<f64>,
}

pub fn full_obs_test(
    sys: &LinearSystem,
    prev_rho: Option<f64>,
    cfg: &ObsConfig,
) -> Result<FullObs, ObsError> {
    let rho = singular_value_ratio(&reduced_hessian(sys, cfg)?);
    let change = prev_rho.map(|p| (rho - p).abs() / p);
    let pass = matches!(change, Some(c) if c < cfg.rho_change_th);
    Ok(FullObs { pass, rho, change })
}
