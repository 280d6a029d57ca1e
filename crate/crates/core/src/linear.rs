//! Linear recovery of gravity, velocity, accelerometer bias and feature
//! distances from bias-corrected IMU double integrals and bearing tracks.
//!
//! For a feature `n` seen in the first frame `i` and a later frame `j`, with
//! all quantities expressed in the body frame at `t_i`:
//!
//! ```text
//! -½ t_j² g - t_j v + Γ_j b_a + λ_i μ_i - λ_j R_ij μ_j = s_j
//! ```
//!
//! Stacking three rows per observation yields `Ξ x = s` with
//! `x = [g, v, b_a, λ(frame 0, feature 0..N), …, λ(frame M-1, feature 0..N)]`.
//! The matrix is kept block-structured; [`LinearSystem::dense`] materializes it.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use thiserror::Error;

use crate::camera::{backproject, FeatureTrack, Intrinsics};
use crate::imu::{compute_s_gamma, preintegrate_rotation, ImuError, ImuWindow};
use crate::lie::{Mat3, Rotation, Vec3};

/// Number of motion states (gravity, velocity, accelerometer bias).
pub const MOTION_DIM: usize = 9;

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Sign of the `Γ_j b_a` block. Fixed by the zero-residual check against
/// synthetic ground truth (see tests).
pub const ACCEL_BIAS_SIGN: f64 = 1.0;

pub type MotionBlock = SMatrix<f64, 3, MOTION_DIM>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("track {id} is not observed in any later frame")]
    TrackTooShort { id: u64 },
    #[error("track {id} is not observed in the first frame")]
    NoCommonRoot { id: u64 },
    #[error("system needs at least one feature and two frames")]
    EmptySystem,
    #[error("frame preintegrals must have increasing frame indices after frame 0 and t_rel > 0")]
    BadFrames,
    #[error("system is rank deficient in {deficient} direction(s)")]
    RankDeficient { deficient: usize },
    #[error("system has fewer rows ({rows}) than unknowns ({cols})")]
    Underdetermined { rows: usize, cols: usize },
    #[error(transparent)]
    Imu(#[from] ImuError),
}

/// IMU double integrals from the first frame up to one later frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePreint {
    pub frame_index: usize,
    /// Seconds elapsed since the first frame.
    pub t_rel: f64,
    pub s: Vec3,
    pub gamma: Mat3,
    /// `R_ij`, body at the first frame to body at this frame.
    pub rotation: Rotation,
}

impl FramePreint {
    /// Integrates `imu` over `[t_i, t_j)` with gyro bias `bg`.
    pub fn integrate(
        imu: &ImuWindow,
        t_i: f64,
        t_j: f64,
        frame_index: usize,
        bg: &Vec3,
    ) -> Result<Self, ImuError> {
        let w = imu.between(t_i, t_j)?;
        let (s, gamma) = compute_s_gamma(&w, bg, t_j);
        Ok(Self {
            frame_index,
            t_rel: t_j - t_i,
            s,
            gamma,
            rotation: preintegrate_rotation(&w, bg),
        })
    }
}

/// Three rows of `Ξ` for one (frame, feature) observation.
#[derive(Debug, Clone, PartialEq)]
pub struct RowBlock {
    pub frame_slot: usize,
    pub feature: usize,
    pub motion: MotionBlock,
    /// Coefficient of the feature's first-frame depth, `μ_i`.
    pub root_bearing: Vec3,
    /// Coefficient of the feature's depth in this frame, `-R_ij μ_j`.
    pub bearing: Vec3,
    pub rhs: Vec3,
    /// False for structurally absent observations (all-zero rows).
    pub observed: bool,
}

/// `Ξ x = s` in block form.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    feature_ids: Vec<u64>,
    /// Frame index per slot; slot 0 is the first frame.
    frame_indices: Vec<usize>,
    /// Frame-major: block `(slot - 1)·N + feature`.
    blocks: Vec<RowBlock>,
    /// `depth_present[slot·N + feature]`.
    depth_present: Vec<bool>,
}

impl LinearSystem {
    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    /// `M`, including the first frame.
    pub fn n_frames(&self) -> usize {
        self.frame_indices.len()
    }

    /// `3·(M-1)·N`.
    pub fn nrows(&self) -> usize {
        3 * self.blocks.len()
    }

    /// `9 + N·M`.
    pub fn ncols(&self) -> usize {
        MOTION_DIM + self.n_features() * self.n_frames()
    }

    pub fn blocks(&self) -> &[RowBlock] {
        &self.blocks
    }

    /// Applies `f` to every row block; used to build degenerate variants.
    #[cfg(test)]
    pub(crate) fn map_blocks(mut self, mut f: impl FnMut(&mut RowBlock)) -> Self {
        self.blocks.iter_mut().for_each(&mut f);
        self
    }

    pub fn feature_ids(&self) -> &[u64] {
        &self.feature_ids
    }

    pub fn frame_indices(&self) -> &[usize] {
        &self.frame_indices
    }

    pub fn depth_column(&self, frame_slot: usize, feature: usize) -> usize {
        MOTION_DIM + frame_slot * self.n_features() + feature
    }

    pub fn depth_present(&self, frame_slot: usize, feature: usize) -> bool {
        self.depth_present[frame_slot * self.n_features() + feature]
    }

    /// Column of every present depth, keyed by (frame index, feature id).
    pub fn depth_index(&self) -> BTreeMap<(usize, u64), usize> {
        let mut out = BTreeMap::new();
        for (slot, &frame) in self.frame_indices.iter().enumerate() {
            for (n, &id) in self.feature_ids.iter().enumerate() {
                if self.depth_present(slot, n) {
                    out.insert((frame, id), self.depth_column(slot, n));
                }
            }
        }
        out
    }

    /// Dense `(Ξ, s)`. Absent observations appear as zero rows and columns.
    pub fn dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut xi = DMatrix::zeros(self.nrows(), self.ncols());
        let mut s = DVector::zeros(self.nrows());
        for (b, blk) in self.blocks.iter().enumerate() {
            if !blk.observed {
                continue;
            }
            let r = 3 * b;
            xi.view_mut((r, 0), (3, MOTION_DIM)).copy_from(&blk.motion);
            xi.view_mut((r, self.depth_column(0, blk.feature)), (3, 1))
                .copy_from(&blk.root_bearing);
            xi.view_mut((r, self.depth_column(blk.frame_slot, blk.feature)), (3, 1))
                .copy_from(&blk.bearing);
            s.rows_mut(r, 3).copy_from(&blk.rhs);
        }
        (xi, s)
    }

    /// `Ξ x` evaluated block-wise.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let motion = x.rows(0, MOTION_DIM);
        let mut out = DVector::zeros(self.nrows());
        for (b, blk) in self.blocks.iter().enumerate() {
            if !blk.observed {
                continue;
            }
            let v = blk.motion * motion
                + blk.root_bearing * x[self.depth_column(0, blk.feature)]
                + blk.bearing * x[self.depth_column(blk.frame_slot, blk.feature)];
            out.rows_mut(3 * b, 3).copy_from(&v);
        }
        out
    }

    /// Stacked measurement vector `s`.
    pub fn rhs(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.nrows());
        for (b, blk) in self.blocks.iter().enumerate() {
            if blk.observed {
                s.rows_mut(3 * b, 3).copy_from(&blk.rhs);
            }
        }
        s
    }

    /// Packs a state into `x`. Depths missing from `state` are left at zero.
    pub fn state_vector(&self, state: &InitState) -> DVector<f64> {
        let mut x = DVector::zeros(self.ncols());
        x.rows_mut(0, 3).copy_from(&state.g);
        x.rows_mut(3, 3).copy_from(&state.v);
        x.rows_mut(6, 3).copy_from(&state.ba);
        for (key, col) in self.depth_index() {
            if let Some(&d) = state.depths.get(&key) {
                x[col] = d;
            }
        }
        x
    }

    /// Unpacks `x` into a state, keeping only present depths.
    pub fn unpack(&self, x: &DVector<f64>) -> InitState {
        let depths = self
            .depth_index()
            .into_iter()
            .map(|(key, col)| (key, x[col]))
            .collect();
        InitState {
            g: Vec3::new(x[0], x[1], x[2]),
            v: Vec3::new(x[3], x[4], x[5]),
            ba: Vec3::new(x[6], x[7], x[8]),
            depths,
        }
    }

    /// Row blocks of each feature, in frame order.
    pub fn blocks_by_feature(&self) -> Vec<Vec<usize>> {
        let mut per = vec![Vec::new(); self.n_features()];
        for (b, blk) in self.blocks.iter().enumerate() {
            if blk.observed {
                per[blk.feature].push(b);
            }
        }
        per
    }

    fn present_columns(&self) -> Vec<usize> {
        let mut cols: Vec<usize> = (0..MOTION_DIM).collect();
        for slot in 0..self.n_frames() {
            for n in 0..self.n_features() {
                if self.depth_present(slot, n) {
                    cols.push(self.depth_column(slot, n));
                }
            }
        }
        cols
    }
}

/// Recovered motion states and feature distances, expressed in the body
/// frame of the first frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitState {
    pub g: Vec3,
    pub v: Vec3,
    pub ba: Vec3,
    /// Distance along the unit bearing, keyed by (frame index, feature id).
    pub depths: BTreeMap<(usize, u64), f64>,
}

impl InitState {
    /// Diagnostic checks that hold on clean data. Violations are reported,
    /// not treated as failures.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let all_finite = [self.g, self.v, self.ba]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.depths.values().all(|d| d.is_finite());
        if !all_finite {
            out.push("non-finite state".to_string());
        }
        let gn = self.g.norm();
        if !(9.6..=10.0).contains(&gn) {
            out.push(format!("gravity magnitude {gn:.4} outside [9.6, 10.0]"));
        }
        let negative = self.depths.values().filter(|&&d| d <= 0.0).count();
        if negative > 0 {
            out.push(format!("{negative} non-positive depth(s)"));
        }
        out
    }
}

/// Assembles `Ξ` and `s` from tracks and per-frame preintegrals.
///
/// `preints` lists the later frames in increasing order; the first frame is
/// frame index 0 of the tracks. Every track must be observed in frame 0 and
/// in at least one of the later frames.
pub fn build_system(
    tracks: &[FeatureTrack],
    preints: &[FramePreint],
    k: &Intrinsics,
) -> Result<LinearSystem, LinearError> {
    if tracks.is_empty() || preints.is_empty() {
        return Err(LinearError::EmptySystem);
    }
    let ordered = preints.windows(2).all(|p| p[0].frame_index < p[1].frame_index);
    if !ordered || preints[0].frame_index == 0 || preints.iter().any(|p| !(p.t_rel > 0.0)) {
        return Err(LinearError::BadFrames);
    }
    for t in tracks {
        if !t.obs.contains_key(&0) {
            return Err(LinearError::NoCommonRoot { id: t.id });
        }
        if !preints.iter().any(|p| t.obs.contains_key(&p.frame_index)) {
            return Err(LinearError::TrackTooShort { id: t.id });
        }
    }

    let n_features = tracks.len();
    let n_frames = preints.len() + 1;
    let mut frame_indices = vec![0];
    frame_indices.extend(preints.iter().map(|p| p.frame_index));
    let mut depth_present = vec![false; n_features * n_frames];
    depth_present[..n_features].fill(true);

    let mut blocks = Vec::with_capacity(preints.len() * n_features);
    for (p, pre) in preints.iter().enumerate() {
        let slot = p + 1;
        let t = pre.t_rel;
        let mut motion = MotionBlock::zeros();
        motion
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Mat3::identity() * (-0.5 * t * t)));
        motion
            .fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(Mat3::identity() * -t));
        motion
            .fixed_view_mut::<3, 3>(0, 6)
            .copy_from(&(pre.gamma * ACCEL_BIAS_SIGN));
        for (n, track) in tracks.iter().enumerate() {
            let root = backproject(&track.obs[&0], k);
            match track.obs.get(&pre.frame_index) {
                Some(z) => {
                    depth_present[slot * n_features + n] = true;
                    blocks.push(RowBlock {
                        frame_slot: slot,
                        feature: n,
                        motion,
                        root_bearing: root,
                        bearing: -(pre.rotation * backproject(z, k)),
                        rhs: pre.s,
                        observed: true,
                    });
                }
                None => blocks.push(RowBlock {
                    frame_slot: slot,
                    feature: n,
                    motion: MotionBlock::zeros(),
                    root_bearing: Vec3::zeros(),
                    bearing: Vec3::zeros(),
                    rhs: Vec3::zeros(),
                    observed: false,
                }),
            }
        }
    }

    Ok(LinearSystem {
        feature_ids: tracks.iter().map(|t| t.id).collect(),
        frame_indices,
        blocks,
        depth_present,
    })
}

/// Which algebraic route [`solve_with`] takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMethod {
    /// Per-feature elimination of depths followed by an SVD least-squares
    /// solve of the nine motion states. Exact least squares; scales linearly
    /// with the number of features.
    #[default]
    Eliminate,
    /// SVD pseudoinverse of the full dense `Ξ`.
    DenseSvd,
    /// Smallest right singular vector of `[Ξ | -s]`, de-homogenized.
    Homogeneous,
}

pub fn solve_with(sys: &LinearSystem, method: SolveMethod) -> Result<InitState, LinearError> {
    match method {
        SolveMethod::Eliminate => solve_states(sys),
        SolveMethod::DenseSvd => solve_states_dense(sys),
        SolveMethod::Homogeneous => solve_states_homogeneous(sys),
    }
}

fn present_dense(sys: &LinearSystem) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
    let (xi, s) = sys.dense();
    let cols = sys.present_columns();
    let rows: Vec<usize> = sys
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.observed)
        .flat_map(|(b, _)| 3 * b..3 * b + 3)
        .collect();
    let a = xi.select_rows(&rows).select_columns(&cols);
    let s = s.select_rows(&rows);
    (a, s, cols)
}

fn scatter(sys: &LinearSystem, cols: &[usize], values: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(sys.ncols());
    for (&c, &v) in cols.iter().zip(values.iter()) {
        x[c] = v;
    }
    x
}

fn numerical_rank(singular: &DVector<f64>) -> (usize, f64) {
    let max = singular.max();
    let cutoff = RANK_CUTOFF * max;
    (singular.iter().filter(|&&s| s > cutoff).count(), cutoff)
}

/// Least-squares solve via the SVD pseudoinverse of the dense system.
pub fn solve_states_dense(sys: &LinearSystem) -> Result<InitState, LinearError> {
    let (a, s, cols) = present_dense(sys);
    if a.nrows() < a.ncols() {
        return Err(LinearError::Underdetermined {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let svd = a.svd(true, true);
    let (rank, cutoff) = numerical_rank(&svd.singular_values);
    if rank < cols.len() {
        return Err(LinearError::RankDeficient {
            deficient: cols.len() - rank,
        });
    }
    let sol = svd
        .solve(&s, cutoff)
        .expect("U and Vᵀ were requested from the SVD");
    Ok(sys.unpack(&scatter(sys, &cols, &sol)))
}

/// Minimizer of `‖[Ξ | -s]·y‖` over unit `y`, de-homogenized to `x`.
pub fn solve_states_homogeneous(sys: &LinearSystem) -> Result<InitState, LinearError> {
    let (a, s, cols) = present_dense(sys);
    if a.nrows() < a.ncols() + 1 {
        return Err(LinearError::Underdetermined {
            rows: a.nrows(),
            cols: a.ncols() + 1,
        });
    }
    let mut aug = a.clone().insert_column(a.ncols(), 0.0);
    aug.column_mut(a.ncols()).copy_from(&(-s));
    let aug_cols = aug.ncols();
    let svd = aug.svd(false, true);
    let (rank, _) = numerical_rank(&svd.singular_values);
    // The homogeneous null direction is expected; anything beyond it is not.
    if rank + 1 < aug_cols {
        return Err(LinearError::RankDeficient {
            deficient: aug_cols - 1 - rank,
        });
    }
    let v_t = svd.v_t.expect("Vᵀ was requested from the SVD");
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty singular values");
    let y = v_t.row(min_idx).transpose();
    let last = y[y.len() - 1];
    if last.abs() < f64::EPSILON {
        return Err(LinearError::RankDeficient { deficient: 1 });
    }
    let sol = y.rows(0, cols.len()) / last;
    Ok(sys.unpack(&scatter(sys, &cols, &sol.into_owned())))
}

/// Least-squares solve with depths eliminated feature by feature.
///
/// Each feature's depth columns only touch that feature's rows, so projecting
/// its rows onto the orthogonal complement of its depth columns removes the
/// depths exactly. A later-frame depth touches a single row block, so its
/// column is projected out block-wise; the first-frame depth column is then
/// projected out of what remains. The projected motion rows of all features
/// are stacked and solved by SVD, and the depths are recovered per feature.
pub fn solve_states(sys: &LinearSystem) -> Result<InitState, LinearError> {
    let cols = sys.present_columns().len();
    let rows = 3 * sys.blocks.iter().filter(|b| b.observed).count();
    if rows < cols {
        return Err(LinearError::Underdetermined { rows, cols });
    }

    let per_feature = sys.blocks_by_feature();
    let mut a = DMatrix::zeros(rows, MOTION_DIM);
    let mut b = DVector::zeros(rows);
    let mut deficient = 0;
    let mut roots = Vec::with_capacity(per_feature.len());
    let mut r = 0;
    for ids in &per_feature {
        // Block-wise projections P_q = I − b_q b_qᵀ/‖b_q‖².
        let mut proj = Vec::with_capacity(ids.len());
        let mut max_col: f64 = 0.0;
        for &id in ids {
            let blk = &sys.blocks[id];
            let beta = blk.bearing.norm_squared();
            max_col = max_col.max(beta).max(blk.root_bearing.norm_squared());
            let p = if beta > 0.0 {
                Mat3::identity() - blk.bearing * blk.bearing.transpose() / beta
            } else {
                deficient += 1;
                Mat3::identity()
            };
            proj.push((p * blk.root_bearing, p * blk.motion, p * blk.rhs));
        }
        let gamma: f64 = proj.iter().map(|(u, _, _)| u.norm_squared()).sum();
        let root_resolved = gamma > (RANK_CUTOFF * RANK_CUTOFF) * max_col * ids.len() as f64;
        if !root_resolved {
            deficient += 1;
        }
        let (mut um, mut us) = (SMatrix::<f64, 1, MOTION_DIM>::zeros(), 0.0);
        if root_resolved {
            for (u, m, rhs) in &proj {
                um += u.transpose() * m;
                us += u.dot(rhs);
            }
            um /= gamma;
            us /= gamma;
        }
        for (u, m, rhs) in &proj {
            a.view_mut((r, 0), (3, MOTION_DIM)).copy_from(&(m - u * um));
            b.rows_mut(r, 3).copy_from(&(rhs - u * us));
            r += 3;
        }
        roots.push((root_resolved, gamma, proj));
    }

    let svd = a.svd(true, true);
    let (rank, cutoff) = numerical_rank(&svd.singular_values);
    deficient += MOTION_DIM - rank;
    if deficient > 0 {
        return Err(LinearError::RankDeficient { deficient });
    }
    let motion = svd
        .solve(&b, cutoff)
        .expect("U and Vᵀ were requested from the SVD");
    let motion = SVector::<f64, MOTION_DIM>::from_iterator(motion.iter().copied());

    let mut x = DVector::zeros(sys.ncols());
    x.rows_mut(0, MOTION_DIM).copy_from(&motion);
    for (n, (ids, (_, gamma, proj))) in per_feature.iter().zip(&roots).enumerate() {
        // With e_q = s_q − M_q x: λ₀ = Σ u_qᵀ e_q / γ, then
        // λ_q = b_qᵀ(e_q − λ₀ r_q)/‖b_q‖².
        let lambda0 = proj
            .iter()
            .map(|(u, m, rhs)| u.dot(&(rhs - m * motion)))
            .sum::<f64>()
            / gamma;
        x[sys.depth_column(0, n)] = lambda0;
        for &id in ids {
            let blk = &sys.blocks[id];
            let e = blk.rhs - blk.motion * motion - blk.root_bearing * lambda0;
            x[sys.depth_column(blk.frame_slot, n)] = blk.bearing.dot(&e) / blk.bearing.norm_squared();
        }
    }
    Ok(sys.unpack(&x))
}
