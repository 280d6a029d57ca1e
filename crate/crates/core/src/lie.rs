//! SO(3) primitives: skew map, Rodrigues exponential, logarithm and the
//! first-order small-rotation approximation.
//!
//! Rotations are stored as 3×3 matrices. Every public constructor returns a
//! matrix that satisfies `RᵀR = I` and `det R = +1` to within
//! [`ROTATION_TOLERANCE`] per entry.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Per-entry tolerance used to validate `RᵀR = I` and `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Below this angle the Rodrigues coefficients switch to their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;

/// `log` refuses rotations whose trace is within this margin of -1.
const NEAR_PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("rotation angle is too close to pi (trace = {trace})")]
    AngleNearPi { trace: f64 },
    #[error("matrix is not a rotation: orthonormality error {ortho_err:e}, det {det}")]
    NotARotation { ortho_err: f64, det: f64 },
}

/// Skew-symmetric matrix `v^` such that `v^ w = v × w`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] for the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// `I + r^`, the first-order approximation of `Exp(r)`.
pub fn small_rot_approx(r: &Vec3) -> Mat3 {
    Mat3::identity() + skew(r)
}

/// A 3×3 orthonormal matrix with determinant +1.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Rotation").field(&self.0.as_slice()).finish()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates `m` against the rotation invariants.
    pub fn from_matrix(m: Mat3) -> Result<Self, LieError> {
        let ortho_err = (m.transpose() * m - Mat3::identity()).abs().max();
        let det = m.determinant();
        if !ortho_err.is_finite()
            || ortho_err > ROTATION_TOLERANCE
            || (det - 1.0).abs() > ROTATION_TOLERANCE
        {
            return Err(LieError::NotARotation { ortho_err, det });
        }
        Ok(Rotation(m))
    }

    /// Nearest rotation in the Frobenius sense (polar decomposition `U Vᵀ`).
    ///
    /// Returns `None` if `m` is singular or has non-finite entries.
    pub fn nearest(m: &Mat3) -> Option<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return None;
        }
        let svd = m.svd(true, true);
        let u = svd.u?;
        let v_t = svd.v_t?;
        if svd.singular_values.min() <= f64::EPSILON * svd.singular_values.max() {
            return None;
        }
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Some(Rotation(r))
    }

    /// Re-projects onto SO(3). Used after long product chains.
    pub fn renormalized(&self) -> Self {
        Self::nearest(&self.0).unwrap_or(*self)
    }

    /// Rodrigues' formula, with Taylor coefficients below [`SMALL_ANGLE`].
    pub fn exp(r: &Vec3) -> Self {
        let theta2 = r.norm_squared();
        let theta = theta2.sqrt();
        let (a, b) = if theta < SMALL_ANGLE {
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
        };
        let k = skew(r);
        Rotation(Mat3::identity() + k * a + k * k * b)
    }

    /// Rotation vector `r` with `Exp(r) = self` and `‖r‖ = angle`.
    pub fn log(&self) -> Result<Vec3, LieError> {
        let trace = self.0.trace();
        if trace <= -1.0 + NEAR_PI_MARGIN {
            return Err(LieError::AngleNearPi { trace });
        }
        let w = vee(&self.0);
        let sin_theta = w.norm();
        let cos_theta = 0.5 * (trace - 1.0);
        let theta = sin_theta.atan2(cos_theta);
        let scale = if theta < SMALL_ANGLE {
            1.0 + theta * theta / 6.0
        } else {
            theta / sin_theta
        };
        Ok(w * scale)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let cos_theta = (0.5 * (self.0.trace() - 1.0)).clamp(-1.0, 1.0);
        vee(&self.0).norm().atan2(cos_theta)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_matrix(self) -> Mat3 {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Elementary rotation about the x axis.
    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Largest per-entry violation of `RᵀR = I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).abs().max()
    }
}

/// `Exp(r)`; free-function form of [`Rotation::exp`].
pub fn exp_so3(r: &Vec3) -> Rotation {
    Rotation::exp(r)
}

/// `Log(R)`; free-function form of [`Rotation::log`].
pub fn log_so3(r: &Rotation) -> Result<Vec3, LieError> {
    r.log()
}

/// Product of a chain of rotations, re-projected onto SO(3) every
/// `RENORMALIZE_EVERY` factors.
pub fn product<I: IntoIterator<Item = Rotation>>(factors: I) -> Rotation {
    let mut acc = Rotation::identity();
    for (k, f) in factors.into_iter().enumerate() {
        acc = acc * f;
        if (k + 1) % RENORMALIZE_EVERY == 0 {
            acc = acc.renormalized();
        }
    }
    acc
}

pub const RENORMALIZE_EVERY: usize = 100;

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Rotation> for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}
