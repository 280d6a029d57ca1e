//! Pinhole camera: bearings, projection and rotation-only track prediction.
//!
//! No lens distortion is modelled; tracks are expected to be undistorted.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lie::{Rotation, Vec3};

pub type Pixel = Vector2<f64>;

/// Points closer than this to the image plane count as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("focal lengths must be positive, got fx = {fx}, fy = {fy}")]
    InvalidIntrinsics { fx: f64, fy: f64 },
    #[error("track {id} has {count} observations, at least 2 are required")]
    TrackTooShort { id: u64, count: usize },
    #[error("track {id} observation in frame {frame} lies outside the image")]
    OutOfImage { id: u64, frame: usize },
}

/// Image domain `[0, width) × [0, height)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageBounds {
    pub width: f64,
    pub height: f64,
}

impl ImageBounds {
    pub fn contains(&self, z: &Pixel) -> bool {
        z.x >= 0.0 && z.y >= 0.0 && z.x < self.width && z.y < self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, CameraError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(CameraError::InvalidIntrinsics { fx, fy });
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Roughly the EuRoC cam0 pinhole parameters.
    pub fn euroc() -> Self {
        Self {
            fx: 458.654,
            fy: 457.296,
            cx: 367.215,
            cy: 248.375,
        }
    }

    /// `K⁻¹[zᵀ 1]ᵀ` without normalization.
    pub fn unproject(&self, z: &Pixel) -> Vec3 {
        Vec3::new((z.x - self.cx) / self.fx, (z.y - self.cy) / self.fy, 1.0)
    }
}

/// Unit bearing `μ = K⁻¹[zᵀ 1]ᵀ / ‖K⁻¹[zᵀ 1]ᵀ‖`.
pub fn backproject(z: &Pixel, k: &Intrinsics) -> Vec3 {
    k.unproject(z).normalize()
}

pub fn project(p: &Vec3, k: &Intrinsics) -> Result<Pixel, CameraError> {
    if !(p.z > MIN_DEPTH) {
        return Err(CameraError::BehindCamera { z: p.z });
    }
    Ok(Pixel::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Where `z_i` lands in frame `j` if the camera only rotated by `r_ij`:
/// `h(K·R_ijᵀ·K⁻¹·[z_iᵀ 1]ᵀ)`.
pub fn predict_rotation_only(z_i: &Pixel, k: &Intrinsics, r_ij: &Rotation) -> Result<Pixel, CameraError> {
    let ray = r_ij.transpose() * k.unproject(z_i);
    project(&ray, k)
}

/// Pixel observations of one landmark, keyed by frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub id: u64,
    pub obs: BTreeMap<usize, Pixel>,
}

impl FeatureTrack {
    pub fn new(id: u64, obs: BTreeMap<usize, Pixel>) -> Self {
        Self { id, obs }
    }

    /// Checks the track invariants: at least two observations, all inside
    /// `bounds` when given.
    pub fn validate(&self, bounds: Option<&ImageBounds>) -> Result<(), CameraError> {
        if self.obs.len() < 2 {
            return Err(CameraError::TrackTooShort {
                id: self.id,
                count: self.obs.len(),
            });
        }
        if let Some(b) = bounds {
            if let Some((&frame, _)) = self.obs.iter().find(|(_, z)| !b.contains(z)) {
                return Err(CameraError::OutOfImage { id: self.id, frame });
            }
        }
        Ok(())
    }

    pub fn get(&self, frame: usize) -> Option<&Pixel> {
        self.obs.get(&frame)
    }

    /// Copy restricted to frames `[first, first + count)`, re-indexed so that
    /// `first` becomes frame 0.
    pub fn window(&self, first: usize, count: usize) -> FeatureTrack {
        let obs = self
            .obs
            .range(first..first + count)
            .map(|(&f, &z)| (f - first, z))
            .collect();
        FeatureTrack { id: self.id, obs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> Intrinsics {
        Intrinsics::new(400.0, 400.0, 376.0, 240.0).unwrap()
    }

    #[test]
    fn backproject_examples() {
        let k = k();
        assert_eq!(backproject(&Pixel::new(k.cx, k.cy), &k), Vec3::new(0.0, 0.0, 1.0));
        let b = backproject(&Pixel::new(k.cx + k.fx, k.cy), &k);
        assert!((b - Vec3::new(1.0, 0.0, 1.0) / 2f64.sqrt()).norm() < 1e-15);
    }

    #[test]
    fn project_examples() {
        let k = k();
        assert_eq!(project(&Vec3::new(0.0, 0.0, 1.0), &k).unwrap(), Pixel::new(376.0, 240.0));
        assert_eq!(project(&Vec3::new(1.0, 0.0, 2.0), &k).unwrap(), Pixel::new(576.0, 240.0));
        assert!(matches!(
            project(&Vec3::new(0.0, 0.0, -1.0), &k),
            Err(CameraError::BehindCamera { .. })
        ));
    }

    #[test]
    fn backproject_project_round_trip() {
        let k = k();
        for (u, v) in [(10.0, 20.0), (700.0, 470.0), (376.0, 5.0)] {
            let z = Pixel::new(u, v);
            let mu = backproject(&z, &k);
            assert!((mu.norm() - 1.0).abs() < 1e-15);
            for depth in [0.1, 3.0, 250.0] {
                let back = project(&(mu * depth), &k).unwrap();
                assert!((back - z).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_intrinsics() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(Intrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn identity_rotation_prediction() {
        let k = k();
        let z = Pixel::new(123.4, 321.0);
        assert!((predict_rotation_only(&z, &k, &Rotation::identity()).unwrap() - z).norm() < 1e-12);
    }

    #[test]
    fn optical_axis_rotation_rotates_pixels_about_principal_point() {
        let k = k();
        let theta = 0.1;
        let z = Pixel::new(500.0, 300.0);
        let pred = predict_rotation_only(&z, &k, &Rotation::about_z(theta)).unwrap();
        let off = z - Pixel::new(k.cx, k.cy);
        let (s, c) = (-theta).sin_cos();
        let expected = Pixel::new(k.cx + c * off.x - s * off.y, k.cy + s * off.x + c * off.y);
        assert!((pred - expected).norm() < 1e-9);
    }

    #[test]
    fn translation_shows_up_as_parallax() {
        // Landmark 2 m ahead, camera moves 0.1 m along x: the true track shifts
        // by fx·0.1/2 = 20 px while the rotation-only prediction stays put.
        let k = k();
        let p = Vec3::new(0.3, -0.2, 2.0);
        let z_i = project(&p, &k).unwrap();
        let z_j = project(&(p - Vec3::new(0.1, 0.0, 0.0)), &k).unwrap();
        let pred = predict_rotation_only(&z_i, &k, &Rotation::identity()).unwrap();
        assert!(((z_j - pred).norm() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_only_prediction_is_exact_without_translation() {
        let k = k();
        let r_ij = Rotation::exp(&Vec3::new(0.05, -0.03, 0.02));
        let p_i = Vec3::new(0.4, 0.1, 3.0);
        // x_i = R_ij x_j
        let p_j = r_ij.transpose() * p_i;
        let z_i = project(&p_i, &k).unwrap();
        let z_j = project(&p_j, &k).unwrap();
        assert!((predict_rotation_only(&z_i, &k, &r_ij).unwrap() - z_j).norm() < 1e-9);
    }

    #[test]
    fn track_validation_and_window() {
        let mut obs = BTreeMap::new();
        obs.insert(3, Pixel::new(10.0, 10.0));
        let t = FeatureTrack::new(7, obs.clone());
        assert!(matches!(t.validate(None), Err(CameraError::TrackTooShort { id: 7, count: 1 })));
        obs.insert(5, Pixel::new(900.0, 10.0));
        let t = FeatureTrack::new(7, obs);
        assert!(t.validate(None).is_ok());
        let bounds = ImageBounds { width: 752.0, height: 480.0 };
        assert!(matches!(
            t.validate(Some(&bounds)),
            Err(CameraError::OutOfImage { frame: 5, .. })
        ));
        let w = t.window(3, 2);
        assert_eq!(w.obs.keys().copied().collect::<Vec<_>>(), vec![0]);
    }
}
