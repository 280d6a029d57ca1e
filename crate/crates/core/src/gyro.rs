//! Closed-form gyroscope bias recovery from a relative rotation and the raw
//! gyro readings covering it, plus a Gauss-Newton reference solver.
//!
//! All three closed forms rest on the small-rotation approximation
//! `Exp(a)Exp(b) ≈ Exp(b)Exp(a) ≈ Exp(a + b)`, which lets the unknown bias be
//! pulled out of the preintegrated product:
//!
//! * commutative: `∏Exp((ω̃_k - b)Δt) ≈ (∏Exp(ω̃_kΔt))·Exp(-L b Δt)`
//! * average: `R_ij ≈ (Exp(ω̄Δt)·Exp(-bΔt))^L` with `ω̄` the integrated rate
//! * arithmetic: same as average with `ω̄` the arithmetic mean of the readings

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::imu::{preintegrate_rotation, ImuWindow};
use crate::lie::{self, LieError, Rotation, Vec3};

/// Largest rotation angle, for either `R_ij` or the raw gyro product, that
/// the closed forms accept.
pub const MAX_WINDOW_ANGLE: f64 = std::f64::consts::FRAC_PI_2;

pub const GN_MAX_ITERATIONS: usize = 20;
pub const GN_STEP_TOLERANCE: f64 = 1e-10;
pub const GN_JACOBIAN_STEP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GyroError {
    #[error("IMU window is empty")]
    WindowEmpty,
    #[error("rotation of {angle} rad exceeds the small-rotation regime")]
    OutOfRegime { angle: f64 },
    #[error("Gauss-Newton did not converge after {iterations} iterations (last step {last_step:e})")]
    NoConvergence { iterations: usize, last_step: f64 },
    #[error("Gauss-Newton normal equations are singular")]
    SingularJacobian,
    #[error(transparent)]
    Lie(#[from] LieError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMethod {
    Commutative,
    Average,
    Arithmetic,
    GaussNewton,
}

impl BiasMethod {
    pub const ALL: [BiasMethod; 4] = [
        BiasMethod::GaussNewton,
        BiasMethod::Commutative,
        BiasMethod::Average,
        BiasMethod::Arithmetic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BiasMethod::Commutative => "commutative",
            BiasMethod::Average => "average",
            BiasMethod::Arithmetic => "arithmetic",
            BiasMethod::GaussNewton => "gauss_newton",
        }
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self, BiasMethod::GaussNewton)
    }

    /// Runs the solver. Gauss-Newton starts from zero bias.
    pub fn solve(&self, r_ij: &Rotation, w: &ImuWindow) -> Result<Vec3, GyroError> {
        match self {
            BiasMethod::Commutative => solve_bias_commutative(r_ij, w),
            BiasMethod::Average => solve_bias_average(r_ij, w),
            BiasMethod::Arithmetic => solve_bias_arithmetic(r_ij, w),
            BiasMethod::GaussNewton => solve_bias_gauss_newton(r_ij, w, &Vec3::zeros()),
        }
    }
}

impl fmt::Display for BiasMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BiasMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "commutative" => Ok(BiasMethod::Commutative),
            "average" | "avg" => Ok(BiasMethod::Average),
            "arithmetic" | "arith" => Ok(BiasMethod::Arithmetic),
            "gauss_newton" | "gauss-newton" | "gn" => Ok(BiasMethod::GaussNewton),
            other => Err(format!("unknown bias method '{other}'")),
        }
    }
}

fn check_regime(r: &Rotation) -> Result<(), GyroError> {
    let angle = r.angle();
    if angle >= MAX_WINDOW_ANGLE {
        return Err(GyroError::OutOfRegime { angle });
    }
    Ok(())
}

/// `∏ Exp(ω̃_kΔt)` with no bias removed.
fn raw_product(w: &ImuWindow) -> Rotation {
    preintegrate_rotation(w, &Vec3::zeros())
}

/// Shared tail of the average and arithmetic solvers:
/// `-(1/Δt)·Log(Exp(ω̄Δt)ᵀ·Exp(Log(R_ij)/L))`.
fn solve_from_mean_rate(r_ij: &Rotation, mean_rate: &Vec3, w: &ImuWindow) -> Result<Vec3, GyroError> {
    let dt = w.dt();
    let per_step = Rotation::exp(&(r_ij.log()? / w.len() as f64));
    let predicted = Rotation::exp(&(mean_rate * dt));
    Ok(-(predicted.transpose() * per_step).log()? / dt)
}

/// `b_g = -(1/(LΔt))·Log((∏Exp(ω̃_kΔt))ᵀ·R_ij)`.
pub fn solve_bias_commutative(r_ij: &Rotation, w: &ImuWindow) -> Result<Vec3, GyroError> {
    if w.is_empty() {
        return Err(GyroError::WindowEmpty);
    }
    check_regime(r_ij)?;
    let raw = raw_product(w);
    check_regime(&raw)?;
    Ok(-(raw.transpose() * r_ij).log()? / w.span())
}

/// Average approximation with `ω̄ = Log(∏Exp(ω̃_kΔt))/(LΔt)`.
pub fn solve_bias_average(r_ij: &Rotation, w: &ImuWindow) -> Result<Vec3, GyroError> {
    if w.is_empty() {
        return Err(GyroError::WindowEmpty);
    }
    check_regime(r_ij)?;
    let raw = raw_product(w);
    check_regime(&raw)?;
    let mean_rate = raw.log()? / w.span();
    solve_from_mean_rate(r_ij, &mean_rate, w)
}

/// Average approximation with `ω̄ = (1/L)·Σω̃_k`.
pub fn solve_bias_arithmetic(r_ij: &Rotation, w: &ImuWindow) -> Result<Vec3, GyroError> {
    if w.is_empty() {
        return Err(GyroError::WindowEmpty);
    }
    check_regime(r_ij)?;
    let sum: Vec3 = w.samples().iter().map(|s| s.gyro).sum();
    let mean_rate = sum / w.len() as f64;
    check_regime(&Rotation::exp(&(mean_rate * w.span())))?;
    solve_from_mean_rate(r_ij, &mean_rate, w)
}

fn gn_residual(r_ij: &Rotation, w: &ImuWindow, b: &Vec3) -> Result<Vec3, LieError> {
    (preintegrate_rotation(w, b).transpose() * r_ij).log()
}

/// Minimizes `‖Log(∏Exp((ω̃_k - b)Δt)ᵀ·R_ij)‖²` over `b` by Gauss-Newton with
/// a central-difference Jacobian.
pub fn solve_bias_gauss_newton(r_ij: &Rotation, w: &ImuWindow, b0: &Vec3) -> Result<Vec3, GyroError> {
    if w.is_empty() {
        return Err(GyroError::WindowEmpty);
    }
    let h = GN_JACOBIAN_STEP;
    let mut b = *b0;
    let mut last_step = f64::INFINITY;
    for _ in 0..GN_MAX_ITERATIONS {
        let r = gn_residual(r_ij, w, &b)?;
        let mut jac = lie::Mat3::zeros();
        for axis in 0..3 {
            let e = Vec3::ith(axis, h);
            let plus = gn_residual(r_ij, w, &(b + e))?;
            let minus = gn_residual(r_ij, w, &(b - e))?;
            jac.set_column(axis, &((plus - minus) / (2.0 * h)));
        }
        let normal = jac.transpose() * jac;
        let step = normal
            .try_inverse()
            .ok_or(GyroError::SingularJacobian)?
            * (jac.transpose() * r);
        b -= step;
        last_step = step.norm();
        if last_step < GN_STEP_TOLERANCE {
            return Ok(b);
        }
    }
    Err(GyroError::NoConvergence {
        iterations: GN_MAX_ITERATIONS,
        last_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::ImuSample;

    const DT: f64 = 0.005;
    const L: usize = 10;

    fn window_from(rates: impl Fn(usize) -> Vec3, len: usize) -> ImuWindow {
        let samples = (0..len)
            .map(|k| ImuSample::new(k as f64 * DT, rates(k), Vec3::zeros()))
            .collect();
        ImuWindow::new(samples, DT).unwrap()
    }

    fn closed_forms() -> [fn(&Rotation, &ImuWindow) -> Result<Vec3, GyroError>; 3] {
        [solve_bias_commutative, solve_bias_average, solve_bias_arithmetic]
    }

    #[test]
    fn commutative_constant_rate_identity_rotation() {
        let c = Vec3::new(0.2, -0.1, 0.3);
        let w = window_from(|_| c, L);
        let b = solve_bias_commutative(&Rotation::identity(), &w).unwrap();
        assert!((b - c).norm() < 1e-12);
    }

    #[test]
    fn zero_rate_gives_scaled_rotation_vector() {
        let r = Vec3::new(0.01, 0.02, -0.015);
        let w = window_from(|_| Vec3::zeros(), L);
        let expected = -r / (L as f64 * DT);
        for solve in closed_forms() {
            let b = solve(&Rotation::exp(&r), &w).unwrap();
            assert!((b - expected).norm() < 1e-12, "{b:?}");
        }
    }

    #[test]
    fn averages_exact_for_consistent_constant_rate() {
        let c = Vec3::new(0.3, 0.4, -0.2);
        let w = window_from(|_| c, L);
        let r_ij = Rotation::exp(&(c * (L as f64 * DT)));
        assert!(solve_bias_average(&r_ij, &w).unwrap().norm() < 1e-12);
        assert!(solve_bias_arithmetic(&r_ij, &w).unwrap().norm() < 1e-12);
    }

    #[test]
    fn arithmetic_exact_when_rate_and_bias_commute() {
        let axis = Vec3::new(1.0, -2.0, 0.5).normalize();
        let c = axis * 0.4;
        let b = axis * 0.03;
        let w = window_from(|_| c + b, L);
        let r_ij = Rotation::exp(&(c * (L as f64 * DT)));
        assert!((solve_bias_arithmetic(&r_ij, &w).unwrap() - b).norm() < 1e-12);
        assert!((solve_bias_average(&r_ij, &w).unwrap() - b).norm() < 1e-12);
    }

    #[test]
    fn averages_error_bounded_for_non_commuting_bias() {
        // With rate c and bias b not parallel the solvers carry a BCH error of
        // about ½Δt‖c × b‖.
        let c = Vec3::new(0.5, 0.1, -0.2);
        let b = Vec3::new(0.02, -0.01, 0.03);
        let w = window_from(|_| c + b, L);
        let r_ij = Rotation::exp(&(c * (L as f64 * DT)));
        let bound = DT * c.cross(&b).norm();
        for solve in [solve_bias_average, solve_bias_arithmetic] {
            let err = (solve(&r_ij, &w).unwrap() - b).norm();
            assert!(err <= bound, "{err} > {bound}");
        }
    }

    #[test]
    fn averages_exact_under_factorized_model() {
        // R_ij = (Exp(ω̃Δt)Exp(-bΔt))^L is the model the average solvers invert.
        let c = Vec3::new(0.45, -0.3, 0.2);
        let b = Vec3::new(0.02, -0.01, 0.03);
        let w = window_from(|_| c, L);
        let step = Rotation::exp(&(c * DT)) * Rotation::exp(&(-b * DT));
        let r_ij = lie::product(std::iter::repeat_n(step, L));
        for solve in [solve_bias_average, solve_bias_arithmetic] {
            assert!((solve(&r_ij, &w).unwrap() - b).norm() < 1e-12);
        }
    }

    #[test]
    fn commutative_error_within_commutation_bound() {
        let c = Vec3::new(0.5, 0.1, -0.2);
        let b = Vec3::new(0.02, -0.01, 0.03);
        let span = L as f64 * DT;
        let w = window_from(|_| c + b, L);
        let r_ij = Rotation::exp(&(c * span));
        let err = (solve_bias_commutative(&r_ij, &w).unwrap() - b).norm();
        let theta_rate = ((c + b) * span).norm();
        let theta_bias = (b * span).norm();
        assert!(err * span <= 2.0 * theta_rate * theta_bias);
        assert!(err <= 1e-3);
    }

    #[test]
    fn rejects_large_rotations() {
        let w = window_from(|_| Vec3::zeros(), L);
        let big = Rotation::about_x(2.0);
        for solve in closed_forms() {
            assert!(matches!(solve(&big, &w), Err(GyroError::OutOfRegime { .. })));
        }
        let spinning = window_from(|_| Vec3::new(40.0, 0.0, 0.0), L);
        assert!(matches!(
            solve_bias_commutative(&Rotation::identity(), &spinning),
            Err(GyroError::OutOfRegime { .. })
        ));
    }

    #[test]
    fn gauss_newton_recovers_exact_model() {
        let b_true = Vec3::new(0.02, -0.01, 0.03);
        let w = window_from(|k| Vec3::new(0.4, -0.2 + 0.01 * k as f64, 0.3), L);
        let r_ij = preintegrate_rotation(&w, &b_true);
        let b = solve_bias_gauss_newton(&r_ij, &w, &Vec3::zeros()).unwrap();
        assert!((b - b_true).norm() <= 1e-9);
    }

    #[test]
    fn gauss_newton_fixed_point_independent_of_start() {
        let b_true = Vec3::new(0.02, -0.01, 0.03);
        let w = window_from(|k| Vec3::new(0.3 * (k as f64).sin(), 0.2, -0.4), L);
        let noisy = Rotation::exp(&Vec3::new(1e-3, -5e-4, 8e-4)) * preintegrate_rotation(&w, &b_true);
        let from_zero = solve_bias_gauss_newton(&noisy, &w, &Vec3::zeros()).unwrap();
        let from_off = solve_bias_gauss_newton(&noisy, &w, &(b_true + Vec3::from_element(0.1))).unwrap();
        assert!((from_zero - from_off).norm() <= 1e-9);

        // Brute-force grid around the solution confirms it is the minimum.
        let cost = |b: &Vec3| gn_residual(&noisy, &w, b).unwrap().norm_squared();
        let best = cost(&from_zero);
        for i in -3..=3 {
            for j in -3..=3 {
                for k in -3..=3 {
                    let probe = from_zero + Vec3::new(i as f64, j as f64, k as f64) * 2e-3;
                    assert!(cost(&probe) >= best - 1e-18);
                }
            }
        }
    }

    #[test]
    fn solvers_are_frame_equivariant() {
        let b_true = Vec3::new(0.02, -0.01, 0.03);
        let w = window_from(|k| Vec3::new(0.3, -0.1 * k as f64 / 10.0, 0.25), L);
        let r_ij = Rotation::exp(&Vec3::new(2e-4, 0.0, -1e-4)) * preintegrate_rotation(&w, &b_true);
        let frame = Rotation::exp(&Vec3::new(0.7, -0.4, 1.1));
        let rotated_w = w.map_gyro(|g| frame * *g);
        let rotated_r = frame * r_ij * frame.transpose();
        for method in BiasMethod::ALL {
            let b = method.solve(&r_ij, &w).unwrap();
            let b_rot = method.solve(&rotated_r, &rotated_w).unwrap();
            assert!((frame * b - b_rot).norm() < 1e-9, "{method}");
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in BiasMethod::ALL {
            assert_eq!(m.name().parse::<BiasMethod>().unwrap(), m);
        }
        assert!("nope".parse::<BiasMethod>().is_err());
    }
}
