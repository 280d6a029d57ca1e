//! Closed-form visual-inertial initialization.

pub mod camera;
pub mod gyro;
pub mod imu;
pub mod lie;
pub mod linear;
pub mod observability;
pub mod synth;
pub mod ingest;
pub mod pipeline;
pub mod bench;
pub mod cli;
