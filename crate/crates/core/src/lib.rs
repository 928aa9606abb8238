//! Motion-robust lidar registration.
//!
//! Scans taken by a moving lidar are distorted because every point is
//! measured at a different instant. This crate simulates such scans,
//! estimates the sensor motion during a scan, removes the distortion,
//! weights points by how much residual distortion they are likely to carry,
//! and registers scans with a weighted point-to-plane ICP.

// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cloud;
pub mod deskew;
pub mod error;
pub mod geometry;
pub mod io;
pub mod knn;
pub mod optim;
pub mod pipeline;
pub mod registration;
pub mod simulator;
pub mod trajectory;
pub mod weighting;

pub use cloud::{PointCloud, TimedPoint};
pub use error::{Error, Result};
pub use geometry::{Pose, Vec3};
pub use trajectory::{TrajectoryEstimate, Twist};
pub use weighting::WeightingModel;
