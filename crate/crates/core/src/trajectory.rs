//! Intra-scan trajectory estimation from IMU data anchored by registration.
//!
//! Orientation comes from a Madgwick gyro/accelerometer filter, velocity from
//! integrating gravity-compensated accelerations starting at the velocity
//! derived from the last two registered poses, and position from integrating
//! that velocity. Poses are produced at the IMU rate and interpolated to
//! individual point timestamps.

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_from_vector, Pose, Vec3};
use crate::simulator::{ImuSample, ImuStream, GRAVITY};

pub const DEFAULT_MADGWICK_GAIN: f64 = 0.1;

/// Linear (m/s) and angular (rad/s) velocity, both in the lidar body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub timestamp: f64,
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn new(timestamp: f64, linear: Vec3, angular: Vec3) -> Self {
        Self {
            timestamp,
            linear,
            angular,
        }
    }

    pub fn zero(timestamp: f64) -> Self {
        Self::new(timestamp, Vec3::zeros(), Vec3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }
}

/// Poses sampled over one scan. Sample times are relative to `scan_start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEstimate {
    pub scan_start: f64,
    pub samples: Vec<(f64, Pose)>,
    /// Body twists at the sample times; used by the weighting models.
    pub twists: Vec<Twist>,
    /// Time-average of `twists`, for diagnostics.
    pub mean_twist: Twist,
}

/// Result of [`TrajectoryEstimate::interpolate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolatedPose {
    pub pose: Pose,
    /// Query fell outside the sampled range and was clamped.
    pub clamped: bool,
}

impl TrajectoryEstimate {
    pub fn new(scan_start: f64, samples: Vec<(f64, Pose)>, twists: Vec<Twist>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::param("trajectory needs at least one sample"));
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::param("trajectory timestamps must be strictly increasing"));
        }
        let mean_twist = mean_twist(&twists);
        Ok(Self {
            scan_start,
            samples,
            twists,
            mean_twist,
        })
    }

    /// Identity pose held over `[0, period]`.
    pub fn identity(period: f64) -> Self {
        let samples = vec![(0.0, Pose::identity()), (period.max(1e-9), Pose::identity())];
        let twists = vec![Twist::zero(0.0), Twist::zero(period)];
        Self::new(0.0, samples, twists).expect("valid samples")
    }

    /// Integrates body twists (sorted, relative timestamps) from `start`.
    ///
    /// Each step rotates by the mean gyro rate and translates with the mean
    /// body velocity expressed at the mid-step orientation.
    pub fn from_body_twists(start: Pose, twists: &[Twist]) -> Result<Self> {
        if twists.is_empty() {
            return Err(Error::param("need at least one twist"));
        }
        let mut samples = Vec::with_capacity(twists.len());
        let mut pose = start;
        samples.push((twists[0].timestamp, pose));
        for w in twists.windows(2) {
            let dt = w[1].timestamp - w[0].timestamp;
            let omega = (w[0].angular + w[1].angular) * 0.5;
            let v = (w[0].linear + w[1].linear) * 0.5;
            let mid = pose.rotation * rotation_from_vector(&(omega * (0.5 * dt)));
            let rotation = pose.rotation * rotation_from_vector(&(omega * dt));
            pose = Pose::new(rotation, pose.translation + mid * (v * dt));
            samples.push((w[1].timestamp, pose));
        }
        if samples.len() == 1 {
            samples.push((samples[0].0 + 1e-9, pose));
        }
        Self::new(0.0, samples, twists.to_vec())
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].0
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].0
    }

    /// Pose at relative time `t`; translation lerped, rotation slerped.
    pub fn interpolate(&self, t: f64) -> InterpolatedPose {
        let first = &self.samples[0];
        let last = &self.samples[self.samples.len() - 1];
        if t <= first.0 {
            return InterpolatedPose {
                pose: first.1,
                clamped: t < first.0,
            };
        }
        if t >= last.0 {
            return InterpolatedPose {
                pose: last.1,
                clamped: t > last.0,
            };
        }
        let hi = self.samples.partition_point(|(ts, _)| *ts <= t);
        let (t0, p0) = &self.samples[hi - 1];
        if *t0 == t {
            return InterpolatedPose {
                pose: *p0,
                clamped: false,
            };
        }
        let (t1, p1) = &self.samples[hi];
        InterpolatedPose {
            pose: p0.interpolate(p1, (t - t0) / (t1 - t0)),
            clamped: false,
        }
    }

    /// Pose at `t` relative to the pose at the first sample.
    pub fn relative_pose(&self, t: f64) -> Pose {
        self.samples[0].1.inverse().compose(&self.interpolate(t).pose)
    }
}

/// Pose at relative time `t` of `traj`.
pub fn interpolate_pose(traj: &TrajectoryEstimate, t: f64) -> InterpolatedPose {
    traj.interpolate(t)
}

fn mean_twist(twists: &[Twist]) -> Twist {
    match twists {
        [] => Twist::zero(0.0),
        [only] => *only,
        _ => {
            // Trapezoidal time-average.
            let span = twists[twists.len() - 1].timestamp - twists[0].timestamp;
            let mut lin = Vec3::zeros();
            let mut ang = Vec3::zeros();
            for w in twists.windows(2) {
                let dt = w[1].timestamp - w[0].timestamp;
                lin += (w[0].linear + w[1].linear) * (0.5 * dt);
                ang += (w[0].angular + w[1].angular) * (0.5 * dt);
            }
            if span > 0.0 {
                Twist::new(twists[0].timestamp, lin / span, ang / span)
            } else {
                twists[0]
            }
        }
    }
}

/// One Madgwick step: exact gyro integration followed by a normalised
/// gradient-descent correction toward gravity alignment.
///
/// `state` maps body to world. With `gain = 0` this is pure gyro integration;
/// a zero accelerometer reading skips the correction.
pub fn madgwick_update(
    state: &UnitQuaternion<f64>,
    gyro: &Vec3,
    accel: &Vec3,
    dt: f64,
    gain: f64,
) -> UnitQuaternion<f64> {
    let predicted = state * rotation_from_vector(&(gyro * dt));
    let a_norm = accel.norm();
    if gain <= 0.0 || a_norm == 0.0 || !a_norm.is_finite() {
        return predicted;
    }
    let a = accel / a_norm;
    let q = predicted.quaternion();
    let (q0, q1, q2, q3) = (q.w, q.i, q.j, q.k);
    // Gravity direction predicted in the body frame minus the measured one.
    let f = [
        2.0 * (q1 * q3 - q0 * q2) - a.x,
        2.0 * (q0 * q1 + q2 * q3) - a.y,
        2.0 * (0.5 - q1 * q1 - q2 * q2) - a.z,
    ];
    let grad = [
        -2.0 * q2 * f[0] + 2.0 * q1 * f[1],
        2.0 * q3 * f[0] + 2.0 * q0 * f[1] - 4.0 * q1 * f[2],
        -2.0 * q0 * f[0] + 2.0 * q3 * f[1] - 4.0 * q2 * f[2],
        2.0 * q1 * f[0] + 2.0 * q2 * f[1],
    ];
    let g_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    // Already aligned to rounding precision.
    if g_norm < 1e-12 {
        return predicted;
    }
    let step = gain * dt / g_norm;
    UnitQuaternion::from_quaternion(Quaternion::new(
        q0 - step * grad[0],
        q1 - step * grad[1],
        q2 - step * grad[2],
        q3 - step * grad[3],
    ))
}

fn gravity_free_acceleration(orientation: &UnitQuaternion<f64>, specific_force: &Vec3) -> Vec3 {
    orientation * specific_force - Vec3::new(0.0, 0.0, GRAVITY)
}

/// Integrates gravity-compensated accelerations from a world-frame anchor
/// velocity. `imu` and `orientations` are aligned sample-by-sample; the
/// returned twists are body-frame with timestamps copied from `imu`.
pub fn fuse_velocity(
    imu: &[ImuSample],
    orientations: &[UnitQuaternion<f64>],
    anchor_velocity: &Vec3,
) -> Result<Vec<Twist>> {
    if imu.is_empty() {
        return Ok(vec![Twist::new(0.0, *anchor_velocity, Vec3::zeros())]);
    }
    if imu.len() != orientations.len() {
        return Err(Error::param("IMU samples and orientations differ in length"));
    }
    let mut out = Vec::with_capacity(imu.len());
    let mut v = *anchor_velocity;
    let mut prev_acc = gravity_free_acceleration(&orientations[0], &imu[0].accel);
    out.push(Twist::new(imu[0].timestamp, orientations[0].inverse() * v, imu[0].gyro));
    for k in 1..imu.len() {
        let acc = gravity_free_acceleration(&orientations[k], &imu[k].accel);
        let dt = imu[k].timestamp - imu[k - 1].timestamp;
        v += (prev_acc + acc) * (0.5 * dt);
        prev_acc = acc;
        out.push(Twist::new(imu[k].timestamp, orientations[k].inverse() * v, imu[k].gyro));
    }
    Ok(out)
}

/// World-frame velocities corresponding to body twists and orientations.
fn world_velocities(twists: &[Twist], orientations: &[UnitQuaternion<f64>]) -> Vec<Vec3> {
    twists
        .iter()
        .zip(orientations)
        .map(|(t, q)| q * t.linear)
        .collect()
}

/// Resamples the IMU stream on `scan_start + k * dt`, `k = 0..=steps`.
fn resample_imu(imu: &ImuStream, scan_start: f64, scan_period: f64) -> Result<Vec<ImuSample>> {
    let samples = &imu.samples;
    if samples.len() < 2 {
        return Err(Error::ImuCoverage {
            start: scan_start,
            end: scan_start + scan_period,
        });
    }
    let nominal = {
        let mut diffs: Vec<f64> = samples.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
        diffs.sort_by(f64::total_cmp);
        diffs[diffs.len() / 2]
    };
    let end = scan_start + scan_period;
    let eps = 1e-9;
    if samples[0].timestamp > scan_start + eps || samples[samples.len() - 1].timestamp < end - eps {
        return Err(Error::ImuCoverage { start: scan_start, end });
    }
    for w in samples.windows(2) {
        let (a, b) = (w[0].timestamp, w[1].timestamp);
        if b > scan_start - nominal && a < end + nominal && b - a > 2.0 * nominal + eps {
            return Err(Error::ImuGap { at: a, gap: b - a });
        }
    }

    let steps = ((scan_period / nominal) - eps).ceil().max(1.0) as usize;
    let dt = scan_period / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let rel = k as f64 * dt;
        let t = scan_start + rel;
        let hi = samples.partition_point(|s| s.timestamp < t).min(samples.len() - 1);
        let sample = if (samples[hi].timestamp - t).abs() <= eps || hi == 0 {
            samples[hi]
        } else {
            let (a, b) = (&samples[hi - 1], &samples[hi]);
            let alpha = (t - a.timestamp) / (b.timestamp - a.timestamp);
            ImuSample {
                timestamp: t,
                gyro: a.gyro + (b.gyro - a.gyro) * alpha,
                accel: a.accel + (b.accel - a.accel) * alpha,
            }
        };
        out.push(ImuSample {
            timestamp: rel,
            ..sample
        });
    }
    Ok(out)
}

/// Estimates the lidar trajectory over `[scan_start, scan_start + scan_period]`.
///
/// `start` supplies the orientation (and position) at the scan start;
/// `anchor_velocity` is the world-frame velocity from registration.
pub fn estimate_trajectory(
    imu: &ImuStream,
    anchor_velocity: &Vec3,
    start: &Pose,
    scan_start: f64,
    scan_period: f64,
    gain: f64,
) -> Result<TrajectoryEstimate> {
    if !(scan_period > 0.0) {
        return Err(Error::param("scan period must be positive"));
    }
    let grid = resample_imu(imu, scan_start, scan_period)?;

    let mut orientations = Vec::with_capacity(grid.len());
    orientations.push(start.rotation);
    for k in 1..grid.len() {
        let dt = grid[k].timestamp - grid[k - 1].timestamp;
        let gyro = (grid[k - 1].gyro + grid[k].gyro) * 0.5;
        let q = madgwick_update(&orientations[k - 1], &gyro, &grid[k].accel, dt, gain);
        orientations.push(q);
    }

    let twists = fuse_velocity(&grid, &orientations, anchor_velocity)?;
    let velocities = world_velocities(&twists, &orientations);
    let mut position = start.translation;
    let mut samples = Vec::with_capacity(grid.len());
    samples.push((0.0, Pose::new(orientations[0], position)));
    for k in 1..grid.len() {
        let dt = grid[k].timestamp - grid[k - 1].timestamp;
        position += (velocities[k - 1] + velocities[k]) * (0.5 * dt);
        samples.push((grid[k].timestamp, Pose::new(orientations[k], position)));
    }
    let mut traj = TrajectoryEstimate::new(scan_start, samples, twists)?;
    traj.scan_start = scan_start;
    Ok(traj)
}

/// Stateful wrapper carrying the filter orientation from one scan to the next.
#[derive(Debug, Clone)]
pub struct TrajectoryEstimator {
    pub gain: f64,
    pub state: Pose,
}

impl TrajectoryEstimator {
    pub fn new(initial: Pose, gain: f64) -> Self {
        Self {
            gain,
            state: initial,
        }
    }

    /// Estimates one scan and advances the internal state to its end.
    pub fn estimate(
        &mut self,
        imu: &ImuStream,
        anchor_velocity: &Vec3,
        scan_start: f64,
        scan_period: f64,
    ) -> Result<TrajectoryEstimate> {
        let traj = estimate_trajectory(imu, anchor_velocity, &self.state, scan_start, scan_period, self.gain)?;
        self.state = traj.interpolate(scan_period).pose;
        Ok(traj)
    }
}
