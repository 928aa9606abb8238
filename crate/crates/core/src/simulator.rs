//! Deterministic ground-truth generator: planar scenes, piecewise
//! constant-acceleration trajectories, rotating multi-beam lidar scans and
//! IMU streams.
//!
//! Conventions: world frame is z-up with gravity along -z. Linear velocity
//! and acceleration of a [`Segment`] are world-frame quantities; angular
//! velocity and acceleration are body-frame. The rotation over a segment is
//! `R(t) = R0 * Exp(w0 t + alpha t^2 / 2)`.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, TimedPoint};
use crate::error::{Error, Result};
use crate::geometry::{rotation_from_vector, Pose, Vec3};
use crate::trajectory::{TrajectoryEstimate, Twist};

pub const GRAVITY: f64 = 9.81;
pub const IMU_PERIOD: f64 = 0.01;

/// Tolerance used when a query time sits on the end of the trajectory.
const TIME_EPS: f64 = 1e-9;

/// A finite parallelogram `origin + a*edge_u + b*edge_v`, `a, b` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub origin: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    pub normal: Vec3,
}

impl Patch {
    /// Normal is `edge_u x edge_v`, normalised.
    pub fn new(origin: Vec3, edge_u: Vec3, edge_v: Vec3) -> Result<Self> {
        let cross = edge_u.cross(&edge_v);
        let area = cross.norm();
        if !(area > 1e-12) {
            return Err(Error::param("patch has zero area"));
        }
        Ok(Self {
            origin,
            edge_u,
            edge_v,
            normal: cross / area,
        })
    }

    /// Flips the normal so that it points toward `inside`.
    pub fn facing(mut self, inside: &Vec3) -> Self {
        if (inside - self.origin).dot(&self.normal) < 0.0 {
            self.normal = -self.normal;
        }
        self
    }

    fn validate(&self) -> Result<()> {
        if (self.normal.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::param("patch normal must have unit norm"));
        }
        if self.edge_u.cross(&self.edge_v).norm() <= 1e-12 {
            return Err(Error::param("patch has zero area"));
        }
        Ok(())
    }

    /// Ray parameter of the hit, if the ray meets the patch in front of its origin.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = self.normal.dot(&(self.origin - origin)) / denom;
        if s <= 1e-9 {
            return None;
        }
        let (a, b) = self.coordinates(&(origin + dir * s));
        let tol = 1e-12;
        ((-tol..=1.0 + tol).contains(&a) && (-tol..=1.0 + tol).contains(&b)).then_some(s)
    }

    fn coordinates(&self, x: &Vec3) -> (f64, f64) {
        let d = x - self.origin;
        let uu = self.edge_u.dot(&self.edge_u);
        let vv = self.edge_v.dot(&self.edge_v);
        let uv = self.edge_u.dot(&self.edge_v);
        let du = d.dot(&self.edge_u);
        let dv = d.dot(&self.edge_v);
        let det = uu * vv - uv * uv;
        ((du * vv - dv * uv) / det, (dv * uu - du * uv) / det)
    }

    /// Distance from `x` to the closest point of the patch.
    pub fn distance(&self, x: &Vec3) -> f64 {
        let (a, b) = self.coordinates(x);
        let closest = self.origin + self.edge_u * a.clamp(0.0, 1.0) + self.edge_v * b.clamp(0.0, 1.0);
        if (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) {
            (x - self.origin).dot(&self.normal).abs()
        } else {
            (x - closest).norm()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanarEnvironment {
    pub patches: Vec<Patch>,
}

impl PlanarEnvironment {
    pub fn new(patches: Vec<Patch>) -> Result<Self> {
        let env = Self { patches };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        self.patches.iter().try_for_each(Patch::validate)
    }

    /// Closed box `[-half_x, half_x] x [-half_y, half_y] x [floor, ceiling]`
    /// with inward-facing normals.
    pub fn room(half_x: f64, half_y: f64, floor: f64, ceiling: f64) -> Self {
        let inside = Vec3::new(0.0, 0.0, 0.5 * (floor + ceiling));
        let (w, d, h) = (2.0 * half_x, 2.0 * half_y, ceiling - floor);
        let c = Vec3::new(-half_x, -half_y, floor);
        let patches = [
            (c, Vec3::new(0.0, d, 0.0), Vec3::new(0.0, 0.0, h)),
            (c + Vec3::new(w, 0.0, 0.0), Vec3::new(0.0, d, 0.0), Vec3::new(0.0, 0.0, h)),
            (c, Vec3::new(w, 0.0, 0.0), Vec3::new(0.0, 0.0, h)),
            (c + Vec3::new(0.0, d, 0.0), Vec3::new(w, 0.0, 0.0), Vec3::new(0.0, 0.0, h)),
            (c, Vec3::new(w, 0.0, 0.0), Vec3::new(0.0, d, 0.0)),
            (c + Vec3::new(0.0, 0.0, h), Vec3::new(w, 0.0, 0.0), Vec3::new(0.0, d, 0.0)),
        ]
        .into_iter()
        .map(|(o, u, v)| Patch::new(o, u, v).expect("room faces have area").facing(&inside))
        .collect();
        Self { patches }
    }

    /// Square room of side `2 * half` centred on the origin.
    pub fn square_room(half: f64, floor: f64, ceiling: f64) -> Self {
        Self::room(half, half, floor, ceiling)
    }

    /// One wall in the plane `x = x`, facing the origin.
    pub fn wall_x(x: f64, half_width: f64, half_height: f64) -> Self {
        let patch = Patch::new(
            Vec3::new(x, -half_width, -half_height),
            Vec3::new(0.0, 2.0 * half_width, 0.0),
            Vec3::new(0.0, 0.0, 2.0 * half_height),
        )
        .expect("wall has area")
        .facing(&Vec3::zeros());
        Self {
            patches: vec![patch],
        }
    }

    /// Closest hit `(range, patch index)` along a unit direction.
    pub fn ray_cast(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<(f64, usize)> {
        self.patches
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(origin, dir).map(|s| (s, i)))
            .filter(|(s, _)| *s <= max_range)
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Distance from `x` to the nearest patch.
    pub fn distance(&self, x: &Vec3) -> f64 {
        self.patches
            .iter()
            .map(|p| p.distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Regular grid of surface samples with normals, used as a ground-truth map.
    pub fn sample_surface(&self, spacing: f64) -> Result<PointCloud> {
        if !(spacing > 0.0) {
            return Err(Error::param("sampling spacing must be positive"));
        }
        let mut points = Vec::new();
        for p in &self.patches {
            let nu = (p.edge_u.norm() / spacing).ceil().max(1.0) as usize;
            let nv = (p.edge_v.norm() / spacing).ceil().max(1.0) as usize;
            for i in 0..=nu {
                for j in 0..=nv {
                    let x = p.origin + p.edge_u * (i as f64 / nu as f64) + p.edge_v * (j as f64 / nv as f64);
                    points.push(TimedPoint::new(x, 0.0).with_normal(p.normal));
                }
            }
        }
        Ok(PointCloud::new(points, "world"))
    }
}

/// Motion envelope a trajectory must respect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionCaps {
    pub linear_speed: f64,
    pub angular_speed: f64,
    pub linear_acceleration: f64,
    pub angular_acceleration: f64,
}

impl Default for MotionCaps {
    fn default() -> Self {
        Self {
            linear_speed: 3.5,
            angular_speed: 11.0,
            linear_acceleration: 200.0,
            angular_acceleration: 800.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    #[serde(default = "Vec3::zeros")]
    pub linear_velocity: Vec3,
    #[serde(default = "Vec3::zeros")]
    pub angular_velocity: Vec3,
    #[serde(default = "Vec3::zeros")]
    pub linear_acceleration: Vec3,
    #[serde(default = "Vec3::zeros")]
    pub angular_acceleration: Vec3,
}

impl Segment {
    pub fn constant(duration: f64, linear_velocity: Vec3, angular_velocity: Vec3) -> Self {
        Self {
            duration,
            linear_velocity,
            angular_velocity,
            linear_acceleration: Vec3::zeros(),
            angular_acceleration: Vec3::zeros(),
        }
    }

    fn rotation_vector(&self, dt: f64) -> Vec3 {
        self.angular_velocity * dt + self.angular_acceleration * (0.5 * dt * dt)
    }

    fn pose_at(&self, start: &Pose, dt: f64) -> Pose {
        let translation = start.translation
            + self.linear_velocity * dt
            + self.linear_acceleration * (0.5 * dt * dt);
        let phi = self.rotation_vector(dt);
        let rotation = if phi == Vec3::zeros() {
            start.rotation
        } else {
            start.rotation * rotation_from_vector(&phi)
        };
        Pose::new(rotation, translation)
    }

    fn body_angular_velocity(&self, dt: f64) -> Vec3 {
        let phi = self.rotation_vector(dt);
        let rate = self.angular_velocity + self.angular_acceleration * dt;
        right_jacobian(&phi) * rate
    }
}

/// Right Jacobian of SO(3): maps the rate of an exponential coordinate to body angular velocity.
fn right_jacobian(phi: &Vec3) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = phi.cross_matrix();
    if theta < 1e-8 {
        return Matrix3::identity() - k * 0.5 + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() - k * ((1.0 - theta.cos()) / t2) + k * k * ((theta - theta.sin()) / (t2 * theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    #[serde(default)]
    pub initial: Pose,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub caps: MotionCaps,
}

impl TrajectorySpec {
    pub fn new(initial: Pose, segments: Vec<Segment>) -> Result<Self> {
        let spec = Self {
            initial,
            segments,
            caps: MotionCaps::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn stationary(initial: Pose, duration: f64) -> Self {
        Self {
            initial,
            segments: vec![Segment::constant(duration, Vec3::zeros(), Vec3::zeros())],
            caps: MotionCaps::default(),
        }
    }

    pub fn constant_twist(initial: Pose, linear: Vec3, angular: Vec3, duration: f64) -> Self {
        Self {
            initial,
            segments: vec![Segment::constant(duration, linear, angular)],
            caps: MotionCaps::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::param("trajectory needs at least one segment"));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration > 0.0) {
                return Err(Error::param(format!("segment {i}: duration must be positive")));
            }
            // Speeds are affine in time, so their norms peak at the segment ends.
            let v_end = s.linear_velocity + s.linear_acceleration * s.duration;
            let w_end = s.angular_velocity + s.angular_acceleration * s.duration;
            let checks = [
                ("linear speed", s.linear_velocity.norm().max(v_end.norm()), self.caps.linear_speed),
                ("angular speed", s.angular_velocity.norm().max(w_end.norm()), self.caps.angular_speed),
                ("linear acceleration", s.linear_acceleration.norm(), self.caps.linear_acceleration),
                ("angular acceleration", s.angular_acceleration.norm(), self.caps.angular_acceleration),
            ];
            for (what, value, cap) in checks {
                if value > cap + 1e-12 {
                    return Err(Error::param(format!(
                        "segment {i}: {what} {value:.3} exceeds cap {cap}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Segment index, its start pose and the time offset inside it.
    fn locate(&self, t: f64) -> Result<(usize, Pose, f64)> {
        let total = self.duration();
        if !(t >= -TIME_EPS && t <= total + TIME_EPS) {
            return Err(Error::param(format!(
                "time {t} outside trajectory range [0, {total}]"
            )));
        }
        let t = t.clamp(0.0, total);
        let mut start = self.initial;
        let mut t0 = 0.0;
        let last = self.segments.len() - 1;
        for (i, s) in self.segments.iter().enumerate() {
            if t < t0 + s.duration || i == last {
                return Ok((i, start, t - t0));
            }
            start = s.pose_at(&start, s.duration);
            t0 += s.duration;
        }
        unreachable!("segments is non-empty")
    }

    /// Ground-truth lidar pose (body to world) at time `t`.
    pub fn pose_at(&self, t: f64) -> Result<Pose> {
        let (i, start, dt) = self.locate(t)?;
        Ok(self.segments[i].pose_at(&start, dt))
    }

    /// World-frame linear velocity at `t`.
    pub fn world_velocity_at(&self, t: f64) -> Result<Vec3> {
        let (i, _, dt) = self.locate(t)?;
        let s = &self.segments[i];
        Ok(s.linear_velocity + s.linear_acceleration * dt)
    }

    /// Body-frame twist at `t`, stamped with `t`.
    pub fn twist_at(&self, t: f64) -> Result<Twist> {
        let (i, start, dt) = self.locate(t)?;
        let s = &self.segments[i];
        let pose = s.pose_at(&start, dt);
        let v_world = s.linear_velocity + s.linear_acceleration * dt;
        Ok(Twist::new(
            t,
            pose.rotation.inverse() * v_world,
            s.body_angular_velocity(dt),
        ))
    }

    /// Path length travelled over `[t0, t1]`, by fine quadrature of the speed.
    pub fn distance_travelled(&self, t0: f64, t1: f64) -> Result<f64> {
        let steps = (((t1 - t0) / 1e-3).ceil() as usize).max(1);
        let h = (t1 - t0) / steps as f64;
        let mut total = 0.0;
        let mut prev = self.world_velocity_at(t0)?.norm();
        for k in 1..=steps {
            let cur = self.world_velocity_at(t0 + h * k as f64)?.norm();
            total += 0.5 * (prev + cur) * h;
            prev = cur;
        }
        Ok(total)
    }
}

/// Ground-truth pose at `t`.
pub fn true_pose_at(spec: &TrajectorySpec, t: f64) -> Result<Pose> {
    spec.pose_at(t)
}

/// Rotating multi-beam lidar. All beams fire together at each azimuth step;
/// the sweep is anti-clockwise about +z starting from the -x direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarModel {
    pub beams: usize,
    /// Half of the vertical field of view (rad); beams are spread uniformly over it.
    pub vertical_half_fov: f64,
    /// Revolutions (= scans) per second.
    pub rotation_rate: f64,
    /// Azimuth steps per revolution, each firing every beam.
    pub firings_per_revolution: usize,
    pub min_range: f64,
    pub max_range: f64,
    /// Standard deviation of the additive range noise (m), truncated at 3 sigma.
    pub range_noise: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            beams: 16,
            vertical_half_fov: 15f64.to_radians(),
            rotation_rate: 10.0,
            firings_per_revolution: 125,
            min_range: 0.2,
            max_range: 100.0,
            range_noise: 0.01,
        }
    }
}

impl LidarModel {
    pub fn validate(&self) -> Result<()> {
        if self.beams == 0 || self.firings_per_revolution == 0 {
            return Err(Error::param("lidar needs at least one beam and one firing"));
        }
        if !(self.rotation_rate > 0.0) || !(self.max_range > self.min_range) || self.range_noise < 0.0 {
            return Err(Error::param("invalid lidar rate, range limits or noise"));
        }
        Ok(())
    }

    pub fn scan_period(&self) -> f64 {
        1.0 / self.rotation_rate
    }

    /// Points per second when every ray returns.
    pub fn point_rate(&self) -> f64 {
        (self.beams * self.firings_per_revolution) as f64 * self.rotation_rate
    }

    pub fn firing_time(&self, firing: usize) -> f64 {
        firing as f64 * self.scan_period() / self.firings_per_revolution as f64
    }

    pub fn azimuth(&self, firing: usize) -> f64 {
        PI + 2.0 * PI * firing as f64 / self.firings_per_revolution as f64
    }

    pub fn elevation(&self, beam: usize) -> f64 {
        if self.beams == 1 {
            0.0
        } else {
            -self.vertical_half_fov + 2.0 * self.vertical_half_fov * beam as f64 / (self.beams - 1) as f64
        }
    }

    /// Unit ray direction in the lidar frame.
    pub fn direction(&self, firing: usize, beam: usize) -> Vec3 {
        let (sa, ca) = self.azimuth(firing).sin_cos();
        let (se, ce) = self.elevation(beam).sin_cos();
        Vec3::new(ce * ca, ce * sa, se)
    }
}

/// A scan as the sensor reports it (`skewed`) and as it would look with
/// perfect motion compensation (`unskewed`). Both share hits, timestamps and noise.
#[derive(Debug, Clone)]
pub struct SimulatedScan {
    pub skewed: PointCloud,
    pub unskewed: PointCloud,
    /// Ground-truth pose at the scan start.
    pub start_pose: Pose,
}

pub fn simulate_scan(
    env: &PlanarEnvironment,
    spec: &TrajectorySpec,
    lidar: &LidarModel,
    scan_start: f64,
    seed: u64,
) -> Result<SimulatedScan> {
    if env.patches.is_empty() {
        return Err(Error::param("environment has no patches"));
    }
    lidar.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_pose = spec.pose_at(scan_start)?;
    let to_start = start_pose.inverse();
    let capacity = lidar.beams * lidar.firings_per_revolution;
    let mut skewed = Vec::with_capacity(capacity);
    let mut unskewed = Vec::with_capacity(capacity);

    for firing in 0..lidar.firings_per_revolution {
        let t = lidar.firing_time(firing);
        let pose = spec.pose_at(scan_start + t)?;
        let relative = (pose != start_pose).then(|| to_start.compose(&pose));
        for beam in 0..lidar.beams {
            // One draw per ray whether or not it hits keeps noise aligned across motions.
            let z: f64 = rng.sample(StandardNormal);
            let noise = lidar.range_noise * z.clamp(-3.0, 3.0);
            let local_dir = lidar.direction(firing, beam);
            let world_dir = pose.rotate_vector(&local_dir);
            let Some((range, _)) = env.ray_cast(&pose.translation, &world_dir, lidar.max_range) else {
                continue;
            };
            let range = range + noise;
            if range < lidar.min_range || range > lidar.max_range {
                continue;
            }
            let local = local_dir * range;
            let corrected = relative.map_or(local, |r| r.transform_point(&local));
            skewed.push(TimedPoint::new(local, t));
            unskewed.push(TimedPoint::new(corrected, t));
        }
    }
    Ok(SimulatedScan {
        skewed: PointCloud::new(skewed, "lidar"),
        unskewed: PointCloud::new(unskewed, "scan_start"),
        start_pose,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Body angular velocity (rad/s).
    pub gyro: Vec3,
    /// Body specific force (m/s^2), gravity included.
    pub accel: Vec3,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImuStream {
    pub samples: Vec<ImuSample>,
}

impl ImuStream {
    pub fn validate(&self) -> Result<()> {
        for w in self.samples.windows(2) {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::param("IMU timestamps must be strictly increasing"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuNoise {
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    pub gyro_sigma: f64,
    pub accel_sigma: f64,
}

/// Samples gyro and accelerometer at 100 Hz over the whole trajectory.
pub fn simulate_imu(spec: &TrajectorySpec, noise: &ImuNoise, seed: u64) -> Result<ImuStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = spec.duration();
    let count = (total / IMU_PERIOD + 1e-9).floor() as usize + 1;
    let gravity = Vec3::new(0.0, 0.0, -GRAVITY);
    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let t = k as f64 * IMU_PERIOD;
        let (i, start, dt) = spec.locate(t)?;
        let seg = &spec.segments[i];
        let pose = seg.pose_at(&start, dt);
        let mut gyro = seg.body_angular_velocity(dt) + noise.gyro_bias;
        let mut accel = pose.rotation.inverse() * (seg.linear_acceleration - gravity) + noise.accel_bias;
        if noise.gyro_sigma > 0.0 {
            gyro += Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)) * noise.gyro_sigma;
        }
        if noise.accel_sigma > 0.0 {
            accel += Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)) * noise.accel_sigma;
        }
        samples.push(ImuSample {
            timestamp: t,
            gyro,
            accel,
        });
    }
    Ok(ImuStream { samples })
}

/// Adds estimation errors to a twist, component-wise.
pub fn perturb_twist(twist: &Twist, linear_error: &Vec3, angular_error: &Vec3) -> Twist {
    Twist::new(
        twist.timestamp,
        twist.linear + linear_error,
        twist.angular + angular_error,
    )
}

/// Ground-truth body twists at 100 Hz over one scan, stamped relative to its start.
pub fn true_twists(spec: &TrajectorySpec, scan_start: f64, scan_period: f64) -> Result<Vec<Twist>> {
    let steps = (scan_period / IMU_PERIOD - 1e-9).ceil() as usize;
    (0..=steps)
        .map(|k| {
            let rel = (k as f64 * IMU_PERIOD).min(scan_period);
            let t = (scan_start + rel).min(spec.duration());
            spec.twist_at(t).map(|mut tw| {
                tw.timestamp = rel;
                tw
            })
        })
        .collect()
}

/// True motion over one scan relative to its start pose, sampled at every
/// firing time and at the scan end, so de-skewing with it is exact.
pub fn true_trajectory(spec: &TrajectorySpec, lidar: &LidarModel, scan_start: f64) -> Result<TrajectoryEstimate> {
    lidar.validate()?;
    let period = lidar.scan_period();
    let to_start = spec.pose_at(scan_start)?.inverse();
    let mut times: Vec<f64> = (0..lidar.firings_per_revolution).map(|j| lidar.firing_time(j)).collect();
    times.push(period);
    let samples = times
        .iter()
        .map(|&t| Ok((t, to_start.compose(&spec.pose_at(scan_start + t)?))))
        .collect::<Result<Vec<_>>>()?;
    TrajectoryEstimate::new(0.0, samples, true_twists(spec, scan_start, period)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pose_at_start_is_initial() {
        let initial = Pose::from_vectors(&Vec3::new(0.0, 0.0, 0.3), &Vec3::new(1.0, 2.0, 0.5));
        let spec = TrajectorySpec::constant_twist(initial, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 2.0), 1.0);
        assert_eq!(spec.pose_at(0.0).unwrap(), initial);
    }

    #[test]
    fn constant_velocity_and_acceleration() {
        let spec = TrajectorySpec::constant_twist(Pose::identity(), Vec3::new(1.0, 0.0, 0.0), Vec3::zeros(), 1.0);
        assert_relative_eq!(spec.pose_at(0.1).unwrap().translation, Vec3::new(0.1, 0.0, 0.0), epsilon = 1e-15);

        let mut seg = Segment::constant(1.0, Vec3::zeros(), Vec3::zeros());
        seg.linear_acceleration = Vec3::new(2.0, 0.0, 0.0);
        let spec = TrajectorySpec::new(Pose::identity(), vec![seg]).unwrap();
        assert_relative_eq!(spec.pose_at(0.1).unwrap().translation, Vec3::new(0.01, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn out_of_range_time_is_rejected() {
        let spec = TrajectorySpec::stationary(Pose::identity(), 1.0);
        assert!(spec.pose_at(-0.1).is_err());
        assert!(spec.pose_at(1.1).is_err());
        assert!(spec.pose_at(1.0).is_ok());
    }

    #[test]
    fn segments_chain_continuously() {
        let mut a = Segment::constant(0.5, Vec3::new(1.0, 0.5, 0.0), Vec3::new(0.0, 0.0, 1.0));
        a.angular_acceleration = Vec3::new(0.3, 0.0, 2.0);
        let b = Segment::constant(0.5, Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.5, 0.0, 0.0));
        let spec = TrajectorySpec::new(Pose::identity(), vec![a, b]).unwrap();
        let before = spec.pose_at(0.5 - 1e-9).unwrap();
        let after = spec.pose_at(0.5).unwrap();
        assert!((before.translation - after.translation).norm() < 1e-8);
        assert!(before.inverse().compose(&after).rotation_angle() < 1e-8);
    }

    #[test]
    fn caps_are_enforced() {
        let seg = Segment::constant(1.0, Vec3::new(4.0, 0.0, 0.0), Vec3::zeros());
        assert!(TrajectorySpec::new(Pose::identity(), vec![seg]).is_err());
        let seg = Segment::constant(0.0, Vec3::zeros(), Vec3::zeros());
        assert!(TrajectorySpec::new(Pose::identity(), vec![seg]).is_err());
    }

    #[test]
    fn body_rate_matches_finite_difference() {
        let mut seg = Segment::constant(1.0, Vec3::zeros(), Vec3::new(1.0, -2.0, 3.0));
        seg.angular_acceleration = Vec3::new(-4.0, 5.0, 1.0);
        let spec = TrajectorySpec::new(Pose::identity(), vec![seg]).unwrap();
        let (t, h) = (0.4, 1e-6);
        let a = spec.pose_at(t - h).unwrap();
        let b = spec.pose_at(t + h).unwrap();
        let fd = a.inverse().compose(&b).rotation_vector() / (2.0 * h);
        let w = spec.twist_at(t).unwrap().angular;
        assert!((fd - w).norm() < 1e-5, "{fd} vs {w}");
    }

    #[test]
    fn default_lidar_budget() {
        let lidar = LidarModel::default();
        assert_eq!(lidar.point_rate(), 20_000.0);
        assert_eq!(lidar.scan_period(), 0.1);
        assert_relative_eq!(lidar.direction(0, 7).y, 0.0, epsilon = 1e-12);
        assert!(lidar.direction(0, 7).x < 0.0);
        // A quarter revolution later the beam points along -y (anti-clockwise from -x).
        let d = lidar.direction(lidar.firings_per_revolution / 4 + 1, 8);
        assert!(d.y < -0.9);
    }

    #[test]
    fn true_trajectory_follows_the_segments() {
        let spec = TrajectorySpec::constant_twist(Pose::identity(), Vec3::new(1.0, 0.5, 0.0), Vec3::new(0.0, 0.0, 2.0), 1.0);
        let lidar = LidarModel::default();
        let traj = true_trajectory(&spec, &lidar, 0.3).unwrap();
        let start = spec.pose_at(0.3).unwrap();
        assert_eq!(traj.samples.len(), lidar.firings_per_revolution + 1);
        for &(t, pose) in &traj.samples {
            let expected = start.inverse().compose(&spec.pose_at(0.3 + t).unwrap());
            assert!((pose.translation - expected.translation).norm() < 1e-12);
            assert!(pose.inverse().compose(&expected).rotation_angle() < 1e-12);
        }
        assert_relative_eq!(traj.end_time(), lidar.scan_period(), epsilon = 1e-12);
    }

    #[test]
    fn stationary_scan_is_unskewed() {
        let env = PlanarEnvironment::square_room(4.0, -1.0, 2.0);
        let spec = TrajectorySpec::stationary(Pose::from_translation(0.3, -0.2, 0.0), 1.0);
        let scan = simulate_scan(&env, &spec, &LidarModel::default(), 0.2, 7).unwrap();
        assert_eq!(scan.skewed.points, scan.unskewed.points);
        assert_eq!(scan.skewed.len(), 2000);
    }

    #[test]
    fn moving_origin_shifts_range() {
        // Single wall at x = 5 seen straight ahead half-way through the sweep.
        let env = PlanarEnvironment::wall_x(5.0, 10.0, 10.0);
        let spec = TrajectorySpec::constant_twist(Pose::identity(), Vec3::new(1.0, 0.0, 0.0), Vec3::zeros(), 1.0);
        let lidar = LidarModel {
            beams: 1,
            vertical_half_fov: 0.0,
            range_noise: 0.0,
            firings_per_revolution: 100,
            ..LidarModel::default()
        };
        let scan = simulate_scan(&env, &spec, &lidar, 0.0, 1).unwrap();
        let ahead = scan.skewed.points.iter().position(|p| (p.timestamp - 0.05).abs() < 1e-12).unwrap();
        let skewed = scan.skewed.points[ahead].position;
        let unskewed = scan.unskewed.points[ahead].position;
        assert_relative_eq!(skewed.x, 4.95, epsilon = 1e-12);
        assert_relative_eq!(unskewed.x - skewed.x, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn static_imu_measures_gravity() {
        let spec = TrajectorySpec::stationary(Pose::identity(), 0.5);
        let imu = simulate_imu(&spec, &ImuNoise::default(), 0).unwrap();
        assert_eq!(imu.samples.len(), 51);
        for s in &imu.samples {
            assert_eq!(s.gyro, Vec3::zeros());
            assert_relative_eq!(s.accel, Vec3::new(0.0, 0.0, GRAVITY), epsilon = 1e-12);
        }
        imu.validate().unwrap();
    }

    #[test]
    fn yaw_rate_imu() {
        let spec = TrajectorySpec::constant_twist(Pose::identity(), Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0), 0.5);
        let imu = simulate_imu(&spec, &ImuNoise::default(), 0).unwrap();
        assert!(imu.samples.iter().all(|s| (s.gyro.z - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ramp_imu() {
        let mut seg = Segment::constant(1.0, Vec3::zeros(), Vec3::zeros());
        seg.linear_acceleration = Vec3::new(1.0, 0.0, 0.0);
        let spec = TrajectorySpec::new(Pose::identity(), vec![seg]).unwrap();
        let imu = simulate_imu(&spec, &ImuNoise::default(), 0).unwrap();
        for s in &imu.samples {
            assert_relative_eq!(s.accel, Vec3::new(1.0, 0.0, GRAVITY), epsilon = 1e-12);
        }
    }

    #[test]
    fn perturb_twist_adds() {
        let t = Twist::new(0.0, Vec3::new(1.0, 0.0, 0.0), Vec3::zeros());
        assert_eq!(perturb_twist(&t, &Vec3::zeros(), &Vec3::zeros()), t);
        let p = perturb_twist(&t, &Vec3::new(0.1, 0.0, 0.0), &Vec3::zeros());
        assert_relative_eq!(p.linear, Vec3::new(1.1, 0.0, 0.0));
    }
}
