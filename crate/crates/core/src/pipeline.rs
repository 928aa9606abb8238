//! Sequential localization and mapping on simulated scans, plus the
//! evaluation harness (relative pose error, map error, batch matrix).

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::deskew::deskew;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::io;
use crate::knn::NeighborIndex;
use crate::registration::{estimate_normals, estimate_normals_toward, icp, merge_into_map, RegistrationConfig};
use crate::simulator::{
    simulate_imu, simulate_scan, true_twists, ImuNoise, ImuStream, LidarModel, Patch, PlanarEnvironment, Segment,
    TrajectorySpec,
};
use crate::trajectory::{estimate_trajectory, TrajectoryEstimate, Twist, DEFAULT_MADGWICK_GAIN};
use crate::weighting::{apply_model, sigma_v, sigma_w, ModelConstants, SawParams, UncertaintyModel, WeightingInputs, WeightingModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    pub half_x: f64,
    pub half_y: f64,
    pub floor: f64,
    pub ceiling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub origin: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    /// A point on the side the normal should face; defaults to the world origin.
    #[serde(default)]
    pub facing: Option<Vec3>,
}

/// Scene description: an optional box-shaped room plus free patches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentConfig {
    pub room: Option<RoomConfig>,
    pub patches: Vec<PatchConfig>,
}

impl EnvironmentConfig {
    pub fn build(&self) -> Result<PlanarEnvironment> {
        let mut patches = match self.room {
            Some(r) => PlanarEnvironment::room(r.half_x, r.half_y, r.floor, r.ceiling).patches,
            None => Vec::new(),
        };
        for p in &self.patches {
            let patch = Patch::new(p.origin, p.edge_u, p.edge_v)?;
            patches.push(patch.facing(&p.facing.unwrap_or_else(Vec3::zeros)));
        }
        PlanarEnvironment::new(patches)
    }
}

/// Everything needed to simulate a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub environment: EnvironmentConfig,
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub lidar: LidarModel,
    #[serde(default)]
    pub imu: ImuNoise,
    /// Number of scans; 0 uses every full revolution the trajectory covers.
    #[serde(default)]
    pub scans: usize,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        io::read_toml(path)
    }

    /// Number of full revolutions that fit in the trajectory, capped by `scans`.
    pub fn scan_count(&self) -> usize {
        let period = self.lidar.scan_period();
        let fit = ((self.trajectory.duration() + 1e-9) / period).floor() as usize;
        if self.scans == 0 {
            fit
        } else {
            self.scans.min(fit)
        }
    }

    /// Room with a floor, a ceiling and a few asymmetric fixtures near the walls.
    pub fn standard_environment() -> EnvironmentConfig {
        let inside = Some(Vec3::zeros());
        EnvironmentConfig {
            room: Some(RoomConfig {
                half_x: 6.0,
                half_y: 4.5,
                floor: -1.0,
                ceiling: 2.0,
            }),
            patches: vec![
                // Box standing in a corner: two faces visible from the centre, plus its top.
                PatchConfig {
                    origin: Vec3::new(4.0, 2.5, -1.0),
                    edge_u: Vec3::new(0.0, 1.5, 0.0),
                    edge_v: Vec3::new(0.0, 0.0, 1.2),
                    facing: inside,
                },
                PatchConfig {
                    origin: Vec3::new(4.0, 2.5, -1.0),
                    edge_u: Vec3::new(1.5, 0.0, 0.0),
                    edge_v: Vec3::new(0.0, 0.0, 1.2),
                    facing: inside,
                },
                PatchConfig {
                    origin: Vec3::new(4.0, 2.5, 0.2),
                    edge_u: Vec3::new(2.0, 0.0, 0.0),
                    edge_v: Vec3::new(0.0, 2.0, 0.0),
                    facing: Some(Vec3::new(5.0, 3.5, 2.0)),
                },
                // Slanted panel against the -x wall.
                PatchConfig {
                    origin: Vec3::new(-6.0, -3.0, -0.5),
                    edge_u: Vec3::new(0.0, 2.0, 0.0),
                    edge_v: Vec3::new(0.8, 0.0, 1.6),
                    facing: inside,
                },
                // Shelf along the +y wall.
                PatchConfig {
                    origin: Vec3::new(-3.0, 3.8, -1.0),
                    edge_u: Vec3::new(2.5, 0.0, 0.0),
                    edge_v: Vec3::new(0.0, 0.0, 1.8),
                    facing: inside,
                },
                // Pillar by the -y wall.
                PatchConfig {
                    origin: Vec3::new(1.0, -4.5, -1.0),
                    edge_u: Vec3::new(0.0, 0.6, 0.0),
                    edge_v: Vec3::new(0.0, 0.0, 3.0),
                    facing: Some(Vec3::new(0.0, -4.2, 0.0)),
                },
                PatchConfig {
                    origin: Vec3::new(1.6, -4.5, -1.0),
                    edge_u: Vec3::new(0.0, 0.6, 0.0),
                    edge_v: Vec3::new(0.0, 0.0, 3.0),
                    facing: Some(Vec3::new(2.0, -4.2, 0.0)),
                },
                PatchConfig {
                    origin: Vec3::new(1.0, -3.9, -1.0),
                    edge_u: Vec3::new(0.6, 0.0, 0.0),
                    edge_v: Vec3::new(0.0, 0.0, 3.0),
                    facing: inside,
                },
            ],
        }
    }

    /// Fixed scripted run: fast yaw with roll/pitch wobble, a push along x,
    /// a hard stop and a sideways pull.
    pub fn standard_extreme_motion() -> Self {
        let segments = vec![
            accelerating(0.3, Vec3::zeros(), Vec3::new(0.2, -0.1, 0.5), Vec3::new(3.0, 1.0, 0.0), Vec3::new(1.0, 1.0, 15.0)),
            accelerating(0.4, Vec3::new(0.9, 0.3, 0.0), Vec3::new(0.5, 0.2, 5.0), Vec3::new(0.0, 0.0, 0.0), Vec3::new(-3.0, 0.0, 5.0)),
            accelerating(0.2, Vec3::new(0.9, 0.3, 0.0), Vec3::new(-0.7, 0.2, 7.0), Vec3::new(-6.0, -1.5, 0.0), Vec3::new(4.0, -2.0, -10.0)),
            accelerating(0.4, Vec3::new(-0.3, 0.0, 0.0), Vec3::new(0.1, -0.2, 5.0), Vec3::new(0.0, -3.0, 0.25), Vec3::new(0.0, 1.0, 2.5)),
            accelerating(0.3, Vec3::new(-0.3, -1.2, 0.1), Vec3::new(0.1, 0.2, 6.0), Vec3::new(1.0, 2.0, -0.3), Vec3::new(0.0, -1.0, -5.0)),
        ];
        Self {
            environment: Self::standard_environment(),
            trajectory: TrajectorySpec {
                initial: Pose::identity(),
                segments,
                caps: Default::default(),
            },
            lidar: LidarModel::default(),
            imu: ImuNoise::default(),
            scans: 0,
        }
    }

    /// Randomised variant of the extreme-motion run, reproducible from `seed`.
    /// Velocity is continuous; each segment ramps linearly to a random target.
    pub fn random_extreme_motion(seed: u64, duration: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut segments = Vec::new();
        let mut v = Vec3::zeros();
        let mut w = Vec3::new(0.0, 0.0, rng.random_range(2.0..5.0) * sign(&mut rng));
        let mut elapsed = 0.0;
        while elapsed < duration - 1e-9 {
            let dur = rng.random_range(0.15..0.35f64).min(duration - elapsed);
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            let speed = rng.random_range(0.0..1.3);
            let target_v = Vec3::new(speed * heading.cos(), speed * heading.sin(), rng.random_range(-0.15..0.15));
            let target_w = Vec3::new(
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                w.z.signum() * rng.random_range(2.0..7.0),
            );
            segments.push(accelerating(dur, v, w, (target_v - v) / dur, (target_w - w) / dur));
            v = target_v;
            w = target_w;
            elapsed += dur;
        }
        Self {
            environment: Self::standard_environment(),
            trajectory: TrajectorySpec {
                initial: Pose::from_vectors(&Vec3::new(0.0, 0.0, rng.random_range(-3.1..3.1)), &Vec3::zeros()),
                segments,
                caps: Default::default(),
            },
            lidar: LidarModel::default(),
            imu: ImuNoise::default(),
            scans: 0,
        }
    }
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

fn accelerating(duration: f64, v: Vec3, w: Vec3, a: Vec3, alpha: Vec3) -> Segment {
    Segment {
        duration,
        linear_velocity: v,
        angular_velocity: w,
        linear_acceleration: a,
        angular_acceleration: alpha,
    }
}

/// Scenario given inline or as a path to a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    File(PathBuf),
    Inline(Box<Scenario>),
}

impl ScenarioSource {
    pub fn resolve(&self) -> Result<Scenario> {
        match self {
            ScenarioSource::File(path) => Scenario::load(path),
            ScenarioSource::Inline(s) => Ok((**s).clone()),
        }
    }
}

impl Default for ScenarioSource {
    fn default() -> Self {
        ScenarioSource::Inline(Box::new(Scenario::standard_extreme_motion()))
    }
}

/// Where the per-scan twists used for de-skewing and weighting come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TwistSource {
    /// Ground-truth twists.
    Truth,
    /// Ground truth plus a constant per-scan Gaussian error whose standard
    /// deviation per axis is the uncertainty model at the true mean speed.
    #[default]
    Injected,
    /// Orientation filter and velocity fusion on the simulated IMU.
    Imu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario: ScenarioSource,
    pub model: WeightingModel,
    pub deskew: bool,
    pub registration: RegistrationConfig,
    pub constants: ModelConstants,
    /// Model used for the weights.
    pub uncertainty: UncertaintyModel,
    pub saw: SawParams,
    pub twist_source: TwistSource,
    /// Model the injected twist errors are drawn from.
    pub error_model: UncertaintyModel,
    /// Multiplier on the injected error standard deviations.
    pub error_scale: f64,
    pub voxel_cell: f64,
    pub normal_neighbors: usize,
    pub madgwick_gain: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSource::default(),
            model: WeightingModel::None,
            deskew: true,
            registration: RegistrationConfig::default(),
            constants: ModelConstants::default(),
            uncertainty: UncertaintyModel::default(),
            saw: SawParams::default(),
            twist_source: TwistSource::default(),
            error_model: UncertaintyModel::default(),
            error_scale: 1.0,
            voxel_cell: 0.05,
            normal_neighbors: 10,
            madgwick_gain: DEFAULT_MADGWICK_GAIN,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        self.constants.validate()?;
        self.uncertainty.validate()?;
        self.error_model.validate()?;
        if !(self.voxel_cell > 0.0) {
            return Err(Error::param("voxel cell must be positive"));
        }
        if self.normal_neighbors < 3 {
            return Err(Error::param("normal estimation needs at least 3 neighbours"));
        }
        if !(self.error_scale >= 0.0) {
            return Err(Error::param("error scale must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    pub translation_cm_per_m: f64,
    pub rotation_deg_per_m: f64,
}

/// Final pose error relative to the distance travelled.
pub fn evaluate(estimate: &Pose, truth: &Pose, distance: f64) -> Result<RelativeError> {
    if !(distance > 0.0) {
        return Err(Error::param("distance travelled must be positive"));
    }
    let translation = (estimate.translation - truth.translation).norm();
    let angle = estimate.inverse().compose(truth).rotation_angle();
    Ok(RelativeError {
        translation_cm_per_m: translation * 100.0 / distance,
        rotation_deg_per_m: angle.to_degrees() / distance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapError {
    pub distances: Vec<f64>,
    pub mean: f64,
}

/// Distance from each built-map point to its nearest truth-map point.
pub fn map_error(built: &PointCloud, truth: &PointCloud) -> Result<MapError> {
    if built.is_empty() || truth.is_empty() {
        return Err(Error::param("map error needs two non-empty maps"));
    }
    let index = NeighborIndex::new(truth);
    let distances: Vec<f64> = built
        .points
        .par_iter()
        .map(|p| index.nearest(&p.position).map_or(f64::INFINITY, |(_, d)| d))
        .collect();
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    Ok(MapError { distances, mean })
}

/// Outcome of one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub index: usize,
    pub time: f64,
    pub pose: Pose,
    pub truth: Pose,
    /// Motion from the previous scan's pose to this one.
    pub increment: Pose,
    pub iterations: usize,
    pub overlap: f64,
    pub cost: f64,
    pub converged: bool,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: WeightingModel,
    pub deskew: bool,
    pub seed: u64,
    pub scans: Vec<ScanRecord>,
    pub final_pose: Pose,
    pub true_final_pose: Pose,
    pub distance: f64,
    /// `None` when the run did not move.
    pub error: Option<RelativeError>,
    pub map_points: usize,
    pub aborted: Option<String>,
    #[serde(skip)]
    pub map: PointCloud,
}

impl RunReport {
    pub fn poses(&self) -> Vec<(f64, Pose)> {
        self.scans.iter().map(|s| (s.time, s.pose)).collect()
    }

    /// Per-scan table `index,t,qw,qx,qy,qz,x,y,z,true_x,true_y,true_z,iterations,overlap,cost,converged`.
    pub fn write_scans_csv<W: std::io::Write>(&self, output: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(output);
        wtr.write_record([
            "index", "t", "qw", "qx", "qy", "qz", "x", "y", "z", "true_x", "true_y", "true_z", "iterations", "overlap",
            "cost", "converged",
        ])?;
        for s in &self.scans {
            let q = s.pose.wxyz();
            let (p, t) = (s.pose.translation, s.truth.translation);
            let mut row: Vec<String> = [s.time, q[0], q[1], q[2], q[3], p.x, p.y, p.z, t.x, t.y, t.z]
                .iter()
                .map(|v| v.to_string())
                .collect();
            row.insert(0, s.index.to_string());
            row.extend([
                s.iterations.to_string(),
                s.overlap.to_string(),
                s.cost.to_string(),
                s.converged.to_string(),
            ]);
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// One-line summary table `model,deskew,seed,distance,translation_cm_per_m,rotation_deg_per_m,scans,map_points,aborted`.
    pub fn write_summary_csv<W: std::io::Write>(&self, output: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(output);
        wtr.write_record(SUMMARY_HEADER)?;
        wtr.write_record(self.summary_row())?;
        wtr.flush()?;
        Ok(())
    }

    fn summary_row(&self) -> Vec<String> {
        let (t, r) = self.error.map_or((String::new(), String::new()), |e| {
            (e.translation_cm_per_m.to_string(), e.rotation_deg_per_m.to_string())
        });
        vec![
            self.model.name().to_string(),
            self.deskew.to_string(),
            self.seed.to_string(),
            self.distance.to_string(),
            t,
            r,
            self.scans.len().to_string(),
            self.map_points.to_string(),
            self.aborted.clone().unwrap_or_default(),
        ]
    }
}

const SUMMARY_HEADER: [&str; 9] = [
    "model",
    "deskew",
    "seed",
    "distance",
    "translation_cm_per_m",
    "rotation_deg_per_m",
    "scans",
    "map_points",
    "aborted",
];

/// Simulator seed of scan `scan` in a run seeded with `seed`.
pub fn scan_seed(seed: u64, scan: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(scan as u64)
}

fn error_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x7E57_0000)
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Twists over one scan with a constant error drawn per axis from the models
/// at the true mean speed.
fn injected_twists(
    truth: &[Twist],
    model: &UncertaintyModel,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Twist>> {
    let n = truth.len().max(1) as f64;
    let mean_v = truth.iter().map(|t| t.linear).sum::<Vec3>() / n;
    let mean_w = truth.iter().map(|t| t.angular).sum::<Vec3>() / n;
    // Always draw six values so the stream is independent of the speeds.
    let zv = gaussian3(rng);
    let zw = gaussian3(rng);
    let mut ev = Vec3::zeros();
    let mut ew = Vec3::zeros();
    for axis in 0..3 {
        ev[axis] = zv[axis] * scale * sigma_v(mean_v[axis].abs(), model)?;
        ew[axis] = zw[axis] * scale * sigma_w(mean_w[axis].abs(), model)?;
    }
    Ok(truth
        .iter()
        .map(|t| Twist::new(t.timestamp, t.linear + ev, t.angular + ew))
        .collect())
}

/// Per-scan twists with injected errors, exactly as a run with
/// `TwistSource::Injected` and the same seed sees them.
pub fn injected_twist_sequence(
    scenario: &Scenario,
    model: &UncertaintyModel,
    scale: f64,
    seed: u64,
) -> Result<Vec<Vec<Twist>>> {
    model.validate()?;
    let period = scenario.lidar.scan_period();
    let mut rng = error_rng(seed);
    (0..scenario.scan_count())
        .map(|k| injected_twists(&true_twists(&scenario.trajectory, k as f64 * period, period)?, model, scale, &mut rng))
        .collect()
}

/// Runs the localization-and-mapping loop over a simulated scenario.
///
/// The first scan seeds the map at the true initial pose. Every later scan
/// is de-skewed (optionally), weighted, registered against the map starting
/// from a constant-velocity prediction and merged. A registration failure
/// stops the run; the report then holds the scans processed so far and the
/// error is evaluated against the intended final scan.
pub fn run_slam(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let scenario = config.scenario.resolve()?;
    run_scenario(&scenario, config)
}

pub fn run_scenario(scenario: &Scenario, config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let env = scenario.environment.build()?;
    let spec = &scenario.trajectory;
    spec.validate()?;
    let lidar = &scenario.lidar;
    lidar.validate()?;
    let period = lidar.scan_period();
    let count = scenario.scan_count();
    if count == 0 {
        return Err(Error::param("trajectory shorter than one scan"));
    }

    let imu: Option<ImuStream> = match config.twist_source {
        TwistSource::Imu => Some(simulate_imu(spec, &scenario.imu, config.seed ^ 0x1A2B_3C4D)?),
        _ => None,
    };
    let mut error_rng = error_rng(config.seed);
    let origin = Vec3::zeros();
    let needs_normals = matches!(config.model, WeightingModel::Gvtw | WeightingModel::Saw);
    let threshold = if config.model == WeightingModel::Gvtw {
        config.constants.removal_threshold
    } else {
        f64::INFINITY
    };

    let mut map = PointCloud::new(Vec::new(), "world");
    let mut records: Vec<ScanRecord> = Vec::with_capacity(count);
    let mut previous_motion = Pose::identity();
    let mut aborted = None;

    for k in 0..count {
        let start = k as f64 * period;
        let truth_pose = spec.pose_at(start)?;
        let scan = simulate_scan(&env, spec, lidar, start, scan_seed(config.seed, k))?;
        let prediction = match records.last() {
            Some(prev) => prev.pose.compose(&previous_motion),
            None => spec.initial,
        };

        let traj = match config.twist_source {
            TwistSource::Truth => TrajectoryEstimate::from_body_twists(Pose::identity(), &true_twists(spec, start, period)?)?,
            TwistSource::Injected => {
                let truth = true_twists(spec, start, period)?;
                let noisy = injected_twists(&truth, &config.error_model, config.error_scale, &mut error_rng)?;
                TrajectoryEstimate::from_body_twists(Pose::identity(), &noisy)?
            }
            TwistSource::Imu => {
                let anchor = match records.len() {
                    0 | 1 => spec.world_velocity_at(start)?,
                    n => (records[n - 1].pose.translation - records[n - 2].pose.translation) / period,
                };
                estimate_trajectory(imu.as_ref().expect("simulated above"), &anchor, &prediction, start, period, config.madgwick_gain)?
            }
        };
        let mut reading = if config.deskew {
            deskew(&scan.skewed, &traj).cloud
        } else {
            scan.skewed.clone()
        };
        if needs_normals {
            reading = estimate_normals_toward(&reading, config.normal_neighbors, &origin)?;
        }
        let inputs = WeightingInputs {
            twists: &traj.twists,
            constants: config.constants,
            uncertainty: config.uncertainty,
            saw: config.saw,
            scan_period: period,
        };
        let weighted = apply_model(&reading, config.model, &inputs)?;

        let (pose, iterations, overlap, cost, converged) = if k == 0 {
            (spec.initial, 0, 1.0, 0.0, true)
        } else {
            match icp(&weighted, &map, &prediction, &config.registration) {
                Ok(r) => (r.pose, r.iterations, r.overlap, r.cost, r.converged),
                Err(e @ (Error::DegenerateGeometry { .. } | Error::RankDeficient { .. })) => {
                    log::warn!("scan {k}: registration failed: {e}");
                    aborted = Some(format!("scan {k}: {e}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        };
        let increment = records.last().map_or(pose, |prev| prev.pose.inverse().compose(&pose));
        previous_motion = traj.relative_pose(period);
        map = merge_into_map(&map, &weighted.transformed(&pose, "world"), config.voxel_cell, threshold)?;
        if map.len() >= config.normal_neighbors {
            map = estimate_normals(&map, config.normal_neighbors)?;
        }
        records.push(ScanRecord {
            index: k,
            time: start,
            pose,
            truth: truth_pose,
            increment,
            iterations,
            overlap,
            cost,
            converged,
            points: weighted.len(),
        });
    }

    let final_time = (count - 1) as f64 * period;
    let final_pose = records.last().map_or(spec.initial, |r| r.pose);
    let true_final_pose = spec.pose_at(final_time)?;
    let distance = spec.distance_travelled(0.0, final_time)?;
    let error = if distance > 1e-9 {
        Some(evaluate(&final_pose, &true_final_pose, distance)?)
    } else {
        None
    };
    Ok(RunReport {
        model: config.model,
        deskew: config.deskew,
        seed: config.seed,
        scans: records,
        final_pose,
        true_final_pose,
        distance,
        error,
        map_points: map.len(),
        aborted,
        map,
    })
}

/// One cell of the {skewed, de-skewed} x model matrix.
#[derive(Debug, Clone)]
pub struct BatchCell {
    pub deskew: bool,
    pub model: WeightingModel,
    pub reports: Vec<RunReport>,
}

impl BatchCell {
    pub fn file_name(&self) -> String {
        format!("{}_{}.csv", if self.deskew { "deskewed" } else { "skewed" }, self.model.name())
    }

    pub fn translation_errors(&self) -> Vec<f64> {
        self.reports.iter().filter_map(|r| r.error.map(|e| e.translation_cm_per_m)).collect()
    }

    pub fn rotation_errors(&self) -> Vec<f64> {
        self.reports.iter().filter_map(|r| r.error.map(|e| e.rotation_deg_per_m)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, output: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(output);
        wtr.write_record(SUMMARY_HEADER)?;
        for r in &self.reports {
            wtr.write_record(r.summary_row())?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    crate::calibration::quantile(&v, 0.5)
}

/// Runs `scenarios` under every requested matrix cell. Run `i` uses seed
/// `base.seed + i`, so all cells see the same scans and injected errors.
pub fn run_batch(
    base: &RunConfig,
    scenarios: &[Scenario],
    cells: &[(bool, WeightingModel)],
) -> Result<Vec<BatchCell>> {
    base.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..scenarios.len()).map(move |i| (c, i)))
        .collect();
    let results: Vec<Result<RunReport>> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let mut config = base.clone();
            config.deskew = cells[c].0;
            config.model = cells[c].1;
            config.seed = base.seed.wrapping_add(i as u64);
            let mut report = run_scenario(&scenarios[i], &config)?;
            report.map = PointCloud::default();
            Ok(report)
        })
        .collect();
    let mut out: Vec<BatchCell> = cells
        .iter()
        .map(|&(deskew, model)| BatchCell {
            deskew,
            model,
            reports: Vec::with_capacity(scenarios.len()),
        })
        .collect();
    for (&(c, _), r) in jobs.iter().zip(results) {
        out[c].reports.push(r?);
    }
    Ok(out)
}

/// The full 2 x 5 matrix.
pub fn full_matrix() -> Vec<(bool, WeightingModel)> {
    [false, true]
        .iter()
        .flat_map(|&d| WeightingModel::ALL.iter().map(move |&m| (d, m)))
        .collect()
}

/// Writes one CSV per cell into `dir`.
pub fn write_batch(dir: impl AsRef<Path>, cells: &[BatchCell]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    cells
        .iter()
        .map(|cell| {
            let path = dir.join(cell.file_name());
            cell.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
            Ok(path)
        })
        .collect()
}
