// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use skewreg::calibration::{
    assemble_model, collect_residuals, fit_angular_model, fit_linear_model, noise_floor_subtract, residual_table,
    BucketStats, CalibrationMode, CalibrationScan, CollectOptions,
};
use skewreg::deskew::deskew;
use skewreg::geometry::pose_difference;
use skewreg::io;
use skewreg::pipeline::{
    evaluate, full_matrix, injected_twist_sequence, median, run_batch, run_slam, scan_seed, write_batch, RunConfig,
    Scenario, ScenarioSource, TwistSource,
};
use skewreg::registration::{estimate_normals, icp, RegistrationConfig};
use skewreg::simulator::{simulate_imu, simulate_scan, true_twists};
use skewreg::weighting::{apply_model, ModelConstants, SawParams, UncertaintyModel, WeightingInputs};
use skewreg::{Error, PointCloud, Pose, TrajectoryEstimate, Twist, Vec3, WeightingModel};

#[derive(Parser)]
#[command(name = "skewreg", version, about = "Motion-robust lidar registration toolkit")]
struct Cli {
    /// TOML configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; overrides any seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scans, IMU samples and ground truth for a scenario.
    Simulate(SimulateArgs),
    /// Motion-compensate a scan.
    Deskew(DeskewArgs),
    /// Attach skew uncertainties and weights to a scan.
    Weigh(WeighArgs),
    /// Register a reading scan against a reference.
    Register(RegisterArgs),
    /// Fit speed-uncertainty models from de-skewed scans against a map.
    Calibrate(CalibrateArgs),
    /// Run localization and mapping over a simulated scenario.
    Slam(SlamArgs),
    /// Batch evaluation over the model matrix, or pose-file comparison.
    Eval(EvalArgs),
    /// Convert a CSV cloud to binary PLY.
    ExportPly(ExportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Limit on the number of scans.
    #[arg(long)]
    scans: Option<usize>,
    /// Inject twist errors drawn from the default uncertainty model, scaled by this factor.
    #[arg(long, default_value_t = 0.0)]
    twist_error_scale: f64,
    /// Spacing of the ground-truth map samples (m).
    #[arg(long, default_value_t = 0.05)]
    map_spacing: f64,
}

#[derive(Args)]
struct DeskewArgs {
    #[arg(long)]
    input: PathBuf,
    /// Poses over the scan (`t,qw,qx,qy,qz,x,y,z`, times relative to the scan start).
    #[arg(long, conflicts_with = "twists", required_unless_present = "twists")]
    trajectory: Option<PathBuf>,
    /// Body twists over the scan (`t,vx,vy,vz,wx,wy,wz`).
    #[arg(long)]
    twists: Option<PathBuf>,
}

#[derive(Args)]
struct WeighArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    twists: Option<PathBuf>,
    #[arg(long, value_parser = parse_model)]
    model: WeightingModel,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    reading: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Initial pose `x,y,z,rx,ry,rz`: translation in metres, rotation vector in degrees.
    #[arg(long, value_parser = parse_init, allow_hyphen_values = true)]
    init: Option<Pose>,
    /// Also write the registered reading.
    #[arg(long)]
    transformed: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Linear,
    Angular,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Directory holding `scans.csv` as written by `simulate`.
    #[arg(long)]
    dir: PathBuf,
    /// Dense map with normals; defaults to `map.csv` in the directory.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "linear")]
    mode: ModeArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum TwistArg {
    Truth,
    Injected,
    Imu,
}

impl From<TwistArg> for TwistSource {
    fn from(t: TwistArg) -> Self {
        match t {
            TwistArg::Truth => TwistSource::Truth,
            TwistArg::Injected => TwistSource::Injected,
            TwistArg::Imu => TwistSource::Imu,
        }
    }
}

#[derive(Args)]
struct SlamArgs {
    #[arg(long, value_parser = parse_model)]
    model: Option<WeightingModel>,
    /// Register raw scans without motion compensation.
    #[arg(long)]
    skewed: bool,
    #[arg(long, value_enum)]
    twist_source: Option<TwistArg>,
    /// Scenario TOML; overrides the one in the configuration.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Number of random scenarios per matrix cell.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Duration of each scenario (s).
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    /// Estimated poses; switches to comparison against `--truth`.
    #[arg(long, requires = "truth")]
    estimate: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output file name; defaults to the input stem with `.ply`.
    #[arg(long)]
    output: Option<String>,
}

fn parse_model(s: &str) -> Result<WeightingModel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_init(s: &str) -> Result<Pose, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("`{x}` is not a number")))
        .collect::<Result<_, _>>()?;
    if v.len() != 6 {
        return Err("expected x,y,z,rx,ry,rz".into());
    }
    let rho = Vec3::new(v[3], v[4], v[5]).map(f64::to_radians);
    Ok(Pose::from_vectors(&rho, &Vec3::new(v[0], v[1], v[2])))
}

fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => io::read_toml(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(T::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    io::read_cloud_file(path).with_context(|| format!("reading cloud {}", path.display()))
}

fn read_twists(path: &Path) -> Result<Vec<Twist>> {
    let file = File::open(path).map_err(Error::from).with_context(|| format!("opening {}", path.display()))?;
    io::read_twists(file).with_context(|| format!("reading twists {}", path.display()))
}

fn read_poses(path: &Path) -> Result<Vec<(f64, Pose)>> {
    let file = File::open(path).map_err(Error::from).with_context(|| format!("opening {}", path.display()))?;
    io::read_poses(file).with_context(|| format!("reading poses {}", path.display()))
}

fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    io::write_cloud_file(path, cloud).with_context(|| format!("writing {}", path.display()))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, io::to_toml(value)?).map_err(Error::from).with_context(|| format!("writing {}", path.display()))
}

fn pose_row(pose: &Pose) -> [String; 7] {
    let q = pose.wxyz();
    let t = pose.translation;
    [q[0], q[1], q[2], q[3], t.x, t.y, t.z].map(|v| v.to_string())
}

struct Ctx {
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn simulate(ctx: &Ctx, args: &SimulateArgs) -> Result<()> {
    let mut scenario = match &ctx.config {
        Some(p) => Scenario::load(p).with_context(|| format!("reading scenario {}", p.display()))?,
        None => Scenario::standard_extreme_motion(),
    };
    if let Some(n) = args.scans {
        scenario.scans = n;
    }
    if !(args.twist_error_scale >= 0.0) {
        return Err(Error::Parameter("twist error scale must be non-negative".into()).into());
    }
    let seed = ctx.seed.unwrap_or(0);
    let env = scenario.environment.build()?;
    let period = scenario.lidar.scan_period();
    let count = scenario.scan_count();
    let injected = (args.twist_error_scale > 0.0)
        .then(|| injected_twist_sequence(&scenario, &UncertaintyModel::default(), args.twist_error_scale, seed))
        .transpose()?;

    let mut manifest = csv::Writer::from_writer(create(&ctx.path("scans.csv"))?);
    manifest.write_record(["cloud", "unskewed", "twists", "t", "qw", "qx", "qy", "qz", "x", "y", "z"])?;
    for k in 0..count {
        let start = k as f64 * period;
        let scan = simulate_scan(&env, &scenario.trajectory, &scenario.lidar, start, scan_seed(seed, k))?;
        let twists = match &injected {
            Some(all) => all[k].clone(),
            None => true_twists(&scenario.trajectory, start, period)?,
        };
        let (cloud, unskewed, twist_file) =
            (format!("scan_{k:03}.csv"), format!("scan_{k:03}_unskewed.csv"), format!("twists_{k:03}.csv"));
        write_cloud(&ctx.path(&cloud), &scan.skewed)?;
        write_cloud(&ctx.path(&unskewed), &scan.unskewed)?;
        io::write_twists(create(&ctx.path(&twist_file))?, &twists)?;
        let mut row = vec![cloud, unskewed, twist_file, start.to_string()];
        row.extend(pose_row(&scan.start_pose));
        manifest.write_record(&row)?;
    }
    manifest.flush()?;

    let duration = scenario.trajectory.duration();
    let steps = (duration / 0.01).round() as usize;
    let poses = (0..=steps)
        .map(|i| {
            let t = (i as f64 * 0.01).min(duration);
            Ok((t, scenario.trajectory.pose_at(t)?))
        })
        .collect::<skewreg::Result<Vec<_>>>()?;
    io::write_poses(create(&ctx.path("poses.csv"))?, &poses)?;
    let imu = simulate_imu(&scenario.trajectory, &scenario.imu, seed)?;
    io::write_imu(create(&ctx.path("imu.csv"))?, &imu)?;
    write_cloud(&ctx.path("map.csv"), &env.sample_surface(args.map_spacing)?)?;
    write_toml(&ctx.path("scenario.toml"), &scenario)?;
    log::info!("simulated {count} scans into {}", ctx.out.display());
    Ok(())
}

fn trajectory_from_poses(poses: Vec<(f64, Pose)>) -> Result<TrajectoryEstimate> {
    let poses = if poses.len() == 1 {
        vec![poses[0], (poses[0].0 + 1e-9, poses[0].1)]
    } else {
        poses
    };
    Ok(TrajectoryEstimate::new(0.0, poses, Vec::new())?)
}

fn deskew_cmd(ctx: &Ctx, args: &DeskewArgs) -> Result<()> {
    let scan = read_cloud(&args.input)?;
    let traj = match (&args.trajectory, &args.twists) {
        (Some(p), _) => trajectory_from_poses(read_poses(p)?)?,
        (None, Some(t)) => TrajectoryEstimate::from_body_twists(Pose::identity(), &read_twists(t)?)?,
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let out = deskew(&scan, &traj);
    if out.clamped > 0 {
        log::warn!("{} points lay outside the trajectory and were clamped", out.clamped);
    }
    write_cloud(&ctx.path("deskewed.csv"), &out.cloud)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct WeighConfig {
    constants: ModelConstants,
    uncertainty: UncertaintyModel,
    saw: SawParams,
    scan_period: f64,
    normal_neighbors: usize,
}

impl Default for WeighConfig {
    fn default() -> Self {
        Self {
            constants: ModelConstants::default(),
            uncertainty: UncertaintyModel::default(),
            saw: SawParams::default(),
            scan_period: 0.1,
            normal_neighbors: 10,
        }
    }
}

fn weigh(ctx: &Ctx, args: &WeighArgs) -> Result<()> {
    let config: WeighConfig = load_config(ctx.config.as_deref())?;
    let mut cloud = read_cloud(&args.input)?;
    let twists = args.twists.as_deref().map(read_twists).transpose()?.unwrap_or_default();
    if matches!(args.model, WeightingModel::Vtw | WeightingModel::Gvtw) && twists.is_empty() {
        return Err(Error::Parameter(format!("model {} needs --twists", args.model)).into());
    }
    let needs_geometry = match args.model {
        WeightingModel::Gvtw => !cloud.has_normals(),
        WeightingModel::Saw => cloud.points.iter().any(|p| p.curvature.is_none()),
        _ => false,
    };
    if needs_geometry {
        log::info!("estimating normals with k = {}", config.normal_neighbors);
        cloud = estimate_normals(&cloud, config.normal_neighbors)?;
    }
    let inputs = WeightingInputs {
        twists: &twists,
        constants: config.constants,
        uncertainty: config.uncertainty,
        saw: config.saw,
        scan_period: config.scan_period,
    };
    let weighted = apply_model(&cloud, args.model, &inputs)?;
    write_cloud(&ctx.path("weighted.csv"), &weighted)
}

#[derive(Serialize)]
struct RegistrationRecord {
    iterations: usize,
    converged: bool,
    overlap: f64,
    cost: f64,
    /// Rotation vector (deg).
    rotation_deg: [f64; 3],
    translation: [f64; 3],
    pose: Pose,
}

fn register(ctx: &Ctx, args: &RegisterArgs) -> Result<()> {
    let config: RegistrationConfig = load_config(ctx.config.as_deref())?;
    config.validate()?;
    let reading = read_cloud(&args.reading)?;
    let mut reference = read_cloud(&args.reference)?;
    if !reference.has_normals() {
        reference = estimate_normals(&reference, 10)?;
    }
    let init = args.init.unwrap_or_else(Pose::identity);
    let result = icp(&reading, &reference, &init, &config)?;
    let rho = result.pose.rotation_vector().map(f64::to_degrees);
    let t = result.pose.translation;
    let record = RegistrationRecord {
        iterations: result.iterations,
        converged: result.converged,
        overlap: result.overlap,
        cost: result.cost,
        rotation_deg: [rho.x, rho.y, rho.z],
        translation: [t.x, t.y, t.z],
        pose: result.pose,
    };
    write_toml(&ctx.path("registration.toml"), &record)?;
    let mut trace = csv::Writer::from_writer(create(&ctx.path("cost_trace.csv"))?);
    trace.write_record(["iteration", "cost"])?;
    for (i, c) in result.cost_trace.iter().enumerate() {
        trace.write_record([i.to_string(), c.to_string()])?;
    }
    trace.flush()?;
    if args.transformed {
        write_cloud(&ctx.path("registered.csv"), &reading.transformed(&result.pose, "reference"))?;
    }
    println!(
        "iterations={} converged={} overlap={} cost={:.6e}",
        result.iterations, result.converged, result.overlap, result.cost
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct CalibrateConfig {
    /// Speed bucket width (m/s or rad/s).
    bucket_width: f64,
    /// Scans at or below this speed estimate the noise floor.
    zero_speed: f64,
    collect: CollectOptions,
    /// Values kept for the parts of the model that are not fitted.
    base: UncertaintyModel,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            bucket_width: 0.25,
            zero_speed: 0.05,
            collect: CollectOptions::default(),
            base: UncertaintyModel::default(),
        }
    }
}

#[derive(Serialize)]
struct CalibrationRecord {
    model: UncertaintyModel,
    mode: CalibrationMode,
    /// RMS misfit of the curve against the bucket third quartiles.
    rmse: f64,
    scans: usize,
    samples: usize,
}

fn calibrate(ctx: &Ctx, args: &CalibrateArgs) -> Result<()> {
    let config: CalibrateConfig = load_config(ctx.config.as_deref())?;
    let manifest = args.dir.join("scans.csv");
    let mut rdr = csv::Reader::from_path(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: missing column `{name}`", manifest.display())))
    };
    let (cloud_col, twist_col) = (col("cloud")?, col("twists")?);
    let pose_cols = ["qw", "qx", "qy", "qz", "x", "y", "z"].map(col);
    let mode = match args.mode {
        ModeArg::Linear => CalibrationMode::Linear,
        ModeArg::Angular => CalibrationMode::Angular,
    };

    let mut scans = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let mut v = [0.0; 7];
        for (slot, c) in v.iter_mut().zip(&pose_cols) {
            let c = *c.as_ref().map_err(|e| Error::Format(e.to_string()))?;
            *slot = record[c].trim().parse().map_err(|_| Error::Format(format!("bad pose value `{}`", &record[c])))?;
        }
        let pose = Pose::from_wxyz(v[0], v[1], v[2], v[3], Vec3::new(v[4], v[5], v[6]));
        let cloud = read_cloud(&args.dir.join(&record[cloud_col]))?;
        let twists = read_twists(&args.dir.join(&record[twist_col]))?;
        let traj = TrajectoryEstimate::from_body_twists(Pose::identity(), &twists)?;
        let period = traj.end_time() - traj.start_time();
        let mean = traj.mean_twist;
        let speed = match mode {
            CalibrationMode::Linear => mean.linear.norm(),
            CalibrationMode::Angular => mean.angular.norm(),
        };
        scans.push(CalibrationScan {
            cloud: deskew(&cloud, &traj).cloud,
            pose,
            speed,
            motion_direction: mean.linear,
            scan_period: period,
            truth: None,
        });
    }
    let map_path = args.map.clone().unwrap_or_else(|| args.dir.join("map.csv"));
    let map = read_cloud(&map_path)?;
    let raw = collect_residuals(&scans, &map, mode, &config.collect)?;
    let samples = noise_floor_subtract(&raw, config.zero_speed)?;

    write_bucket_csv(&ctx.path("residuals.csv"), &residual_table(&samples, config.bucket_width)?)?;
    let (model, rmse, buckets) = match mode {
        CalibrationMode::Linear => {
            let fit = fit_linear_model(&samples, config.bucket_width)?;
            (assemble_model(&config.base, Some(&fit), None), fit.rmse, fit.buckets)
        }
        CalibrationMode::Angular => {
            let fit = fit_angular_model(&samples, config.bucket_width)?;
            if !fit.detectable() {
                log::warn!("no angular uncertainty detected; angular weighting disabled");
            }
            (assemble_model(&config.base, None, Some(&fit)), fit.rmse, fit.buckets)
        }
    };
    write_bucket_csv(&ctx.path("sigma_buckets.csv"), &buckets)?;
    let record = CalibrationRecord {
        model,
        mode,
        rmse,
        scans: scans.len(),
        samples: samples.len(),
    };
    write_toml(&ctx.path("model.toml"), &record)?;
    println!(
        "s={} k={} a={} b={} rmse={:.4e}",
        model.shape, model.scale, model.gain, model.angular_scale, rmse
    );
    Ok(())
}

fn write_bucket_csv(path: &Path, buckets: &[BucketStats]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    wtr.write_record(["bucket", "speed", "count", "q1", "median", "q3"])?;
    for b in buckets {
        wtr.write_record([
            b.index.to_string(),
            b.speed.to_string(),
            b.count.to_string(),
            b.q1.to_string(),
            b.median.to_string(),
            b.q3.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn slam(ctx: &Ctx, args: &SlamArgs) -> Result<()> {
    let mut config: RunConfig = load_config(ctx.config.as_deref())?;
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    if let Some(m) = args.model {
        config.model = m;
    }
    if args.skewed {
        config.deskew = false;
    }
    if let Some(t) = args.twist_source {
        config.twist_source = t.into();
    }
    if let Some(s) = &args.scenario {
        config.scenario = ScenarioSource::File(s.clone());
    }
    let report = run_slam(&config)?;
    report.write_scans_csv(create(&ctx.path("scans.csv"))?)?;
    report.write_summary_csv(create(&ctx.path("summary.csv"))?)?;
    io::write_poses(create(&ctx.path("poses.csv"))?, &report.poses())?;
    write_cloud(&ctx.path("map.csv"), &report.map)?;
    if let Some(reason) = &report.aborted {
        log::warn!("run aborted: {reason}");
    }
    match report.error {
        Some(e) => println!(
            "{} {}: {:.3} cm/m, {:.3} deg/m over {:.2} m",
            if report.deskew { "de-skewed" } else { "skewed" },
            report.model,
            e.translation_cm_per_m,
            e.rotation_deg_per_m,
            report.distance
        ),
        None => println!("no motion; relative error undefined"),
    }
    Ok(())
}

fn eval(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    if let (Some(est), Some(truth)) = (&args.estimate, &args.truth) {
        return compare_poses(ctx, &read_poses(est)?, &read_poses(truth)?);
    }
    if args.runs == 0 || !(args.duration > 0.0) {
        return Err(Error::Parameter("eval needs at least one run of positive duration".into()).into());
    }
    let mut base: RunConfig = load_config(ctx.config.as_deref())?;
    if let Some(seed) = ctx.seed {
        base.seed = seed;
    }
    let scenarios: Vec<Scenario> = (0..args.runs)
        .map(|i| Scenario::random_extreme_motion(base.seed.wrapping_add(i as u64), args.duration))
        .collect();
    let cells = run_batch(&base, &scenarios, &full_matrix())?;
    write_batch(&ctx.out, &cells)?;
    let mut wtr = csv::Writer::from_writer(create(&ctx.path("medians.csv"))?);
    wtr.write_record(["deskew", "model", "runs", "translation_cm_per_m", "rotation_deg_per_m"])?;
    for cell in &cells {
        let (t, r) = (median(&cell.translation_errors()), median(&cell.rotation_errors()));
        wtr.write_record([
            cell.deskew.to_string(),
            cell.model.name().to_string(),
            cell.reports.len().to_string(),
            t.to_string(),
            r.to_string(),
        ])?;
        println!(
            "{:>9} {:<4} {:8.3} cm/m {:8.3} deg/m",
            if cell.deskew { "de-skewed" } else { "skewed" },
            cell.model.name(),
            t,
            r
        );
    }
    wtr.flush()?;
    Ok(())
}

/// Per-pose differences of index-aligned pose lists, plus the relative
/// error of the final pose over the distance the truth travelled.
fn compare_poses(ctx: &Ctx, estimate: &[(f64, Pose)], truth: &[(f64, Pose)]) -> Result<()> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::Parameter(format!(
            "pose lists must be non-empty and equally long ({} vs {})",
            estimate.len(),
            truth.len()
        ))
        .into());
    }
    let mut wtr = csv::Writer::from_writer(create(&ctx.path("pose_errors.csv"))?);
    wtr.write_record(["t", "translation_error", "rotation_error_deg"])?;
    for ((t, e), (_, g)) in estimate.iter().zip(truth) {
        let (dt, dr) = pose_difference(e, g);
        wtr.write_record([t.to_string(), dt.to_string(), dr.to_degrees().to_string()])?;
    }
    wtr.flush()?;
    let distance: f64 = truth.windows(2).map(|w| (w[1].1.translation - w[0].1.translation).norm()).sum();
    let (last_e, last_g) = (estimate.last().unwrap().1, truth.last().unwrap().1);
    let mut summary = csv::Writer::from_writer(create(&ctx.path("eval.csv"))?);
    summary.write_record(["distance", "translation_cm_per_m", "rotation_deg_per_m"])?;
    if distance > 0.0 {
        let e = evaluate(&last_e, &last_g, distance)?;
        summary.write_record([
            distance.to_string(),
            e.translation_cm_per_m.to_string(),
            e.rotation_deg_per_m.to_string(),
        ])?;
        println!("{:.3} cm/m, {:.3} deg/m over {distance:.2} m", e.translation_cm_per_m, e.rotation_deg_per_m);
    } else {
        summary.write_record([distance.to_string(), String::new(), String::new()])?;
        println!("no motion; relative error undefined");
    }
    summary.flush()?;
    Ok(())
}

fn export_ply(ctx: &Ctx, args: &ExportArgs) -> Result<()> {
    let cloud = read_cloud(&args.input)?;
    let name = args.output.clone().unwrap_or_else(|| {
        let stem = args.input.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
        format!("{stem}.ply")
    });
    let path = ctx.path(&name);
    io::write_ply_file(&path, &cloud).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    fs::create_dir_all(&cli.out)
        .map_err(Error::from)
        .with_context(|| format!("creating {}", cli.out.display()))?;
    let ctx = Ctx {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    match &cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Deskew(a) => deskew_cmd(&ctx, a),
        Command::Weigh(a) => weigh(&ctx, a),
        Command::Register(a) => register(&ctx, a),
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::Slam(a) => slam(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::ExportPly(a) => export_ply(&ctx, a),
    }
}

fn category(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return e.category();
        }
        if cause.downcast_ref::<csv::Error>().is_some() {
            return "format";
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "internal"
}

fn exit_code(category: &str) -> u8 {
    match category {
        "parameter" => 3,
        "attribute" => 4,
        "registration" => 5,
        "imu" => 6,
        "calibration" => 7,
        "format" => 8,
        "io" => 9,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let cat = category(&err);
            eprintln!("error [{cat}]: {err:#}");
            ExitCode::from(exit_code(cat))
        }
    }
}
