//! Python bindings for the core types and operations.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use skewreg::calibration::{fit_linear_model, linear_sigma_from_residual, ResidualSample, SurfaceClass};
use skewreg::pipeline::{run_scenario, scan_seed, RunConfig, Scenario};
use skewreg::registration::{estimate_normals, icp, RegistrationConfig};
use skewreg::simulator::simulate_scan;
use skewreg::weighting::{apply_model, WeightingInputs};
use skewreg::{io, Error, TimedPoint, TrajectoryEstimate, Twist, Vec3, WeightingModel};

fn to_py(err: Error) -> PyErr {
    let msg = format!("[{}] {err}", err.category());
    match err {
        Error::Parameter(_) | Error::MissingAttribute(_) | Error::Format(_) | Error::Csv(_) => PyValueError::new_err(msg),
        Error::Io(_) => PyIOError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Rigid transform mapping body coordinates to world coordinates.
#[pyclass(name = "Pose", module = "skewreg", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyPose(skewreg::Pose);

#[pymethods]
impl PyPose {
    /// Pose from a translation and a rotation vector (axis times angle, rad).
    #[new]
    #[pyo3(signature = (translation = [0.0; 3], rotation = [0.0; 3]))]
    fn new(translation: [f64; 3], rotation: [f64; 3]) -> Self {
        Self(skewreg::Pose::from_vectors(&v3(rotation), &v3(translation)))
    }

    #[staticmethod]
    fn from_wxyz(quaternion: [f64; 4], translation: [f64; 3]) -> PyResult<Self> {
        let [w, x, y, z] = quaternion;
        if w * w + x * x + y * y + z * z <= 0.0 {
            return Err(PyValueError::new_err("zero quaternion"));
        }
        Ok(Self(skewreg::Pose::from_wxyz(w, x, y, z, v3(translation))))
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        arr(&self.0.translation)
    }

    /// Unit quaternion `(w, x, y, z)`.
    #[getter]
    fn quaternion(&self) -> [f64; 4] {
        self.0.wxyz()
    }

    #[getter]
    fn rotation_vector(&self) -> [f64; 3] {
        arr(&self.0.rotation_vector())
    }

    fn compose(&self, other: PyRef<'_, PyPose>) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        arr(&self.0.transform_point(&v3(p)))
    }

    fn interpolate(&self, other: PyRef<'_, PyPose>, alpha: f64) -> Self {
        Self(self.0.interpolate(&other.0, alpha))
    }

    fn __repr__(&self) -> String {
        let t = self.0.translation;
        let r = self.0.rotation_vector();
        format!("Pose(translation=[{}, {}, {}], rotation=[{}, {}, {}])", t.x, t.y, t.z, r.x, r.y, r.z)
    }
}

/// Timestamped point cloud with optional normals and weights.
#[pyclass(name = "PointCloud", module = "skewreg", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCloud(skewreg::PointCloud);

#[pymethods]
impl PyCloud {
    #[new]
    #[pyo3(signature = (positions, timestamps = None))]
    fn new(positions: Vec<[f64; 3]>, timestamps: Option<Vec<f64>>) -> PyResult<Self> {
        let times = timestamps.unwrap_or_else(|| vec![0.0; positions.len()]);
        if times.len() != positions.len() {
            return Err(PyValueError::new_err("positions and timestamps differ in length"));
        }
        let points = positions.into_iter().zip(times).map(|(p, t)| TimedPoint::new(v3(p), t)).collect();
        Ok(Self(skewreg::PointCloud::new(points, "python")))
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        io::read_cloud_file(path).map(Self).map_err(to_py)
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        io::write_cloud_file(path, &self.0).map_err(to_py)
    }

    fn write_ply(&self, path: &str) -> PyResult<()> {
        io::write_ply_file(path, &self.0).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn positions(&self) -> Vec<[f64; 3]> {
        self.0.points.iter().map(|p| arr(&p.position)).collect()
    }

    fn timestamps(&self) -> Vec<f64> {
        self.0.points.iter().map(|p| p.timestamp).collect()
    }

    fn normals(&self) -> Vec<Option<[f64; 3]>> {
        self.0.points.iter().map(|p| p.normal.as_ref().map(arr)).collect()
    }

    /// Effective weight per point (1 when unweighted, 0 when excluded).
    fn weights(&self) -> Vec<f64> {
        self.0.points.iter().map(TimedPoint::effective_weight).collect()
    }

    fn sigmas(&self) -> Vec<Option<f64>> {
        self.0.points.iter().map(|p| p.skew_sigma).collect()
    }

    fn transformed(&self, pose: PyRef<'_, PyPose>) -> Self {
        Self(self.0.transformed(&pose.0, &self.0.frame_id))
    }

    #[pyo3(signature = (k = 10))]
    fn with_normals(&self, k: usize) -> PyResult<Self> {
        estimate_normals(&self.0, k).map(Self).map_err(to_py)
    }
}

fn twists_from(rows: &[[f64; 7]]) -> Vec<Twist> {
    rows.iter()
        .map(|r| Twist::new(r[0], Vec3::new(r[1], r[2], r[3]), Vec3::new(r[4], r[5], r[6])))
        .collect()
}

fn scenario_from(toml: Option<&str>) -> PyResult<Scenario> {
    match toml {
        Some(text) => io::parse_toml(text).map_err(to_py),
        None => Ok(Scenario::standard_extreme_motion()),
    }
}

/// Simulates scan `index` of a scenario (TOML text, default the standard
/// one). Returns `(skewed, unskewed, start_pose)`.
#[pyfunction]
#[pyo3(signature = (index = 0, seed = 0, scenario = None))]
fn simulate(index: usize, seed: u64, scenario: Option<&str>) -> PyResult<(PyCloud, PyCloud, PyPose)> {
    let sc = scenario_from(scenario)?;
    let env = sc.environment.build().map_err(to_py)?;
    let start = index as f64 * sc.lidar.scan_period();
    let scan = simulate_scan(&env, &sc.trajectory, &sc.lidar, start, scan_seed(seed, index)).map_err(to_py)?;
    Ok((PyCloud(scan.skewed), PyCloud(scan.unskewed), PyPose(scan.start_pose)))
}

/// Twists over scan `index` as rows `(t, vx, vy, vz, wx, wy, wz)`, times
/// relative to the scan start.
#[pyfunction]
#[pyo3(signature = (index = 0, scenario = None))]
fn true_twists(index: usize, scenario: Option<&str>) -> PyResult<Vec<[f64; 7]>> {
    let sc = scenario_from(scenario)?;
    let period = sc.lidar.scan_period();
    let twists = skewreg::simulator::true_twists(&sc.trajectory, index as f64 * period, period).map_err(to_py)?;
    Ok(twists
        .iter()
        .map(|t| [t.timestamp, t.linear.x, t.linear.y, t.linear.z, t.angular.x, t.angular.y, t.angular.z])
        .collect())
}

/// Motion-compensates `cloud` with body twists `(t, vx, vy, vz, wx, wy, wz)`.
#[pyfunction]
fn deskew(cloud: PyRef<'_, PyCloud>, twists: Vec<[f64; 7]>) -> PyResult<PyCloud> {
    let traj = TrajectoryEstimate::from_body_twists(skewreg::Pose::identity(), &twists_from(&twists)).map_err(to_py)?;
    Ok(PyCloud(skewreg::deskew::deskew(&cloud.0, &traj).cloud))
}

/// Attaches skew uncertainties and weights under a model (`none`, `tw`,
/// `vtw`, `gvtw`, `saw`) with default constants.
#[pyfunction]
#[pyo3(signature = (cloud, model, twists = Vec::new(), scan_period = 0.1))]
fn weigh(cloud: PyRef<'_, PyCloud>, model: &str, twists: Vec<[f64; 7]>, scan_period: f64) -> PyResult<PyCloud> {
    let model: WeightingModel = model.parse().map_err(to_py)?;
    let twists = twists_from(&twists);
    let inputs = WeightingInputs {
        twists: &twists,
        scan_period,
        ..WeightingInputs::default()
    };
    apply_model(&cloud.0, model, &inputs).map(PyCloud).map_err(to_py)
}

/// Weighted point-to-plane ICP. The reference needs normals. Returns a dict
/// with `pose`, `iterations`, `converged`, `overlap`, `cost`, `cost_trace`.
#[pyfunction]
#[pyo3(signature = (reading, reference, init = None, config = None))]
fn register<'py>(
    py: Python<'py>,
    reading: PyRef<'_, PyCloud>,
    reference: PyRef<'_, PyCloud>,
    init: Option<PyRef<'_, PyPose>>,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let config: RegistrationConfig = match config {
        Some(text) => io::parse_toml(text).map_err(to_py)?,
        None => RegistrationConfig::default(),
    };
    let init = init.map_or_else(skewreg::Pose::identity, |p| p.0);
    let (reading, reference) = (reading.0.clone(), reference.0.clone());
    let result = py.detach(move || icp(&reading, &reference, &init, &config)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("pose", PyPose(result.pose))?;
    out.set_item("iterations", result.iterations)?;
    out.set_item("converged", result.converged)?;
    out.set_item("overlap", result.overlap)?;
    out.set_item("cost", result.cost)?;
    out.set_item("cost_trace", result.cost_trace)?;
    Ok(out)
}

/// Fits the linear speed-uncertainty curve to `(speed, residual)` pairs
/// with the noise floor already removed. Returns `(s, k, a, rmse)`.
#[pyfunction]
#[pyo3(signature = (speeds, residuals, scan_period = 0.1, bucket_width = 0.25))]
fn fit_linear(speeds: Vec<f64>, residuals: Vec<f64>, scan_period: f64, bucket_width: f64) -> PyResult<(f64, f64, f64, f64)> {
    if speeds.len() != residuals.len() {
        return Err(PyValueError::new_err("speeds and residuals differ in length"));
    }
    let samples: Vec<ResidualSample> = speeds
        .iter()
        .zip(&residuals)
        .map(|(&speed, &residual)| ResidualSample {
            speed,
            residual,
            class: SurfaceClass::Perpendicular,
            scan_period,
            mean_distance: 1.0,
        })
        .collect();
    let fit = fit_linear_model(&samples, bucket_width).map_err(to_py)?;
    Ok((fit.shape, fit.scale, fit.gain, fit.rmse))
}

/// Speed uncertainty implied by a mean residual.
#[pyfunction]
#[pyo3(signature = (residual, scan_period = 0.1))]
fn sigma_from_residual(residual: f64, scan_period: f64) -> f64 {
    linear_sigma_from_residual(residual, scan_period)
}

/// Runs localization and mapping. `config` is RunConfig TOML text. Returns a
/// dict with the final and true poses, relative errors and per-scan poses.
#[pyfunction]
#[pyo3(signature = (config = None, scenario = None))]
fn slam<'py>(py: Python<'py>, config: Option<&str>, scenario: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let config: RunConfig = match config {
        Some(text) => io::parse_toml(text).map_err(to_py)?,
        None => RunConfig::default(),
    };
    let sc = match scenario {
        Some(_) => scenario_from(scenario)?,
        None => config.scenario.resolve().map_err(to_py)?,
    };
    let report = py.detach(move || run_scenario(&sc, &config)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("model", report.model.name())?;
    out.set_item("deskew", report.deskew)?;
    out.set_item("final_pose", PyPose(report.final_pose))?;
    out.set_item("true_final_pose", PyPose(report.true_final_pose))?;
    out.set_item("distance", report.distance)?;
    out.set_item("translation_cm_per_m", report.error.map(|e| e.translation_cm_per_m))?;
    out.set_item("rotation_deg_per_m", report.error.map(|e| e.rotation_deg_per_m))?;
    out.set_item("poses", report.scans.iter().map(|s| PyPose(s.pose)).collect::<Vec<_>>())?;
    out.set_item("aborted", report.aborted)?;
    Ok(out)
}

#[pymodule]
fn _skewreg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyCloud>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(true_twists, m)?)?;
    m.add_function(wrap_pyfunction!(deskew, m)?)?;
    m.add_function(wrap_pyfunction!(weigh, m)?)?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(fit_linear, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_from_residual, m)?)?;
    m.add_function(wrap_pyfunction!(slam, m)?)?;
    Ok(())
}
