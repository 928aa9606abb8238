//! Per-point skew uncertainty and registration weights.
//!
//! Four models are available: time weighting (TW), velocity-and-time
//! weighting (VTW), geometry-velocity-and-time weighting (GVTW) and the
//! scan-angle weighting baseline (SAW). The first three produce a position
//! uncertainty `sigma_s` turned into a weight with `1 / (sigma_n^2 + sigma_s^2)`;
//! SAW produces a weight directly.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, TimedPoint};
use crate::error::{Error, Result};
use crate::geometry::{rotate, Vec3};
use crate::trajectory::Twist;

/// Speed-uncertainty model: log-normal in linear speed, cubic in angular speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UncertaintyModel {
    /// Log-normal shape `s`.
    pub shape: f64,
    /// Log-normal scale `k` (m/s).
    pub scale: f64,
    /// Log-normal gain `a`.
    pub gain: f64,
    /// Angular scale `b` (rad/s); `f64::INFINITY` disables angular uncertainty.
    pub angular_scale: f64,
    /// Axes (x, y, z) on which the linear / angular uncertainty applies.
    pub linear_axes: [bool; 3],
    pub angular_axes: [bool; 3],
}

impl Default for UncertaintyModel {
    fn default() -> Self {
        Self {
            shape: 1.1,
            scale: 1.9,
            gain: 0.222,
            angular_scale: 16.0,
            linear_axes: [true; 3],
            angular_axes: [true; 3],
        }
    }
}

impl UncertaintyModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.scale > 0.0 && self.gain >= 0.0 && self.angular_scale > 0.0) {
            return Err(Error::param("uncertainty model needs s > 0, k > 0, a >= 0, b > 0"));
        }
        Ok(())
    }

    /// Speed at which `sigma_v` peaks: `k * exp(-s^2)`.
    pub fn linear_mode(&self) -> f64 {
        self.scale * (-self.shape * self.shape).exp()
    }
}

/// Linear speed uncertainty (m/s) for an estimated speed along one axis.
pub fn sigma_v(speed: f64, model: &UncertaintyModel) -> Result<f64> {
    if speed < 0.0 || speed.is_nan() {
        return Err(Error::param(format!("speed must be non-negative, got {speed}")));
    }
    Ok(sigma_v_unchecked(speed, model))
}

fn sigma_v_unchecked(speed: f64, m: &UncertaintyModel) -> f64 {
    if speed == 0.0 {
        return 0.0;
    }
    let log_ratio = (speed / m.scale).ln();
    m.gain / (m.shape * speed * (2.0 * PI).sqrt())
        * (-(log_ratio * log_ratio) / (2.0 * m.shape * m.shape)).exp()
}

/// Angular speed uncertainty (rad/s): `(speed / b)^3`.
pub fn sigma_w(speed: f64, model: &UncertaintyModel) -> Result<f64> {
    if speed < 0.0 || speed.is_nan() {
        return Err(Error::param(format!("angular speed must be non-negative, got {speed}")));
    }
    Ok(sigma_w_unchecked(speed, model))
}

fn sigma_w_unchecked(speed: f64, m: &UncertaintyModel) -> f64 {
    (speed / m.angular_scale).powi(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConstants {
    /// TW scaling (m/s).
    pub c1: f64,
    /// VTW scaling.
    pub c2: f64,
    /// GVTW scaling.
    pub c3: f64,
    /// Isotropic sensor noise (m).
    pub sensor_noise: f64,
    /// Points with a GVTW uncertainty above this (m) are kept out of the map.
    pub removal_threshold: f64,
    /// Distance assigned to grazing GVTW candidates (m).
    pub max_range: f64,
}

impl Default for ModelConstants {
    fn default() -> Self {
        Self {
            c1: 0.25,
            c2: 2.0,
            c3: 4.0,
            sensor_noise: 0.01,
            removal_threshold: 1.0,
            max_range: 100.0,
        }
    }
}

impl ModelConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.c1, self.c2, self.c3, self.sensor_noise, self.removal_threshold, self.max_range];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::param("model constants must all be positive"));
        }
        Ok(())
    }
}

/// Translation `tau` (m) and rotation `rho` (rad) perturbation magnitudes at one timestamp.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationParams {
    pub translation: Vec3,
    pub rotation: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SawParams {
    /// Curvature of a highly curved surface in the environment.
    pub reference_curvature: f64,
    pub floor: f64,
    pub cap: f64,
}

impl Default for SawParams {
    fn default() -> Self {
        Self {
            reference_curvature: 0.1,
            floor: 0.25,
            cap: 1.0,
        }
    }
}

/// Cumulative per-axis integrals of `sigma_v(|v_axis(t)|)` and
/// `sigma_w(|w_axis(t)|)` over a twist history, for fast evaluation at
/// arbitrary timestamps. Integrands are linear between samples.
#[derive(Debug, Clone)]
pub struct PerturbationIntegrator {
    times: Vec<f64>,
    lin_rate: Vec<Vec3>,
    ang_rate: Vec<Vec3>,
    lin_cum: Vec<Vec3>,
    ang_cum: Vec<Vec3>,
}

impl PerturbationIntegrator {
    /// `history` holds body twists with timestamps relative to the scan start.
    pub fn new(history: &[Twist], model: &UncertaintyModel) -> Self {
        let mask = |v: Vec3, axes: &[bool; 3]| Vec3::from_fn(|i, _| if axes[i] { v[i] } else { 0.0 });
        let times: Vec<f64> = history.iter().map(|t| t.timestamp).collect();
        let lin_rate: Vec<Vec3> = history
            .iter()
            .map(|t| mask(t.linear.map(|v| sigma_v_unchecked(v.abs(), model)), &model.linear_axes))
            .collect();
        let ang_rate: Vec<Vec3> = history
            .iter()
            .map(|t| mask(t.angular.map(|w| sigma_w_unchecked(w.abs(), model)), &model.angular_axes))
            .collect();
        let cumulate = |rates: &[Vec3]| {
            let mut acc = Vec::with_capacity(rates.len());
            let mut sum = Vec3::zeros();
            for k in 0..rates.len() {
                if k > 0 {
                    sum += (rates[k - 1] + rates[k]) * (0.5 * (times[k] - times[k - 1]));
                }
                acc.push(sum);
            }
            acc
        };
        let lin_cum = cumulate(&lin_rate);
        let ang_cum = cumulate(&ang_rate);
        Self {
            times,
            lin_rate,
            ang_rate,
            lin_cum,
            ang_cum,
        }
    }

    /// Integrals over `[0, t]`. Before the first sample and after the last
    /// the integrand is held constant.
    pub fn at(&self, t: f64) -> PerturbationParams {
        if self.times.is_empty() || t <= 0.0 {
            return PerturbationParams::default();
        }
        let integrate = |rate: &[Vec3], cum: &[Vec3]| -> Vec3 {
            let first = self.times[0];
            // Constant extension from 0 to the first sample.
            let lead = rate[0] * first.max(0.0).min(t);
            if t <= first {
                return lead;
            }
            let n = self.times.len();
            if t >= self.times[n - 1] {
                return lead + cum[n - 1] + rate[n - 1] * (t - self.times[n - 1]);
            }
            let hi = self.times.partition_point(|&s| s <= t);
            let lo = hi - 1;
            let (t0, t1) = (self.times[lo], self.times[hi]);
            let alpha = (t - t0) / (t1 - t0);
            let r_t = rate[lo] + (rate[hi] - rate[lo]) * alpha;
            lead + cum[lo] + (rate[lo] + r_t) * (0.5 * (t - t0))
        };
        PerturbationParams {
            translation: integrate(&self.lin_rate, &self.lin_cum),
            rotation: integrate(&self.ang_rate, &self.ang_cum),
        }
    }
}

/// Per-axis perturbation integrals over `[0, t]` of the twist history.
pub fn perturbation_params(history: &[Twist], t: f64, model: &UncertaintyModel) -> PerturbationParams {
    PerturbationIntegrator::new(history, model).at(t)
}

/// TW: uncertainty grows linearly with the time since scan start.
pub fn sigma_tw(t: f64, constants: &ModelConstants) -> f64 {
    constants.c1 * t.max(0.0)
}

const SIGNS: [f64; 2] = [1.0, -1.0];

/// The 16 sign assignments `(s1, s2, s3, s4)`, in lexicographic order with `+` first.
pub fn sign_assignments() -> impl Iterator<Item = [f64; 4]> {
    SIGNS.into_iter().flat_map(|s1| {
        SIGNS.into_iter().flat_map(move |s2| {
            SIGNS
                .into_iter()
                .flat_map(move |s3| SIGNS.into_iter().map(move |s4| [s1, s2, s3, s4]))
        })
    })
}

/// VTW: half the largest separation between the point perturbed by `±rho, ±tau`
/// in two different ways, scaled by `c2`.
pub fn sigma_vtw(p: &Vec3, params: &PerturbationParams, constants: &ModelConstants) -> f64 {
    let PerturbationParams { translation: tau, rotation: rho } = params;
    let rotated = [rotate(p, rho), rotate(p, &-rho)];
    let candidate = |sr: f64, st: f64| rotated[usize::from(sr < 0.0)] + tau * st;
    let max = sign_assignments()
        .map(|[s1, s2, s3, s4]| (candidate(s1, s2) - candidate(s3, s4)).norm())
        .fold(0.0, f64::max);
    0.5 * constants.c2 * max
}

/// Range that would be measured along `p`'s beam direction, rotated by `rho`,
/// from the origin displaced to `rot(tau, rho)`, against the plane through `p`
/// with normal `n`. `None` when the perturbed beam grazes the plane.
pub fn perturbed_range(p: &Vec3, rho: &Vec3, tau: &Vec3, n: &Vec3) -> Option<f64> {
    let range = p.norm();
    let denom = rotate(&(p / range), rho).dot(n);
    if denom.abs() < 1e-6 {
        return None;
    }
    Some((p - rotate(tau, rho)).dot(n) / denom)
}

/// GVTW: like VTW but compares the ranges re-measured on the local surface,
/// so errors that slide points along their surface cost nothing.
pub fn sigma_gvtw(p: &Vec3, normal: &Vec3, params: &PerturbationParams, constants: &ModelConstants) -> f64 {
    if p.norm() == 0.0 {
        return constants.removal_threshold;
    }
    let PerturbationParams { translation: tau, rotation: rho } = params;
    let mut ranges = [[0.0; 2]; 2];
    let mut capped = 0;
    for (i, sr) in SIGNS.into_iter().enumerate() {
        for (j, st) in SIGNS.into_iter().enumerate() {
            ranges[i][j] = perturbed_range(p, &(rho * sr), &(tau * st), normal).unwrap_or_else(|| {
                capped += 1;
                constants.max_range
            });
        }
    }
    if capped == 4 {
        return constants.removal_threshold;
    }
    let idx = |s: f64| usize::from(s < 0.0);
    let max = sign_assignments()
        .map(|[s1, s2, s3, s4]| (ranges[idx(s1)][idx(s2)] - ranges[idx(s3)][idx(s4)]).abs())
        .fold(0.0, f64::max);
    0.5 * constants.c3 * max
}

/// SAW weight from the horizontal scan angle and local curvature.
pub fn sigma_saw(scan_angle: f64, curvature: f64, params: &SawParams) -> f64 {
    let w_angle = (scan_angle / 4.0).cos();
    let w_curv = params
        .floor
        .max((curvature / params.reference_curvature).min(params.cap));
    w_angle.max(w_curv)
}

/// `1 / (sigma_n^2 + sigma_s^2)`.
pub fn weight_from_sigma(sigma_s: f64, sigma_n: f64) -> Result<f64> {
    if !(sigma_n > 0.0) {
        return Err(Error::param("sensor noise must be positive"));
    }
    if sigma_s < 0.0 || sigma_s.is_nan() {
        return Err(Error::param("skew uncertainty must be non-negative"));
    }
    Ok(1.0 / (sigma_n * sigma_n + sigma_s * sigma_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingModel {
    #[default]
    None,
    Tw,
    Vtw,
    Gvtw,
    Saw,
}

impl WeightingModel {
    pub const ALL: [WeightingModel; 5] = [
        WeightingModel::None,
        WeightingModel::Tw,
        WeightingModel::Vtw,
        WeightingModel::Gvtw,
        WeightingModel::Saw,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            WeightingModel::None => "none",
            WeightingModel::Tw => "tw",
            WeightingModel::Vtw => "vtw",
            WeightingModel::Gvtw => "gvtw",
            WeightingModel::Saw => "saw",
        }
    }
}

impl fmt::Display for WeightingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightingModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param(format!("unknown weighting model `{s}`")))
    }
}

/// Everything [`apply_model`] may need besides the cloud.
#[derive(Debug, Clone, Default)]
pub struct WeightingInputs<'a> {
    /// Body twists over the scan, timestamps relative to its start.
    pub twists: &'a [Twist],
    pub constants: ModelConstants,
    pub uncertainty: UncertaintyModel,
    pub saw: SawParams,
    /// Duration of one revolution (s), used for the SAW scan angle.
    pub scan_period: f64,
}

/// Fills `skew_sigma` and `weight` of every point under `model`.
///
/// GVTW also flags points whose uncertainty exceeds the removal threshold
/// so that map merging skips them.
pub fn apply_model(cloud: &PointCloud, model: WeightingModel, inputs: &WeightingInputs<'_>) -> Result<PointCloud> {
    let c = &inputs.constants;
    c.validate()?;
    inputs.uncertainty.validate()?;
    match model {
        WeightingModel::Gvtw if !cloud.has_normals() => return Err(Error::MissingAttribute("normal")),
        WeightingModel::Saw if cloud.points.iter().any(|p| p.curvature.is_none()) => {
            return Err(Error::MissingAttribute("curvature"))
        }
        WeightingModel::Saw if !(inputs.scan_period > 0.0) => {
            return Err(Error::param("SAW needs a positive scan period"))
        }
        _ => {}
    }
    let integrator = matches!(model, WeightingModel::Vtw | WeightingModel::Gvtw)
        .then(|| PerturbationIntegrator::new(inputs.twists, &inputs.uncertainty));

    let points: Vec<TimedPoint> = cloud
        .points
        .par_iter()
        .map(|p| {
            let mut q = p.clone();
            let sigma = match model {
                WeightingModel::None => None,
                WeightingModel::Tw => Some(sigma_tw(p.timestamp, c)),
                WeightingModel::Vtw => {
                    let params = integrator.as_ref().expect("built for VTW").at(p.timestamp);
                    Some(sigma_vtw(&p.position, &params, c))
                }
                WeightingModel::Gvtw => {
                    let params = integrator.as_ref().expect("built for GVTW").at(p.timestamp);
                    let n = p.normal.expect("checked above");
                    Some(sigma_gvtw(&p.position, &n, &params, c))
                }
                WeightingModel::Saw => None,
            };
            q.skew_sigma = sigma;
            q.weight = Some(match (model, sigma) {
                (WeightingModel::None, _) => 1.0,
                (WeightingModel::Saw, _) => {
                    let angle = (TAU * p.timestamp / inputs.scan_period).rem_euclid(TAU);
                    sigma_saw(angle, p.curvature.expect("checked above"), &inputs.saw)
                }
                (_, Some(s)) => 1.0 / (c.sensor_noise * c.sensor_noise + s * s),
                (_, None) => unreachable!("sigma set for TW, VTW and GVTW"),
            });
            if model == WeightingModel::Gvtw {
                q.excluded = sigma.is_some_and(|s| s > c.removal_threshold);
            }
            q
        })
        .collect();
    Ok(PointCloud::new(points, cloud.frame_id.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigma_v_cases() {
        let m = UncertaintyModel::default();
        assert_eq!(sigma_v(0.0, &m).unwrap(), 0.0);
        assert!(sigma_v(-0.1, &m).is_err());
        let mode = m.linear_mode();
        assert_relative_eq!(mode, 1.9 * (-1.21f64).exp(), epsilon = 1e-15);
        let peak = sigma_v(mode, &m).unwrap();
        assert!(peak > sigma_v(mode * 0.99, &m).unwrap());
        assert!(peak > sigma_v(mode * 1.01, &m).unwrap());
    }

    #[test]
    fn sigma_w_cases() {
        let m = UncertaintyModel::default();
        assert_eq!(sigma_w(0.0, &m).unwrap(), 0.0);
        assert_eq!(sigma_w(16.0, &m).unwrap(), 1.0);
        assert_eq!(sigma_w(8.0, &m).unwrap(), 0.125);
        assert!(sigma_w(-1.0, &m).is_err());
    }

    #[test]
    fn tw_cases() {
        let c = ModelConstants::default();
        assert_eq!(sigma_tw(0.0, &c), 0.0);
        assert_relative_eq!(sigma_tw(0.1, &c), 0.025, epsilon = 1e-15);
        assert!(sigma_tw(0.03, &c) < sigma_tw(0.04, &c));
    }

    #[test]
    fn perturbation_integrals() {
        let m = UncertaintyModel::default();
        let history: Vec<Twist> = (0..=10)
            .map(|k| Twist::new(k as f64 * 0.01, Vec3::new(0.7, 0.0, 0.0), Vec3::new(0.0, 0.0, 16.0)))
            .collect();
        let zero = perturbation_params(&history, 0.0, &m);
        assert_eq!(zero, PerturbationParams::default());
        let at = perturbation_params(&history, 0.05, &m);
        let sv = sigma_v(0.7, &m).unwrap();
        assert_relative_eq!(at.translation.x, sv * 0.05, epsilon = 1e-15);
        assert_eq!(at.translation.y, 0.0);
        let end = perturbation_params(&history, 0.1, &m);
        assert_relative_eq!(end.rotation.z, 0.1, epsilon = 1e-15);
        assert_eq!(perturbation_params(&[], 0.1, &m), PerturbationParams::default());
    }

    #[test]
    fn axis_flags_zero_out_components() {
        let m = UncertaintyModel {
            linear_axes: [false, true, true],
            ..UncertaintyModel::default()
        };
        let history = vec![Twist::new(0.0, Vec3::new(1.0, 1.0, 0.0), Vec3::zeros())];
        let p = perturbation_params(&history, 0.1, &m);
        assert_eq!(p.translation.x, 0.0);
        assert!(p.translation.y > 0.0);
    }

    #[test]
    fn vtw_cases() {
        let c = ModelConstants::default();
        let p = Vec3::new(3.0, 1.0, 0.5);
        assert_eq!(sigma_vtw(&p, &PerturbationParams::default(), &c), 0.0);
        let params = PerturbationParams {
            translation: Vec3::new(0.01, 0.0, 0.0),
            rotation: Vec3::zeros(),
        };
        assert_relative_eq!(sigma_vtw(&p, &params, &c), 0.02, epsilon = 1e-15);
        let theta = 0.02;
        let r = 4.0;
        let params = PerturbationParams {
            translation: Vec3::zeros(),
            rotation: Vec3::new(0.0, 0.0, theta),
        };
        let s = sigma_vtw(&Vec3::new(r, 0.0, 0.0), &params, &c);
        assert_relative_eq!(s, c.c2 * r * theta.sin(), epsilon = 1e-12);
    }

    #[test]
    fn gvtw_cases() {
        let c = ModelConstants::default();
        let p = Vec3::new(5.0, 0.0, 0.0);
        let n = Vec3::new(-1.0, 0.0, 0.0);
        assert_eq!(sigma_gvtw(&p, &n, &PerturbationParams::default(), &c), 0.0);
        // Error along the wall slides points along it.
        let slide = PerturbationParams {
            translation: Vec3::new(0.0, 0.03, 0.01),
            rotation: Vec3::zeros(),
        };
        assert!(sigma_gvtw(&Vec3::new(5.0, 1.0, 0.2), &n, &slide, &c).abs() < 1e-12);
        // Head-on wall, error along the normal.
        let delta = 0.01;
        let head_on = PerturbationParams {
            translation: n * delta,
            rotation: Vec3::zeros(),
        };
        assert_relative_eq!(sigma_gvtw(&p, &n, &head_on, &c), c.c3 * delta, epsilon = 1e-12);
    }

    #[test]
    fn gvtw_grazing_candidates_are_capped() {
        let c = ModelConstants::default();
        // Beam parallel to the plane: every candidate grazes.
        let p = Vec3::new(5.0, 0.0, 0.0);
        let n = Vec3::new(0.0, 1.0, 0.0);
        let params = PerturbationParams {
            translation: Vec3::new(0.0, 0.0, 0.01),
            rotation: Vec3::zeros(),
        };
        assert_eq!(sigma_gvtw(&p, &n, &params, &c), c.removal_threshold);
    }

    #[test]
    fn saw_cases() {
        let s = SawParams::default();
        assert_eq!(sigma_saw(0.0, 0.0, &s), 1.0);
        let near_full = TAU - 1e-12;
        assert_relative_eq!(sigma_saw(near_full, 0.0, &s), 0.25, epsilon = 1e-9);
        assert_eq!(sigma_saw(5.0, s.reference_curvature, &s), 1.0);
    }

    #[test]
    fn weight_from_sigma_cases() {
        assert_relative_eq!(weight_from_sigma(0.0, 0.1).unwrap(), 100.0, epsilon = 1e-12);
        assert!(weight_from_sigma(1e6, 0.1).unwrap() < 1e-11);
        assert!(weight_from_sigma(0.1, 0.0).is_err());
        assert!(weight_from_sigma(0.2, 0.1).unwrap() < weight_from_sigma(0.1, 0.1).unwrap());
    }

    fn ramp() -> PointCloud {
        PointCloud::new(
            (0..20)
                .map(|i| TimedPoint::new(Vec3::new(4.0, -2.0 + 0.2 * i as f64, 0.3), i as f64 * 0.005))
                .collect(),
            "lidar",
        )
    }

    #[test]
    fn apply_none_and_tw() {
        let inputs = WeightingInputs {
            scan_period: 0.1,
            ..Default::default()
        };
        let none = apply_model(&ramp(), WeightingModel::None, &inputs).unwrap();
        assert!(none.points.iter().all(|p| p.weight == Some(1.0)));
        let tw = apply_model(&ramp(), WeightingModel::Tw, &inputs).unwrap();
        for w in tw.points.windows(2) {
            assert!(w[1].weight.unwrap() < w[0].weight.unwrap());
        }
    }

    #[test]
    fn apply_reports_missing_attributes() {
        let inputs = WeightingInputs {
            scan_period: 0.1,
            ..Default::default()
        };
        assert!(matches!(
            apply_model(&ramp(), WeightingModel::Gvtw, &inputs),
            Err(Error::MissingAttribute("normal"))
        ));
        assert!(matches!(
            apply_model(&ramp(), WeightingModel::Saw, &inputs),
            Err(Error::MissingAttribute("curvature"))
        ));
    }

    #[test]
    fn gvtw_flags_uncertain_points() {
        let twists = vec![
            Twist::new(0.0, Vec3::zeros(), Vec3::new(0.0, 0.0, 30.0)),
            Twist::new(0.1, Vec3::zeros(), Vec3::new(0.0, 0.0, 30.0)),
        ];
        let inputs = WeightingInputs {
            twists: &twists,
            scan_period: 0.1,
            ..Default::default()
        };
        let mut cloud = ramp();
        for p in &mut cloud.points {
            p.normal = Some(Vec3::new(-1.0, 0.0, 0.0));
        }
        let out = apply_model(&cloud, WeightingModel::Gvtw, &inputs).unwrap();
        assert!(!out.points[0].excluded);
        assert!(out.points.iter().any(|p| p.excluded));
        assert!(out
            .points
            .iter()
            .all(|p| p.excluded == (p.skew_sigma.unwrap() > inputs.constants.removal_threshold)));
    }

    #[test]
    fn model_names_round_trip() {
        for m in WeightingModel::ALL {
            assert_eq!(m.name().parse::<WeightingModel>().unwrap(), m);
        }
        assert!("bogus".parse::<WeightingModel>().is_err());
    }
}
