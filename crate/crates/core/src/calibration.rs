//! Speed-uncertainty calibration from registration residuals.
//!
//! A constant velocity error `e` over a scan of period `tau` leaves a mean
//! residual of about `e * tau / 2` on surfaces facing the motion; an angular
//! error leaves about `e * tau * d / 2` at mean range `d`. Residuals measured
//! at known speeds are converted back to speed uncertainties with these
//! relations, reduced to per-bucket third quartiles, and fitted with a
//! log-normal (linear) or cubic (angular) curve.

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::knn::NeighborIndex;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::weighting::UncertaintyModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    Linear,
    Angular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceClass {
    Perpendicular,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    /// Estimated speed (m/s or rad/s) at which the scan was taken.
    pub speed: f64,
    /// Mean residual (m).
    pub residual: f64,
    pub class: SurfaceClass,
    pub scan_period: f64,
    /// Mean measured range of the scan (m).
    pub mean_distance: f64,
}

/// A de-skewed scan taken at a known speed, with its pose in the map.
#[derive(Debug, Clone)]
pub struct CalibrationScan {
    pub cloud: PointCloud,
    pub pose: Pose,
    pub speed: f64,
    /// Direction of motion in the scan frame; only used in linear mode.
    pub motion_direction: Vec3,
    pub scan_period: f64,
    /// Optional index-aligned true positions (map frame). When present they
    /// replace nearest-neighbour map matches as residual targets.
    pub truth: Option<Vec<Vec3>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectOptions {
    /// Cosine of the half-angle of the cone around the motion direction within
    /// which a surface normal counts as perpendicular to the motion.
    pub perpendicular_cos: f64,
    pub max_match_distance: f64,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self {
            perpendicular_cos: 30f64.to_radians().cos(),
            max_match_distance: 1.0,
        }
    }
}

/// Mean residual of each scan against a dense map with normals.
///
/// Linear mode averages `|e . n|` over points whose matched normal lies
/// within the perpendicularity cone of the motion; angular mode averages
/// `|e|` over all points. Scans with no qualifying point are dropped.
pub fn collect_residuals(
    scans: &[CalibrationScan],
    map: &PointCloud,
    mode: CalibrationMode,
    options: &CollectOptions,
) -> Result<Vec<ResidualSample>> {
    if !map.has_normals() {
        return Err(Error::MissingAttribute("normal"));
    }
    let index = NeighborIndex::new(map);
    let mut samples = Vec::with_capacity(scans.len());
    for (k, scan) in scans.iter().enumerate() {
        if !(scan.scan_period > 0.0) {
            return Err(Error::param("scan period must be positive"));
        }
        if let Some(truth) = &scan.truth {
            if truth.len() != scan.cloud.len() {
                return Err(Error::param("truth positions must align with the scan"));
            }
        }
        let direction = scan.pose.rotate_vector(&scan.motion_direction);
        let direction = if direction.norm() > 0.0 {
            direction.normalize()
        } else {
            direction
        };
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, p) in scan.cloud.points.iter().enumerate() {
            let moved = scan.pose.transform_point(&p.position);
            let Some((j, dist)) = index.nearest(&moved) else { continue };
            if dist > options.max_match_distance {
                continue;
            }
            let target = scan.truth.as_ref().map_or(map.points[j].position, |t| t[i]);
            let normal = map.points[j].normal.expect("checked above");
            let e = target - moved;
            match mode {
                CalibrationMode::Linear => {
                    if direction.dot(&normal).abs() > options.perpendicular_cos {
                        sum += e.dot(&normal).abs();
                        count += 1;
                    }
                }
                CalibrationMode::Angular => {
                    sum += e.norm();
                    count += 1;
                }
            }
        }
        if count == 0 {
            log::warn!("calibration scan {k}: no qualifying points, sample dropped");
            continue;
        }
        samples.push(ResidualSample {
            speed: scan.speed,
            residual: sum / count as f64,
            class: match mode {
                CalibrationMode::Linear => SurfaceClass::Perpendicular,
                CalibrationMode::Angular => SurfaceClass::All,
            },
            scan_period: scan.scan_period,
            mean_distance: scan.cloud.mean_range(),
        });
    }
    Ok(samples)
}

/// Subtracts the median residual of the zero-speed samples (speed below
/// `zero_speed`) from every residual, flooring at 0.
pub fn noise_floor_subtract(samples: &[ResidualSample], zero_speed: f64) -> Result<Vec<ResidualSample>> {
    let mut floor: Vec<f64> = samples
        .iter()
        .filter(|s| s.speed.abs() <= zero_speed)
        .map(|s| s.residual)
        .collect();
    if floor.is_empty() {
        return Err(Error::Calibration("no zero-speed samples to estimate the noise floor".into()));
    }
    floor.sort_by(f64::total_cmp);
    let median = quantile(&floor, 0.5);
    Ok(samples
        .iter()
        .map(|s| ResidualSample {
            residual: (s.residual - median).max(0.0),
            ..*s
        })
        .collect())
}

/// Linear-interpolated quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// Linear speed uncertainty implied by a mean residual.
pub fn linear_sigma_from_residual(residual: f64, scan_period: f64) -> f64 {
    2.0 * residual / scan_period
}

/// Mean residual implied by a linear speed uncertainty.
pub fn residual_from_linear_sigma(sigma: f64, scan_period: f64) -> f64 {
    sigma * scan_period / 2.0
}

/// Angular speed uncertainty implied by a mean residual at mean range `d`.
pub fn angular_sigma_from_residual(residual: f64, scan_period: f64, mean_distance: f64) -> f64 {
    2.0 * residual / (scan_period * mean_distance)
}

pub fn residual_from_angular_sigma(sigma: f64, scan_period: f64, mean_distance: f64) -> f64 {
    sigma * scan_period * mean_distance / 2.0
}

/// Summary of one equal-width speed bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub index: i64,
    /// Mean speed of the bucket's samples.
    pub speed: f64,
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Groups `(speed, value)` pairs in buckets `[i w, (i + 1) w)` and summarises the values.
pub fn bucket_stats(pairs: &[(f64, f64)], width: f64) -> Result<Vec<BucketStats>> {
    if !(width > 0.0) {
        return Err(Error::param("bucket width must be positive"));
    }
    let mut groups: std::collections::BTreeMap<i64, Vec<(f64, f64)>> = Default::default();
    for &(speed, value) in pairs {
        groups.entry((speed / width).floor() as i64).or_default().push((speed, value));
    }
    Ok(groups
        .into_iter()
        .map(|(index, members)| {
            let mut values: Vec<f64> = members.iter().map(|m| m.1).collect();
            values.sort_by(f64::total_cmp);
            BucketStats {
                index,
                speed: members.iter().map(|m| m.0).sum::<f64>() / members.len() as f64,
                count: members.len(),
                q1: quantile(&values, 0.25),
                median: quantile(&values, 0.5),
                q3: quantile(&values, 0.75),
            }
        })
        .collect())
}

/// Residual-versus-speed table (residuals in m).
pub fn residual_table(samples: &[ResidualSample], width: f64) -> Result<Vec<BucketStats>> {
    let pairs: Vec<(f64, f64)> = samples.iter().map(|s| (s.speed, s.residual)).collect();
    bucket_stats(&pairs, width)
}

pub const MIN_BUCKETS: usize = 5;
pub const MIN_BUCKET_SAMPLES: usize = 4;

fn qualifying_buckets(pairs: &[(f64, f64)], width: f64) -> Result<Vec<BucketStats>> {
    let all = bucket_stats(pairs, width)?;
    let kept: Vec<BucketStats> = all.iter().filter(|b| b.count >= MIN_BUCKET_SAMPLES).cloned().collect();
    if kept.len() < MIN_BUCKETS {
        let sizes: Vec<String> = all.iter().map(|b| format!("{:.3}:{}", b.speed, b.count)).collect();
        return Err(Error::Calibration(format!(
            "need {MIN_BUCKETS} speed buckets with at least {MIN_BUCKET_SAMPLES} samples, got [{}]",
            sizes.join(", ")
        )));
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub shape: f64,
    pub scale: f64,
    pub gain: f64,
    /// RMS difference between the curve and the bucket third quartiles (m/s).
    pub rmse: f64,
    /// Per-bucket statistics of the speed uncertainty (m/s).
    pub buckets: Vec<BucketStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularFit {
    /// Cubic scale `b`; infinite when no angular uncertainty is detectable.
    pub scale: f64,
    pub rmse: f64,
    pub buckets: Vec<BucketStats>,
}

impl AngularFit {
    pub fn detectable(&self) -> bool {
        self.scale.is_finite()
    }
}

/// Log-normal curve with unit gain.
fn lognormal_shape(speed: f64, shape: f64, scale: f64) -> f64 {
    if speed <= 0.0 {
        return 0.0;
    }
    let l = (speed / scale).ln();
    1.0 / (shape * speed * (2.0 * std::f64::consts::PI).sqrt()) * (-(l * l) / (2.0 * shape * shape)).exp()
}

/// Best non-negative gain for fixed shape and scale, by linear least squares.
fn best_gain(points: &[(f64, f64)], shape: f64, scale: f64) -> f64 {
    let (num, den) = points.iter().fold((0.0, 0.0), |(n, d), &(v, y)| {
        let g = lognormal_shape(v, shape, scale);
        (n + g * y, d + g * g)
    });
    if den > 0.0 {
        (num / den).max(0.0)
    } else {
        0.0
    }
}

/// Least-squares log-normal fit of `(speed, sigma)` points.
pub fn fit_lognormal(points: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let sse = |shape: f64, scale: f64, gain: f64| -> f64 {
        points
            .iter()
            .map(|&(v, y)| {
                let r = gain * lognormal_shape(v, shape, scale) - y;
                r * r
            })
            .sum()
    };
    // Coarse grid with the gain solved in closed form, then a bounded simplex refinement.
    let mut start = (1.0, 1.0, 0.0, f64::INFINITY);
    for &s in &[0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0] {
        for &k in &[0.1, 0.2, 0.4, 0.7, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 15.0] {
            let a = best_gain(points, s, k);
            let e = sse(s, k, a);
            if e < start.3 {
                start = (s, k, a, e);
            }
        }
    }
    let bounds = [(0.05f64.ln(), 5f64.ln()), (0.01f64.ln(), 100f64.ln()), (0.0, 100.0)];
    let objective = |x: &[f64]| sse(x[0].exp(), x[1].exp(), x[2]);
    let best = nelder_mead(
        objective,
        &[start.0.ln(), start.1.ln(), start.2],
        &bounds,
        NelderMeadOptions {
            max_evaluations: 50_000,
            f_tolerance: 1e-20,
            x_tolerance: 1e-10,
            initial_step: 0.1,
        },
    );
    let (shape, scale, gain) = (best.x[0].exp(), best.x[1].exp(), best.x[2]);
    let rmse = (sse(shape, scale, gain) / points.len().max(1) as f64).sqrt();
    (shape, scale, gain, rmse)
}

/// Fits the linear speed-uncertainty curve to the third quartile of each
/// speed bucket. Residuals should already have the noise floor removed.
pub fn fit_linear_model(samples: &[ResidualSample], bucket_width: f64) -> Result<LinearFit> {
    let pairs: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (s.speed.abs(), linear_sigma_from_residual(s.residual, s.scan_period)))
        .collect();
    let buckets = qualifying_buckets(&pairs, bucket_width)?;
    let points: Vec<(f64, f64)> = buckets.iter().map(|b| (b.speed, b.q3)).collect();
    let (shape, scale, gain, rmse) = fit_lognormal(&points);
    Ok(LinearFit {
        shape,
        scale,
        gain,
        rmse,
        buckets,
    })
}

/// Least-squares `b` for `sigma = (speed / b)^3`; infinite if no positive signal.
pub fn fit_cubic_scale(points: &[(f64, f64)]) -> f64 {
    let (num, den) = points.iter().fold((0.0, 0.0), |(n, d), &(w, y)| {
        let c = w.powi(3);
        (n + c * y, d + c * c)
    });
    let coefficient = if den > 0.0 { num / den } else { 0.0 };
    if coefficient > 0.0 {
        coefficient.powf(-1.0 / 3.0)
    } else {
        f64::INFINITY
    }
}

/// Fits the angular speed-uncertainty curve to bucket third quartiles.
pub fn fit_angular_model(samples: &[ResidualSample], bucket_width: f64) -> Result<AngularFit> {
    if samples.iter().any(|s| !(s.mean_distance > 0.0)) {
        return Err(Error::param("angular samples need a positive mean distance"));
    }
    let pairs: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| {
            (
                s.speed.abs(),
                angular_sigma_from_residual(s.residual, s.scan_period, s.mean_distance),
            )
        })
        .collect();
    let buckets = qualifying_buckets(&pairs, bucket_width)?;
    let points: Vec<(f64, f64)> = buckets.iter().map(|b| (b.speed, b.q3)).collect();
    let scale = fit_cubic_scale(&points);
    let predict = |w: f64| if scale.is_finite() { (w / scale).powi(3) } else { 0.0 };
    let rmse = (points.iter().map(|&(w, y)| (predict(w) - y).powi(2)).sum::<f64>() / points.len() as f64).sqrt();
    Ok(AngularFit { scale, rmse, buckets })
}

/// Uncertainty model assembled from fits; missing parts keep `base` values.
pub fn assemble_model(base: &UncertaintyModel, linear: Option<&LinearFit>, angular: Option<&AngularFit>) -> UncertaintyModel {
    let mut model = *base;
    if let Some(l) = linear {
        model.shape = l.shape;
        model.scale = l.scale;
        model.gain = l.gain;
    }
    if let Some(a) = angular {
        model.angular_scale = a.scale;
    }
    model
}
