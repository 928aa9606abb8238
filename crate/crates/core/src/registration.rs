//! Weighted point-to-plane ICP with fractional-RMSD overlap selection,
//! surface normal estimation and map maintenance.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{voxel_downsample, PointCloud, TimedPoint};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::knn::NeighborIndex;

/// Normals from the covariance of the `k` nearest neighbours, oriented
/// toward the frame origin (the sensor for a scan).
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    estimate_normals_toward(cloud, k, &Vec3::zeros())
}

/// As [`estimate_normals`] but orienting normals toward `viewpoint`.
/// Curvature is the surface variation `l0 / (l0 + l1 + l2)`.
pub fn estimate_normals_toward(cloud: &PointCloud, k: usize, viewpoint: &Vec3) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::param("normal estimation needs k >= 3"));
    }
    if cloud.len() < k {
        return Err(Error::param(format!(
            "normal estimation needs at least k = {k} points, cloud has {}",
            cloud.len()
        )));
    }
    let index = NeighborIndex::new(cloud);
    let points = cloud
        .points
        .par_iter()
        .map(|p| {
            let neighbors = index.knn(&p.position, k);
            let mean = neighbors.iter().map(|(i, _)| index.point(*i)).sum::<Vec3>() / k as f64;
            let mut cov = Matrix3::zeros();
            for (i, _) in &neighbors {
                let d = index.point(*i) - mean;
                cov += d * d.transpose();
            }
            cov /= k as f64;
            let eig = SymmetricEigen::new(cov);
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
            if normal.dot(&(viewpoint - p.position)) < 0.0 {
                normal = -normal;
            }
            let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
            let curvature = if total > 0.0 {
                eig.eigenvalues[order[0]].max(0.0) / total
            } else {
                0.0
            };
            let mut q = p.clone();
            q.normal = Some(normal);
            q.curvature = Some(curvature);
            q
        })
        .collect();
    Ok(PointCloud::new(points, cloud.frame_id.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub max_iterations: usize,
    /// Stop when an update moves less than this (m) ...
    pub translation_threshold: f64,
    /// ... and rotates less than this (rad).
    pub rotation_threshold: f64,
    /// FRMSD overlap penalty exponent. Below 1 the trimmed RMS of Gaussian
    /// residuals shrinks faster than the penalty grows, so the smallest
    /// fraction on the grid always wins.
    pub frmsd_lambda: f64,
    /// Candidate overlap fractions.
    pub overlap_grid: Vec<f64>,
    pub max_match_distance: f64,
    /// Step halvings tried when an update increases the cost.
    pub max_backoff: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 40,
            translation_threshold: 1e-4,
            rotation_threshold: 1e-4,
            frmsd_lambda: 2.0,
            overlap_grid: (3..=10).map(|i| i as f64 / 10.0).collect(),
            max_match_distance: 0.5,
            max_backoff: 12,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations must be positive"));
        }
        if !(self.translation_threshold > 0.0 && self.rotation_threshold > 0.0 && self.max_match_distance > 0.0) {
            return Err(Error::param("registration thresholds must be positive"));
        }
        if !(self.frmsd_lambda > 0.0 && self.frmsd_lambda <= 2.0) {
            return Err(Error::param("FRMSD lambda must lie in (0, 2]"));
        }
        if self.overlap_grid.is_empty() || self.overlap_grid.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::param("overlap grid values must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// A reading point paired with its nearest reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub reading: usize,
    pub reference: usize,
    /// Reading point in its original frame.
    pub point: Vec3,
    /// Matched reference position.
    pub target: Vec3,
    /// Vector from the transformed reading point to the reference point.
    pub error: Vec3,
    pub normal: Vec3,
    pub weight: f64,
}

impl Match {
    /// Signed point-to-plane residual under `pose`.
    pub fn residual(&self, pose: &Pose) -> f64 {
        (pose.transform_point(&self.point) - self.target).dot(&self.normal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub pose: Pose,
    pub iterations: usize,
    /// Selected overlap fraction at the last iteration.
    pub overlap: f64,
    /// Weighted point-to-plane cost over the retained matches at the end.
    pub cost: f64,
    pub cost_trace: Vec<f64>,
    pub converged: bool,
}

/// Weighted point-to-plane cost `sum w ((T p - q) . n)^2`.
pub fn point_to_plane_cost(matches: &[Match], pose: &Pose) -> f64 {
    matches
        .iter()
        .map(|m| {
            let r = m.residual(pose);
            m.weight * r * r
        })
        .sum()
}

/// Point-to-Gaussian cost with isotropic sensor and skew covariances and a
/// local-structure covariance spread by `plane_spread` (m^2) inside the
/// tangent plane. As `plane_spread` grows it tends to the point-to-plane cost
/// with weights `1 / (sigma_n^2 + sigma_s^2)`.
pub fn point_to_gaussian_cost(
    matches: &[Match],
    pose: &Pose,
    sigma_n: f64,
    sigma_s: &[f64],
    plane_spread: f64,
) -> f64 {
    matches
        .iter()
        .zip(sigma_s)
        .map(|(m, s)| {
            let e = m.target - pose.transform_point(&m.point);
            let nn = m.normal * m.normal.transpose();
            let local = (Matrix3::identity() - nn) * plane_spread;
            let cov = local + Matrix3::identity() * (sigma_n * sigma_n + s * s);
            let inv = cov.try_inverse().expect("isotropic term keeps it invertible");
            (e.transpose() * inv * e)[0]
        })
        .sum()
}

/// Fractional RMSD of the `ceil(f N)` smallest costs (sorted ascending, with
/// a prefix sum in `cumulative`).
pub fn frmsd(cumulative: &[f64], total: usize, fraction: f64, lambda: f64) -> f64 {
    let kept = ((fraction * total as f64).ceil() as usize).clamp(1, total);
    let sum = cumulative[kept - 1];
    fraction.powf(-lambda) * (sum / (fraction * total as f64)).sqrt()
}

/// Keeps the overlap fraction minimising FRMSD; returns `(fraction, kept matches)`.
///
/// Overlap is a geometric notion, so matches are ranked by their unweighted
/// point-to-plane distance; weights only enter the minimisation.
pub fn select_overlap(matches: &[Match], pose: &Pose, grid: &[f64], lambda: f64) -> (f64, Vec<Match>) {
    let mut ranked = rank_matches(matches, pose);
    let best = best_fraction(&ranked, pose, grid, lambda);
    ranked.truncate(kept_count(best, ranked.len()));
    (best, ranked)
}

/// Matches sorted by squared point-to-plane residual (ties by reading index).
fn rank_matches(matches: &[Match], pose: &Pose) -> Vec<Match> {
    let mut scored: Vec<(f64, Match)> = matches
        .iter()
        .map(|m| {
            let r = m.residual(pose);
            (r * r, *m)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.reading.cmp(&b.1.reading)));
    scored.into_iter().map(|(_, m)| m).collect()
}

fn best_fraction(ranked: &[Match], pose: &Pose, grid: &[f64], lambda: f64) -> f64 {
    let cumulative: Vec<f64> = ranked
        .iter()
        .scan(0.0, |acc, m| {
            let r = m.residual(pose);
            *acc += r * r;
            Some(*acc)
        })
        .collect();
    grid.iter()
        .map(|&f| (f, frmsd(&cumulative, ranked.len(), f, lambda)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)))
        .map_or(1.0, |(f, _)| f)
}

fn kept_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).ceil() as usize).clamp(1, n)
}

const DOF_NAMES: [&str; 6] = [
    "rotation about x",
    "rotation about y",
    "rotation about z",
    "translation along x",
    "translation along y",
    "translation along z",
];

/// One Gauss-Newton increment `(rotation vector, translation)` applied on the
/// left of `pose`, for the small-angle linearisation of the point-to-plane cost.
pub fn gauss_newton_step(matches: &[Match], pose: &Pose) -> Result<Vector6<f64>> {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for m in matches {
        let p = pose.transform_point(&m.point);
        let r = (p - m.target).dot(&m.normal);
        let rot = p.cross(&m.normal);
        let j = Vector6::new(rot.x, rot.y, rot.z, m.normal.x, m.normal.y, m.normal.z);
        h += j * j.transpose() * m.weight;
        g += j * (m.weight * r);
    }
    let eig = SymmetricEigen::new(h);
    let (imin, lmin) = eig.eigenvalues.argmin();
    let lmax = eig.eigenvalues.max();
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(condition <= 1e12) {
        let v = eig.eigenvectors.column(imin);
        let (dominant, _) = v.iamax_full();
        return Err(Error::RankDeficient {
            condition,
            direction: DOF_NAMES[dominant].to_string(),
        });
    }
    let delta = h
        .cholesky()
        .map(|c| c.solve(&(-g)))
        .ok_or_else(|| Error::RankDeficient {
            condition,
            direction: DOF_NAMES[eig.eigenvectors.column(imin).iamax()].to_string(),
        })?;
    Ok(delta)
}

fn increment(delta: &Vector6<f64>, scale: f64) -> Pose {
    let d = delta * scale;
    Pose::from_vectors(&Vec3::new(d[0], d[1], d[2]), &Vec3::new(d[3], d[4], d[5]))
}

/// Minimises the weighted point-to-plane cost of fixed `matches` by
/// Gauss-Newton with step halving. Returns the pose and the cost after each step.
pub fn minimize_point_to_plane(
    matches: &[Match],
    init: &Pose,
    iterations: usize,
    tolerance: f64,
    max_backoff: usize,
) -> Result<(Pose, Vec<f64>)> {
    let mut pose = *init;
    let mut cost = point_to_plane_cost(matches, &pose);
    let mut trace = Vec::new();
    for _ in 0..iterations {
        let (next, next_cost, step) = backoff_step(matches, &pose, cost, max_backoff)?;
        pose = next;
        cost = next_cost;
        trace.push(cost);
        if step < tolerance {
            break;
        }
    }
    Ok((pose, trace))
}

/// One damped update; returns `(pose, cost, step norm)`. A zero step is
/// returned when no halving reduces the cost.
fn backoff_step(matches: &[Match], pose: &Pose, cost: f64, max_backoff: usize) -> Result<(Pose, f64, f64)> {
    let delta = gauss_newton_step(matches, pose)?;
    let mut scale = 1.0;
    for _ in 0..=max_backoff {
        let candidate = increment(&delta, scale).compose(pose);
        let c = point_to_plane_cost(matches, &candidate);
        if c <= cost {
            return Ok((candidate, c, (delta * scale).norm()));
        }
        scale *= 0.5;
    }
    Ok((*pose, cost, 0.0))
}

/// Nearest-neighbour matches of the reading (under `pose`) into the reference.
pub fn find_matches(
    reading: &PointCloud,
    reference: &PointCloud,
    index: &NeighborIndex,
    pose: &Pose,
    max_distance: f64,
) -> Vec<Match> {
    reading
        .points
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let moved = pose.transform_point(&p.position);
            let (j, dist) = index.nearest(&moved)?;
            if dist > max_distance {
                return None;
            }
            let normal = reference.points[j].normal?;
            let target = reference.points[j].position;
            Some(Match {
                reading: i,
                reference: j,
                point: p.position,
                target,
                error: target - moved,
                normal,
                weight: p.effective_weight(),
            })
        })
        .filter(|m| m.weight > 0.0)
        .collect()
}

/// Registers `reading` onto `reference` starting from `init`.
///
/// Each iteration matches by nearest neighbour, keeps the overlap fraction
/// minimising FRMSD and takes one damped Gauss-Newton step on the retained
/// weighted point-to-plane cost.
pub fn icp(
    reading: &PointCloud,
    reference: &PointCloud,
    init: &Pose,
    config: &RegistrationConfig,
) -> Result<RegistrationResult> {
    config.validate()?;
    if !reference.has_normals() {
        return Err(Error::MissingAttribute("normal"));
    }
    let index = NeighborIndex::new(reference);
    let mut pose = *init;
    let mut trace = Vec::new();
    let mut overlap = 1.0;
    let mut cost = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        iterations += 1;
        let matches = find_matches(reading, reference, &index, &pose, config.max_match_distance);
        if matches.len() < 6 {
            return Err(Error::DegenerateGeometry {
                matches: matches.len(),
            });
        }
        let ranked = rank_matches(&matches, &pose);
        let best = best_fraction(&ranked, &pose, &config.overlap_grid, config.frmsd_lambda);
        // Trimming can discard every match constraining some direction (the
        // floor, say, once the walls fit better). Widen the overlap along the
        // grid until the step is well posed.
        let mut candidates: Vec<f64> = config.overlap_grid.iter().copied().filter(|&f| f > best).collect();
        candidates.sort_by(f64::total_cmp);
        candidates.insert(0, best);
        if candidates.last() != Some(&1.0) {
            candidates.push(1.0);
        }
        let mut step = None;
        for &fraction in &candidates {
            let kept = &ranked[..kept_count(fraction, ranked.len())];
            if kept.len() < 6 {
                return Err(Error::DegenerateGeometry { matches: kept.len() });
            }
            let before = point_to_plane_cost(kept, &pose);
            match backoff_step(kept, &pose, before, config.max_backoff) {
                Ok(s) => {
                    overlap = fraction;
                    step = Some(s);
                    break;
                }
                Err(e @ Error::RankDeficient { .. }) if fraction < 1.0 => {
                    log::debug!("overlap {fraction}: {e}; widening");
                }
                Err(e) => return Err(e),
            }
        }
        let (next, after, _) = step.expect("the full match set either steps or errors");
        let delta = pose.inverse().compose(&next);
        let moved = (next.translation - pose.translation).norm();
        pose = next;
        cost = after;
        trace.push(after);
        if moved < config.translation_threshold && delta.rotation_angle() < config.rotation_threshold {
            converged = true;
            break;
        }
    }
    Ok(RegistrationResult {
        pose,
        iterations,
        overlap,
        cost,
        cost_trace: trace,
        converged,
    })
}

/// Adds a registered scan (already in the map frame) to the map, skipping
/// excluded points and points whose skew uncertainty exceeds `threshold`,
/// then down-samples on a voxel grid.
pub fn merge_into_map(map: &PointCloud, scan: &PointCloud, cell: f64, threshold: f64) -> Result<PointCloud> {
    let keep = |p: &&TimedPoint| !p.excluded && p.skew_sigma.is_none_or(|s| s <= threshold);
    let points: Vec<TimedPoint> = map
        .points
        .iter()
        .chain(scan.points.iter().filter(keep))
        .cloned()
        .collect();
    let frame = if map.frame_id.is_empty() {
        scan.frame_id.clone()
    } else {
        map.frame_id.clone()
    };
    voxel_downsample(&PointCloud::new(points, frame), cell)
}
