//! Motion compensation: re-expresses every point in the lidar frame at the
//! timestamp of the first point of the scan.

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::geometry::Pose;
use crate::trajectory::TrajectoryEstimate;

#[derive(Debug, Clone)]
pub struct DeskewOutput {
    pub cloud: PointCloud,
    /// Points whose timestamp fell outside the trajectory and were clamped.
    pub clamped: usize,
}

fn first_timestamp(scan: &PointCloud) -> f64 {
    scan.points
        .iter()
        .map(|p| p.timestamp)
        .fold(f64::INFINITY, f64::min)
}

fn map_points(scan: &PointCloud, traj: &TrajectoryEstimate, invert: bool, frame_id: &str) -> DeskewOutput {
    if scan.is_empty() {
        return DeskewOutput {
            cloud: PointCloud::new(Vec::new(), frame_id),
            clamped: 0,
        };
    }
    let reference = traj.interpolate(first_timestamp(scan)).pose.inverse();
    let mapped: Vec<_> = scan
        .points
        .par_iter()
        .map(|p| {
            let at = traj.interpolate(p.timestamp);
            let mut relative: Pose = reference.compose(&at.pose);
            if invert {
                relative = relative.inverse();
            }
            let mut q = p.clone();
            q.position = relative.transform_point(&p.position);
            q.normal = p.normal.map(|n| relative.rotate_vector(&n));
            (q, at.clamped)
        })
        .collect();
    let clamped = mapped.iter().filter(|(_, c)| *c).count();
    DeskewOutput {
        cloud: PointCloud::new(mapped.into_iter().map(|(p, _)| p).collect(), frame_id),
        clamped,
    }
}

/// Replaces each point `p_i` by `T_i^1 p_i`, with `T_i^1` the motion from
/// the first point's timestamp to `t_i`. Order, timestamps and attributes
/// are preserved.
pub fn deskew(scan: &PointCloud, traj: &TrajectoryEstimate) -> DeskewOutput {
    map_points(scan, traj, false, "scan_start")
}

/// Inverse of [`deskew`]: expresses scan-start-frame points in the lidar
/// frame at their own timestamps, as a moving sensor would report them.
pub fn skew(scan: &PointCloud, traj: &TrajectoryEstimate) -> DeskewOutput {
    map_points(scan, traj, true, "lidar")
}
