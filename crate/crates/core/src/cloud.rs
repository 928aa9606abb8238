//! Timestamped point clouds and voxel-grid down-sampling.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

/// One lidar return. `timestamp` is seconds since the start of its scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedPoint {
    pub position: Vec3,
    pub timestamp: f64,
    pub normal: Option<Vec3>,
    pub curvature: Option<f64>,
    /// Skew-related position uncertainty (m).
    pub skew_sigma: Option<f64>,
    pub weight: Option<f64>,
    /// Set when the point must not be merged into a map.
    pub excluded: bool,
}

impl TimedPoint {
    pub fn new(position: Vec3, timestamp: f64) -> Self {
        Self {
            position,
            timestamp,
            normal: None,
            curvature: None,
            skew_sigma: None,
            weight: None,
            excluded: false,
        }
    }

    pub fn with_normal(mut self, normal: Vec3) -> Self {
        self.normal = Some(normal);
        self
    }

    /// Weight used by registration; points without one count as 1.
    pub fn effective_weight(&self) -> f64 {
        self.weight.unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<TimedPoint>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<TimedPoint>, frame_id: impl Into<String>) -> Self {
        Self {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn from_positions(positions: impl IntoIterator<Item = Vec3>, frame_id: &str) -> Self {
        Self::new(
            positions
                .into_iter()
                .map(|p| TimedPoint::new(p, 0.0))
                .collect(),
            frame_id,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn has_normals(&self) -> bool {
        self.points.iter().all(|p| p.normal.is_some())
    }

    /// Rigidly transforms positions and normals.
    pub fn transformed(&self, pose: &Pose, frame_id: &str) -> PointCloud {
        let points = self
            .points
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q.position = pose.transform_point(&p.position);
                q.normal = p.normal.map(|n| pose.rotate_vector(&n));
                q
            })
            .collect();
        PointCloud::new(points, frame_id)
    }

    /// Mean distance of the points from the frame origin.
    pub fn mean_range(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().map(|p| p.position.norm()).sum::<f64>() / self.points.len() as f64
    }
}

/// Keeps at most one point per occupied voxel of side `cell`.
///
/// The representative is the centroid of the voxel's members and carries the
/// earliest member timestamp. Normals, curvature and weights are dropped; a
/// voxel is excluded only when all of its members are. Output order follows
/// the first-seen order of the voxels.
pub fn voxel_downsample(cloud: &PointCloud, cell: f64) -> Result<PointCloud> {
    if !(cell > 0.0) || !cell.is_finite() {
        return Err(Error::param(format!("voxel cell must be positive, got {cell}")));
    }

    // Offsets from the first member keep exact duplicates exact.
    struct Acc {
        first: Vec3,
        sum: Vec3,
        count: usize,
        earliest: f64,
        sigma: Option<f64>,
        excluded: bool,
    }

    let mut slots: HashMap<[i64; 3], usize> = HashMap::with_capacity(cloud.len());
    let mut accs: Vec<Acc> = Vec::new();
    for p in &cloud.points {
        let key = [
            (p.position.x / cell).floor() as i64,
            (p.position.y / cell).floor() as i64,
            (p.position.z / cell).floor() as i64,
        ];
        let idx = *slots.entry(key).or_insert_with(|| {
            accs.push(Acc {
                first: p.position,
                sum: Vec3::zeros(),
                count: 0,
                earliest: f64::INFINITY,
                sigma: None,
                excluded: true,
            });
            accs.len() - 1
        });
        let acc = &mut accs[idx];
        acc.sum += p.position - acc.first;
        acc.count += 1;
        acc.earliest = acc.earliest.min(p.timestamp);
        acc.excluded &= p.excluded;
        if let Some(s) = p.skew_sigma {
            acc.sigma = Some(acc.sigma.map_or(s, |m: f64| m.max(s)));
        }
    }

    let points = accs
        .into_iter()
        .map(|acc| {
            let position = acc.first + acc.sum / acc.count as f64;
            let mut p = TimedPoint::new(position, acc.earliest);
            p.skew_sigma = acc.sigma;
            p.excluded = acc.excluded;
            p
        })
        .collect();
    Ok(PointCloud::new(points, cloud.frame_id.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_cell() {
        let cloud = PointCloud::default();
        assert!(voxel_downsample(&cloud, 0.0).is_err());
        assert!(voxel_downsample(&cloud, -1.0).is_err());
    }

    #[test]
    fn separated_points_survive() {
        let cloud = PointCloud::from_positions(
            [Vec3::new(0.01, 0.01, 0.01), Vec3::new(1.01, 0.01, 0.01)],
            "s",
        );
        assert_eq!(voxel_downsample(&cloud, 0.05).unwrap().len(), 2);
    }

    #[test]
    fn duplicates_collapse() {
        let cloud = PointCloud::from_positions(vec![Vec3::new(0.3, -0.2, 1.7); 100], "s");
        let out = voxel_downsample(&cloud, 0.05).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.points[0].position, Vec3::new(0.3, -0.2, 1.7));
    }

    #[test]
    fn centroid_and_earliest_timestamp() {
        let mut a = TimedPoint::new(Vec3::new(0.01, 0.0, 0.0), 0.07);
        a.normal = Some(Vec3::z());
        let b = TimedPoint::new(Vec3::new(0.03, 0.0, 0.0), 0.02);
        let out = voxel_downsample(&PointCloud::new(vec![a, b], "s"), 0.05).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points[0].position.x - 0.02).abs() < 1e-15);
        assert_eq!(out.points[0].timestamp, 0.02);
        assert!(out.points[0].normal.is_none());
    }
}
