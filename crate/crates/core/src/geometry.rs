//! Rigid-body primitives: 3-vectors, SE(3) poses and axis-angle helpers.

use std::ops::Mul;

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Below this rotation-vector norm a rotation is treated as the identity.
pub const SMALL_ANGLE: f64 = 1e-12;

/// Rotation by the axis-angle vector `rho` (angle `|rho|` about `rho/|rho|`).
pub fn rotation_from_vector(rho: &Vec3) -> UnitQuaternion<f64> {
    let angle = rho.norm();
    if angle < SMALL_ANGLE {
        UnitQuaternion::identity()
    } else {
        UnitQuaternion::from_axis_angle(&Unit::new_unchecked(rho / angle), angle)
    }
}

/// Applies the rotation parametrised by the axis-angle vector `rho` to `p`.
pub fn rotate(p: &Vec3, rho: &Vec3) -> Vec3 {
    let angle = rho.norm();
    if angle < SMALL_ANGLE {
        return *p;
    }
    // Rodrigues' formula keeps this path cheap for the weighting inner loops.
    let k = rho / angle;
    let (s, c) = angle.sin_cos();
    p * c + k.cross(p) * s + k * (k.dot(p) * (1.0 - c))
}

/// Rigid transformation `x -> R x + t` with the rotation stored as a unit quaternion.
///
/// Serialised as `translation` plus `quaternion` (`[w, x, y, z]`); a
/// `rotation_vector` (axis-angle, rad) is accepted in place of the quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRepr", try_from = "PoseRepr")]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(UnitQuaternion::identity(), Vec3::new(x, y, z))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle),
            Vec3::zeros(),
        )
    }

    /// Pose from an axis-angle rotation vector and a translation.
    pub fn from_vectors(rho: &Vec3, translation: &Vec3) -> Self {
        Self::new(rotation_from_vector(rho), *translation)
    }

    /// Builds a pose from `(w, x, y, z)` quaternion components, normalising them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64, translation: Vec3) -> Self {
        Self::new(
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
            translation,
        )
    }

    /// Applies `b` first, then `self`.
    pub fn compose(&self, b: &Pose) -> Pose {
        let rotation = renormalize(self.rotation * b.rotation);
        let translation = self.rotation * b.translation + self.translation;
        Pose::new(rotation, translation)
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.inverse();
        Pose::new(rotation, -(rotation * self.translation))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Axis-angle vector of the rotation part.
    pub fn rotation_vector(&self) -> Vec3 {
        self.rotation.scaled_axis()
    }

    /// Geodesic angle of the rotation part, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Translation interpolated linearly and rotation spherically; `alpha` in `[0, 1]`.
    pub fn interpolate(&self, other: &Pose, alpha: f64) -> Pose {
        let translation = self.translation + (other.translation - self.translation) * alpha;
        let rotation = self
            .rotation
            .try_slerp(&other.rotation, alpha, 1e-15)
            .unwrap_or(self.rotation);
        Pose::new(renormalize(rotation), translation)
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.wxyz().iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    #[serde(default)]
    translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quaternion: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation_vector: Option<[f64; 3]>,
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        Self {
            translation: p.translation.into(),
            quaternion: Some(p.wxyz()),
            rotation_vector: None,
        }
    }
}

impl TryFrom<PoseRepr> for Pose {
    type Error = String;

    fn try_from(r: PoseRepr) -> Result<Self, String> {
        let translation = Vec3::from(r.translation);
        match (r.quaternion, r.rotation_vector) {
            (Some(_), Some(_)) => Err("give either `quaternion` or `rotation_vector`, not both".into()),
            (Some([w, x, y, z]), None) => {
                let norm = (w * w + x * x + y * y + z * z).sqrt();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err("quaternion must be finite and non-zero".into());
                }
                Ok(Pose::from_wxyz(w, x, y, z, translation))
            }
            (None, Some(rv)) => Ok(Pose::from_vectors(&Vec3::from(rv), &translation)),
            (None, None) => Ok(Pose::new(UnitQuaternion::identity(), translation)),
        }
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(q.into_inner())
}

/// Translation distance and rotation angle between two poses.
pub fn pose_difference(a: &Pose, b: &Pose) -> (f64, f64) {
    let delta = a.inverse().compose(b);
    (
        (a.translation - b.translation).norm(),
        delta.rotation_angle(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn identity_composition() {
        let id = Pose::identity();
        assert_eq!(id.compose(&id), id);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = Pose::from_vectors(&Vec3::new(0.3, -0.2, 1.1), &Vec3::new(1.0, 2.0, -3.0));
        let r = t.compose(&t.inverse());
        assert!(r.translation.norm() < 1e-12);
        assert!(r.rotation_angle() < 1e-12);
    }

    #[test]
    fn compose_applies_right_operand_first() {
        let a = Pose::from_translation(1.0, 0.0, 0.0);
        let b = Pose::rot_z(FRAC_PI_2);
        let p = a.compose(&b).transform_point(&Vec3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(p, Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn transform_point_cases() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().transform_point(&p), p);

        let r = Pose::rot_z(PI).transform_point(&Vec3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(r, Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);

        let t = Pose::new(Pose::rot_z(FRAC_PI_2).rotation, Vec3::new(0.0, 0.0, 5.0));
        assert_relative_eq!(
            t.transform_point(&Vec3::new(1.0, 0.0, 0.0)),
            Vec3::new(0.0, 1.0, 5.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rodrigues_matches_quaternion() {
        let rho = Vec3::new(0.4, -1.2, 0.7);
        let p = Vec3::new(-2.0, 0.5, 3.0);
        assert_relative_eq!(rotate(&p, &rho), rotation_from_vector(&rho) * p, epsilon = 1e-12);
        assert_eq!(rotate(&p, &Vec3::zeros()), p);
    }

    #[test]
    fn slerp_midpoint() {
        let a = Pose::identity();
        let b = Pose::rot_z(FRAC_PI_2);
        let mid = a.interpolate(&b, 0.5);
        assert_relative_eq!(mid.rotation_angle(), FRAC_PI_2 / 2.0, epsilon = 1e-12);
    }
}
