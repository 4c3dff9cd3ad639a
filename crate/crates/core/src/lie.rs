//! Rigid-body helpers: poses, the SO(3) exponential map and its left Jacobian.
//!
//! Poses use a 6-vector chart `[translation; axis-angle]` when they cross a
//! file or wire boundary. Perturbations inside the solver are always *world
//! frame, left-multiplied* rotations about the body's own origin:
//! `R <- Exp(dtheta) * R`, `t <- t + dt`.

use nalgebra::{Matrix3, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix with `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn so3_exp(phi: &Vec3) -> Mat3 {
    Rotation3::from_scaled_axis(*phi).into_inner()
}

/// Axis-angle of a rotation matrix. Angle lies in `[0, pi]`.
pub fn so3_log(r: &Mat3) -> Vec3 {
    // sin(theta) * axis; the angle comes from atan2, which stays accurate at
    // both ends where acos of the trace does not.
    let v = 0.5 * Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = v.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        return v;
    }
    if c > -0.5 {
        return v * (theta / s);
    }
    // Near pi the antisymmetric part vanishes: (R + R^T)/2 - cI = (1 - c) a a^T.
    let b = 0.5 * (r + r.transpose()) - Mat3::identity() * c;
    let k = (0..3)
        .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
        .expect("three columns");
    let mut axis = b.column(k).into_owned();
    axis /= axis.norm();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Left Jacobian of SO(3): `Exp(phi + d) ~= Exp(J_l(phi) d) Exp(phi)`.
pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Mat3::identity() + 0.5 * k + k * k / 6.0;
    }
    let t2 = theta * theta;
    Mat3::identity() + (1.0 - theta.cos()) / t2 * k + (theta - theta.sin()) / (t2 * theta) * k * k
}

/// Inverse of [`left_jacobian`]. Singular at `|phi| = 2 pi`; callers restrict
/// the angle to `< pi`.
pub fn left_jacobian_inverse(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Mat3::identity() - 0.5 * k + k * k / 12.0;
    }
    let t2 = theta * theta;
    let coeff = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Mat3::identity() - 0.5 * k + coeff * k * k
}

/// Rigid transform `p_world = rotation * p_body + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: Mat3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: Mat3::identity(),
        }
    }

    /// Builds a pose, checking that `rotation` is a proper rotation within 1e-9.
    pub fn new(translation: Vec3, rotation: Mat3) -> Result<Self, GeometryError> {
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let ortho = (rotation.transpose() * rotation - Mat3::identity())
            .abs()
            .max();
        let det = rotation.determinant();
        if !(ortho <= 1e-9) || (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidRotation {
                ortho_error: ortho,
                det,
            });
        }
        Ok(Self {
            translation,
            rotation,
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            translation: t,
            rotation: Mat3::identity(),
        }
    }

    pub fn from_parts(t: Vec3, axis_angle: Vec3) -> Self {
        Self {
            translation: t,
            rotation: so3_exp(&axis_angle),
        }
    }

    /// 6-vector chart `[t; axis-angle]`.
    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self::from_parts(x.fixed_rows::<3>(0).into(), x.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let aa = so3_log(&self.rotation);
        Vector6::new(
            self.translation.x,
            self.translation.y,
            self.translation.z,
            aa.x,
            aa.y,
            aa.z,
        )
    }

    pub fn axis_angle(&self) -> Vec3 {
        so3_log(&self.rotation)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.rotation * other.translation + self.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            translation: -(rt * self.translation),
            rotation: rt,
        }
    }

    /// World-frame perturbation about the body origin, see module docs.
    pub fn perturbed(&self, delta: &Vector6<f64>) -> Pose {
        let dt: Vec3 = delta.fixed_rows::<3>(0).into();
        let dr: Vec3 = delta.fixed_rows::<3>(3).into();
        Pose {
            translation: self.translation + dt,
            rotation: so3_exp(&dr) * self.rotation,
        }
    }

    /// Re-orthonormalizes an accumulated rotation.
    pub fn renormalized(&self) -> Pose {
        let r = Rotation3::from_matrix_eps(&self.rotation, 1e-12, 20, Rotation3::identity());
        Pose {
            translation: self.translation,
            rotation: r.into_inner(),
        }
    }
}

/// Serialized pose: translation and axis-angle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub t: [f64; 3],
    pub aa: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let aa = p.axis_angle();
        Self {
            t: [p.translation.x, p.translation.y, p.translation.z],
            aa: [aa.x, aa.y, aa.z],
        }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(r: &PoseRecord) -> Self {
        Pose::from_parts(Vec3::from(r.t), Vec3::from(r.aa))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn left_jacobian_matches_exp_perturbation() {
        let phi = Vec3::new(0.4, -0.9, 1.3);
        let d = Vec3::new(1e-6, -2e-6, 0.5e-6);
        let lhs = so3_exp(&(phi + d));
        let rhs = so3_exp(&(left_jacobian(&phi) * d)) * so3_exp(&phi);
        assert!((lhs - rhs).abs().max() < 1e-11);
        let prod = left_jacobian(&phi) * left_jacobian_inverse(&phi);
        assert_relative_eq!(prod, Mat3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        let phi = Vec3::new(1e-9, 0.0, 2e-9);
        assert_relative_eq!(
            left_jacobian_inverse(&phi),
            Mat3::identity(),
            epsilon = 1e-8
        );
        let phi2 = Vec3::new(2e-8, 0.0, 0.0);
        assert_relative_eq!(
            left_jacobian(&phi2),
            left_jacobian(&(phi2 * 1.01)),
            epsilon = 1e-8
        );
    }

    #[test]
    fn pose_vector_round_trip_below_pi() {
        let x = Vector6::new(0.1, -0.2, 0.3, 0.5, 1.0, -2.0);
        assert!(x.fixed_rows::<3>(3).norm() < std::f64::consts::PI);
        let back = Pose::from_vector(&x).to_vector();
        assert_relative_eq!(x, back, epsilon = 1e-12);
    }

    #[test]
    fn log_is_accurate_at_both_ends() {
        let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
        for theta in [1e-12, 1e-9, 2e-6, 1e-3, 1.0, 2.5, 3.1, 3.14159] {
            let back = so3_log(&so3_exp(&(axis * theta)));
            assert!(
                (back - axis * theta).norm() <= 1e-12 * theta.max(1e-3),
                "theta {theta}: {back:?}"
            );
        }
    }

    #[test]
    fn rejects_improper_rotation() {
        let mut r = Mat3::identity();
        r[(2, 2)] = -1.0;
        assert!(Pose::new(Vec3::zeros(), r).is_err());
        assert!(Pose::new(Vec3::zeros(), so3_exp(&Vec3::new(0.1, 0.2, 0.3))).is_ok());
    }

    #[test]
    fn compose_and_inverse() {
        let a = Pose::from_parts(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.3, 0.1, -0.2));
        let id = a.compose(&a.inverse());
        assert_relative_eq!(id.translation, Vec3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(id.rotation, Mat3::identity(), epsilon = 1e-12);
    }
}
