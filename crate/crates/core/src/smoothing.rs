//! Pose gradients of the signed distance.
//!
//! The support map of a polytope is piecewise constant, so its Hessian is
//! replaced by a softmax-weighted surrogate over a local vertex neighborhood.
//! Differentiating the stationarity condition of the closest-point problem
//!
//! ```text
//! f(dp, x) = dp - s_A(u_A) + s_B(u_B) = 0
//! ```
//!
//! then gives the derivative of the separation vector `dp = p_A - p_B`.
//! Here `u_A = -len * n`, `u_B = len * n`, `n` is the unit normal pointing
//! from B towards A and `s_X` is the world-frame support map of body X.
//!
//! Body perturbations follow the convention of [`crate::lie`]: world-frame
//! translation and left-multiplied rotation about the body origin.

use nalgebra::{RowVector3, RowVector6};
use serde::{Deserialize, Serialize};

use crate::distance::{DistanceQuery, WitnessPair};
use crate::error::SmoothingError;
use crate::lie::{skew, Mat3, Vec3};
use crate::polytope::ConvexPolytope;

pub const DEFAULT_TEMPERATURE: f64 = 1e-8;
pub const DEFAULT_DEPTH: usize = 8;
/// Below this separation length the witness direction is not trusted.
pub const DISTANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub temperature: f64,
    pub neighborhood_depth: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            neighborhood_depth: DEFAULT_DEPTH,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<(), SmoothingError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(SmoothingError::Temperature(self.temperature));
        }
        if self.neighborhood_depth == 0 {
            return Err(SmoothingError::Depth);
        }
        Ok(())
    }
}

/// Gradient rows of one signed distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceJacobian {
    /// With respect to the pose of B relative to A, perturbed in A's frame.
    pub j_x: RowVector6<f64>,
    /// With respect to A's world pose.
    pub j_a: RowVector6<f64>,
    /// With respect to B's world pose.
    pub j_b: RowVector6<f64>,
    /// Unit normal from B towards A used for the gradient.
    pub normal: Vec3,
}

/// `(1/eps) (V diag(a) V^T - (V a)(V a)^T)` with `a = softmax(V^T x / eps)`,
/// evaluated as the `a`-weighted covariance of the points.
pub fn softmax_hessian(points: &[Vec3], x: &Vec3, eps: f64) -> Mat3 {
    let zmax = points
        .iter()
        .map(|v| v.dot(x))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut mean = Vec3::zeros();
    let weights: Vec<f64> = points
        .iter()
        .map(|v| {
            let w = ((v.dot(x) - zmax) / eps).exp();
            total += w;
            mean += w * v;
            w
        })
        .collect();
    mean /= total;
    let mut h = Mat3::zeros();
    for (v, w) in points.iter().zip(&weights) {
        if *w > 0.0 {
            let c = v - mean;
            h += (*w / total) * c * c.transpose();
        }
    }
    h / eps
}

/// Smoothed support-function Hessian of `shape` in its body frame.
///
/// `direction` is the support argument in the body frame. Polytopes without a
/// neighbor graph use every vertex.
pub fn hessian_surrogate(
    shape: &ConvexPolytope,
    witness_vertex: usize,
    direction: &Vec3,
    cfg: &SmoothingConfig,
) -> Result<Mat3, SmoothingError> {
    cfg.validate()?;
    if witness_vertex >= shape.len() {
        return Err(SmoothingError::InvalidVertex(witness_vertex));
    }
    if !(direction.norm_squared() > 0.0) {
        return Err(SmoothingError::ZeroDirection);
    }
    let points: Vec<Vec3> = if shape.has_graph() {
        shape
            .neighborhood(witness_vertex, cfg.neighborhood_depth)
            .into_iter()
            .map(|i| shape.vertices()[i])
            .collect()
    } else {
        shape.vertices().to_vec()
    };
    if points.len() < 2 {
        return Err(SmoothingError::NeighborhoodTooSmall(points.len()));
    }
    Ok(softmax_hessian(&points, direction, cfg.temperature))
}

/// `I + H_A + H_B`, the derivative of the stationarity condition with respect
/// to the separation vector, together with the normal and support argument
/// length it was evaluated at.
pub fn stationarity_jacobian(
    q: &DistanceQuery,
    w: &WitnessPair,
    cfg: &SmoothingConfig,
    fallback: Option<&Vec3>,
) -> Result<(Mat3, Mat3, Mat3, Vec3, f64), SmoothingError> {
    let (normal, len) = witness_normal(q, w, fallback)?;
    let (ra, rb) = (&q.pose_a.rotation, &q.pose_b.rotation);
    let u_a = -len * normal;
    let u_b = len * normal;
    let h_a = ra
        * hessian_surrogate(q.shape_a, w.vertex_a, &(ra.transpose() * u_a), cfg)?
        * ra.transpose();
    let h_b = rb
        * hessian_surrogate(q.shape_b, w.vertex_b, &(rb.transpose() * u_b), cfg)?
        * rb.transpose();
    let m = Mat3::identity() + h_a + h_b;
    Ok((m, h_a, h_b, normal, len))
}

/// Unit normal from B towards A and the support argument length.
///
/// At contact the separation vector carries no direction, so the fallback (or
/// the centroid difference) is used with a unit-length support argument.
fn witness_normal(
    q: &DistanceQuery,
    w: &WitnessPair,
    fallback: Option<&Vec3>,
) -> Result<(Vec3, f64), SmoothingError> {
    let len = w.separation.norm();
    if len > DISTANCE_FLOOR {
        let sign = if w.signed_distance < 0.0 { -1.0 } else { 1.0 };
        return Ok((sign * w.separation / len, len));
    }
    let guess = match fallback {
        Some(n) => *n,
        None => {
            q.pose_a.transform_point(&q.shape_a.centroid())
                - q.pose_b.transform_point(&q.shape_b.centroid())
        }
    };
    let g = guess.norm();
    if !(g > 0.0 && g.is_finite()) {
        return Err(SmoothingError::DegenerateWitness);
    }
    Ok((guess / g, 1.0))
}

pub fn pose_gradient(
    q: &DistanceQuery,
    w: &WitnessPair,
    cfg: &SmoothingConfig,
) -> Result<DistanceJacobian, SmoothingError> {
    pose_gradient_with_fallback(q, w, cfg, None)
}

/// [`pose_gradient`] with the normal to use when the witness points coincide,
/// typically the previous cycle's [`DistanceJacobian::normal`].
pub fn pose_gradient_with_fallback(
    q: &DistanceQuery,
    w: &WitnessPair,
    cfg: &SmoothingConfig,
    fallback: Option<&Vec3>,
) -> Result<DistanceJacobian, SmoothingError> {
    let (m, h_a, h_b, normal, len) = stationarity_jacobian(q, w, cfg, fallback)?;
    let y = m.cholesky().ok_or(SmoothingError::Singular)?.solve(&normal);
    if !y.iter().all(|c| c.is_finite()) {
        return Err(SmoothingError::Singular);
    }
    let yt: RowVector3<f64> = y.transpose();
    let lever_a = w.point_a - q.pose_a.translation;
    let lever_b = w.point_b - q.pose_b.translation;
    let (u_a, u_b) = (-len * normal, len * normal);

    // d(signed distance) = normal^T d(dp) = -y^T df.
    let df_b_rot = -skew(&lever_b) + h_b * skew(&u_b);
    let df_a_rot = skew(&lever_a) - h_a * skew(&u_a);
    let jb_t = -yt;
    let jb_r = -(yt * df_b_rot);
    let ja_t = yt;
    let ja_r = -(yt * df_a_rot);

    let r_a = q.pose_a.rotation;
    let jx_t = jb_t * r_a;
    let jx_r = jb_r * r_a;
    Ok(DistanceJacobian {
        j_x: row6(&jx_t, &jx_r),
        j_a: row6(&ja_t, &ja_r),
        j_b: row6(&jb_t, &jb_r),
        normal,
    })
}

fn row6(t: &RowVector3<f64>, r: &RowVector3<f64>) -> RowVector6<f64> {
    RowVector6::new(t[0], t[1], t[2], r[0], r[1], r[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::signed_distance;
    use crate::lie::Pose;
    use crate::superquadric::Superquadric;

    fn sphere() -> ConvexPolytope {
        Superquadric::sphere(1.0)
            .unwrap()
            .sample_surface(200, 200)
            .unwrap()
    }

    #[test]
    fn equal_logits_give_half_weights() {
        let v = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let x = Vec3::new(1.0, 1.0, 0.0);
        let eps = 0.37;
        let h = softmax_hessian(&v, &x, eps);
        // V (diag(a) - a a^T) V^T with a = (1/2, 1/2)
        let expected = Mat3::new(0.25, -0.25, 0.0, -0.25, 0.25, 0.0, 0.0, 0.0, 0.0) / eps;
        assert!((h - expected).abs().max() < 1e-12);

        let poly = ConvexPolytope::from_points(v.to_vec()).unwrap();
        let cfg = SmoothingConfig {
            temperature: eps,
            ..Default::default()
        };
        let h2 = hessian_surrogate(&poly, 0, &x, &cfg).unwrap();
        assert!((h2 - expected).abs().max() < 1e-12);
    }

    #[test]
    fn dominant_logit_saturates() {
        let v = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let h = softmax_hessian(&v, &Vec3::new(1.0, 0.0, 0.0), 1e-8);
        assert_eq!(h, Mat3::zeros());
    }

    #[test]
    fn surrogate_errors() {
        let poly = ConvexPolytope::from_points(vec![Vec3::x()]).unwrap();
        let cfg = SmoothingConfig::default();
        assert_eq!(
            hessian_surrogate(&poly, 0, &Vec3::x(), &cfg),
            Err(SmoothingError::NeighborhoodTooSmall(1))
        );
        assert_eq!(
            hessian_surrogate(&poly, 3, &Vec3::x(), &cfg),
            Err(SmoothingError::InvalidVertex(3))
        );
        assert_eq!(
            hessian_surrogate(&poly, 0, &Vec3::zeros(), &cfg),
            Err(SmoothingError::ZeroDirection)
        );
        let bad = SmoothingConfig {
            temperature: 0.0,
            ..cfg
        };
        assert_eq!(
            hessian_surrogate(&poly, 0, &Vec3::x(), &bad),
            Err(SmoothingError::Temperature(0.0))
        );
    }

    #[test]
    fn surrogate_is_symmetric_psd() {
        let poly = sphere();
        let cfg = SmoothingConfig {
            temperature: 1e-4,
            ..Default::default()
        };
        let x = Vec3::new(0.3, -0.5, 0.8);
        let v = poly.support_scan(&x);
        let h = hessian_surrogate(&poly, v, &x, &cfg).unwrap();
        assert!((h - h.transpose()).abs().max() < 1e-12);
        let eig = h.symmetric_eigen().eigenvalues;
        assert!(eig.min() > -1e-9, "{eig}");
    }

    #[test]
    fn separated_spheres() {
        let (a, b) = (sphere(), sphere());
        let q = DistanceQuery::new(
            &a,
            Pose::identity(),
            &b,
            Pose::from_translation(Vec3::new(3.0, 0.0, 0.0)),
        );
        let w = signed_distance(&q).unwrap();
        let g = pose_gradient(&q, &w, &SmoothingConfig::default()).unwrap();
        assert!((g.j_b[0] - 1.0).abs() < 0.01, "{}", g.j_b);
        assert!((g.j_a[0] + 1.0).abs() < 0.01, "{}", g.j_a);
        // Spinning either sphere about its center does not move its surface.
        for k in 3..6 {
            assert!(g.j_a[k].abs() < 1e-6 && g.j_b[k].abs() < 1e-6);
        }
        assert_eq!(g.j_x, g.j_b);
    }

    #[test]
    fn penetrating_spheres_sign() {
        let (a, b) = (sphere(), sphere());
        let q = DistanceQuery::new(
            &a,
            Pose::identity(),
            &b,
            Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)),
        );
        let w = signed_distance(&q).unwrap();
        assert!(w.signed_distance < 0.0);
        let g = pose_gradient(&q, &w, &SmoothingConfig::default()).unwrap();
        // Pulling B away along +x makes the distance less negative.
        assert!((g.j_b[0] - 1.0).abs() < 0.02, "{}", g.j_b);
        assert!((g.j_a[0] + 1.0).abs() < 0.02, "{}", g.j_a);
    }

    #[test]
    fn contact_uses_fallback() {
        let (a, b) = (sphere(), sphere());
        let q = DistanceQuery::new(
            &a,
            Pose::identity(),
            &b,
            Pose::from_translation(Vec3::new(2.0, 0.0, 0.0)),
        );
        let w = WitnessPair {
            signed_distance: 0.0,
            point_a: Vec3::new(1.0, 0.0, 0.0),
            point_b: Vec3::new(1.0, 0.0, 0.0),
            separation: Vec3::zeros(),
            vertex_a: a.nearest_vertex(&Vec3::new(1.0, 0.0, 0.0)),
            vertex_b: b.nearest_vertex(&Vec3::new(-1.0, 0.0, 0.0)),
            iterations: 0,
        };
        let cfg = SmoothingConfig::default();
        let g = pose_gradient(&q, &w, &cfg).unwrap();
        assert!((g.normal - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((g.j_b[0] - 1.0).abs() < 1e-6);
        let up = Vec3::new(0.0, 0.0, 1.0);
        let g = pose_gradient_with_fallback(&q, &w, &cfg, Some(&up)).unwrap();
        assert_eq!(g.normal, up);
    }

    #[test]
    fn relative_chart_rotates_with_a() {
        let (a, b) = (sphere(), sphere());
        let pose_a = Pose::from_parts(Vec3::new(0.2, -0.1, 0.3), Vec3::new(0.0, 0.0, 1.0));
        let pose_b = Pose::from_translation(Vec3::new(1.5, 2.5, 0.3));
        let q = DistanceQuery::new(&a, pose_a, &b, pose_b);
        let w = signed_distance(&q).unwrap();
        let g = pose_gradient(&q, &w, &SmoothingConfig::default()).unwrap();
        let jt = g.j_x.fixed_columns::<3>(0).transpose();
        let expect = pose_a.rotation.transpose() * g.j_b.fixed_columns::<3>(0).transpose();
        assert!((jt - expect).norm() < 1e-12);
    }
}
