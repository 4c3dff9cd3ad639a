//! Convex superquadric primitive: inside-outside function and surface sampling.
//!
//! The inside-outside function is
//!
//! ```text
//! f(p) = [ |x/a1|^(2/e2) + |y/a2|^(2/e2) ]^(e2/e1) + |z/a3|^(2/e1) - 1
//! ```
//!
//! Absolute values are taken before exponentiation so `f` is defined on all of
//! R^3 and even in each coordinate. `f < 0` inside, `0` on the surface.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::lie::{Pose, PoseRecord, Vec3};
use crate::polytope::ConvexPolytope;

/// Smallest accepted shape exponent; `2/e` exponents above 40 overflow quickly.
pub const MIN_EXPONENT: f64 = 0.05;
/// Largest exponent of the convex regime.
pub const MAX_EXPONENT: f64 = 2.0;

/// Default sampling resolution along each surface coordinate.
pub const DEFAULT_RESOLUTION: usize = 200;

const AZIMUTH_FINE: usize = 4096;
const ELEVATION_FINE: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SuperquadricRecord", into = "SuperquadricRecord")]
pub struct Superquadric {
    a: [f64; 3],
    e: [f64; 2],
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct SuperquadricRecord {
    a: [f64; 3],
    e: [f64; 2],
}

impl TryFrom<SuperquadricRecord> for Superquadric {
    type Error = GeometryError;
    fn try_from(r: SuperquadricRecord) -> Result<Self, Self::Error> {
        Superquadric::new(r.a[0], r.a[1], r.a[2], r.e[0], r.e[1])
    }
}

impl From<Superquadric> for SuperquadricRecord {
    fn from(s: Superquadric) -> Self {
        SuperquadricRecord { a: s.a, e: s.e }
    }
}

/// How surface samples are spread along each coordinate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Approximately equal arc length between neighbouring samples.
    #[default]
    EqualDistance,
    /// Uniform steps of the classical parametric angles.
    UniformAngle,
}

impl Superquadric {
    pub fn new(a1: f64, a2: f64, a3: f64, e1: f64, e2: f64) -> Result<Self, GeometryError> {
        let a = [a1, a2, a3];
        if !a.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(GeometryError::InvalidScale(a));
        }
        for e in [e1, e2] {
            if !(MIN_EXPONENT..=MAX_EXPONENT).contains(&e) {
                return Err(GeometryError::InvalidExponent(e));
            }
        }
        Ok(Self { a, e: [e1, e2] })
    }

    pub fn sphere(radius: f64) -> Result<Self, GeometryError> {
        Self::new(radius, radius, radius, 1.0, 1.0)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.a
    }

    pub fn exponents(&self) -> [f64; 2] {
        self.e
    }

    pub fn min_semi_axis(&self) -> f64 {
        self.a.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Radius of a ball centered at the origin that contains the shape.
    pub fn bounding_radius(&self) -> f64 {
        // Corners of the bounding box are the farthest any point can be.
        (self.a[0] * self.a[0] + self.a[1] * self.a[1] + self.a[2] * self.a[2]).sqrt()
    }

    /// Inside-outside function `f(p)`.
    pub fn implicit_value(&self, p: &Vec3) -> f64 {
        self.homogeneous(p) - 1.0
    }

    /// `f(p) + 1`, positively homogeneous of degree `2/e1`.
    fn homogeneous(&self, p: &Vec3) -> f64 {
        let [a1, a2, a3] = self.a;
        let [e1, e2] = self.e;
        let xy = (p.x / a1).abs().powf(2.0 / e2) + (p.y / a2).abs().powf(2.0 / e2);
        xy.powf(e2 / e1) + (p.z / a3).abs().powf(2.0 / e1)
    }

    /// Gradient of [`Self::implicit_value`].
    pub fn implicit_gradient(&self, p: &Vec3) -> Vec3 {
        let [a1, a2, a3] = self.a;
        let [e1, e2] = self.e;
        let (x, y, z) = ((p.x / a1).abs(), (p.y / a2).abs(), (p.z / a3).abs());
        let p2 = 2.0 / e2;
        let p1 = 2.0 / e1;
        let s = x.powf(p2) + y.powf(p2);
        let outer = if s > 0.0 {
            p1 * s.powf(e2 / e1 - 1.0)
        } else {
            0.0
        };
        let gx = outer * x.powf(p2 - 1.0) * p.x.signum() / a1;
        let gy = outer * y.powf(p2 - 1.0) * p.y.signum() / a2;
        let gz = p1 * z.powf(p1 - 1.0) * p.z.signum() / a3;
        Vec3::new(
            if x > 0.0 { gx } else { 0.0 },
            if y > 0.0 { gy } else { 0.0 },
            if z > 0.0 { gz } else { 0.0 },
        )
    }

    /// The surface point on the ray from the center through `dir`.
    pub fn radial_surface_point(&self, dir: &Vec3) -> Vec3 {
        let [a1, a2, a3] = self.a;
        let m = (dir.x / a1)
            .abs()
            .max((dir.y / a2).abs())
            .max((dir.z / a3).abs());
        if m == 0.0 {
            return Vec3::zeros();
        }
        let u = dir / m;
        u * self.homogeneous(&u).powf(-self.e[0] / 2.0)
    }

    /// Samples the surface on an `n_u x n_v` longitude/latitude grid.
    pub fn sample_surface(&self, n_u: usize, n_v: usize) -> Result<ConvexPolytope, GeometryError> {
        self.sample_surface_with(n_u, n_v, SamplingMode::EqualDistance)
    }

    /// [`Self::sample_surface`] with `n_u = n_v = resolution`, memoized for
    /// the lifetime of the process.
    pub fn sample_shared(&self, resolution: usize) -> Result<Arc<ConvexPolytope>, GeometryError> {
        type Key = ([u64; 5], usize);
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<ConvexPolytope>>>> = OnceLock::new();
        let [a1, a2, a3] = self.a;
        let [e1, e2] = self.e;
        let key = (
            [a1, a2, a3, e1, e2].map(f64::to_bits),
            resolution,
        );
        let cache = CACHE.get_or_init(Default::default);
        if let Some(p) = cache.lock().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        let poly = Arc::new(self.sample_surface(resolution, resolution)?);
        cache
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert(poly.clone());
        Ok(poly)
    }

    pub fn sample_surface_with(
        &self,
        n_u: usize,
        n_v: usize,
        mode: SamplingMode,
    ) -> Result<ConvexPolytope, GeometryError> {
        if n_u < 4 || n_v < 4 {
            return Err(GeometryError::Resolution { n_u, n_v });
        }
        let rings = n_v - 2;
        let mut vertices = Vec::with_capacity(2 + rings * n_u);
        vertices.push(Vec3::new(0.0, 0.0, -self.a[2]));
        match mode {
            SamplingMode::EqualDistance => {
                let azimuths = self.equal_distance_azimuths(n_u);
                // Meridian elevations depend on the equatorial radius of each column.
                let columns: Vec<Vec<f64>> = azimuths
                    .iter()
                    .map(|&phi| self.equal_distance_elevations(phi, n_v))
                    .collect();
                for r in 0..rings {
                    for (i, &phi) in azimuths.iter().enumerate() {
                        let psi = columns[i][r + 1];
                        let dir =
                            Vec3::new(psi.cos() * phi.cos(), psi.cos() * phi.sin(), psi.sin());
                        vertices.push(self.radial_surface_point(&dir));
                    }
                }
            }
            SamplingMode::UniformAngle => {
                let [a1, a2, a3] = self.a;
                let [e1, e2] = self.e;
                let fractions = elevation_fractions(n_v);
                for r in 0..rings {
                    let eta =
                        -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * fractions[r + 1];
                    for i in 0..n_u {
                        let omega = std::f64::consts::TAU * i as f64 / n_u as f64;
                        let ce = signed_pow(eta.cos(), e1);
                        vertices.push(Vec3::new(
                            a1 * ce * signed_pow(omega.cos(), e2),
                            a2 * ce * signed_pow(omega.sin(), e2),
                            a3 * signed_pow(eta.sin(), e1),
                        ));
                    }
                }
            }
        }
        vertices.push(Vec3::new(0.0, 0.0, self.a[2]));
        ConvexPolytope::from_grid(vertices, n_u, rings, Some(*self))
    }

    fn equatorial_radius(&self, phi: f64) -> f64 {
        superellipse_radius(phi, self.a[0], self.a[1], 2.0 / self.e[1])
    }

    fn equal_distance_azimuths(&self, n_u: usize) -> Vec<f64> {
        let curve = |t: f64| {
            let r = self.equatorial_radius(t);
            (r * t.cos(), r * t.sin())
        };
        let targets: Vec<f64> = (0..n_u).map(|k| k as f64 / n_u as f64).collect();
        invert_arc_length(0.0, std::f64::consts::TAU, AZIMUTH_FINE, &targets, curve)
    }

    fn equal_distance_elevations(&self, phi: f64, n_v: usize) -> Vec<f64> {
        let radius = self.equatorial_radius(phi);
        let a3 = self.a[2];
        let p1 = 2.0 / self.e[0];
        let curve = |t: f64| {
            let r = superellipse_radius(t, radius, a3, p1);
            (r * t.cos(), r * t.sin())
        };
        let targets = elevation_fractions(n_v);
        let h = std::f64::consts::FRAC_PI_2;
        invert_arc_length(-h, h, ELEVATION_FINE, &targets, curve)
    }
}

/// Pole-to-pole fractions with the equator always on a ring, so that the
/// equatorial tips of sharp shapes are sampled. An even count puts one extra
/// interval in the southern half.
fn elevation_fractions(n_v: usize) -> Vec<f64> {
    if n_v % 2 == 1 {
        return (0..n_v).map(|k| k as f64 / (n_v - 1) as f64).collect();
    }
    let lower = n_v / 2;
    let upper = n_v / 2 - 1;
    (0..=lower)
        .map(|k| 0.5 * k as f64 / lower as f64)
        .chain((1..=upper).map(|k| 0.5 + 0.5 * k as f64 / upper as f64))
        .collect()
}

fn signed_pow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

/// Polar radius of the superellipse `|x/a|^p + |y/b|^p = 1` at polar angle `t`.
fn superellipse_radius(t: f64, a: f64, b: f64, p: f64) -> f64 {
    let u = (t.cos() / a).abs();
    let v = (t.sin() / b).abs();
    let m = u.max(v);
    let s = (u / m).powf(p) + (v / m).powf(p);
    1.0 / (m * s.powf(1.0 / p))
}

/// Parameters at which the cumulative chord length of `curve` over `[t0, t1]`
/// reaches the given fractions of the total length.
fn invert_arc_length(
    t0: f64,
    t1: f64,
    fine: usize,
    fractions: &[f64],
    curve: impl Fn(f64) -> (f64, f64),
) -> Vec<f64> {
    let step = (t1 - t0) / fine as f64;
    let mut cumulative = Vec::with_capacity(fine + 1);
    cumulative.push(0.0);
    let mut prev = curve(t0);
    for k in 1..=fine {
        let cur = curve(t0 + step * k as f64);
        let seg = ((cur.0 - prev.0).powi(2) + (cur.1 - prev.1).powi(2)).sqrt();
        cumulative.push(cumulative[k - 1] + seg);
        prev = cur;
    }
    let total = cumulative[fine];
    let mut out = Vec::with_capacity(fractions.len());
    let mut k = 0;
    for &f in fractions {
        let target = f * total;
        while k < fine - 1 && cumulative[k + 1] < target {
            k += 1;
        }
        let span = cumulative[k + 1] - cumulative[k];
        let w = if span > 0.0 {
            ((target - cumulative[k]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(t0 + step * (k as f64 + w));
    }
    out
}

/// A superquadric placed in the world.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosedSuperquadric {
    pub shape: Superquadric,
    pub pose: Pose,
}

impl PosedSuperquadric {
    pub fn new(shape: Superquadric, pose: Pose) -> Self {
        Self { shape, pose }
    }

    pub fn contains(&self, world: &Vec3) -> bool {
        self.shape
            .implicit_value(&self.pose.inverse_transform_point(world))
            <= 0.0
    }

    /// World-aligned bounding box `(min, max)`.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let a = Vec3::from(self.shape.scale());
        let half = self.pose.rotation.abs() * a;
        (self.pose.translation - half, self.pose.translation + half)
    }
}

/// One entry of a serialized shape set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub a: [f64; 3],
    pub e: [f64; 2],
    pub pose: PoseRecord,
}

impl ShapeRecord {
    pub fn from_posed(s: &PosedSuperquadric) -> Self {
        Self {
            a: s.shape.scale(),
            e: s.shape.exponents(),
            pose: PoseRecord::from(&s.pose),
        }
    }

    pub fn to_posed(&self) -> Result<PosedSuperquadric, GeometryError> {
        let shape = Superquadric::new(self.a[0], self.a[1], self.a[2], self.e[0], self.e[1])?;
        Ok(PosedSuperquadric::new(shape, Pose::from(&self.pose)))
    }
}

/// `{"sqs": [...]}` shape-set file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapeSet {
    pub sqs: Vec<ShapeRecord>,
}

impl ShapeSet {
    pub fn from_posed(shapes: &[PosedSuperquadric]) -> Self {
        Self {
            sqs: shapes.iter().map(ShapeRecord::from_posed).collect(),
        }
    }

    pub fn to_posed(&self) -> Result<Vec<PosedSuperquadric>, GeometryError> {
        self.sqs.iter().map(ShapeRecord::to_posed).collect()
    }

    pub fn from_json(s: &str) -> Result<Self, GeometryError> {
        serde_json::from_str(s).map_err(|e| GeometryError::Format(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("shape sets always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn implicit_value_examples() {
        let unit = Superquadric::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(unit.implicit_value(&Vec3::new(1.0, 0.0, 0.0)), 0.0);
        assert_abs_diff_eq!(unit.implicit_value(&Vec3::zeros()), -1.0);
        let boxy = Superquadric::new(0.5, 1.5, 1.0, 0.2, 0.2).unwrap();
        // (0.55 / 0.5)^(2/0.2) - 1
        let expected = 1.1f64.powi(10) - 1.0;
        assert_abs_diff_eq!(
            boxy.implicit_value(&Vec3::new(0.55, 0.0, 0.0)),
            expected,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(expected, 1.5937424601, epsilon = 1e-9);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(matches!(
            Superquadric::new(0.0, 1.0, 1.0, 1.0, 1.0),
            Err(GeometryError::InvalidScale(_))
        ));
        assert!(matches!(
            Superquadric::new(1.0, 1.0, 1.0, 0.01, 1.0),
            Err(GeometryError::InvalidExponent(_))
        ));
        assert!(matches!(
            Superquadric::new(1.0, 1.0, 1.0, 1.0, 2.5),
            Err(GeometryError::InvalidExponent(_))
        ));
        assert!(Superquadric::new(1.0, 1.0, 1.0, 2.0, 0.05).is_ok());
        assert!(matches!(
            Superquadric::sphere(1.0).unwrap().sample_surface(3, 10),
            Err(GeometryError::Resolution { .. })
        ));
    }

    #[test]
    fn sphere_samples_lie_on_unit_sphere() {
        let poly = Superquadric::sphere(1.0)
            .unwrap()
            .sample_surface(200, 200)
            .unwrap();
        let worst = poly
            .vertices()
            .iter()
            .map(|v| (v.norm() - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "worst radial error {worst}");
    }

    #[test]
    fn boxy_samples_on_zero_level_set() {
        let sq = Superquadric::new(0.1, 0.1, 0.1, 0.3, 0.3).unwrap();
        let poly = sq.sample_surface(200, 200).unwrap();
        let worst = poly
            .vertices()
            .iter()
            .map(|v| sq.implicit_value(v).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "worst residual {worst}");
        let uniform = sq
            .sample_surface_with(50, 50, SamplingMode::UniformAngle)
            .unwrap();
        let worst = uniform
            .vertices()
            .iter()
            .map(|v| sq.implicit_value(v).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6);
    }

    #[test]
    fn equal_distance_spreads_spacing_more_evenly_than_uniform_angle() {
        let sq = Superquadric::new(0.5, 1.5, 1.0, 0.2, 0.2).unwrap();
        let spread = |mode| {
            let p = sq.sample_surface_with(64, 64, mode).unwrap();
            let eq: Vec<f64> = (0..64)
                .map(|i| {
                    let a = p.vertices()[1 + 31 * 64 + i];
                    let b = p.vertices()[1 + 31 * 64 + (i + 1) % 64];
                    (a - b).norm()
                })
                .collect();
            eq.iter().cloned().fold(0.0, f64::max)
                / eq.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        assert!(spread(SamplingMode::EqualDistance) < spread(SamplingMode::UniformAngle));
        assert!(spread(SamplingMode::EqualDistance) < 1.5);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sq = Superquadric::new(0.4, 0.7, 0.5, 0.6, 1.3).unwrap();
        let p = Vec3::new(0.31, -0.42, 0.27);
        let g = sq.implicit_gradient(&p);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let fd = (sq.implicit_value(&(p + e)) - sq.implicit_value(&(p - e))) / (2.0 * h);
            assert!(
                (fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                "axis {k}: {fd} vs {}",
                g[k]
            );
        }
    }

    #[test]
    fn shape_set_json_layout() {
        let text =
            r#"{"sqs":[{"a":[0.1,0.2,0.3],"e":[0.5,1.0],"pose":{"t":[1,2,3],"aa":[0,0,0.5]}}]}"#;
        let set = ShapeSet::from_json(text).unwrap();
        let posed = set.to_posed().unwrap();
        assert_eq!(posed[0].shape.scale(), [0.1, 0.2, 0.3]);
        let back = ShapeSet::from_json(&ShapeSet::from_posed(&posed).to_json()).unwrap();
        assert!((back.sqs[0].pose.aa[2] - 0.5).abs() < 1e-12);
        assert!(ShapeSet::from_json(
            r#"{"sqs":[{"a":[0.1,0.2,0.3],"e":[3.0,1.0],"pose":{"t":[0,0,0],"aa":[0,0,0]}}]}"#
        )
        .and_then(|s| s.to_posed())
        .is_err());
    }

    fn arb_sq() -> impl Strategy<Value = Superquadric> {
        (
            0.05..2.0f64,
            0.05..2.0f64,
            0.05..2.0f64,
            0.1..2.0f64,
            0.1..2.0f64,
        )
            .prop_map(|(a1, a2, a3, e1, e2)| Superquadric::new(a1, a2, a3, e1, e2).unwrap())
    }

    proptest! {
        #[test]
        fn scale_invariance(sq in arb_sq(), k in 0.1..10.0f64, x in -2.0..2.0f64, y in -2.0..2.0f64, z in -2.0..2.0f64) {
            let [a1, a2, a3] = sq.scale();
            let [e1, e2] = sq.exponents();
            let scaled = Superquadric::new(a1 * k, a2 * k, a3 * k, e1, e2).unwrap();
            let p = Vec3::new(x, y, z);
            let f = sq.implicit_value(&p);
            let g = scaled.implicit_value(&(p * k));
            prop_assert!((f - g).abs() <= 1e-9 * (1.0 + f.abs()));
        }

        #[test]
        fn sign_flip_symmetry(sq in arb_sq(), x in -2.0..2.0f64, y in -2.0..2.0f64, z in -2.0..2.0f64) {
            let f = sq.implicit_value(&Vec3::new(x, y, z));
            for s in [Vec3::new(-x, y, z), Vec3::new(x, -y, z), Vec3::new(x, y, -z)] {
                prop_assert_eq!(f, sq.implicit_value(&s));
            }
        }

        #[test]
        fn radial_projection_lands_on_surface(sq in arb_sq(), x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64) {
            prop_assume!(x.abs() + y.abs() + z.abs() > 1e-3);
            let p = sq.radial_surface_point(&Vec3::new(x, y, z));
            prop_assert!(sq.implicit_value(&p).abs() < 1e-9);
        }
    }
}
