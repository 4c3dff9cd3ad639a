#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqcbf::distance::{signed_distance, DistanceQuery, WitnessPair};
use sqcbf::filter::{ConstraintRow, RowKind, SafetyFilter};
use sqcbf::kinematics::RobotModel;
use sqcbf::lie::{Pose, Vec3};
use sqcbf::polytope::ConvexPolytope;
use sqcbf::sim::Scenario;
use sqcbf::superquadric::{PosedSuperquadric, Superquadric};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation(rng: &mut impl Rng) -> Vec3 {
    unit_vector(rng) * rng.gen_range(0.0..3.0)
}

/// Convex superquadric with semi-axes in `[0.04, 0.2]` and exponents in
/// `[e_lo, 2]`.
pub fn random_shape(rng: &mut impl Rng, e_lo: f64) -> Superquadric {
    Superquadric::new(
        rng.gen_range(0.04..0.2),
        rng.gen_range(0.04..0.2),
        rng.gen_range(0.04..0.2),
        rng.gen_range(e_lo..2.0),
        rng.gen_range(e_lo..2.0),
    )
    .unwrap()
}

pub struct Pair {
    pub a: PosedSuperquadric,
    pub b: PosedSuperquadric,
    pub pa: Arc<ConvexPolytope>,
    pub pb: Arc<ConvexPolytope>,
}

impl Pair {
    pub fn new(a: PosedSuperquadric, b: PosedSuperquadric, resolution: usize) -> Self {
        // Uncached: random shapes would only grow the shared cache.
        let pa = Arc::new(a.shape.sample_surface(resolution, resolution).unwrap());
        let pb = Arc::new(b.shape.sample_surface(resolution, resolution).unwrap());
        Self { a, b, pa, pb }
    }

    pub fn query(&self) -> DistanceQuery<'_> {
        DistanceQuery::new(&self.pa, self.a.pose, &self.pb, self.b.pose)
    }

    pub fn distance(&self) -> WitnessPair {
        signed_distance(&self.query()).unwrap()
    }

    pub fn with_b_pose(&self, pose: Pose) -> Self {
        Self {
            a: self.a,
            b: PosedSuperquadric::new(self.b.shape, pose),
            pa: self.pa.clone(),
            pb: self.pb.clone(),
        }
    }
}

/// Random pair whose mesh signed distance is `target` (within 1e-9), found by
/// bisection of the centroid offset along a random direction.
pub fn random_pair(rng: &mut impl Rng, target: f64, e_lo: f64, resolution: usize) -> Pair {
    let a = PosedSuperquadric::new(
        random_shape(rng, e_lo),
        Pose::from_parts(
            Vec3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ),
            random_rotation(rng),
        ),
    );
    let b_shape = random_shape(rng, e_lo);
    let b_rot = random_rotation(rng);
    let dir = unit_vector(rng);
    let mut pair = Pair::new(
        a,
        PosedSuperquadric::new(b_shape, Pose::from_parts(a.pose.translation, b_rot)),
        resolution,
    );
    let at = |pair: &Pair, s: f64| {
        pair.with_b_pose(Pose::from_parts(a.pose.translation + dir * s, b_rot))
    };
    let (mut lo, mut hi) = (0.0, a.shape.bounding_radius() + b_shape.bounding_radius() + target.abs() + 0.01);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if at(&pair, mid).distance().signed_distance < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    pair = at(&pair, 0.5 * (lo + hi));
    pair
}

/// Longest edge of the sampling graph, which bounds how far the polytope
/// surface can sit inside the smooth one.
pub fn longest_edge(poly: &ConvexPolytope) -> f64 {
    let v = poly.vertices();
    (0..v.len())
        .flat_map(|i| poly.neighbors(i).iter().map(move |&j| (i, j as usize)))
        .map(|(i, j)| (v[i] - v[j]).norm())
        .fold(0.0, f64::max)
}

pub fn scenario(name: &str) -> Scenario {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn random_q(rng: &mut impl Rng, model: &RobotModel) -> DVector<f64> {
    DVector::from_fn(model.dof(), |k, _| {
        model.home[k] + rng.gen_range(-1.2..1.2)
    })
}

pub fn random_command(r: &mut impl Rng, limits: &DVector<f64>, scale: f64) -> DVector<f64> {
    DVector::from_fn(limits.len(), |k, _| r.gen_range(-scale..scale) * limits[k])
}

/// Random feasible instance: rows built around a point strictly inside the box.
pub fn random_instance(
    r: &mut impl Rng,
    f: &SafetyFilter,
) -> (DVector<f64>, DMatrix<f64>, Vec<ConstraintRow>) {
    let n = f.model().dof();
    let limits = &f.model().velocity_limits;
    let task = DMatrix::from_fn(6, n, |_, _| r.gen_range(-1.0..1.0));
    let u_cmd = random_command(r, limits, 1.5);
    let inside = random_command(r, limits, 0.8);
    let m = r.gen_range(1..=50);
    let rows = (0..m)
        .map(|_| {
            let coeffs = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
            let rhs = coeffs.dot(&inside) - r.gen_range(0.0..0.5);
            ConstraintRow {
                coeffs,
                rhs,
                kind: RowKind::Env,
                pair: None,
                h: 0.0,
                d: 0.0,
            }
        })
        .collect();
    (u_cmd, task, rows)
}
