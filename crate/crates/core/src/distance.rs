//! Signed distance between posed convex polytopes.
//!
//! GJK computes the separation distance on the Minkowski difference
//! `M = A - B`; when the origin is enclosed, EPA expands the final simplex to
//! find the penetration depth. Witness points are recovered from the
//! barycentric coordinates of the closest feature.

use serde::{Deserialize, Serialize};

use crate::error::DistanceError;
use crate::lie::{Pose, Vec3};
use crate::polytope::ConvexPolytope;

/// GJK stops when the duality gap drops below this many meters.
pub const GJK_TOLERANCE: f64 = 1e-10;
pub const GJK_MAX_ITERATIONS: usize = 128;
/// EPA stops when the support along the closest face normal improves by less.
pub const EPA_TOLERANCE: f64 = 1e-8;
pub const EPA_MAX_FACES: usize = 256;
/// Below this separation the shapes are reported as touching.
pub const CONTACT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug)]
pub struct DistanceQuery<'a> {
    pub shape_a: &'a ConvexPolytope,
    pub pose_a: Pose,
    pub shape_b: &'a ConvexPolytope,
    pub pose_b: Pose,
}

impl<'a> DistanceQuery<'a> {
    pub fn new(
        shape_a: &'a ConvexPolytope,
        pose_a: Pose,
        shape_b: &'a ConvexPolytope,
        pose_b: Pose,
    ) -> Self {
        Self {
            shape_a,
            pose_a,
            shape_b,
            pose_b,
        }
    }

    pub fn swapped(&self) -> DistanceQuery<'a> {
        DistanceQuery {
            shape_a: self.shape_b,
            pose_a: self.pose_b,
            shape_b: self.shape_a,
            pose_b: self.pose_a,
        }
    }

    /// Cheap lower bound from the bounding spheres of both polytopes.
    pub fn lower_bound(&self) -> f64 {
        (self.pose_a.translation - self.pose_b.translation).norm()
            - self.shape_a.bounding_radius()
            - self.shape_b.bounding_radius()
    }
}

/// Closest (or deepest) points realizing the signed distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessPair {
    /// Positive when separated, negative when penetrating.
    pub signed_distance: f64,
    /// World-frame witness on A.
    pub point_a: Vec3,
    /// World-frame witness on B.
    pub point_b: Vec3,
    /// `point_a - point_b`
    pub separation: Vec3,
    /// Vertex of A nearest to `point_a`.
    pub vertex_a: usize,
    /// Vertex of B nearest to `point_b`.
    pub vertex_b: usize,
    pub iterations: usize,
}

impl WitnessPair {
    pub fn is_penetrating(&self) -> bool {
        self.signed_distance < 0.0
    }

    pub fn swapped(&self) -> WitnessPair {
        WitnessPair {
            signed_distance: self.signed_distance,
            point_a: self.point_b,
            point_b: self.point_a,
            separation: -self.separation,
            vertex_a: self.vertex_b,
            vertex_b: self.vertex_a,
            iterations: self.iterations,
        }
    }
}

/// Last support vertices of a pair, reused to warm-start the next query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SupportCache {
    pub vertex_a: Option<usize>,
    pub vertex_b: Option<usize>,
}

/// World-frame support point of a posed polytope and its vertex id.
pub fn support(
    shape: &ConvexPolytope,
    pose: &Pose,
    direction: &Vec3,
) -> Result<(Vec3, usize), DistanceError> {
    if !(direction.norm_squared() > 0.0) {
        return Err(DistanceError::ZeroDirection);
    }
    let local = pose.rotation.transpose() * direction;
    let id = shape.support_scan(&local);
    Ok((pose.transform_point(&shape.vertices()[id]), id))
}

pub fn signed_distance(q: &DistanceQuery) -> Result<WitnessPair, DistanceError> {
    signed_distance_cached(q, &mut SupportCache::default())
}

/// [`signed_distance`] with warm-started support queries.
pub fn signed_distance_cached(
    q: &DistanceQuery,
    cache: &mut SupportCache,
) -> Result<WitnessPair, DistanceError> {
    let mut m = Minkowski::new(q, *cache);
    let result = match gjk(&mut m) {
        GjkOutcome::Separated(simplex, iterations) => {
            Ok(witness_from_simplex(&m, &simplex, iterations))
        }
        GjkOutcome::Enclosing(simplex, iterations) => epa(&mut m, simplex, iterations),
        GjkOutcome::Exhausted(simplex, iterations) => Err(DistanceError::NotConverged {
            algorithm: "GJK",
            iterations,
            best: Box::new(witness_from_simplex(&m, &simplex, iterations)),
        }),
    };
    *cache = m.cache;
    result
}

#[derive(Clone, Copy, Debug)]
struct SupportPoint {
    w: Vec3,
    a: Vec3,
    b: Vec3,
    ia: usize,
    ib: usize,
}

struct Minkowski<'q, 'a> {
    q: &'q DistanceQuery<'a>,
    rot_a_t: nalgebra::Matrix3<f64>,
    rot_b_t: nalgebra::Matrix3<f64>,
    cache: SupportCache,
}

impl<'q, 'a> Minkowski<'q, 'a> {
    fn new(q: &'q DistanceQuery<'a>, cache: SupportCache) -> Self {
        Self {
            q,
            rot_a_t: q.pose_a.rotation.transpose(),
            rot_b_t: q.pose_b.rotation.transpose(),
            cache,
        }
    }

    /// Exact support of `A - B` along `d`.
    fn support(&mut self, d: &Vec3) -> SupportPoint {
        self.support_with(d, true)
    }

    /// Greedy support that may be slightly short of the true maximum.
    fn support_fast(&mut self, d: &Vec3) -> SupportPoint {
        self.support_with(d, false)
    }

    fn support_with(&mut self, d: &Vec3, exact: bool) -> SupportPoint {
        let (da, db) = (self.rot_a_t * d, self.rot_b_t * (-d));
        let (ia, ib) = if exact {
            (
                self.q.shape_a.support_climb(&da, self.cache.vertex_a),
                self.q.shape_b.support_climb(&db, self.cache.vertex_b),
            )
        } else {
            (
                self.q.shape_a.climb(&da, self.cache.vertex_a),
                self.q.shape_b.climb(&db, self.cache.vertex_b),
            )
        };
        self.cache.vertex_a = Some(ia);
        self.cache.vertex_b = Some(ib);
        let a = self
            .q
            .pose_a
            .transform_point(&self.q.shape_a.vertices()[ia]);
        let b = self
            .q
            .pose_b
            .transform_point(&self.q.shape_b.vertices()[ib]);
        SupportPoint {
            w: a - b,
            a,
            b,
            ia,
            ib,
        }
    }
}

#[derive(Clone, Debug)]
struct Simplex {
    pts: Vec<SupportPoint>,
    bary: Vec<f64>,
}

impl Simplex {
    fn closest(&self) -> Vec3 {
        self.pts.iter().zip(&self.bary).map(|(p, l)| p.w * *l).sum()
    }
}

enum GjkOutcome {
    Separated(Simplex, usize),
    Enclosing(Simplex, usize),
    Exhausted(Simplex, usize),
}

fn gjk(m: &mut Minkowski) -> GjkOutcome {
    let mut dir = m.q.pose_b.translation - m.q.pose_a.translation;
    if dir.norm_squared() < 1e-24 {
        dir = Vec3::x();
    }
    let first = m.support(&dir);
    let mut simplex = Simplex {
        pts: vec![first],
        bary: vec![1.0],
    };
    let mut v = first.w;
    for iter in 1..=GJK_MAX_ITERATIONS {
        let vv = v.norm_squared();
        if vv.sqrt() <= CONTACT_TOLERANCE {
            return GjkOutcome::Enclosing(simplex, iter);
        }
        // Upper bound |v| minus lower bound <v, w> / |v|.
        let gap = |w: &SupportPoint| (vv - v.dot(&w.w)) / vv.sqrt();
        let done = |w: &SupportPoint, s: &Simplex| {
            gap(w) <= GJK_TOLERANCE || s.pts.iter().any(|p| p.ia == w.ia && p.ib == w.ib)
        };
        let mut w = m.support_fast(&(-v));
        if done(&w, &simplex) {
            // Only the exact support can certify termination.
            w = m.support(&(-v));
            if done(&w, &simplex) {
                return GjkOutcome::Separated(simplex, iter);
            }
        }
        let mut candidate = simplex.pts.clone();
        candidate.push(w);
        let next = closest_on_simplex(&candidate);
        if next.pts.len() == 4 {
            return GjkOutcome::Enclosing(next, iter);
        }
        let nv = next.closest();
        if nv.norm_squared() >= vv {
            // No progress: numerical floor reached.
            return GjkOutcome::Separated(simplex, iter);
        }
        simplex = next;
        v = nv;
    }
    GjkOutcome::Exhausted(simplex, GJK_MAX_ITERATIONS)
}

/// Closest point of the simplex to the origin, reduced to the supporting feature.
fn closest_on_simplex(pts: &[SupportPoint]) -> Simplex {
    match pts.len() {
        1 => Simplex {
            pts: pts.to_vec(),
            bary: vec![1.0],
        },
        2 => closest_segment(pts[0], pts[1]),
        3 => closest_triangle(pts[0], pts[1], pts[2]),
        _ => closest_tetrahedron(pts[0], pts[1], pts[2], pts[3]),
    }
}

fn closest_segment(a: SupportPoint, b: SupportPoint) -> Simplex {
    let ab = b.w - a.w;
    let denom = ab.norm_squared();
    let t = if denom > 0.0 {
        (-a.w.dot(&ab) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    if t <= 0.0 {
        Simplex {
            pts: vec![a],
            bary: vec![1.0],
        }
    } else if t >= 1.0 {
        Simplex {
            pts: vec![b],
            bary: vec![1.0],
        }
    } else {
        Simplex {
            pts: vec![a, b],
            bary: vec![1.0 - t, t],
        }
    }
}

fn closest_triangle(a: SupportPoint, b: SupportPoint, c: SupportPoint) -> Simplex {
    let ab = b.w - a.w;
    let ac = c.w - a.w;
    let ap = -a.w;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return Simplex {
            pts: vec![a],
            bary: vec![1.0],
        };
    }
    let bp = -b.w;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return Simplex {
            pts: vec![b],
            bary: vec![1.0],
        };
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return Simplex {
            pts: vec![a, b],
            bary: vec![1.0 - t, t],
        };
    }
    let cp = -c.w;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return Simplex {
            pts: vec![c],
            bary: vec![1.0],
        };
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return Simplex {
            pts: vec![a, c],
            bary: vec![1.0 - t, t],
        };
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return Simplex {
            pts: vec![b, c],
            bary: vec![1.0 - t, t],
        };
    }
    let denom = va + vb + vc;
    if !(denom.abs() > 0.0) {
        // Degenerate triangle: fall back to its best edge.
        return [
            closest_segment(a, b),
            closest_segment(a, c),
            closest_segment(b, c),
        ]
        .into_iter()
        .min_by(|x, y| {
            x.closest()
                .norm_squared()
                .total_cmp(&y.closest().norm_squared())
        })
        .unwrap();
    }
    let v = vb / denom;
    let w = vc / denom;
    Simplex {
        pts: vec![a, b, c],
        bary: vec![1.0 - v - w, v, w],
    }
}

fn closest_tetrahedron(
    a: SupportPoint,
    b: SupportPoint,
    c: SupportPoint,
    d: SupportPoint,
) -> Simplex {
    let faces = [(a, b, c, d), (a, c, d, b), (a, d, b, c), (b, d, c, a)];
    let mut best: Option<Simplex> = None;
    let mut any_outside = false;
    for (p, q, r, opp) in faces {
        let n = (q.w - p.w).cross(&(r.w - p.w));
        let side_origin = (-p.w).dot(&n);
        let side_opp = (opp.w - p.w).dot(&n);
        // Flat tetrahedra count every face as outside.
        if side_origin * side_opp < 0.0 || side_opp == 0.0 {
            any_outside = true;
            let s = closest_triangle(p, q, r);
            let better = match &best {
                None => true,
                Some(bs) => s.closest().norm_squared() < bs.closest().norm_squared(),
            };
            if better {
                best = Some(s);
            }
        }
    }
    if !any_outside {
        let vol = |x: Vec3, y: Vec3, z: Vec3, o: Vec3| (y - x).cross(&(z - x)).dot(&(o - x));
        let total = vol(a.w, b.w, c.w, d.w);
        let origin = Vec3::zeros();
        let la = vol(origin, b.w, c.w, d.w) / total;
        let lb = vol(a.w, origin, c.w, d.w) / total;
        let lc = vol(a.w, b.w, origin, d.w) / total;
        let ld = 1.0 - la - lb - lc;
        return Simplex {
            pts: vec![a, b, c, d],
            bary: vec![la, lb, lc, ld],
        };
    }
    best.expect("at least one face is outside")
}

fn witness_from_simplex(m: &Minkowski, s: &Simplex, iterations: usize) -> WitnessPair {
    let pa: Vec3 = s.pts.iter().zip(&s.bary).map(|(p, l)| p.a * *l).sum();
    let pb: Vec3 = s.pts.iter().zip(&s.bary).map(|(p, l)| p.b * *l).sum();
    let sep = pa - pb;
    let mut dist = sep.norm();
    if dist <= CONTACT_TOLERANCE {
        dist = 0.0;
    }
    finish(m, pa, pb, dist, iterations)
}

fn finish(m: &Minkowski, pa: Vec3, pb: Vec3, signed: f64, iterations: usize) -> WitnessPair {
    let la = m.q.pose_a.inverse_transform_point(&pa);
    let lb = m.q.pose_b.inverse_transform_point(&pb);
    WitnessPair {
        signed_distance: signed,
        point_a: pa,
        point_b: pb,
        separation: pa - pb,
        vertex_a: m.q.shape_a.nearest_vertex(&la),
        vertex_b: m.q.shape_b.nearest_vertex(&lb),
        iterations,
    }
}

#[derive(Clone, Copy, Debug)]
struct Face {
    v: [usize; 3],
    normal: Vec3,
    dist: f64,
}

fn make_face(pts: &[SupportPoint], i: usize, j: usize, k: usize) -> Option<Face> {
    let n = (pts[j].w - pts[i].w).cross(&(pts[k].w - pts[i].w));
    let len = n.norm();
    if !(len > 1e-300) {
        return None;
    }
    let normal = n / len;
    Some(Face {
        v: [i, j, k],
        normal,
        dist: normal.dot(&pts[i].w),
    })
}

/// Grows a degenerate enclosing simplex into a tetrahedron with volume.
fn blow_up(m: &mut Minkowski, mut pts: Vec<SupportPoint>) -> Option<Vec<SupportPoint>> {
    let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
    let distinct =
        |pts: &[SupportPoint], p: &SupportPoint| pts.iter().all(|q| (q.w - p.w).norm() > 1e-12);
    if pts.len() == 1 {
        for ax in axes.iter().flat_map(|a| [*a, -*a]) {
            let p = m.support(&ax);
            if distinct(&pts, &p) {
                pts.push(p);
                break;
            }
        }
    }
    if pts.len() == 2 {
        let dir = (pts[1].w - pts[0].w).normalize();
        let seed = axes[dir.iamin()];
        let u = dir.cross(&seed).normalize();
        let rot = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(dir),
            std::f64::consts::FRAC_PI_3,
        );
        let mut probe = u;
        for _ in 0..6 {
            let p = m.support(&probe);
            if (p.w - pts[0].w).cross(&dir).norm() > 1e-12 {
                pts.push(p);
                break;
            }
            probe = rot * probe;
        }
    }
    if pts.len() == 3 {
        let n = (pts[1].w - pts[0].w).cross(&(pts[2].w - pts[0].w));
        if n.norm() < 1e-300 {
            return None;
        }
        let p = m.support(&n);
        let q = m.support(&(-n));
        let dp = (p.w - pts[0].w).dot(&n).abs();
        let dq = (q.w - pts[0].w).dot(&n).abs();
        pts.push(if dp >= dq { p } else { q });
    }
    if pts.len() != 4 {
        return None;
    }
    let vol = (pts[1].w - pts[0].w)
        .cross(&(pts[2].w - pts[0].w))
        .dot(&(pts[3].w - pts[0].w));
    if vol.abs() < 1e-18 {
        return None;
    }
    // Origin must be inside (or on) the tetrahedron for EPA.
    let s = closest_tetrahedron(pts[0], pts[1], pts[2], pts[3]);
    if s.pts.len() == 4 || s.closest().norm() <= CONTACT_TOLERANCE {
        Some(pts)
    } else {
        None
    }
}

fn epa(
    m: &mut Minkowski,
    simplex: Simplex,
    gjk_iters: usize,
) -> Result<WitnessPair, DistanceError> {
    let touching = |m: &Minkowski, s: &Simplex| witness_from_simplex(m, s, gjk_iters);
    let mut pts = if simplex.pts.len() == 4 {
        simplex.pts.clone()
    } else {
        match blow_up(m, simplex.pts.clone()) {
            Some(p) => p,
            None => return Ok(touching(m, &simplex)),
        }
    };
    // Orient the initial tetrahedron outward.
    let centroid: Vec3 = pts.iter().map(|p| p.w).sum::<Vec3>() / 4.0;
    let mut faces: Vec<Face> = Vec::with_capacity(EPA_MAX_FACES + 8);
    for (i, j, k) in [(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2)] {
        let Some(mut f) = make_face(&pts, i, j, k) else {
            return Ok(touching(m, &simplex));
        };
        if f.normal.dot(&(pts[i].w - centroid)) < 0.0 {
            f = make_face(&pts, i, k, j).unwrap();
        }
        faces.push(f);
    }

    let mut iterations = gjk_iters;
    loop {
        iterations += 1;
        let (best_idx, best) = faces
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.dist.total_cmp(&y.1.dist))
            .map(|(i, f)| (i, *f))
            .expect("polytope has faces");
        let done = |w: &SupportPoint| {
            best.normal.dot(&w.w) - best.dist <= EPA_TOLERANCE
                || pts.iter().any(|p| p.ia == w.ia && p.ib == w.ib)
        };
        let mut w = m.support_fast(&best.normal);
        if done(&w) {
            w = m.support(&best.normal);
            if done(&w) {
                return Ok(epa_witness(m, &pts, &best, iterations));
            }
        }
        if faces.len() >= EPA_MAX_FACES {
            return Err(DistanceError::NotConverged {
                algorithm: "EPA",
                iterations,
                best: Box::new(epa_witness(m, &pts, &best, iterations)),
            });
        }
        let new_idx = pts.len();
        pts.push(w);
        // Remove every face that sees the new point and stitch the horizon.
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        let mut kept = Vec::with_capacity(faces.len() + 4);
        for (fi, f) in faces.iter().enumerate() {
            let visible = fi == best_idx || f.normal.dot(&(w.w - pts[f.v[0]].w)) > 1e-14;
            if visible {
                for e in [(f.v[0], f.v[1]), (f.v[1], f.v[2]), (f.v[2], f.v[0])] {
                    if let Some(pos) = horizon.iter().position(|&(a, b)| a == e.1 && b == e.0) {
                        horizon.swap_remove(pos);
                    } else {
                        horizon.push(e);
                    }
                }
            } else {
                kept.push(*f);
            }
        }
        for (a, b) in horizon {
            if let Some(f) = make_face(&pts, a, b, new_idx) {
                kept.push(f);
            }
        }
        faces = kept;
        if faces.is_empty() {
            return Ok(epa_witness(m, &pts, &best, iterations));
        }
    }
}

fn epa_witness(m: &Minkowski, pts: &[SupportPoint], face: &Face, iterations: usize) -> WitnessPair {
    let [i, j, k] = face.v;
    let p = face.normal * face.dist;
    let (a, b, c) = (pts[i].w, pts[j].w, pts[k].w);
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let denom = d00 * d11 - d01 * d01;
    let (l1, l2) = if denom.abs() > 0.0 {
        (
            (d11 * d20 - d01 * d21) / denom,
            (d00 * d21 - d01 * d20) / denom,
        )
    } else {
        (0.0, 0.0)
    };
    let l0 = 1.0 - l1 - l2;
    let pa = pts[i].a * l0 + pts[j].a * l1 + pts[k].a * l2;
    let pb = pts[i].b * l0 + pts[j].b * l1 + pts[k].b * l2;
    let depth = face.dist.max(0.0);
    let signed = if depth <= CONTACT_TOLERANCE {
        0.0
    } else {
        -depth
    };
    finish(m, pa, pb, signed, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superquadric::Superquadric;

    fn sphere(n: usize) -> ConvexPolytope {
        Superquadric::sphere(1.0)
            .unwrap()
            .sample_surface(n, n)
            .unwrap()
    }

    #[test]
    fn support_examples() {
        let s = sphere(200);
        // Vertex spacing is about 2pi/200, so the nearest sample is within 0.02.
        let (p, _) = support(&s, &Pose::identity(), &Vec3::x()).unwrap();
        assert!((p - Vec3::x()).norm() < 0.02 && p.x > 1.0 - 1e-3);
        let (q, _) = support(
            &s,
            &Pose::from_translation(Vec3::new(2.0, 0.0, 0.0)),
            &Vec3::x(),
        )
        .unwrap();
        assert!((q - p - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        let corner = Superquadric::new(0.3, 0.3, 0.3, 0.2, 0.2)
            .unwrap()
            .sample_surface(200, 200)
            .unwrap();
        let d = Vec3::new(1.0, 1.0, 1.0).normalize();
        let (c, id) = support(&corner, &Pose::identity(), &d).unwrap();
        assert!(c.x > 0.2 && c.y > 0.2 && c.z > 0.2);
        let brute = (0..corner.len())
            .max_by(|&i, &j| {
                corner.vertices()[i]
                    .dot(&d)
                    .total_cmp(&corner.vertices()[j].dot(&d))
                    .then(j.cmp(&i))
            })
            .unwrap();
        assert_eq!(id, brute);
        assert!(matches!(
            support(&s, &Pose::identity(), &Vec3::zeros()),
            Err(DistanceError::ZeroDirection)
        ));
    }

    #[test]
    fn support_breaks_ties_by_lowest_id() {
        let pts = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(1.0, -1.0, 0.0),
        ];
        let poly = ConvexPolytope::from_points(pts).unwrap();
        let (_, id) = support(&poly, &Pose::identity(), &Vec3::x()).unwrap();
        assert_eq!(id, 0);
    }

    #[test]
    fn separated_spheres() {
        let s = sphere(200);
        let q = DistanceQuery::new(
            &s,
            Pose::identity(),
            &s,
            Pose::from_translation(Vec3::new(3.0, 0.0, 0.0)),
        );
        let w = signed_distance(&q).unwrap();
        // Chord error of the sampled unit sphere is below 1e-4.
        assert!(
            (w.signed_distance - 1.0).abs() < 2e-4,
            "{}",
            w.signed_distance
        );
        assert!((w.separation.norm() - w.signed_distance).abs() < 1e-9);
        assert!((w.point_a - Vec3::x()).norm() < 0.02);
    }

    #[test]
    fn penetrating_spheres() {
        let s = sphere(200);
        let q = DistanceQuery::new(
            &s,
            Pose::identity(),
            &s,
            Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)),
        );
        let w = signed_distance(&q).unwrap();
        assert!(
            (w.signed_distance + 1.0).abs() < 2e-4,
            "{}",
            w.signed_distance
        );
        assert!((w.separation.norm() + w.signed_distance).abs() < 1e-6);
        // Off-axis penetration exercises EPA without a symmetric simplex.
        let q = DistanceQuery::new(
            &s,
            Pose::identity(),
            &s,
            Pose::from_translation(Vec3::new(0.9, 0.7, -0.4)),
        );
        let w = signed_distance(&q).unwrap();
        let expected = Vec3::new(0.9, 0.7, -0.4).norm() - 2.0;
        assert!(
            (w.signed_distance - expected).abs() < 2e-4,
            "{} vs {expected}",
            w.signed_distance
        );
    }

    #[test]
    fn touching_reports_near_zero() {
        let s = sphere(200);
        let gap = s.vertices().iter().map(|v| v.x).fold(f64::MIN, f64::max);
        let q = DistanceQuery::new(
            &s,
            Pose::identity(),
            &s,
            Pose::from_translation(Vec3::new(2.0 * gap, 0.0, 0.0)),
        );
        let w = signed_distance(&q).unwrap();
        assert!(w.signed_distance.abs() < 1e-8, "{}", w.signed_distance);
    }

    #[test]
    fn symmetric_under_swap() {
        let a = Superquadric::new(0.3, 0.2, 0.4, 0.4, 0.8)
            .unwrap()
            .sample_surface(100, 100)
            .unwrap();
        let b = Superquadric::new(0.25, 0.35, 0.2, 1.2, 0.5)
            .unwrap()
            .sample_surface(100, 100)
            .unwrap();
        let pa = Pose::from_parts(Vec3::new(0.1, -0.2, 0.3), Vec3::new(0.2, 0.4, -0.1));
        let pb = Pose::from_parts(Vec3::new(0.8, 0.3, 0.1), Vec3::new(-0.3, 0.1, 0.7));
        let ab = signed_distance(&DistanceQuery::new(&a, pa, &b, pb)).unwrap();
        let ba = signed_distance(&DistanceQuery::new(&b, pb, &a, pa)).unwrap();
        assert!((ab.signed_distance - ba.signed_distance).abs() < 1e-9);
        assert!((ab.point_a - ba.point_b).norm() < 1e-6);
    }
}
