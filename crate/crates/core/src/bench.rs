//! Cycle-time benchmark and gradient-accuracy study.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{signed_distance, signed_distance_cached, DistanceQuery, SupportCache};
use crate::error::{FilterError, GeometryError};
use crate::lie::{so3_exp, Mat3, Pose, Vec3};
use crate::oracle::{sdf_reference, sdf_reference_gradient};
use crate::polytope::ConvexPolytope;
use crate::smoothing::{pose_gradient, pose_gradient_with_fallback, SmoothingConfig};
use crate::superquadric::{PosedSuperquadric, Superquadric};

/// Distinct shapes the synthetic pairs draw from.
const SHAPE_POOL: usize = 16;

struct BenchPair {
    a: usize,
    b: usize,
    pose_a: Pose,
    pose_b: Pose,
    /// Per-cycle drift of `b`, world frame.
    drift: Vec3,
    cache: SupportCache,
    normal: Option<Vec3>,
}

/// Random superquadric pairs at separations typical of a filter cycle.
pub struct PairSet {
    shapes: Vec<Arc<ConvexPolytope>>,
    pairs: Vec<BenchPair>,
    smoothing: SmoothingConfig,
}

impl PairSet {
    pub fn random(count: usize, resolution: usize, seed: u64) -> Result<Self, GeometryError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape_rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let shapes = (0..SHAPE_POOL)
            .map(|_| {
                let mut r = || shape_rng.gen_range(0.03..0.12);
                let sq = Superquadric::new(
                    r(),
                    r(),
                    r(),
                    shape_rng.gen_range(0.2..1.5),
                    shape_rng.gen_range(0.2..1.5),
                )?;
                sq.sample_shared(resolution)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut pairs = Vec::with_capacity(count);
        while pairs.len() < count {
            let a = rng.gen_range(0..SHAPE_POOL);
            let b = rng.gen_range(0..SHAPE_POOL);
            let mut axis = || Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 2.0 - Vec3::repeat(1.0);
            let pose_a = Pose::from_parts(Vec3::zeros(), axis() * PI);
            let dir = axis();
            let rot = axis() * PI;
            let drift = axis() * 1e-4;
            if dir.norm() < 1e-3 {
                continue;
            }
            let pose_b = Pose::from_parts(dir.normalize() * rng.gen_range(0.25..0.4), rot);
            pairs.push(BenchPair {
                a,
                b,
                pose_a,
                pose_b,
                drift,
                cache: SupportCache::default(),
                normal: None,
            });
        }
        Ok(Self {
            shapes,
            pairs,
            smoothing: SmoothingConfig::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Distance and gradient for every pair, returning the summed distance
    /// so the work cannot be optimized away.
    pub fn cycle(&mut self, pool: &rayon::ThreadPool, step: usize) -> f64 {
        let shapes = &self.shapes;
        let smoothing = &self.smoothing;
        pool.install(|| {
            self.pairs
                .par_iter_mut()
                .map(|p| {
                    let pose_b = Pose {
                        translation: p.pose_b.translation + p.drift * step as f64,
                        rotation: p.pose_b.rotation,
                    };
                    let q = DistanceQuery::new(&shapes[p.a], p.pose_a, &shapes[p.b], pose_b);
                    let Ok(w) = signed_distance_cached(&q, &mut p.cache) else {
                        return 0.0;
                    };
                    if let Ok(g) = pose_gradient_with_fallback(&q, &w, smoothing, p.normal.as_ref()) {
                        p.normal = Some(g.normal);
                        w.signed_distance + g.j_x[0]
                    } else {
                        w.signed_distance
                    }
                })
                .sum()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub pairs: usize,
    pub workers: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub std_s: f64,
    pub min_s: f64,
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, FilterError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| FilterError::Config(e.to_string()))
}

/// Times `cycles` full distance and gradient cycles over `pairs` pairs after
/// `warmup` untimed ones. Smaller pair sets are prefixes of larger ones.
pub fn cycle_time(
    pairs: usize,
    workers: usize,
    cycles: usize,
    warmup: usize,
    resolution: usize,
) -> Result<BenchRow, FilterError> {
    let mut set = PairSet::random(pairs, resolution, 1)
        .map_err(crate::error::KinematicsError::from)?;
    let pool = thread_pool(workers)?;
    let mut sink = 0.0;
    for k in 0..warmup {
        sink += set.cycle(&pool, k);
    }
    let mut times = Vec::with_capacity(cycles);
    for k in 0..cycles {
        let t0 = Instant::now();
        sink += set.cycle(&pool, warmup + k);
        times.push(t0.elapsed().as_secs_f64());
    }
    std::hint::black_box(sink);
    let n = times.len().max(1) as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(BenchRow {
        pairs,
        workers: pool.current_num_threads(),
        mean_s: mean,
        median_s: median(&mut times),
        std_s: std,
        min_s: times.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// Median of `xs`, reordering it. Zero when empty.
pub fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Times every pair count `rounds` times, cycling through the counts in each
/// round so slow stretches on a shared host hit all counts alike. Each
/// returned row carries the median over rounds of the per-round statistics.
pub fn scaling_sweep(
    pairs: &[usize],
    workers: usize,
    cycles: usize,
    rounds: usize,
    resolution: usize,
) -> Result<Vec<BenchRow>, FilterError> {
    let mut runs: Vec<Vec<BenchRow>> = vec![Vec::new(); pairs.len()];
    for _ in 0..rounds.max(1) {
        for (k, &p) in pairs.iter().enumerate() {
            runs[k].push(cycle_time(p, workers, cycles, 3, resolution)?);
        }
    }
    Ok(runs
        .into_iter()
        .map(|rows| {
            let pick = |f: fn(&BenchRow) -> f64| median(&mut rows.iter().map(f).collect::<Vec<_>>());
            BenchRow {
                pairs: rows[0].pairs,
                workers: rows[0].workers,
                mean_s: pick(|r| r.mean_s),
                median_s: pick(|r| r.median_s),
                std_s: pick(|r| r.std_s),
                min_s: pick(|r| r.min_s),
            }
        })
        .collect())
}

/// Least-squares line `y = slope x + intercept` and its R².
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "pairs,workers,mean_s,median_s,std_s,min_s")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.pairs, r.workers, r.mean_s, r.median_s, r.std_s, r.min_s
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    FaceFace,
    VertexVertex,
}

impl Orientation {
    /// Rotations of the bodies at the origin and at `(d_c, 0, 0)`.
    pub fn rotations(&self) -> (Mat3, Mat3) {
        match self {
            Orientation::FaceFace => (Mat3::identity(), Mat3::identity()),
            Orientation::VertexVertex => {
                // Turn the (1, 1, 1) corner onto +x, and onto -x for the
                // second body.
                let from = Vec3::new(1.0, 1.0, 1.0).normalize();
                let axis = from.cross(&Vec3::x()).normalize();
                let corner = so3_exp(&(axis * from.dot(&Vec3::x()).acos()));
                (corner, so3_exp(&Vec3::new(0.0, 0.0, PI)) * corner)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradStudyConfig {
    /// Named shapes as `(name, semi-axis, exponent)`.
    pub shapes: Vec<(String, f64, f64)>,
    pub centroid_distances: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub orientations: Vec<Orientation>,
    pub resolution: usize,
    pub fd_step: f64,
    pub neighborhood_depth: usize,
}

impl Default for GradStudyConfig {
    fn default() -> Self {
        Self {
            shapes: vec![("sphere".into(), 0.1, 1.0), ("cube".into(), 0.1, 0.3)],
            centroid_distances: vec![0.3, 0.5, 1.0],
            temperatures: vec![1e-4, 1e-6, 1e-8, 1e-10],
            orientations: vec![Orientation::FaceFace, Orientation::VertexVertex],
            resolution: crate::superquadric::DEFAULT_RESOLUTION,
            fd_step: crate::oracle::FD_STEP,
            neighborhood_depth: crate::smoothing::DEFAULT_DEPTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCell {
    pub shape: String,
    pub orientation: Orientation,
    pub centroid_distance: f64,
    pub temperature: f64,
    pub distance: f64,
    pub gradient_x: f64,
    pub reference_x: f64,
    pub relative_error: f64,
    /// The reference optimizer converged at the nominal pose.
    pub reference_converged: bool,
}

/// x-component of the gradient with respect to the second body's position,
/// against central differences of the smooth reference distance.
pub fn gradient_study(cfg: &GradStudyConfig) -> Result<Vec<GradCell>, FilterError> {
    let mut jobs = Vec::new();
    for (name, a, e) in &cfg.shapes {
        for &o in &cfg.orientations {
            for &dc in &cfg.centroid_distances {
                for &eps in &cfg.temperatures {
                    jobs.push((name.clone(), *a, *e, o, dc, eps));
                }
            }
        }
    }
    jobs.into_par_iter()
        .map(|(name, a, e, orientation, dc, eps)| {
            let sq = Superquadric::new(a, a, a, e, e).map_err(crate::error::KinematicsError::from)?;
            let poly = sq
                .sample_shared(cfg.resolution)
                .map_err(crate::error::KinematicsError::from)?;
            let (ra, rb) = orientation.rotations();
            let pa = Pose {
                translation: Vec3::zeros(),
                rotation: ra,
            };
            let pb = Pose {
                translation: Vec3::new(dc, 0.0, 0.0),
                rotation: rb,
            };
            let q = DistanceQuery::new(&poly, pa, &poly, pb);
            let w = signed_distance(&q)?;
            let smoothing = SmoothingConfig {
                temperature: eps,
                neighborhood_depth: cfg.neighborhood_depth,
            };
            let g = pose_gradient(&q, &w, &smoothing)?;
            let (sa, sb) = (PosedSuperquadric::new(sq, pa), PosedSuperquadric::new(sq, pb));
            let converged = sdf_reference(&sa, &sb).converged;
            let reference = sdf_reference_gradient(&sa, &sb, cfg.fd_step)[0];
            Ok(GradCell {
                shape: name,
                orientation,
                centroid_distance: dc,
                temperature: eps,
                distance: w.signed_distance,
                gradient_x: g.j_b[0],
                reference_x: reference,
                relative_error: (g.j_b[0] - reference).abs() / reference.abs(),
                reference_converged: converged,
            })
        })
        .collect()
}

pub fn write_grad_csv<W: Write>(cells: &[GradCell], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "shape,orientation,centroid_distance,temperature,distance,gradient_x,reference_x,relative_error,reference_converged"
    )?;
    for c in cells {
        let o = match c.orientation {
            Orientation::FaceFace => "face_face",
            Orientation::VertexVertex => "vertex_vertex",
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.shape,
            o,
            c.centroid_distance,
            c.temperature,
            c.distance,
            c.gradient_x,
            c.reference_x,
            c.relative_error,
            c.reference_converged
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.0, 5.0, 7.0, 9.0];
        let (m, c, r2) = linear_fit(&xs, &ys);
        assert!((m - 2.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_cycle_is_cheap() {
        let row = cycle_time(0, 1, 5, 1, 40).unwrap();
        assert_eq!(row.pairs, 0);
        assert!(row.mean_s < 1e-3);
    }

    #[test]
    fn vertex_orientation_points_corners_at_each_other() {
        let (ra, rb) = Orientation::VertexVertex.rotations();
        let c = Vec3::new(1.0, 1.0, 1.0).normalize();
        assert!((ra * c - Vec3::x()).norm() < 1e-12);
        assert!((rb * c + Vec3::x()).norm() < 1e-12);
    }
}
