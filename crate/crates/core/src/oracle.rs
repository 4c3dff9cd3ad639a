//! Reference solvers that share no code path with the pipeline they check.
//!
//! * [`sdf_reference`] works on the smooth superquadrics through their
//!   closed-form support functions, never on sampled polytopes.
//! * [`qp_reference`] is a dual coordinate ascent, unrelated to the active-set
//!   solver in [`crate::qp`].
//! * [`implicit_surrogate`] reproduces the implicit-function minimization
//!   whose gradients blow up.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::QpError;
use crate::lie::{Pose, Vec3};
use crate::optim::{bfgs, BfgsOptions};
use crate::superquadric::{PosedSuperquadric, Superquadric};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub case: String,
    pub method: String,
    pub reference: Vec<f64>,
    pub tolerance: f64,
    pub wall_time_s: f64,
}

impl OracleReport {
    pub fn write_jsonl<W: Write>(reports: &[OracleReport], mut out: W) -> std::io::Result<()> {
        for r in reports {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// `‖(x, y)‖_q` with `q = 2 / (2 - e)` and its gradient.
fn dual_norm2(x: f64, y: f64, e: f64) -> (f64, [f64; 2]) {
    let m = x.abs().max(y.abs());
    if m == 0.0 {
        return (0.0, [0.0, 0.0]);
    }
    if e >= 2.0 - 1e-12 {
        return if x.abs() >= y.abs() {
            (m, [x.signum(), 0.0])
        } else {
            (m, [0.0, y.signum()])
        };
    }
    let q = 2.0 / (2.0 - e);
    let rx = x.abs() / m;
    let ry = y.abs() / m;
    let sum = rx.powf(q) + ry.powf(q);
    let norm = m * sum.powf(1.0 / q);
    let scale = sum.powf((q - 1.0) / q);
    (
        norm,
        [
            x.signum() * rx.powf(q - 1.0) / scale,
            y.signum() * ry.powf(q - 1.0) / scale,
        ],
    )
}

/// Support function of a superquadric in its own frame and the support point.
///
/// The solid is the unit ball of a nested norm, so the support function is
/// the nested dual norm of the scaled direction.
pub fn sq_support(sq: &Superquadric, n: &Vec3) -> (f64, Vec3) {
    let [a1, a2, a3] = sq.scale();
    let [e1, e2] = sq.exponents();
    let (s, ds) = dual_norm2(a1 * n.x, a2 * n.y, e2);
    let (v, dv) = dual_norm2(s, a3 * n.z, e1);
    (
        v,
        Vec3::new(a1 * dv[0] * ds[0], a2 * dv[0] * ds[1], a3 * dv[1]),
    )
}

fn world_support(s: &PosedSuperquadric, n: &Vec3) -> (f64, Vec3) {
    let (v, p) = sq_support(&s.shape, &(s.pose.rotation.transpose() * n));
    (v + s.pose.translation.dot(n), s.pose.transform_point(&p))
}

/// Reference signed distance between two smooth superquadrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDistance {
    pub signed_distance: f64,
    /// Unit direction minimizing the support function of `A - B`.
    pub normal: Vec3,
    pub point_a: Vec3,
    pub point_b: Vec3,
    pub converged: bool,
}

/// Fibonacci-lattice unit directions.
pub fn fibonacci_directions(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vec3::new(r * t.cos(), r * t.sin(), z)
        })
        .collect()
}

/// Signed distance as `-min_{|n|=1} h(n)`, `h` the support function of the
/// Minkowski difference, minimized by multi-start quasi-Newton descent.
pub fn sdf_reference(a: &PosedSuperquadric, b: &PosedSuperquadric) -> ReferenceDistance {
    let h = |n: &Vec3| {
        let (va, pa) = world_support(a, n);
        let (vb, pb) = world_support(b, &(-n));
        (va + vb, pa - pb)
    };
    let objective = |x: &DVector<f64>| {
        let raw = Vec3::new(x[0], x[1], x[2]);
        let len = raw.norm();
        let n = raw / len;
        let (v, s) = h(&n);
        let g = (s - n * n.dot(&s)) / len;
        (v, DVector::from_column_slice(g.as_slice()))
    };
    let opts = BfgsOptions {
        gradient_tolerance: 1e-14,
        max_iterations: 400,
        max_step: 0.5,
    };
    let mut starts = fibonacci_directions(32);
    let axis = b.pose.translation - a.pose.translation;
    if axis.norm() > 0.0 {
        starts.push(axis.normalize());
        starts.push(-axis.normalize());
    }
    let mut best: Option<(f64, Vec3, bool)> = None;
    for s in starts {
        let mut x = DVector::from_column_slice(s.as_slice());
        let mut converged = false;
        // Restart from the normalized iterate to keep the radial scale sane.
        for _ in 0..3 {
            let m = bfgs(objective, x.clone(), opts);
            x = &m.x / m.x.norm();
            converged = m.converged;
        }
        let n = Vec3::new(x[0], x[1], x[2]);
        let v = h(&n).0;
        if best.map_or(true, |(bv, _, _)| v < bv) {
            best = Some((v, n, converged));
        }
    }
    let (v, n, converged) = best.expect("at least one start");
    let (_, pa) = world_support(a, &n);
    let (_, pb) = world_support(b, &(-n));
    ReferenceDistance {
        signed_distance: -v,
        normal: n,
        point_a: pa,
        point_b: pb,
        converged,
    }
}

/// Central-difference gradient of a function of a 6-vector.
pub fn fd_gradient<F: Fn(&Vector6<f64>) -> f64>(f: F, x: &Vector6<f64>, step: f64) -> Vector6<f64> {
    let mut g = Vector6::zeros();
    for k in 0..6 {
        let mut xp = *x;
        let mut xm = *x;
        xp[k] += step;
        xm[k] -= step;
        g[k] = (f(&xp) - f(&xm)) / (2.0 * step);
    }
    g
}

/// Reference gradient of the smooth signed distance with respect to a
/// world-frame perturbation `(dt, dtheta)` of `b`'s pose.
pub fn sdf_reference_gradient(
    a: &PosedSuperquadric,
    b: &PosedSuperquadric,
    step: f64,
) -> Vector6<f64> {
    fd_gradient(
        |delta| {
            sdf_reference(a, &PosedSuperquadric::new(b.shape, b.pose.perturbed(delta)))
                .signed_distance
        },
        &Vector6::zeros(),
        step,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImplicitSample {
    pub x: f64,
    pub f_star: f64,
    pub grad_x: f64,
    pub minimizer: Vec3,
}

#[derive(Clone, Copy, Debug)]
pub struct PenaltySchedule {
    pub initial: f64,
    pub factor: f64,
    pub rounds: usize,
    pub starts: usize,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            initial: 1.0,
            factor: 10.0,
            rounds: 6,
            starts: 32,
        }
    }
}

fn implicit_world(s: &PosedSuperquadric, p: &Vec3) -> (f64, Vec3) {
    let local = s.pose.inverse_transform_point(p);
    (
        s.shape.implicit_value(&local),
        s.pose.rotation * s.shape.implicit_gradient(&local),
    )
}

fn penalty_solve(
    a: &PosedSuperquadric,
    b: &PosedSuperquadric,
    p0: Vec3,
    rhos: &[f64],
) -> (f64, Vec3) {
    let mut p = p0;
    let opts = BfgsOptions {
        gradient_tolerance: 1e-10,
        max_iterations: 300,
        max_step: 0.25,
    };
    for &rho in rhos {
        let obj = |x: &DVector<f64>| {
            let q = Vec3::new(x[0], x[1], x[2]);
            let (f1, g1) = implicit_world(a, &q);
            let (f2, g2) = implicit_world(b, &q);
            let viol = (f2 - 1.0).max(0.0);
            let g = g1 + g2 * (2.0 * rho * viol);
            (
                f1 + rho * viol * viol,
                DVector::from_column_slice(g.as_slice()),
            )
        };
        let m = bfgs(obj, DVector::from_column_slice(p.as_slice()), opts);
        p = Vec3::new(m.x[0], m.x[1], m.x[2]);
    }
    (implicit_world(a, &p).0, p)
}

/// `min f_a(p)` subject to `f_b(p) <= 1` by a multi-start quadratic penalty.
pub fn implicit_minimum(
    a: &PosedSuperquadric,
    b: &PosedSuperquadric,
    schedule: &PenaltySchedule,
) -> (f64, Vec3) {
    let rhos: Vec<f64> = (0..schedule.rounds)
        .map(|k| schedule.initial * schedule.factor.powi(k as i32))
        .collect();
    // Starts on the 1-level set of `b`, which is its surface scaled by 2^(e1/2).
    let grow = 2f64.powf(b.shape.exponents()[0] / 2.0);
    let mut candidates: Vec<(f64, Vec3)> = fibonacci_directions(4 * schedule.starts)
        .into_iter()
        .map(|d| {
            let p = b
                .pose
                .transform_point(&(b.shape.radial_surface_point(&d) * grow));
            (implicit_world(a, &p).0, p)
        })
        .collect();
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut starts: Vec<Vec3> = vec![b.pose.translation];
    starts.extend(
        candidates
            .iter()
            .take(schedule.starts.saturating_sub(1))
            .map(|c| c.1),
    );
    starts
        .into_iter()
        .map(|p| penalty_solve(a, b, p, &rhos))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .expect("at least one start")
}

/// Implicit-function surrogate and its derivative with respect to the
/// x-offset of `b`, by central differences of step `h`.
pub fn implicit_surrogate(
    a: &PosedSuperquadric,
    b: &PosedSuperquadric,
    schedule: &PenaltySchedule,
    h: f64,
) -> ImplicitSample {
    let (f_star, p) = implicit_minimum(a, b, schedule);
    let last = [schedule.initial * schedule.factor.powi(schedule.rounds as i32 - 1)];
    let shifted = |dx: f64| {
        let mut pose = b.pose;
        pose.translation.x += dx;
        let moved = PosedSuperquadric::new(b.shape, pose);
        // Warm start from the minimizer, carried along with the body.
        penalty_solve(a, &moved, p + Vec3::new(dx, 0.0, 0.0), &last).0
    };
    let grad_x = (shifted(h) - shifted(-h)) / (2.0 * h);
    ImplicitSample {
        x: b.pose.translation.x,
        f_star,
        grad_x,
        minimizer: p,
    }
}

/// The two-box geometry used to expose the implicit-function pathology:
/// body `a` at the origin turned by pi/3 about z, body `b` at `(x, 3, 0)`
/// turned by -pi/4.
pub fn pathology_pair(x: f64) -> (PosedSuperquadric, PosedSuperquadric) {
    let a = Superquadric::new(0.5, 1.5, 1.0, 0.2, 0.2).expect("valid shape");
    let b = Superquadric::new(1.0, 0.5, 1.0, 0.2, 0.2).expect("valid shape");
    (
        PosedSuperquadric::new(
            a,
            Pose::from_parts(Vec3::zeros(), Vec3::new(0.0, 0.0, PI / 3.0)),
        ),
        PosedSuperquadric::new(
            b,
            Pose::from_parts(Vec3::new(x, 3.0, 0.0), Vec3::new(0.0, 0.0, -PI / 4.0)),
        ),
    )
}

/// Sweep of [`implicit_surrogate`] over the pathology pair.
pub fn implicit_sweep(xs: &[f64], schedule: &PenaltySchedule, h: f64) -> Vec<ImplicitSample> {
    xs.par_iter()
        .map(|&x| {
            let (a, b) = pathology_pair(x);
            implicit_surrogate(&a, &b, schedule, h)
        })
        .collect()
}

/// Evenly spaced samples including both ends.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Dense convex QP `min 1/2 u'Hu + g'u` s.t. `A u >= b`, `lower <= u <= upper`.
#[derive(Clone, Debug)]
pub struct ReferenceQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Hildreth's dual coordinate ascent run to a KKT residual of `tol`.
pub fn qp_reference(qp: &ReferenceQp, tol: f64) -> Result<DVector<f64>, QpError> {
    let n = qp.h.nrows();
    let m = qp.a.nrows();
    if qp.h.ncols() != n || qp.g.len() != n || qp.a.ncols() != n || qp.b.len() != m {
        return Err(QpError::Dimension("reference QP shapes disagree".into()));
    }
    let chol = qp.h.clone().cholesky().ok_or(QpError::NotConvex)?;
    let mut rows = DMatrix::<f64>::zeros(m + 2 * n, n);
    let mut rhs = DVector::<f64>::zeros(m + 2 * n);
    rows.rows_mut(0, m).copy_from(&qp.a);
    rhs.rows_mut(0, m).copy_from(&qp.b);
    for j in 0..n {
        rows[(m + j, j)] = 1.0;
        rhs[m + j] = qp.lower[j];
        rows[(m + n + j, j)] = -1.0;
        rhs[m + n + j] = -qp.upper[j];
    }
    let k = m + 2 * n;
    let h_inv_at = chol.solve(&rows.transpose());
    let gram = &rows * &h_inv_at;
    let u0 = -chol.solve(&qp.g);
    let mut w = &rows * &u0;
    let mut lambda = DVector::<f64>::zeros(k);
    let box_radius = qp
        .lower
        .zip_map(&qp.upper, |l, u| l.abs().max(u.abs()).powi(2))
        .sum()
        .sqrt();
    for sweep in 0..1_000_000 {
        let mut change = 0.0f64;
        for i in 0..k {
            let gii = gram[(i, i)];
            if gii <= 0.0 {
                continue;
            }
            let new = (lambda[i] + (rhs[i] - w[i]) / gii).max(0.0);
            let delta = new - lambda[i];
            if delta != 0.0 {
                lambda[i] = new;
                w.axpy(delta, &gram.column(i), 1.0);
                change = change.max(delta.abs() * gii.sqrt());
            }
        }
        if sweep % 16 == 0 {
            let primal = (0..k).map(|i| (rhs[i] - w[i]).max(0.0)).fold(0.0, f64::max);
            let comp = (0..k)
                .map(|i| (lambda[i] * (w[i] - rhs[i])).abs())
                .fold(0.0, f64::max);
            if primal <= tol && comp <= tol && change <= tol {
                return Ok(u0 + h_inv_at * lambda);
            }
            // Farkas-style certificate: for y >= 0 every feasible u in the box has
            // y'rhs <= y'(rows u) <= |rows' y| |u|.
            let norm = lambda.norm();
            if norm > 0.0 {
                let y = &lambda / norm;
                if rhs.dot(&y) > (rows.transpose() * &y).norm() * box_radius + 1e-12 {
                    return Err(QpError::Infeasible);
                }
            }
        }
    }
    Err(QpError::IterationLimit)
}

/// Times a closure and wraps its output in a report.
pub fn timed_report<F: FnOnce() -> (Vec<f64>, f64)>(
    case: &str,
    method: &str,
    f: F,
) -> OracleReport {
    let t0 = Instant::now();
    let (reference, tolerance) = f();
    OracleReport {
        case: case.to_string(),
        method: method.to_string(),
        reference,
        tolerance,
        wall_time_s: t0.elapsed().as_secs_f64(),
    }
}
