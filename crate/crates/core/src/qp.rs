//! Dense strictly convex QP
//!
//! ```text
//! minimize    1/2 x^T H x + g^T x
//! subject to  A x >= b,  lower <= x <= upper
//! ```
//!
//! solved with the Goldfarb-Idnani dual active-set method. Each step starts
//! from a dual feasible point and adds the most violated constraint, dropping
//! constraints whose multipliers would turn negative. The dimension is small,
//! so the projected step is recomputed from dense factorizations instead of
//! updating a QR factorization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::QpError;

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Use `-inf` / `+inf` for free coordinates.
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Constraint ids: `0..m` are rows of `A`, `m + j` the lower bound of `x_j`
/// and `m + n + j` its upper bound.
#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub active: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub objective: f64,
}

impl QpProblem {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    fn check(&self) -> Result<(), QpError> {
        let n = self.dim();
        let m = self.rows();
        if self.h.shape() != (n, n)
            || self.a.shape() != (m, n)
            || self.lower.len() != n
            || self.upper.len() != n
        {
            return Err(QpError::Dimension(format!(
                "n = {n}, m = {m}, H {:?}, A {:?}, bounds {}/{}",
                self.h.shape(),
                self.a.shape(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        let finite = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        if !finite(&self.g) || !finite(&self.b) || !self.a.iter().all(|x| x.is_finite()) {
            return Err(QpError::Dimension("non-finite problem data".into()));
        }
        Ok(())
    }

    /// Normal and right-hand side of constraint `id` in `n^T x >= r` form.
    fn constraint(&self, id: usize) -> (DVector<f64>, f64) {
        let (n, m) = (self.dim(), self.rows());
        if id < m {
            (self.a.row(id).transpose(), self.b[id])
        } else if id < m + n {
            let j = id - m;
            (unit(n, j, 1.0), self.lower[j])
        } else {
            let j = id - m - n;
            (unit(n, j, -1.0), -self.upper[j])
        }
    }

    /// Residual `n^T x - r` of constraint `id`, negative when violated.
    pub fn residual(&self, id: usize, x: &DVector<f64>) -> f64 {
        let (n, m) = (self.dim(), self.rows());
        if id < m {
            self.a.row(id).transpose().dot(x) - self.b[id]
        } else if id < m + n {
            x[id - m] - self.lower[id - m]
        } else {
            self.upper[id - m - n] - x[id - m - n]
        }
    }

    fn norm_of(&self, id: usize) -> f64 {
        if id < self.rows() {
            self.a.row(id).norm()
        } else {
            1.0
        }
    }

    fn rhs_of(&self, id: usize) -> f64 {
        let (n, m) = (self.dim(), self.rows());
        if id < m {
            self.b[id]
        } else if id < m + n {
            self.lower[id - m]
        } else {
            -self.upper[id - m - n]
        }
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Largest violation over all constraints, scaled by the row norm.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (0..self.rows() + 2 * self.dim())
            .filter(|&id| self.rhs_of(id).is_finite())
            .map(|id| -self.residual(id, x) / self.norm_of(id).max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

fn unit(n: usize, j: usize, s: f64) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[j] = s;
    v
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveSetSolver {
    /// Violation (relative to the row norm) below which a constraint counts
    /// as satisfied.
    pub feasibility_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ActiveSetSolver {
    fn default() -> Self {
        Self {
            feasibility_tolerance: 1e-12,
            max_iterations: 1000,
        }
    }
}

impl ActiveSetSolver {
    /// Solves `p`, trying the constraints listed in `warm` before others.
    pub fn solve(&self, p: &QpProblem, warm: &[usize]) -> Result<QpSolution, QpError> {
        p.check()?;
        let n = p.dim();
        let total = p.rows() + 2 * n;
        let chol = Cholesky::new(p.h.clone()).ok_or(QpError::NotConvex)?;
        let mut x = -chol.solve(&p.g);

        let candidates: Vec<usize> = (0..total).filter(|&id| p.rhs_of(id).is_finite()).collect();
        let mut in_warm = vec![false; total];
        for &id in warm {
            if id < total {
                in_warm[id] = true;
            }
        }

        let mut active: Vec<usize> = Vec::new();
        let mut normals: Vec<DVector<f64>> = Vec::new();
        let mut mult: Vec<f64> = Vec::new();
        let mut is_active = vec![false; total];
        let mut iterations = 0;

        loop {
            // Most violated constraint, warm-start candidates first.
            let mut pick: Option<(bool, f64, usize)> = None;
            for &id in &candidates {
                if is_active[id] {
                    continue;
                }
                let scale = p.norm_of(id);
                if !(scale > 0.0) {
                    if p.rhs_of(id) > self.feasibility_tolerance {
                        return Err(QpError::Infeasible);
                    }
                    continue;
                }
                let v = p.residual(id, &x) / scale;
                let tol = self.feasibility_tolerance * (1.0 + p.rhs_of(id).abs() / scale);
                if v < -tol {
                    let key = (in_warm[id], -v, id);
                    let better = match pick {
                        None => true,
                        Some((w, viol, _)) => (key.0 && !w) || (key.0 == w && key.1 > viol),
                    };
                    if better {
                        pick = Some(key);
                    }
                }
            }
            let Some((_, _, new)) = pick else {
                return Ok(QpSolution {
                    objective: p.objective(&x),
                    x,
                    active,
                    multipliers: mult,
                    iterations,
                });
            };
            let (np, _) = p.constraint(new);
            let mut u_new = 0.0;

            loop {
                iterations += 1;
                if iterations > self.max_iterations {
                    return Err(QpError::IterationLimit);
                }
                let (z, r) = step_directions(&chol, &normals, &np);
                // Largest dual step keeping active multipliers nonnegative.
                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for (k, rk) in r.iter().enumerate() {
                    if *rk > 0.0 {
                        let t = mult[k] / rk;
                        if t < t1 {
                            t1 = t;
                            drop = Some(k);
                        }
                    }
                }
                let hinv_np = chol.solve(&np);
                let curvature = z.dot(&np);
                let t2 = if curvature > 1e-14 * np.dot(&hinv_np) {
                    -p.residual(new, &x) / curvature
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    return Err(QpError::Infeasible);
                }
                if t2.is_finite() {
                    x += &z * t;
                }
                for (m, rk) in mult.iter_mut().zip(r.iter()) {
                    *m -= t * rk;
                }
                u_new += t;
                if t2 <= t1 {
                    active.push(new);
                    normals.push(np);
                    mult.push(u_new);
                    is_active[new] = true;
                    break;
                }
                let k = drop.expect("finite partial step has a blocking constraint");
                is_active[active[k]] = false;
                active.remove(k);
                normals.remove(k);
                mult.remove(k);
                if p.residual(new, &x) >= 0.0 {
                    // The partial step already satisfied the new constraint.
                    break;
                }
            }
        }
    }
}

/// Primal step `z` and multiplier change `r` for adding normal `np` to the
/// active set with normals `normals`. Works in the coordinates where `H` is
/// the identity, so `z` is an orthogonal projection and vanishes exactly once
/// the active normals span the space.
fn step_directions(
    chol: &Cholesky<f64, Dyn>,
    normals: &[DVector<f64>],
    np: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let l = chol.l();
    let n = np.len();
    let scaled_np = l
        .solve_lower_triangular(np)
        .expect("Cholesky factor is nonsingular");
    let back = |v: &DVector<f64>| {
        l.tr_solve_lower_triangular(v)
            .expect("Cholesky factor is nonsingular")
    };
    if normals.is_empty() {
        return (back(&scaled_np), DVector::zeros(0));
    }
    let q = normals.len();
    let nmat = DMatrix::from_fn(n, q, |i, j| normals[j][i]);
    let scaled = l
        .solve_lower_triangular(&nmat)
        .expect("Cholesky factor is nonsingular");
    let qr = scaled.qr();
    let (qm, rm) = (qr.q(), qr.r());
    let d = qm.transpose() * &scaled_np;
    let r = rm
        .solve_upper_triangular(&d)
        .unwrap_or_else(|| DVector::zeros(rm.ncols()));
    if q >= n {
        return (DVector::zeros(n), r);
    }
    let z = back(&(&scaled_np - &qm * &d));
    (z, r)
}
