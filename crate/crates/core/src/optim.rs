//! Small dense BFGS minimizer used by the reference solvers.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub(crate) struct Minimum {
    pub x: DVector<f64>,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BfgsOptions {
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Longest step the line search may try.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-12,
            max_iterations: 500,
            max_step: 1.0,
        }
    }
}

/// Minimizes `f`, which returns the value and gradient at a point.
///
/// Stops on a small gradient or when backtracking cannot find any decrease,
/// which is where floating point precision runs out.
pub(crate) fn bfgs<F>(mut f: F, x0: DVector<f64>, opts: BfgsOptions) -> Minimum
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    for _ in 0..opts.max_iterations {
        if !fx.is_finite() {
            return Minimum {
                x,
                converged: false,
            };
        }
        if g.norm() <= opts.gradient_tolerance {
            return Minimum { x, converged: true };
        }
        let mut p = -(&h_inv * &g);
        if p.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            p = -g.clone();
        }
        let slope = p.dot(&g);
        let mut alpha = (opts.max_step / p.norm()).min(1.0);
        let mut accepted = None;
        for _ in 0..80 {
            let xn = &x + &p * alpha;
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * alpha * slope {
                if fn_ < fx || (fn_ == fx && gn.norm() < g.norm()) {
                    accepted = Some((xn, fn_, gn));
                }
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            if !fresh {
                // Retry once along steepest descent before giving up.
                h_inv = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            return Minimum { x, converged: true };
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            if fresh {
                h_inv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // Rank-two inverse update.
            h_inv += (&s * s.transpose()) * (rho * (1.0 + rho * yhy))
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    Minimum {
        x,
        converged: g.norm() <= opts.gradient_tolerance,
    }
}
