//! Control barrier function filter over superquadric signed distances.
//!
//! Every cycle computes the signed distance and its pose gradient for each
//! robot/obstacle pair and each self-collision pair, turns them into linear
//! constraints on the joint velocity `u`, adds a manipulability constraint and
//! solves
//!
//! ```text
//! minimize   |J (u - u_cmd)|^2 + |u - u_cmd|^2 + w |u - u_prev|^2
//! subject to J_d u >= -alpha_d (d - margin) - J_obs x_obs_dot   (each pair)
//!            J_mu u >= -alpha_mu (mu - mu_min)
//!            |u_k| <= limit_k
//! ```

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix6, RowVector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{signed_distance_cached, DistanceQuery, SupportCache, WitnessPair};
use crate::error::{DistanceError, FilterError, QpError};
use crate::kinematics::{
    sq_rate_matrix, ChainPoses, GradientMethod, ObstacleState, RobotModel,
};
use crate::lie::{left_jacobian, Vec3};
use crate::polytope::ConvexPolytope;
use crate::qp::{ActiveSetSolver, QpProblem};
use crate::smoothing::{pose_gradient_with_fallback, DistanceJacobian, SmoothingConfig};
use crate::superquadric::{Superquadric, DEFAULT_RESOLUTION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub alpha_distance: f64,
    pub alpha_manipulability: f64,
    /// Distance margin in meters.
    pub margin: f64,
    pub manipulability_threshold: f64,
    /// Weight of the input-discontinuity penalty.
    pub smoothing_weight: f64,
    /// Control period in seconds.
    pub period: f64,
    /// Pairs whose bounding spheres are farther apart than this are not
    /// evaluated exactly and contribute no constraint.
    pub activation_radius: f64,
    /// Self-collision pairs as attachment indices. `None` picks every pair
    /// on non-adjacent links that is clear of the margin at the home
    /// configuration.
    pub self_pairs: Option<Vec<(usize, usize)>>,
    pub smoothing: SmoothingConfig,
    pub manipulability_gradient: GradientMethod,
    /// Worker threads for pair evaluation, 0 for one per core.
    pub workers: usize,
    pub slack_penalty: f64,
    pub max_slack: f64,
    /// Surface samples along each parametric coordinate.
    pub resolution: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            alpha_distance: 1.5,
            alpha_manipulability: 0.1,
            margin: 0.01,
            manipulability_threshold: 0.02,
            smoothing_weight: 0.1,
            period: 0.01,
            activation_radius: 0.3,
            self_pairs: None,
            smoothing: SmoothingConfig::default(),
            manipulability_gradient: GradientMethod::FiniteDifference,
            workers: 0,
            slack_penalty: 1e6,
            max_slack: 0.05,
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let positive = [
            ("alpha_distance", self.alpha_distance),
            ("alpha_manipulability", self.alpha_manipulability),
            ("period", self.period),
            ("slack_penalty", self.slack_penalty),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FilterError::Config(format!("{name} must be positive")));
            }
        }
        let nonneg = [
            ("margin", self.margin),
            ("manipulability_threshold", self.manipulability_threshold),
            ("smoothing_weight", self.smoothing_weight),
            ("activation_radius", self.activation_radius),
            ("max_slack", self.max_slack),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(FilterError::Config(format!("{name} must be nonnegative")));
            }
        }
        if self.resolution < 4 {
            return Err(FilterError::Config("resolution must be at least 4".into()));
        }
        self.smoothing.validate()?;
        Ok(())
    }
}

/// An obstacle superquadric with its sampled surface and current motion.
#[derive(Clone, Debug)]
pub struct Obstacle {
    pub shape: Superquadric,
    pub polytope: Arc<ConvexPolytope>,
    pub state: ObstacleState,
}

impl Obstacle {
    pub fn new(
        shape: Superquadric,
        state: ObstacleState,
        resolution: usize,
    ) -> Result<Self, crate::error::GeometryError> {
        Ok(Self {
            shape,
            polytope: shape.sample_shared(resolution)?,
            state,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Env,
    #[serde(rename = "self")]
    SelfCollision,
    Manipulability,
}

/// `coeffs . u >= rhs`
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintRow {
    pub coeffs: DVector<f64>,
    pub rhs: f64,
    pub kind: RowKind,
    /// Robot attachment and obstacle (env) or second attachment (self).
    pub pair: Option<(usize, usize)>,
    /// Barrier value.
    pub h: f64,
    /// Signed distance, or manipulability for the manipulability row.
    pub d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStatus {
    Optimal,
    Relaxed,
    Halted,
}

impl FilterStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterStatus::Optimal => "optimal",
            FilterStatus::Relaxed => "relaxed",
            FilterStatus::Halted => "halted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostic {
    pub kind: RowKind,
    pub body: usize,
    pub other: usize,
    /// Exact signed distance, or the bounding-sphere lower bound for culled
    /// pairs.
    pub d: f64,
    pub h: f64,
    pub row_norm: Option<f64>,
    pub culled: bool,
    /// Distance or gradient failed and the previous row was reused.
    pub degraded: bool,
    #[serde(skip)]
    pub witness: Option<WitnessPair>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterResult {
    pub u_star: DVector<f64>,
    pub status: FilterStatus,
    /// Indices into `rows` of the constraints active at the solution.
    pub active: Vec<usize>,
    pub rows: Vec<ConstraintRow>,
    pub pairs: Vec<PairDiagnostic>,
    pub mu: f64,
    pub max_slack: f64,
    pub eval_time_s: f64,
    pub solve_time_s: f64,
}

impl FilterResult {
    fn min_d(&self, kind: RowKind) -> Option<f64> {
        self.pairs
            .iter()
            .filter(|p| p.kind == kind)
            .map(|p| p.d)
            .min_by(f64::total_cmp)
    }

    pub fn d_min_env(&self) -> Option<f64> {
        self.min_d(RowKind::Env)
    }

    pub fn d_min_self(&self) -> Option<f64> {
        self.min_d(RowKind::SelfCollision)
    }

    pub fn h_min(&self) -> Option<f64> {
        self.pairs.iter().map(|p| p.h).min_by(f64::total_cmp)
    }
}

/// Warm-start state of one pair, owned by whichever worker evaluates it.
#[derive(Clone, Debug, Default)]
struct PairCache {
    support: SupportCache,
    normal: Option<Vec3>,
    last_row: Option<(DVector<f64>, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct PairSpec {
    kind: RowKind,
    body: usize,
    other: usize,
}

struct PairEval {
    lower_bound: f64,
    witness: Option<WitnessPair>,
    gradient: Option<DistanceJacobian>,
}

pub struct SafetyFilter {
    model: Arc<RobotModel>,
    shapes: Vec<Arc<ConvexPolytope>>,
    config: FilterConfig,
    self_pairs: Vec<(usize, usize)>,
    env_caches: Vec<PairCache>,
    self_caches: Vec<PairCache>,
    env_obstacles: usize,
    warm: Vec<usize>,
    u_prev: DVector<f64>,
    solver: ActiveSetSolver,
    pool: rayon::ThreadPool,
}

impl SafetyFilter {
    pub fn new(model: Arc<RobotModel>, config: FilterConfig) -> Result<Self, FilterError> {
        config.validate()?;
        model.validate()?;
        let shapes = model
            .attachments
            .iter()
            .map(|a| a.shape.sample_shared(config.resolution))
            .collect::<Result<Vec<_>, _>>()
            .map_err(crate::error::KinematicsError::from)?;
        let self_pairs = match &config.self_pairs {
            Some(p) => {
                for &(i, k) in p {
                    let (li, lk) = (
                        model.attachments.get(i).map(|a| a.link),
                        model.attachments.get(k).map(|a| a.link),
                    );
                    match (li, lk) {
                        (Some(li), Some(lk)) if li.abs_diff(lk) >= 2 => {}
                        _ => {
                            return Err(FilterError::Config(format!(
                                "self pair ({i}, {k}) must join attachments on non-adjacent links"
                            )))
                        }
                    }
                }
                p.clone()
            }
            None => default_self_pairs(&model, &shapes, config.margin)?,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| FilterError::Config(e.to_string()))?;
        let n = model.dof();
        Ok(Self {
            self_caches: vec![PairCache::default(); self_pairs.len()],
            env_caches: Vec::new(),
            env_obstacles: 0,
            self_pairs,
            shapes,
            config,
            warm: Vec::new(),
            u_prev: DVector::zeros(n),
            solver: ActiveSetSolver::default(),
            pool,
            model,
        })
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn self_pairs(&self) -> &[(usize, usize)] {
        &self.self_pairs
    }

    pub fn robot_shapes(&self) -> &[Arc<ConvexPolytope>] {
        &self.shapes
    }

    /// Forgets warm-start state and the previous command.
    pub fn reset(&mut self) {
        self.env_caches.clear();
        self.env_obstacles = 0;
        self.self_caches = vec![PairCache::default(); self.self_pairs.len()];
        self.warm.clear();
        self.u_prev = DVector::zeros(self.model.dof());
    }

    /// Sets the command the input-smoothing term is measured against.
    pub fn set_previous(&mut self, u: DVector<f64>) {
        self.u_prev = u;
    }

    /// One filter cycle.
    pub fn step(
        &mut self,
        q: &DVector<f64>,
        obstacles: &[Obstacle],
        u_cmd: &DVector<f64>,
    ) -> Result<FilterResult, FilterError> {
        self.cycle(q, obstacles, u_cmd, true)
    }

    /// Evaluates distances and constraints without modifying `u_cmd`.
    pub fn observe(
        &mut self,
        q: &DVector<f64>,
        obstacles: &[Obstacle],
        u_cmd: &DVector<f64>,
    ) -> Result<FilterResult, FilterError> {
        self.cycle(q, obstacles, u_cmd, false)
    }

    fn cycle(
        &mut self,
        q: &DVector<f64>,
        obstacles: &[Obstacle],
        u_cmd: &DVector<f64>,
        filter: bool,
    ) -> Result<FilterResult, FilterError> {
        let n = self.model.dof();
        if u_cmd.len() != n || !u_cmd.iter().all(|x| x.is_finite()) {
            return Err(FilterError::Config(format!(
                "command must hold {n} finite values"
            )));
        }
        let poses = self.model.forward_kinematics(q)?;
        let eval_start = Instant::now();
        let (specs, evals) = self.evaluate_pairs(&poses, obstacles)?;
        let eval_time_s = eval_start.elapsed().as_secs_f64();

        let (rows, pairs) = self.assemble(&poses, obstacles, &specs, &evals)?;
        let manip = self
            .model
            .manipulability(q, self.config.manipulability_gradient)?;
        let mut rows = rows;
        if let Some(g) = &manip.gradient {
            let h = manip.value - self.config.manipulability_threshold;
            rows.push(ConstraintRow {
                coeffs: g.clone(),
                rhs: -self.config.alpha_manipulability * h,
                kind: RowKind::Manipulability,
                pair: None,
                h,
                d: manip.value,
            });
        }

        let solve_start = Instant::now();
        let task = self.model.task_jacobian(&poses);
        let (u_star, status, active, max_slack) = if filter {
            self.solve(u_cmd, &task, &rows)?
        } else {
            (u_cmd.clone(), FilterStatus::Optimal, Vec::new(), 0.0)
        };
        let solve_time_s = solve_start.elapsed().as_secs_f64();
        if filter {
            self.u_prev = u_star.clone();
        }
        Ok(FilterResult {
            u_star,
            status,
            active,
            rows,
            pairs,
            mu: manip.value,
            max_slack,
            eval_time_s,
            solve_time_s,
        })
    }

    fn evaluate_pairs(
        &mut self,
        poses: &ChainPoses,
        obstacles: &[Obstacle],
    ) -> Result<(Vec<PairSpec>, Vec<PairEval>), FilterError> {
        let bodies = self.shapes.len();
        if self.env_obstacles != obstacles.len() || self.env_caches.len() != bodies * obstacles.len()
        {
            self.env_caches = vec![PairCache::default(); bodies * obstacles.len()];
            self.env_obstacles = obstacles.len();
        }
        let mut specs = Vec::with_capacity(bodies * obstacles.len() + self.self_pairs.len());
        for body in 0..bodies {
            for other in 0..obstacles.len() {
                specs.push(PairSpec {
                    kind: RowKind::Env,
                    body,
                    other,
                });
            }
        }
        for &(body, other) in &self.self_pairs {
            specs.push(PairSpec {
                kind: RowKind::SelfCollision,
                body,
                other,
            });
        }
        let shapes = &self.shapes;
        let radius = self.config.activation_radius;
        let smoothing = self.config.smoothing;
        let env_caches = &mut self.env_caches;
        let self_caches = &mut self.self_caches;
        let evals = self.pool.install(|| {
            let caches: Vec<&mut PairCache> =
                env_caches.iter_mut().chain(self_caches.iter_mut()).collect();
            specs
                .par_iter()
                .zip(caches.into_par_iter())
                .map(|(spec, cache)| {
                    let (shape_b, pose_b) = match spec.kind {
                        RowKind::Env => {
                            let o = &obstacles[spec.other];
                            (o.polytope.as_ref(), o.state.pose)
                        }
                        _ => (shapes[spec.other].as_ref(), poses.attachments[spec.other]),
                    };
                    let q = DistanceQuery::new(
                        shapes[spec.body].as_ref(),
                        poses.attachments[spec.body],
                        shape_b,
                        pose_b,
                    );
                    evaluate_pair(&q, cache, radius, &smoothing)
                })
                .collect::<Vec<_>>()
        });
        Ok((specs, evals))
    }

    fn assemble(
        &mut self,
        poses: &ChainPoses,
        obstacles: &[Obstacle],
        specs: &[PairSpec],
        evals: &[PairEval],
    ) -> Result<(Vec<ConstraintRow>, Vec<PairDiagnostic>), FilterError> {
        let cfg = &self.config;
        let mut rows = Vec::new();
        let mut diags = Vec::with_capacity(specs.len());
        let env_count = self.env_caches.len();
        for (idx, (spec, eval)) in specs.iter().zip(evals).enumerate() {
            let cache = if idx < env_count {
                &mut self.env_caches[idx]
            } else {
                &mut self.self_caches[idx - env_count]
            };
            let culled = eval.witness.is_none() && eval.lower_bound > cfg.activation_radius;
            let d = eval
                .witness
                .as_ref()
                .map_or(eval.lower_bound, |w| w.signed_distance);
            let h = d - cfg.margin;
            let mut diag = PairDiagnostic {
                kind: spec.kind,
                body: spec.body,
                other: spec.other,
                d,
                h,
                row_norm: None,
                culled,
                degraded: false,
                witness: eval.witness.clone(),
            };
            if culled {
                cache.last_row = None;
                diags.push(diag);
                continue;
            }
            let row = match &eval.gradient {
                Some(g) => {
                    let (coeffs, rhs) = match spec.kind {
                        RowKind::Env => {
                            let coeffs = body_row(&self.model, poses, spec.body, &g.j_a)?;
                            let twist = obstacles[spec.other].state.twist;
                            let obstacle_rate = (g.j_b * twist)[0];
                            (coeffs, -cfg.alpha_distance * h - obstacle_rate)
                        }
                        _ => {
                            let coeffs = body_row(&self.model, poses, spec.body, &g.j_a)?
                                + body_row(&self.model, poses, spec.other, &g.j_b)?;
                            (coeffs, -cfg.alpha_distance * h)
                        }
                    };
                    cache.last_row = Some((coeffs.clone(), rhs));
                    (coeffs, rhs)
                }
                None => {
                    diag.degraded = true;
                    // Keep the previous row but forbid any further approach.
                    let Some((coeffs, rhs)) = cache.last_row.clone() else {
                        log::warn!(
                            "no gradient for pair ({}, {}) and no previous row",
                            spec.body,
                            spec.other
                        );
                        diags.push(diag);
                        continue;
                    };
                    (coeffs, rhs.max(0.0))
                }
            };
            diag.row_norm = Some(row.0.norm());
            rows.push(ConstraintRow {
                coeffs: row.0,
                rhs: row.1,
                kind: spec.kind,
                pair: Some((spec.body, spec.other)),
                h,
                d,
            });
            diags.push(diag);
        }
        Ok((rows, diags))
    }

    /// Objective `1/2 u^T H u + g^T u` of the filter QP.
    pub fn objective(
        &self,
        u_cmd: &DVector<f64>,
        task: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let n = u_cmd.len();
        let w = self.config.smoothing_weight;
        let jtj = task.transpose() * task;
        let h = (&jtj + DMatrix::identity(n, n) * (1.0 + w)) * 2.0;
        let g = -(&jtj * u_cmd + u_cmd + &self.u_prev * w) * 2.0;
        (h, g)
    }

    /// Solves the filter QP for the given rows.
    pub fn solve(
        &mut self,
        u_cmd: &DVector<f64>,
        task: &DMatrix<f64>,
        rows: &[ConstraintRow],
    ) -> Result<(DVector<f64>, FilterStatus, Vec<usize>, f64), FilterError> {
        let n = u_cmd.len();
        let (h, g) = self.objective(u_cmd, task);
        let m = rows.len();
        let a = DMatrix::from_fn(m, n, |r, c| rows[r].coeffs[c]);
        let b = DVector::from_fn(m, |r, _| rows[r].rhs);
        let limits = &self.model.velocity_limits;
        let problem = QpProblem {
            h,
            g,
            a,
            b,
            lower: -limits,
            upper: limits.clone(),
        };
        match self.solver.solve(&problem, &self.warm) {
            Ok(sol) => {
                self.warm = sol.active.clone();
                let active = sol.active.into_iter().filter(|&id| id < m).collect();
                Ok((sol.x, FilterStatus::Optimal, active, 0.0))
            }
            Err(QpError::Infeasible | QpError::IterationLimit) => {
                self.warm.clear();
                Ok(self.relaxed(&problem, rows))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Re-solves with a slack on every distance row; halts when the slack
    /// needed is too large or the relaxed problem still fails.
    fn relaxed(
        &self,
        p: &QpProblem,
        rows: &[ConstraintRow],
    ) -> (DVector<f64>, FilterStatus, Vec<usize>, f64) {
        let n = p.dim();
        let m = p.rows();
        let slack_rows: Vec<usize> = (0..m).filter(|&r| rows[r].kind != RowKind::Manipulability).collect();
        let k = slack_rows.len();
        let mut h = DMatrix::zeros(n + k, n + k);
        h.view_mut((0, 0), (n, n)).copy_from(&p.h);
        for s in 0..k {
            h[(n + s, n + s)] = 2.0 * self.config.slack_penalty;
        }
        let mut g = DVector::zeros(n + k);
        g.rows_mut(0, n).copy_from(&p.g);
        let mut a = DMatrix::zeros(m, n + k);
        a.view_mut((0, 0), (m, n)).copy_from(&p.a);
        for (s, &r) in slack_rows.iter().enumerate() {
            a[(r, n + s)] = 1.0;
        }
        let mut lower = DVector::zeros(n + k);
        lower.rows_mut(0, n).copy_from(&p.lower);
        let mut upper = DVector::from_element(n + k, f64::INFINITY);
        upper.rows_mut(0, n).copy_from(&p.upper);
        let relaxed = QpProblem {
            h,
            g,
            a,
            b: p.b.clone(),
            lower,
            upper,
        };
        let halt = |slack| (DVector::zeros(n), FilterStatus::Halted, Vec::new(), slack);
        match self.solver.solve(&relaxed, &[]) {
            Ok(sol) => {
                let slack = sol.x.rows(n, k).iter().copied().fold(0.0, f64::max);
                if slack > self.config.max_slack {
                    return halt(slack);
                }
                let active = sol.active.into_iter().filter(|&id| id < m).collect();
                (
                    sol.x.rows(0, n).into_owned(),
                    FilterStatus::Relaxed,
                    active,
                    slack,
                )
            }
            Err(_) => halt(f64::INFINITY),
        }
    }
}

fn evaluate_pair(
    q: &DistanceQuery,
    cache: &mut PairCache,
    radius: f64,
    smoothing: &SmoothingConfig,
) -> PairEval {
    let lower_bound = q.lower_bound();
    if lower_bound > radius {
        return PairEval {
            lower_bound,
            witness: None,
            gradient: None,
        };
    }
    let witness = match signed_distance_cached(q, &mut cache.support) {
        Ok(w) => w,
        Err(DistanceError::NotConverged { best, .. }) => {
            return PairEval {
                lower_bound,
                witness: Some(*best),
                gradient: None,
            }
        }
        Err(DistanceError::ZeroDirection) => {
            return PairEval {
                lower_bound,
                witness: None,
                gradient: None,
            }
        }
    };
    let gradient =
        pose_gradient_with_fallback(q, &witness, smoothing, cache.normal.as_ref()).ok();
    if let Some(g) = &gradient {
        if witness.separation.norm() > crate::smoothing::DISTANCE_FLOOR {
            cache.normal = Some(g.normal);
        }
    }
    PairEval {
        lower_bound,
        witness: Some(witness),
        gradient,
    }
}

/// Joint-space row of a gradient with respect to the world pose of
/// attachment `body`: the gradient is moved into the attachment's local
/// chart, mapped through the twist-to-chart-rate matrix and the link
/// Jacobian expressed in the link frame.
pub fn body_row(
    model: &RobotModel,
    poses: &ChainPoses,
    body: usize,
    grad: &RowVector6<f64>,
) -> Result<DVector<f64>, FilterError> {
    let att = &model.attachments[body];
    let link = poses.links[att.link];
    let r = link.rotation;
    let phi = att.local_rotation();
    let gt = grad.fixed_columns::<3>(0) * r;
    let gw = grad.fixed_columns::<3>(3) * r * left_jacobian(&phi);
    let chart = RowVector6::new(gt[0], gt[1], gt[2], gw[0], gw[1], gw[2]);
    let x = sq_rate_matrix(att)?;
    let mut to_link = Matrix6::zeros();
    to_link.fixed_view_mut::<3, 3>(0, 0).copy_from(&r.transpose());
    to_link.fixed_view_mut::<3, 3>(3, 3).copy_from(&r.transpose());
    let row = chart * x * to_link;
    let jac = poses.link_jacobian(att.link);
    Ok((row * jac).transpose())
}

/// Attachment pairs on non-adjacent links separated by more than `margin` at
/// the home configuration.
fn default_self_pairs(
    model: &RobotModel,
    shapes: &[Arc<ConvexPolytope>],
    margin: f64,
) -> Result<Vec<(usize, usize)>, FilterError> {
    let poses = model.forward_kinematics(&model.home)?;
    let mut out = Vec::new();
    for i in 0..shapes.len() {
        for k in i + 1..shapes.len() {
            if model.attachments[i].link.abs_diff(model.attachments[k].link) < 2 {
                continue;
            }
            let q = DistanceQuery::new(
                &shapes[i],
                poses.attachments[i],
                &shapes[k],
                poses.attachments[k],
            );
            let d = crate::distance::signed_distance(&q)?.signed_distance;
            if d > margin {
                out.push((i, k));
            }
        }
    }
    Ok(out)
}

/// One line of the cycle log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub t: f64,
    pub q: Vec<f64>,
    pub u_cmd: Vec<f64>,
    pub u_star: Vec<f64>,
    pub status: FilterStatus,
    pub d_min_env: Option<f64>,
    pub d_min_self: Option<f64>,
    pub h_min: Option<f64>,
    pub mu: f64,
    pub solve_time_s: f64,
    pub eval_time_s: f64,
}

impl CycleRecord {
    pub fn new(t: f64, q: &DVector<f64>, u_cmd: &DVector<f64>, r: &FilterResult) -> Self {
        Self {
            t,
            q: q.iter().copied().collect(),
            u_cmd: u_cmd.iter().copied().collect(),
            u_star: r.u_star.iter().copied().collect(),
            status: r.status,
            d_min_env: r.d_min_env(),
            d_min_self: r.d_min_self(),
            h_min: r.h_min(),
            mu: r.mu,
            solve_time_s: r.solve_time_s,
            eval_time_s: r.eval_time_s,
        }
    }

    pub fn d_min(&self) -> Option<f64> {
        match (self.d_min_env, self.d_min_self) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Copy with the wall-clock fields zeroed.
    pub fn without_timing(&self) -> Self {
        Self {
            solve_time_s: 0.0,
            eval_time_s: 0.0,
            ..self.clone()
        }
    }
}

pub fn write_jsonl<W: Write>(records: &[CycleRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_csv<W: Write>(records: &[CycleRecord], mut out: W) -> std::io::Result<()> {
    let n = records.first().map_or(0, |r| r.q.len());
    let mut header = vec!["t".to_string()];
    for name in ["q", "u_cmd", "u_star"] {
        header.extend((0..n).map(|k| format!("{name}{k}")));
    }
    header.extend(
        [
            "status",
            "d_min_env",
            "d_min_self",
            "h_min",
            "mu",
            "solve_time_s",
            "eval_time_s",
        ]
        .map(String::from),
    );
    writeln!(out, "{}", header.join(","))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in records {
        let mut cells = vec![r.t.to_string()];
        for v in [&r.q, &r.u_cmd, &r.u_star] {
            cells.extend(v.iter().map(|x| x.to_string()));
        }
        cells.push(r.status.as_str().to_string());
        cells.push(opt(r.d_min_env));
        cells.push(opt(r.d_min_self));
        cells.push(opt(r.h_min));
        cells.push(r.mu.to_string());
        cells.push(r.solve_time_s.to_string());
        cells.push(r.eval_time_s.to_string());
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}
