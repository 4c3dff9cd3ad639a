//! Kinematic world simulation: scripted obstacles, nominal controllers and
//! the filter in closed loop, with per-cycle logs and run metrics.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::filter::{CycleRecord, FilterConfig, FilterResult, FilterStatus, Obstacle, SafetyFilter};
use crate::kinematics::{ChainPoses, ObstacleState, RobotModel};
use crate::lie::{so3_exp, so3_log, Mat3, Pose, PoseRecord, Vec3};
use crate::superquadric::{PosedSuperquadric, Superquadric};

/// Damping added to `J J^T` when mapping task twists to joint velocities.
pub const DLS_DAMPING: f64 = 1e-3;
/// Cycles whose filtered command differs from the nominal one by more than
/// this count as interventions.
pub const INTERVENTION_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    Static,
    /// `s(t) = sin(2 pi f t + phase)`. The rotation `Exp(angular_amplitude s)`
    /// is applied about `pivot` (default: the obstacle's own center), then
    /// the center is shifted by `linear_amplitude s`.
    Sinusoid {
        #[serde(default)]
        linear_amplitude: [f64; 3],
        #[serde(default)]
        angular_amplitude: [f64; 3],
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        pivot: Option<[f64; 3]>,
    },
    /// Piecewise geodesic interpolation between absolute poses, holding the
    /// first and last pose outside `[times[0], times[last]]`.
    Waypoint {
        times: Vec<f64>,
        poses: Vec<PoseRecord>,
    },
}

impl Motion {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        match self {
            Motion::Static => Ok(()),
            Motion::Sinusoid {
                linear_amplitude,
                angular_amplitude,
                frequency,
                phase,
                pivot,
            } => {
                let finite = linear_amplitude
                    .iter()
                    .chain(angular_amplitude)
                    .chain(pivot.iter().flatten())
                    .chain([frequency, phase])
                    .all(|x| x.is_finite());
                if !finite || *frequency < 0.0 {
                    return Err(ScenarioError::Invalid(
                        "sinusoid parameters must be finite with frequency >= 0".into(),
                    ));
                }
                Ok(())
            }
            Motion::Waypoint { times, poses } => {
                if times.is_empty() || times.len() != poses.len() {
                    return Err(ScenarioError::Invalid(
                        "waypoint motion needs one pose per time and at least one".into(),
                    ));
                }
                if !times.iter().all(|t| t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(ScenarioError::Invalid(
                        "waypoint times must be finite and strictly increasing".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Pose and exact twist at time `t`. `base` is the pose at the script's
    /// rest position and is unused by waypoint scripts.
    pub fn state(&self, base: &Pose, t: f64) -> ObstacleState {
        match self {
            Motion::Static => ObstacleState::fixed(*base),
            Motion::Sinusoid {
                linear_amplitude,
                angular_amplitude,
                frequency,
                phase,
                pivot,
            } => {
                let w = 2.0 * PI * frequency;
                let s = (w * t + phase).sin();
                let ds = w * (w * t + phase).cos();
                let a = Vec3::from(*linear_amplitude);
                let b = Vec3::from(*angular_amplitude);
                let c0 = base.translation;
                let p = pivot.map_or(c0, Vec3::from);
                let rot = so3_exp(&(b * s));
                let arm = rot * (c0 - p);
                let omega = b * ds;
                let pose = Pose {
                    translation: p + arm + a * s,
                    rotation: rot * base.rotation,
                };
                let v = a * ds + omega.cross(&arm);
                ObstacleState {
                    pose,
                    twist: Vector6::new(v.x, v.y, v.z, omega.x, omega.y, omega.z),
                }
            }
            Motion::Waypoint { times, poses } => {
                let last = times.len() - 1;
                if t < times[0] || last == 0 {
                    return ObstacleState::fixed(Pose::from(&poses[0]));
                }
                if t >= times[last] {
                    return ObstacleState::fixed(Pose::from(&poses[last]));
                }
                let i = times.partition_point(|&x| x <= t) - 1;
                let span = times[i + 1] - times[i];
                let s = (t - times[i]) / span;
                let (p0, p1) = (Pose::from(&poses[i]), Pose::from(&poses[i + 1]));
                let dt = p1.translation - p0.translation;
                let phi = so3_log(&(p1.rotation * p0.rotation.transpose()));
                let pose = Pose {
                    translation: p0.translation + dt * s,
                    rotation: so3_exp(&(phi * s)) * p0.rotation,
                };
                let v = dt / span;
                let omega = phi / span;
                ObstacleState {
                    pose,
                    twist: Vector6::new(v.x, v.y, v.z, omega.x, omega.y, omega.z),
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    #[serde(default)]
    pub name: String,
    pub a: [f64; 3],
    pub e: [f64; 2],
    #[serde(default)]
    pub pose: PoseRecord,
    #[serde(default = "static_motion")]
    pub motion: Motion,
}

fn static_motion() -> Motion {
    Motion::Static
}

impl ObstacleSpec {
    pub fn shape(&self) -> Result<Superquadric, ScenarioError> {
        Ok(Superquadric::new(self.a[0], self.a[1], self.a[2], self.e[0], self.e[1])?)
    }

    pub fn state(&self, t: f64) -> ObstacleState {
        self.motion.state(&Pose::from(&self.pose), t)
    }
}

/// Open-top container. Its frame sits at the center of the inner floor
/// surface; the inner opening is `l / 2` along x and `l` along y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasketSpec {
    pub l: f64,
    #[serde(default = "default_wall_thickness")]
    pub wall_thickness: f64,
    #[serde(default = "default_wall_height")]
    pub height: f64,
    pub pose: PoseRecord,
    /// Half-width of the uniform box the basket position is drawn from.
    #[serde(default)]
    pub randomize: f64,
}

fn default_wall_thickness() -> f64 {
    0.02
}

fn default_wall_height() -> f64 {
    0.15
}

/// Exponents of the nearly box-shaped wall superquadrics.
const WALL_EXPONENT: f64 = 0.1;

/// Floor plus four walls of an open-top box with inner sides `l` and `l/2`.
/// Walls run from the floor's underside to `height` above the inner floor.
pub fn build_basket(
    l: f64,
    thickness: f64,
    height: f64,
    pose: &Pose,
) -> Result<Vec<PosedSuperquadric>, ScenarioError> {
    if !(l > 0.0 && thickness > 0.0 && height > 0.0) {
        return Err(ScenarioError::Invalid(
            "basket dimensions must be positive".into(),
        ));
    }
    let half_x = l / 4.0;
    let half_y = l / 2.0;
    let t = thickness;
    let e = WALL_EXPONENT;
    let wall_z = (height - t) / 2.0;
    let wall_a3 = (height + t) / 2.0;
    let place = |center: Vec3, yaw: f64, shape: Superquadric| {
        let local = Pose::from_parts(center, Vec3::new(0.0, 0.0, yaw));
        PosedSuperquadric::new(shape, pose.compose(&local))
    };
    let floor = Superquadric::new(half_x + t, half_y + t, t / 2.0, e, e)?;
    let side = Superquadric::new(t / 2.0, half_y + t, wall_a3, e, e)?;
    let end = Superquadric::new(half_x, t / 2.0, wall_a3, e, e)?;
    Ok(vec![
        place(Vec3::new(0.0, 0.0, -t / 2.0), 0.0, floor),
        place(Vec3::new(half_x + t / 2.0, 0.0, wall_z), 0.0, side),
        place(Vec3::new(-half_x - t / 2.0, 0.0, wall_z), PI, side),
        place(Vec3::new(0.0, half_y + t / 2.0, wall_z), 0.0, end),
        place(Vec3::new(0.0, -half_y - t / 2.0, wall_z), PI, end),
    ])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    #[default]
    World,
    Ee,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwistSegment {
    pub duration: f64,
    pub twist: [f64; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSegment {
    pub duration: f64,
    pub velocity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Controller {
    Hold,
    /// Proportional servo of the end effector to a fixed pose.
    Goal {
        position: [f64; 3],
        /// Target orientation; the initial one when absent.
        #[serde(default)]
        axis_angle: Option<[f64; 3]>,
        #[serde(default = "default_gain")]
        gain: f64,
        #[serde(default = "default_max_speed")]
        max_speed: f64,
        #[serde(default = "default_max_angular_speed")]
        max_angular_speed: f64,
        #[serde(default = "default_goal_tolerance")]
        tolerance: f64,
    },
    /// Piecewise-constant end-effector twists, zero after the last segment.
    TwistScript {
        segments: Vec<TwistSegment>,
        #[serde(default)]
        frame: Frame,
    },
    JointScript {
        segments: Vec<JointSegment>,
    },
    /// Drives `body` down into the basket while sweeping it across the
    /// short side of the opening.
    Insertion {
        #[serde(default = "default_body")]
        body: String,
        #[serde(default = "default_descent_speed")]
        descent_speed: f64,
        /// Final height of the body's lowest point above the inner floor.
        #[serde(default = "default_depth")]
        depth: f64,
        sweep_amplitude: f64,
        #[serde(default = "default_sweep_frequency")]
        sweep_frequency: f64,
        #[serde(default = "default_insertion_gain")]
        gain: f64,
        #[serde(default = "default_insertion_speed")]
        max_speed: f64,
        #[serde(default = "default_max_angular_speed")]
        max_angular_speed: f64,
    },
    /// End-effector-frame twists supplied by an operator.
    External,
}

fn default_gain() -> f64 {
    2.0
}
fn default_max_speed() -> f64 {
    0.25
}
fn default_max_angular_speed() -> f64 {
    1.0
}
fn default_goal_tolerance() -> f64 {
    2e-3
}
fn default_body() -> String {
    "payload".into()
}
fn default_descent_speed() -> f64 {
    0.1
}
fn default_depth() -> f64 {
    0.04
}
fn default_sweep_frequency() -> f64 {
    0.5
}
fn default_insertion_gain() -> f64 {
    8.0
}
fn default_insertion_speed() -> f64 {
    0.4
}
fn default_period() -> f64 {
    0.01
}
fn default_robot() -> String {
    "fr3_like".into()
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_robot")]
    pub robot: String,
    /// Initial configuration; the robot's home when absent.
    #[serde(default)]
    pub q0: Option<Vec<f64>>,
    pub duration: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub filter_enabled: bool,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub basket: Option<BasketSpec>,
    pub controller: Controller,
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios always serialize")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        if !(self.period > 0.0 && self.period.is_finite()) {
            return bad("period must be positive");
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad("duration must be nonnegative");
        }
        if (self.filter.period - self.period).abs() > 1e-12 {
            return bad("filter period must match the scenario period");
        }
        self.filter.validate()?;
        for o in &self.obstacles {
            o.shape()?;
            o.motion.validate()?;
        }
        if let Some(b) = &self.basket {
            if !(b.randomize >= 0.0) {
                return bad("basket randomization must be nonnegative");
            }
            build_basket(b.l, b.wall_thickness, b.height, &Pose::from(&b.pose))?;
        }
        match &self.controller {
            Controller::Goal {
                gain,
                max_speed,
                max_angular_speed,
                tolerance,
                ..
            } => {
                if ![*gain, *max_speed, *max_angular_speed, *tolerance]
                    .iter()
                    .all(|x| *x > 0.0 && x.is_finite())
                {
                    return bad("goal gains, speeds and tolerance must be positive");
                }
            }
            Controller::TwistScript { segments, .. } => {
                if !durations_ok(segments.iter().map(|s| s.duration)) {
                    return bad("segment durations must be nonnegative");
                }
            }
            Controller::JointScript { segments } => {
                if !durations_ok(segments.iter().map(|s| s.duration)) {
                    return bad("segment durations must be nonnegative");
                }
            }
            Controller::Insertion {
                descent_speed,
                gain,
                max_speed,
                max_angular_speed,
                ..
            } => {
                if self.basket.is_none() {
                    return bad("insertion needs a basket");
                }
                if ![*descent_speed, *gain, *max_speed, *max_angular_speed]
                    .iter()
                    .all(|x| *x > 0.0 && x.is_finite())
                {
                    return bad("insertion gains and speeds must be positive");
                }
            }
            Controller::Hold | Controller::External => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

impl TimingStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            max: xs.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub filter_enabled: bool,
    pub cycles: usize,
    pub d_min: Option<f64>,
    pub d_min_env: Option<f64>,
    pub d_min_self: Option<f64>,
    pub h_min: Option<f64>,
    /// First time the nominal task reported completion.
    pub t_end: Option<f64>,
    pub intervention_ratio: f64,
    pub max_intervention: f64,
    /// Cycles with a negative barrier value.
    pub violations: usize,
    /// Cycles with a negative signed distance.
    pub penetrations: usize,
    pub relaxed_cycles: usize,
    pub halted: bool,
    pub cycle_time: TimingStats,
}

impl RunMetrics {
    pub fn from_log(
        scenario: &str,
        seed: u64,
        filter_enabled: bool,
        log: &[CycleRecord],
        t_end: Option<f64>,
    ) -> Self {
        let min = |f: &dyn Fn(&CycleRecord) -> Option<f64>| {
            log.iter().filter_map(f).min_by(f64::total_cmp)
        };
        let interventions: Vec<f64> = log
            .iter()
            .map(|r| {
                r.u_star
                    .iter()
                    .zip(&r.u_cmd)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let count = |f: &dyn Fn(&CycleRecord) -> bool| log.iter().filter(|r| f(r)).count();
        let times: Vec<f64> = log.iter().map(|r| r.solve_time_s + r.eval_time_s).collect();
        Self {
            scenario: scenario.to_string(),
            seed,
            filter_enabled,
            cycles: log.len(),
            d_min: min(&|r| r.d_min()),
            d_min_env: min(&|r| r.d_min_env),
            d_min_self: min(&|r| r.d_min_self),
            h_min: min(&|r| r.h_min),
            t_end,
            intervention_ratio: if log.is_empty() {
                0.0
            } else {
                interventions
                    .iter()
                    .filter(|&&x| x > INTERVENTION_THRESHOLD)
                    .count() as f64
                    / log.len() as f64
            },
            max_intervention: interventions.iter().copied().fold(0.0, f64::max),
            violations: count(&|r| r.h_min.is_some_and(|h| h < 0.0)),
            penetrations: count(&|r| r.d_min().is_some_and(|d| d < 0.0)),
            relaxed_cycles: count(&|r| r.status == FilterStatus::Relaxed),
            halted: log.iter().any(|r| r.status == FilterStatus::Halted),
            cycle_time: TimingStats::from_samples(&times),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub log: Vec<CycleRecord>,
}

/// Everything known about one control tick.
#[derive(Clone, Debug)]
pub struct Tick {
    pub record: CycleRecord,
    pub result: FilterResult,
    pub ee: Pose,
    pub obstacles: Vec<PosedSuperquadric>,
    pub robot: Vec<PosedSuperquadric>,
}

struct WorldObstacle {
    spec: ObstacleSpec,
    shape: Superquadric,
    polytope: Arc<crate::polytope::ConvexPolytope>,
}

/// Maps a task twist to joint velocities with damped least squares and
/// scales the result uniformly into the velocity limits.
pub fn twist_to_joint_velocity(
    model: &RobotModel,
    jacobian: &DMatrix<f64>,
    twist: &Vector6<f64>,
) -> DVector<f64> {
    let rows = &model.task_rows;
    let j = DMatrix::from_fn(rows.len(), model.dof(), |r, c| jacobian[(rows[r], c)]);
    let v = DVector::from_fn(rows.len(), |r, _| twist[rows[r]]);
    let m = &j * j.transpose() + DMatrix::identity(rows.len(), rows.len()) * DLS_DAMPING;
    let y = m
        .cholesky()
        .expect("damped Gram matrix is positive definite")
        .solve(&v);
    let u = j.transpose() * y;
    clamp_to_limits(&model.velocity_limits, u)
}

fn clamp_to_limits(limits: &DVector<f64>, u: DVector<f64>) -> DVector<f64> {
    let ratio = u
        .iter()
        .zip(limits.iter())
        .map(|(x, l)| x.abs() / l)
        .fold(0.0, f64::max);
    if ratio > 1.0 {
        u / ratio
    } else {
        u
    }
}

/// Proportional pose servo with speed saturation.
fn servo(current: &Pose, target: &Pose, gain: f64, max_speed: f64, max_angular: f64) -> Vector6<f64> {
    let mut v = (target.translation - current.translation) * gain;
    if v.norm() > max_speed {
        v *= max_speed / v.norm();
    }
    let mut w = so3_log(&(target.rotation * current.rotation.transpose())) * gain;
    if w.norm() > max_angular {
        w *= max_angular / w.norm();
    }
    Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
}

fn rotate_twist(r: &Mat3, twist: &Vector6<f64>) -> Vector6<f64> {
    let v = r * Vec3::new(twist[0], twist[1], twist[2]);
    let w = r * Vec3::new(twist[3], twist[4], twist[5]);
    Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
}

/// Reference state of an insertion, fixed at the start of the run.
#[derive(Clone, Copy, Debug)]
struct InsertionPlan {
    body: usize,
    basket: Pose,
    /// Body orientation in the basket frame, held during the insertion.
    orientation: Mat3,
    start_height: f64,
    final_height: f64,
}

/// Closed-loop simulator.
pub struct Simulation {
    scenario: Scenario,
    model: Arc<RobotModel>,
    filter: SafetyFilter,
    world: Vec<WorldObstacle>,
    basket_pose: Option<Pose>,
    q: DVector<f64>,
    step: usize,
    filter_on: bool,
    goal_orientation: Mat3,
    plan: Option<InsertionPlan>,
    t_end: Option<f64>,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let model = Arc::new(RobotModel::load(&scenario.robot)?);
        let q0 = match &scenario.q0 {
            Some(q) => DVector::from_column_slice(q),
            None => model.home.clone(),
        };
        if q0.len() != model.dof() {
            return Err(ScenarioError::Invalid(format!(
                "q0 has {} entries, robot has {} joints",
                q0.len(),
                model.dof()
            )));
        }
        match &scenario.controller {
            Controller::JointScript { segments } => {
                if segments.iter().any(|s| s.velocity.len() != model.dof()) {
                    return Err(ScenarioError::Invalid(
                        "joint script velocities must match the joint count".into(),
                    ));
                }
            }
            Controller::Insertion { body, .. } => {
                if !model.attachments.iter().any(|a| &a.name == body) {
                    return Err(ScenarioError::Invalid(format!("robot has no body {body}")));
                }
            }
            _ => {}
        }
        let filter = SafetyFilter::new(model.clone(), scenario.filter.clone())?;

        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let mut world = Vec::new();
        let mut basket_pose = None;
        if let Some(b) = &scenario.basket {
            let mut pose = Pose::from(&b.pose);
            if b.randomize > 0.0 {
                let r = b.randomize;
                pose.translation += Vec3::new(
                    rng.gen_range(-r..=r),
                    rng.gen_range(-r..=r),
                    rng.gen_range(-r..=r),
                );
            }
            let names = ["floor", "wall_x_pos", "wall_x_neg", "wall_y_pos", "wall_y_neg"];
            for (s, name) in build_basket(b.l, b.wall_thickness, b.height, &pose)?
                .into_iter()
                .zip(names)
            {
                world.push(ObstacleSpec {
                    name: format!("basket_{name}"),
                    a: s.shape.scale(),
                    e: s.shape.exponents(),
                    pose: PoseRecord::from(&s.pose),
                    motion: Motion::Static,
                });
            }
            basket_pose = Some(pose);
        }
        world.extend(scenario.obstacles.iter().cloned());
        let world = world
            .into_iter()
            .map(|spec| {
                let shape = spec.shape()?;
                Ok(WorldObstacle {
                    polytope: shape.sample_shared(scenario.filter.resolution)?,
                    shape,
                    spec,
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;

        let mut sim = Self {
            scenario: scenario.clone(),
            filter_on: scenario.filter_enabled,
            model,
            filter,
            world,
            basket_pose,
            q: q0,
            step: 0,
            goal_orientation: Mat3::identity(),
            plan: None,
            t_end: None,
        };
        sim.start()?;
        Ok(sim)
    }

    fn start(&mut self) -> Result<(), ScenarioError> {
        let poses = self.model.forward_kinematics(&self.q)?;
        self.goal_orientation = poses.ee.rotation;
        if let (Controller::Insertion { body, depth, .. }, Some(basket)) =
            (&self.scenario.controller, self.basket_pose)
        {
            let body = self
                .model
                .attachments
                .iter()
                .position(|a| &a.name == body)
                .expect("checked in new");
            let local = basket.inverse().compose(&poses.attachments[body]);
            let a = Vec3::from(self.model.attachments[body].shape.scale());
            let half_height = (local.rotation.abs() * a).z;
            self.plan = Some(InsertionPlan {
                body,
                basket,
                orientation: local.rotation,
                start_height: local.translation.z,
                final_height: depth + half_height,
            });
        }
        Ok(())
    }

    /// Returns to the initial configuration and clears filter state.
    pub fn reset(&mut self) -> Result<(), ScenarioError> {
        self.q = match &self.scenario.q0 {
            Some(q) => DVector::from_column_slice(q),
            None => self.model.home.clone(),
        };
        self.step = 0;
        self.t_end = None;
        self.filter.reset();
        self.start()
    }

    pub fn set_filter(&mut self, on: bool) {
        self.filter_on = on;
    }

    pub fn filter_enabled(&self) -> bool {
        self.filter_on
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.scenario.period
    }

    pub fn t_end(&self) -> Option<f64> {
        self.t_end
    }

    pub fn basket_pose(&self) -> Option<Pose> {
        self.basket_pose
    }

    /// Obstacles at time `t`.
    pub fn obstacles_at(&self, t: f64) -> Vec<Obstacle> {
        self.world
            .iter()
            .map(|o| Obstacle {
                shape: o.shape,
                polytope: o.polytope.clone(),
                state: o.spec.state(t),
            })
            .collect()
    }

    /// Nominal command and whether the task is complete.
    fn nominal(&self, t: f64, poses: &ChainPoses, jog: Option<&Vector6<f64>>) -> (DVector<f64>, bool) {
        let model = &self.model;
        let ee_twist = |twist: Vector6<f64>| twist_to_joint_velocity(model, &poses.ee_jacobian(), &twist);
        match &self.scenario.controller {
            Controller::Hold => (DVector::zeros(model.dof()), false),
            Controller::External => {
                let twist = jog.copied().unwrap_or_else(Vector6::zeros);
                (ee_twist(rotate_twist(&poses.ee.rotation, &twist)), false)
            }
            Controller::Goal {
                position,
                axis_angle,
                gain,
                max_speed,
                max_angular_speed,
                tolerance,
            } => {
                let target = Pose {
                    translation: Vec3::from(*position),
                    rotation: axis_angle.map_or(self.goal_orientation, |aa| so3_exp(&Vec3::from(aa))),
                };
                let twist = servo(&poses.ee, &target, *gain, *max_speed, *max_angular_speed);
                let err = Vector6::from_fn(|r, _| {
                    let e = target.translation - poses.ee.translation;
                    let w = so3_log(&(target.rotation * poses.ee.rotation.transpose()));
                    if r < 3 {
                        e[r]
                    } else {
                        w[r - 3]
                    }
                });
                let done = model.task_rows.iter().all(|&r| err[r].abs() <= *tolerance);
                (ee_twist(twist), done)
            }
            Controller::TwistScript { segments, frame } => {
                let twist = segment_at(segments.iter().map(|s| s.duration), t)
                    .map_or_else(Vector6::zeros, |i| Vector6::from(segments[i].twist));
                let twist = match frame {
                    Frame::World => twist,
                    Frame::Ee => rotate_twist(&poses.ee.rotation, &twist),
                };
                let total: f64 = segments.iter().map(|s| s.duration).sum();
                (ee_twist(twist), t >= total)
            }
            Controller::JointScript { segments } => {
                let u = segment_at(segments.iter().map(|s| s.duration), t).map_or_else(
                    || DVector::zeros(model.dof()),
                    |i| DVector::from_column_slice(&segments[i].velocity),
                );
                let total: f64 = segments.iter().map(|s| s.duration).sum();
                (clamp_to_limits(&model.velocity_limits, u), t >= total)
            }
            Controller::Insertion {
                descent_speed,
                sweep_amplitude,
                sweep_frequency,
                gain,
                max_speed,
                max_angular_speed,
                ..
            } => {
                let plan = self.plan.expect("insertion plan set at start");
                let height = (plan.start_height - descent_speed * t).max(plan.final_height);
                let sweep = sweep_amplitude * (2.0 * PI * sweep_frequency * t).sin();
                let target = plan.basket.compose(&Pose {
                    translation: Vec3::new(sweep, 0.0, height),
                    rotation: plan.orientation,
                });
                let body = &poses.attachments[plan.body];
                let twist = servo(body, &target, *gain, *max_speed, *max_angular_speed);
                let link = model.attachments[plan.body].link;
                let jac = poses.point_jacobian(link, &body.translation);
                let local_height = plan.basket.inverse_transform_point(&body.translation).z;
                let done = local_height <= plan.final_height + 0.005;
                (twist_to_joint_velocity(model, &jac, &twist), done)
            }
        }
    }

    /// Runs one control cycle and integrates the filtered command.
    pub fn tick(&mut self, jog: Option<&Vector6<f64>>) -> Result<Tick, ScenarioError> {
        let t = self.time();
        let poses = self.model.forward_kinematics(&self.q)?;
        let obstacles = self.obstacles_at(t);
        let (u_cmd, done) = self.nominal(t, &poses, jog);
        if done && self.t_end.is_none() {
            self.t_end = Some(t);
        }
        let result = if self.filter_on {
            self.filter.step(&self.q, &obstacles, &u_cmd)?
        } else {
            self.filter.observe(&self.q, &obstacles, &u_cmd)?
        };
        let record = CycleRecord::new(t, &self.q, &u_cmd, &result);
        let tick = Tick {
            robot: self
                .model
                .attachments
                .iter()
                .zip(&poses.attachments)
                .map(|(a, p)| PosedSuperquadric::new(a.shape, *p))
                .collect(),
            obstacles: obstacles
                .iter()
                .map(|o| PosedSuperquadric::new(o.shape, o.state.pose))
                .collect(),
            ee: poses.ee,
            record,
            result,
        };
        self.q += &tick.result.u_star * self.scenario.period;
        self.step += 1;
        Ok(tick)
    }

    /// Runs the scenario to its end or until the filter halts.
    pub fn run(mut self) -> Result<RunOutput, ScenarioError> {
        let cycles = (self.scenario.duration / self.scenario.period).round() as usize;
        let mut log = Vec::with_capacity(cycles + 1);
        for _ in 0..=cycles {
            let tick = self.tick(None)?;
            let halted = tick.record.status == FilterStatus::Halted;
            log.push(tick.record);
            if halted {
                break;
            }
        }
        let metrics = RunMetrics::from_log(
            &self.scenario.name,
            self.scenario.seed,
            self.filter_on,
            &log,
            self.t_end,
        );
        Ok(RunOutput { metrics, log })
    }
}

fn durations_ok(mut d: impl Iterator<Item = f64>) -> bool {
    d.all(|x| x >= 0.0 && x.is_finite())
}

fn segment_at(durations: impl Iterator<Item = f64>, t: f64) -> Option<usize> {
    let mut end = 0.0;
    for (i, d) in durations.enumerate() {
        end += d;
        if t < end {
            return Some(i);
        }
    }
    None
}

pub fn run(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    Simulation::new(scenario)?.run()
}

/// Runs independent scenarios in parallel.
pub fn run_batch(scenarios: &[Scenario]) -> Vec<Result<RunOutput, ScenarioError>> {
    scenarios.par_iter().map(run).collect()
}

/// Copy of `scenario` with another seed and filter switch.
pub fn variant(scenario: &Scenario, seed: u64, filter_enabled: bool) -> Scenario {
    Scenario {
        seed,
        filter_enabled,
        ..scenario.clone()
    }
}

/// Configuration that puts the end effector at `position` with the home
/// orientation, found by servoing from home.
pub fn reach(model: &RobotModel, position: &Vec3) -> Result<DVector<f64>, ScenarioError> {
    let mut q = model.home.clone();
    let target = Pose {
        translation: *position,
        rotation: model.forward_kinematics(&q)?.ee.rotation,
    };
    for _ in 0..4000 {
        let poses = model.forward_kinematics(&q)?;
        let twist = servo(&poses.ee, &target, 3.0, 0.5, 1.0);
        if twist.norm() < 1e-10 {
            break;
        }
        q += twist_to_joint_velocity(model, &poses.ee_jacobian(), &twist) * 0.01;
    }
    let ee = model.forward_kinematics(&q)?.ee.translation;
    if (ee - position).norm() > 1e-6 {
        return Err(ScenarioError::Invalid(format!(
            "end effector cannot reach {position:?}"
        )));
    }
    Ok(q)
}

/// Basket insertion starting with the end effector at `start`, the basket
/// under the payload, its opening aligned with the payload and
/// `clearance_gap` between the wall tops and the payload's underside.
pub fn basket_insertion(
    model: &RobotModel,
    l: f64,
    margin: f64,
    start: &Vec3,
    clearance_gap: f64,
) -> Result<Scenario, ScenarioError> {
    let body = model
        .attachments
        .iter()
        .position(|a| a.name == "payload")
        .ok_or_else(|| ScenarioError::Invalid("robot has no payload body".into()))?;
    let q0 = reach(model, start)?;
    let poses = model.forward_kinematics(&q0)?;
    let payload = poses.attachments[body];
    let shape = model.attachments[body].shape.scale();
    let half_height = (payload.rotation.abs() * Vec3::from(shape)).z;
    let height = default_wall_height();
    let center = payload.translation - Vec3::new(0.0, 0.0, half_height + clearance_gap + height);
    let heading = payload.rotation.column(0);
    let yaw = heading.y.atan2(heading.x);
    let clearance = (l / 2.0 - 2.0 * shape[0]) / 2.0;
    Ok(Scenario {
        name: format!("basket_l{:03.0}", l * 100.0),
        description: format!(
            "Insertion into a {l} x {} basket with a sweep across the short side",
            l / 2.0
        ),
        robot: model.name.clone(),
        q0: Some(q0.iter().copied().collect()),
        duration: 4.0,
        period: 0.01,
        seed: 0,
        filter_enabled: true,
        filter: FilterConfig {
            margin,
            smoothing_weight: 0.0,
            ..FilterConfig::default()
        },
        obstacles: Vec::new(),
        basket: Some(BasketSpec {
            l,
            wall_thickness: default_wall_thickness(),
            height,
            pose: PoseRecord::from(&Pose::from_parts(center, Vec3::new(0.0, 0.0, yaw))),
            randomize: 0.05,
        }),
        controller: Controller::Insertion {
            body: default_body(),
            descent_speed: default_descent_speed(),
            depth: default_depth(),
            sweep_amplitude: clearance + 0.03,
            sweep_frequency: default_sweep_frequency(),
            gain: default_insertion_gain(),
            max_speed: default_insertion_speed(),
            max_angular_speed: default_max_angular_speed(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_speed_at_zero() {
        let m = Motion::Sinusoid {
            linear_amplitude: [0.1, 0.0, 0.0],
            angular_amplitude: [0.0; 3],
            frequency: 0.5,
            phase: 0.0,
            pivot: None,
        };
        let s = m.state(&Pose::identity(), 0.0);
        let v = Vec3::new(s.twist[0], s.twist[1], s.twist[2]);
        assert!((v.norm() - 2.0 * PI * 0.5 * 0.1).abs() < 1e-15);
    }

    #[test]
    fn static_has_zero_twist() {
        let s = Motion::Static.state(&Pose::from_translation(Vec3::new(1.0, 2.0, 3.0)), 7.0);
        assert_eq!(s.twist, Vector6::zeros());
    }

    #[test]
    fn segment_lookup() {
        let d = [0.5, 1.0, 0.0, 0.25];
        assert_eq!(segment_at(d.into_iter(), 0.0), Some(0));
        assert_eq!(segment_at(d.into_iter(), 0.5), Some(1));
        assert_eq!(segment_at(d.into_iter(), 1.6), Some(3));
        assert_eq!(segment_at(d.into_iter(), 1.75), None);
    }

    #[test]
    fn limits_scale_uniformly() {
        let lim = DVector::from_vec(vec![1.0, 2.0]);
        let u = clamp_to_limits(&lim, DVector::from_vec(vec![3.0, 3.0]));
        assert!((u[0] - 1.0).abs() < 1e-15 && (u[1] - 1.0).abs() < 1e-15);
    }
}
