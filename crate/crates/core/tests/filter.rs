mod common;

use std::sync::Arc;

use common::{random_command, random_instance, rng, unit_vector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sqcbf::filter::{ConstraintRow, FilterConfig, FilterStatus, Obstacle, SafetyFilter};
use sqcbf::kinematics::{ObstacleState, RobotModel};
use sqcbf::lie::{Pose, PoseRecord, Vec3};
use sqcbf::oracle::{qp_reference, ReferenceQp};
use sqcbf::sim::{self, Controller, Motion, ObstacleSpec, Scenario};
use sqcbf::superquadric::Superquadric;

const RES: usize = 60;

fn filter() -> SafetyFilter {
    SafetyFilter::new(
        Arc::new(RobotModel::fr3_like()),
        FilterConfig {
            resolution: RES,
            workers: 1,
            ..Default::default()
        },
    )
    .unwrap()
}

/// A ball a random gap in `gaps` away from the surface of the bounding sphere of a random body.
fn ball_near(
    r: &mut impl Rng,
    f: &SafetyFilter,
    q: &DVector<f64>,
    gaps: std::ops::Range<f64>,
) -> Obstacle {
    let gap = r.gen_range(gaps);
    let poses = f.model().forward_kinematics(q).unwrap();
    let body = r.gen_range(0..poses.attachments.len());
    let reach = f.model().attachments[body].shape.bounding_radius();
    let radius = r.gen_range(0.03..0.1);
    let at = poses.attachments[body].translation + unit_vector(r) * (reach + radius + gap);
    Obstacle::new(
        Superquadric::sphere(radius).unwrap(),
        ObstacleState::fixed(Pose::from_translation(at)),
        RES,
    )
    .unwrap()
}

fn near_home(r: &mut impl Rng, model: &RobotModel) -> DVector<f64> {
    DVector::from_fn(model.dof(), |k, _| model.home[k] + r.gen_range(-0.4..0.4))
}

fn slack(row: &ConstraintRow, u: &DVector<f64>) -> f64 {
    row.coeffs.dot(u) - row.rhs
}

#[test]
fn slack_rows_leave_the_command_alone() {
    let mut f = filter();
    let model = f.model().clone();
    let mut r = rng(10);
    let mut checked = 0;
    for _ in 0..60 {
        let q = near_home(&mut r, &model);
        let obs = [ball_near(&mut r, &f, &q, 0.05..0.25)];
        let u = random_command(&mut r, &model.velocity_limits, 0.05);
        f.reset();
        f.set_previous(u.clone());
        let res = f.step(&q, &obs, &u).unwrap();
        if res.rows.iter().any(|row| slack(row, &u) <= 1e-9) {
            continue;
        }
        checked += 1;
        assert_eq!(res.status, FilterStatus::Optimal);
        assert!((&res.u_star - &u).amax() <= 1e-9, "{}", (&res.u_star - &u).amax());
        assert!(res.active.is_empty());
    }
    assert!(checked >= 30, "only {checked} instances had every row slack");
}

#[test]
fn optimal_solutions_satisfy_every_row() {
    let mut f = filter();
    let model = f.model().clone();
    let limits = model.velocity_limits.clone();
    let mut r = rng(11);
    let mut optimal = 0;
    let mut intervened = 0;
    for _ in 0..80 {
        let q = near_home(&mut r, &model);
        let obs: Vec<Obstacle> = (0..3)
            .map(|_| ball_near(&mut r, &f, &q, 0.0..0.08))
            .collect();
        let u = random_command(&mut r, &limits, 1.0);
        let res = f.step(&q, &obs, &u).unwrap();
        for k in 0..limits.len() {
            assert!(res.u_star[k].abs() <= limits[k] + 1e-12);
        }
        if res.status != FilterStatus::Optimal {
            continue;
        }
        optimal += 1;
        if (&res.u_star - &u).norm() > 1e-6 {
            intervened += 1;
        }
        for row in &res.rows {
            assert!(slack(row, &res.u_star) >= -1e-8, "{:?} {}", row.kind, slack(row, &res.u_star));
        }
    }
    assert!(optimal >= 60 && intervened >= 10, "{optimal} optimal, {intervened} intervened");
}

#[test]
fn scaling_a_row_does_not_move_the_solution() {
    let mut f = filter();
    let model = f.model().clone();
    let mut r = rng(12);
    for _ in 0..40 {
        let q = near_home(&mut r, &model);
        let obs: Vec<Obstacle> = (0..3)
            .map(|_| ball_near(&mut r, &f, &q, 0.0..0.05))
            .collect();
        let u = random_command(&mut r, &model.velocity_limits, 1.0);
        let res = f.observe(&q, &obs, &u).unwrap();
        let task = model.task_jacobian(&model.forward_kinematics(&q).unwrap());
        f.reset();
        let (base, status, _, _) = f.solve(&u, &task, &res.rows).unwrap();
        if status != FilterStatus::Optimal || res.rows.is_empty() {
            continue;
        }
        for _ in 0..3 {
            let mut rows = res.rows.clone();
            let k = r.gen_range(0..rows.len());
            let c = 10f64.powf(r.gen_range(-3.0..3.0));
            rows[k].coeffs *= c;
            rows[k].rhs *= c;
            f.reset();
            let (scaled, status, _, _) = f.solve(&u, &task, &rows).unwrap();
            assert_eq!(status, FilterStatus::Optimal);
            assert!((&scaled - &base).amax() <= 1e-8, "{}", (&scaled - &base).amax());
        }
    }
}

#[test]
fn solver_agrees_with_dual_ascent() {
    let mut f = filter();
    let mut r = rng(13);
    for _ in 0..30 {
        let (u_cmd, task, rows) = random_instance(&mut r, &f);
        f.reset();
        let (u, status, _, _) = f.solve(&u_cmd, &task, &rows).unwrap();
        assert_eq!(status, FilterStatus::Optimal);
        let (h, g) = f.objective(&u_cmd, &task);
        let limits = f.model().velocity_limits.clone();
        let reference = qp_reference(
            &ReferenceQp {
                h,
                g,
                a: DMatrix::from_fn(rows.len(), u.len(), |i, j| rows[i].coeffs[j]),
                b: DVector::from_fn(rows.len(), |i, _| rows[i].rhs),
                lower: -&limits,
                upper: limits,
            },
            1e-10,
        )
        .unwrap();
        assert!((&u - &reference).amax() <= 1e-6, "{}", (&u - &reference).amax());
    }
}

#[test]
fn approaching_ball_pushes_a_resting_robot_away() {
    let model = RobotModel::fr3_like();
    let poses = model.forward_kinematics(&model.home).unwrap();
    let ee = poses.ee.translation;
    let from = ee + Vec3::new(0.45, 0.0, 0.0);
    let to = ee + Vec3::new(0.05, 0.0, 0.0);
    let record = |p: Vec3| PoseRecord::from(&Pose::from_translation(p));
    let scenario = Scenario {
        name: "approach".into(),
        description: String::new(),
        robot: "fr3_like".into(),
        q0: None,
        duration: 2.0,
        period: 0.01,
        seed: 0,
        filter_enabled: true,
        filter: FilterConfig {
            resolution: 100,
            ..Default::default()
        },
        obstacles: vec![ObstacleSpec {
            name: "ball".into(),
            a: [0.05; 3],
            e: [1.0, 1.0],
            pose: record(from),
            motion: Motion::Waypoint {
                times: vec![0.0, 1.5],
                poses: vec![record(from), record(to)],
            },
        }],
        basket: None,
        controller: Controller::Hold,
    };
    let run = sim::run(&scenario).unwrap();
    assert!(run.log.iter().all(|c| c.u_cmd.iter().all(|&x| x == 0.0)));
    assert!(run.metrics.intervention_ratio > 0.0);
    assert!(run.metrics.d_min.unwrap() >= 0.0, "{:?}", run.metrics.d_min);
    assert!(run.metrics.h_min.unwrap() >= -1e-3, "{:?}", run.metrics.h_min);
}
