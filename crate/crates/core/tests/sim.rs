mod common;

use common::{rng, scenario, unit_vector};
use nalgebra::Vector6;
use proptest::prelude::*;
use rand::Rng;
use sqcbf::distance::{signed_distance, DistanceQuery};
use sqcbf::lie::{so3_log, Pose, PoseRecord, Vec3};
use sqcbf::sim::{self, build_basket, Motion};
use sqcbf::superquadric::{PosedSuperquadric, Superquadric};

const ADVERSARIAL: [&str; 13] = [
    "basket_l024",
    "basket_l032",
    "basket_l040",
    "dynamic_stick",
    "empty_goal",
    "goal_in_box",
    "pendulum_ball",
    "pillar_sweep",
    "self_fold",
    "shuttle_box",
    "table_press",
    "twin_pillars",
    "wall_crash",
];

fn fd_twist(m: &Motion, base: &Pose, t: f64, h: f64) -> Vector6<f64> {
    let p = m.state(base, t + h).pose;
    let q = m.state(base, t - h).pose;
    let v = (p.translation - q.translation) / (2.0 * h);
    let w = so3_log(&(p.rotation * q.rotation.transpose())) / (2.0 * h);
    Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
}

fn mesh_distance(a: &PosedSuperquadric, b: &PosedSuperquadric) -> f64 {
    let pa = a.shape.sample_shared(200).unwrap();
    let pb = b.shape.sample_shared(200).unwrap();
    signed_distance(&DistanceQuery::new(&pa, a.pose, &pb, b.pose))
        .unwrap()
        .signed_distance
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sinusoid_twist_is_the_pose_derivative(
        seed in any::<u64>(),
        t in 0.0..5.0f64,
    ) {
        let mut r = rng(seed);
        let mut vec3 = |s: f64| unit_vector(&mut r) * s;
        let m = Motion::Sinusoid {
            linear_amplitude: vec3(0.2).into(),
            angular_amplitude: vec3(0.8).into(),
            frequency: 0.7,
            phase: 0.3,
            pivot: Some(vec3(0.5).into()),
        };
        let base = Pose::from_parts(vec3(1.0), vec3(1.5));
        let exact = m.state(&base, t).twist;
        prop_assert!((exact - fd_twist(&m, &base, t, 1e-5)).amax() <= 1e-6);
    }

    #[test]
    fn waypoint_twist_is_the_pose_derivative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let times = vec![0.0, 0.7, 1.5, 2.0];
        let poses: Vec<PoseRecord> = times
            .iter()
            .map(|_| {
                let t = unit_vector(&mut r) * r.gen_range(0.0..1.0);
                let aa = unit_vector(&mut r) * r.gen_range(0.0..2.5);
                PoseRecord { t: t.into(), aa: aa.into() }
            })
            .collect();
        let m = Motion::Waypoint { times, poses };
        for t in [0.1, 0.35, 0.9, 1.2, 1.8] {
            let exact = m.state(&Pose::identity(), t).twist;
            prop_assert!((exact - fd_twist(&m, &Pose::identity(), t, 1e-6)).amax() <= 1e-8);
        }
        prop_assert_eq!(m.state(&Pose::identity(), 2.5).twist, Vector6::zeros());
    }
}

#[test]
fn basket_opposite_walls_are_l_and_half_l_apart() {
    for l in [0.24, 0.48] {
        let pose = Pose::from_parts(Vec3::new(0.5, -0.1, 0.2), Vec3::new(0.0, 0.0, 0.4));
        let parts = build_basket(l, 0.02, 0.15, &pose).unwrap();
        let across_x = mesh_distance(&parts[1], &parts[2]);
        let across_y = mesh_distance(&parts[3], &parts[4]);
        assert!((across_x - l / 2.0).abs() < 1e-6, "{across_x}");
        assert!((across_y - l).abs() < 1e-6, "{across_y}");
    }
    assert!(build_basket(0.0, 0.02, 0.15, &Pose::identity()).is_err());
}

#[test]
fn centered_body_is_equidistant_from_opposite_walls() {
    for l in [0.24, 0.32, 0.40] {
        let pose = Pose::from_parts(Vec3::new(0.6, 0.0, 0.1), Vec3::new(0.0, 0.0, 0.7));
        let parts = build_basket(l, 0.02, 0.15, &pose).unwrap();
        let body = PosedSuperquadric::new(
            Superquadric::new(0.04, 0.05, 0.03, 0.3, 0.3).unwrap(),
            pose.compose(&Pose::from_translation(Vec3::new(0.0, 0.0, 0.08))),
        );
        let dx = [mesh_distance(&body, &parts[1]), mesh_distance(&body, &parts[2])];
        let dy = [mesh_distance(&body, &parts[3]), mesh_distance(&body, &parts[4])];
        assert!((dx[0] - dx[1]).abs() <= 1e-9, "{dx:?}");
        assert!((dy[0] - dy[1]).abs() <= 1e-9, "{dy:?}");
    }
}

#[test]
fn identical_runs_log_identically() {
    let sc = scenario("pendulum_ball");
    let a = sim::run(&sc).unwrap();
    let b = sim::run(&sc).unwrap();
    assert_eq!(a.log.len(), b.log.len());
    for (x, y) in a.log.iter().zip(&b.log) {
        assert_eq!(x.without_timing(), y.without_timing());
    }
    let strip = |m: &sim::RunMetrics| sim::RunMetrics {
        cycle_time: Default::default(),
        ..m.clone()
    };
    assert_eq!(strip(&a.metrics), strip(&b.metrics));
}

#[test]
fn adversarial_suite_stays_clear_with_the_filter() {
    let runs = sim::run_batch(&ADVERSARIAL.map(scenario));
    for (name, run) in ADVERSARIAL.iter().zip(runs) {
        let run = run.unwrap();
        let m = &run.metrics;
        let logged = run.log.iter().filter_map(|c| c.d_min()).min_by(f64::total_cmp);
        assert_eq!(m.d_min, logged, "{name}");
        assert!(!m.halted, "{name} halted");
        assert!(m.d_min.unwrap() >= 0.0, "{name}: d_min {:?}", m.d_min);
        assert_eq!(m.penetrations, 0, "{name}");
    }
}

#[test]
fn unfiltered_runs_collide() {
    for name in ["basket_l024", "basket_l032", "basket_l040", "wall_crash"] {
        let sc = sim::variant(&scenario(name), 0, false);
        let m = sim::run(&sc).unwrap().metrics;
        assert!(!m.filter_enabled);
        assert_eq!(m.intervention_ratio, 0.0);
        assert!(m.d_min.unwrap() < 0.0, "{name}: d_min {:?}", m.d_min);
    }
}
