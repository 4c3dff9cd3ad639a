mod common;

use common::{longest_edge, random_pair, rng};
use rand::Rng;
use sqcbf::oracle::{implicit_sweep, linspace, sdf_reference, PenaltySchedule};

const RES: usize = 60;

#[test]
fn reference_distance_is_symmetric() {
    let mut r = rng(20);
    for _ in 0..30 {
        let target = if r.gen_bool(0.3) {
            -r.gen_range(0.001..0.02)
        } else {
            r.gen_range(0.001..0.3)
        };
        let p = random_pair(&mut r, target, 0.2, RES);
        let ab = sdf_reference(&p.a, &p.b);
        let ba = sdf_reference(&p.b, &p.a);
        assert!(ab.converged && ba.converged);
        assert!(
            (ab.signed_distance - ba.signed_distance).abs() <= 1e-8,
            "{} vs {}",
            ab.signed_distance,
            ba.signed_distance
        );
    }
}

#[test]
fn reference_is_bracketed_by_the_sampled_distance() {
    let mut r = rng(21);
    for _ in 0..40 {
        let target = r.gen_range(0.005..0.3);
        let p = random_pair(&mut r, target, 0.2, RES);
        let mesh = p.distance().signed_distance;
        let smooth = sdf_reference(&p.a, &p.b).signed_distance;
        let chord = longest_edge(&p.pa) + longest_edge(&p.pb);
        assert!(smooth <= mesh + 1e-8, "smooth {smooth} mesh {mesh}");
        assert!(smooth >= mesh - chord, "smooth {smooth} mesh {mesh} chord {chord}");
    }
}

#[test]
fn implicit_sweep_has_a_single_valley() {
    let xs = linspace(-3.0, 3.0, 61);
    let sweep = implicit_sweep(&xs, &PenaltySchedule::default(), 1e-4);
    let f: Vec<f64> = sweep.iter().map(|s| s.f_star).collect();
    let low = (0..f.len()).min_by(|&i, &j| f[i].total_cmp(&f[j])).unwrap();
    let tol = 1e-9;
    for i in 0..low {
        assert!(f[i + 1] <= f[i] + tol, "rises at x = {}", xs[i + 1]);
    }
    for i in low..f.len() - 1 {
        assert!(f[i + 1] >= f[i] - tol, "falls at x = {}", xs[i + 1]);
    }
}
