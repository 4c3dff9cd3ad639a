mod common;

use std::time::Duration;

use common::{start, Client};

fn mean_interval(starts: &[f64]) -> f64 {
    (starts[starts.len() - 1] - starts[0]) / (starts.len() - 1) as f64
}

#[test]
fn disconnect_does_not_stall_control_loop() {
    let server = start("wall_crash");
    let mut c = Client::connect(server.addr());
    let mut seq = 0;
    c.hold_jog([0.1, 0.0, 0.0, 0.0, 0.0, 0.0], Duration::from_millis(1000), &mut seq);
    let before = server.timings().len();
    // Vanish without a close handshake.
    drop(c);
    std::thread::sleep(Duration::from_millis(1000));

    let timings = server.timings();
    let starts: Vec<f64> = timings.iter().map(|t| t.start).collect();
    let pre = mean_interval(&starts[before / 4..before]);
    let post = mean_interval(&starts[before..]);
    assert!(timings.len() - before > 80, "{} ticks after drop", timings.len() - before);
    // A stall would lengthen the period; losing the client thread may only
    // shorten it.
    assert!(post <= pre * 1.1, "period {pre} -> {post}");
    let gap = starts[before..]
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    assert!(gap < 0.1, "longest tick gap {gap}");

    // The operator's last command decays to a hold.
    let records = server.records();
    let last = records.last().unwrap();
    assert!(last.u_cmd.iter().all(|u| *u == 0.0));
    assert!(last.u_star.iter().all(|u| u.abs() < 1e-9));
    assert!(server.is_running());
}
