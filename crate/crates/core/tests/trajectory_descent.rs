use perch_core::demo::{scripted_episode, DemoKind};
use perch_core::descent::*;
use perch_core::env::{EnvConfig, PerchEnv};
use perch_core::math::GRAVITY;
use perch_core::traj::*;
use perch_core::Vec3;
use proptest::prelude::*;

fn line(n: usize, step: f64) -> WaypointPath {
    WaypointPath::new((0..n).map(|i| Vec3::new(step * i as f64, 0.0, 1.0)).collect(), CONTROL_PERIOD).unwrap()
}

#[test]
fn recurrence_example() {
    let v = compute_velocity_profile(&line(10, 0.5), 40.0, 3.0).speeds();
    let expected = [0.0, 0.8, 1.6, 2.4, 3.0, 3.0, 3.0, 3.0];
    for (a, b) in v.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12, "{v:?}");
    }
}

#[test]
fn smooth_stop_cap() {
    let mut pts: Vec<Vec3> = (0..8).map(|i| Vec3::new(0.5 * i as f64, 0.0, 1.0)).collect();
    pts.push(Vec3::new(3.6, 0.0, 1.0));
    let v = compute_velocity_profile(&WaypointPath::new(pts, CONTROL_PERIOD).unwrap(), 40.0, 3.0).speeds();
    assert!(*v.last().unwrap() <= 8f64.sqrt() + 1e-12);
    let tiny = compute_velocity_profile(&line(2, 1.0), 40.0, 1e-12).speeds();
    assert!(tiny.iter().all(|s| *s <= 1e-12));
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("traj.csv");
    let traj = compute_velocity_profile(&line(5, 0.3), 40.0, 2.0);
    export_trajectory(&traj, &p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert_eq!(text.lines().next(), Some("index,x,y,z,speed"));
    assert_eq!(import_trajectory(&p).unwrap(), traj);
    assert_eq!(import_waypoints(&p).unwrap(), line(5, 0.3).waypoints);
}

#[test]
fn required_speed_scales_with_root_length() {
    let v1 = required_speed(1.0, GRAVITY, 1.1);
    assert!((v1 - (2.0 * GRAVITY).sqrt() * 1.1).abs() < 1e-12);
    assert!((required_speed(4.0, GRAVITY, 1.1) - 2.0 * v1).abs() < 1e-12);
}

prop_compose! {
    fn any_path()(pts in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, 0.0..3.0f64), 2..40)) -> Vec<Vec3> {
        pts.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect()
    }
}

proptest! {
    #[test]
    fn profile_is_feasible(pts in any_path(), a_max in 1.0..60.0f64, v_req in 0.1..8.0f64) {
        let Ok(path) = WaypointPath::deduplicated(&pts, CONTROL_PERIOD) else { return Ok(()) };
        let v = compute_velocity_profile(&path, a_max, v_req).speeds();
        let dv = a_max * CONTROL_PERIOD;
        prop_assert_eq!(v[0], 0.0);
        for w in v.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= dv + 1e-12);
        }
        prop_assert!(v.iter().all(|s| *s >= 0.0 && *s <= v_req + 1e-12));
        let n = path.waypoints.len();
        let last = path.waypoints[n - 1].distance(path.waypoints[n - 2]);
        prop_assert!(v[n - 1] <= (2.0 * a_max * last).sqrt() + 1e-12);
    }

    #[test]
    fn tilt_inverts_the_tension_law(f_ref in 0.0..2.3f64, thrust in 0.3..3.0f64) {
        let c = DescentConfig::default();
        let (phi, flagged) = tilt_setpoint_flagged(f_ref, thrust, c.mass, c.gravity, c.tilt_limit_deg);
        prop_assert!(phi >= 0.0 && phi <= c.tilt_limit_deg.to_radians() + 1e-15);
        let arg = (c.weight() - f_ref) / thrust;
        if !flagged && arg.acos() < c.tilt_limit_deg.to_radians() {
            prop_assert!((estimate_tension(thrust, phi, c.mass, c.gravity) - f_ref).abs() < 1e-9);
        }
    }

    #[test]
    fn schedule_is_monotone_and_bounded(a in 0.0..20.0f64, b in 0.0..20.0f64) {
        let c = DescentConfig::default();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (ta, tb) = (thrust_schedule(lo, &c), thrust_schedule(hi, &c));
        prop_assert!(tb <= ta + 1e-15);
        prop_assert!(tb >= c.thrust_end * c.hover_thrust - 1e-15 && ta <= c.thrust_start * c.hover_thrust + 1e-15);
        // Lipschitz with the ramp slope
        let slope = (c.thrust_start - c.thrust_end) * c.hover_thrust / c.ramp;
        prop_assert!(ta - tb <= slope * (hi - lo) + 1e-12);
    }
}

#[test]
fn wrapped_state_descends_without_early_disarm() {
    let cfg = EnvConfig::default();
    let mut env = PerchEnv::new(cfg.clone()).unwrap();
    let ts = scripted_episode(DemoKind::A, &mut env, 2).unwrap();
    assert!(ts.last().unwrap().next_observation.wrap_count >= 1.0);
    let dc = DescentConfig::default();
    let rows = simulate_descent(env.state(), cfg.sim.gravity, 1.0 / 240.0, &dc, 12.0).unwrap();
    let last = rows.last().unwrap();
    assert!((last.t - 12.0).abs() < 1e-6, "disarmed at {} s", last.t);
    assert!(rows.iter().all(|r| r.clearance >= dc.clearance_threshold && r.decision == Decision::Continue));
    // the rope carries load once the ramp is down
    let late: Vec<f64> = rows.iter().filter(|r| r.t > 10.0).map(|r| r.clearance).collect();
    let spread = late.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - late.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 0.05, "quad still moving, clearance spread {spread}");
    assert!(rows.iter().any(|r| r.tension > 0.0));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("descent.csv");
    write_descent_log(&rows, &p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().next(), Some("t,T,phi_d,f_hat,tension,clearance,decision"));
    assert_eq!(text.lines().count(), rows.len() + 1);
}

#[test]
fn low_clearance_disarms_immediately() {
    let cfg = EnvConfig::default();
    let mut env = PerchEnv::new(cfg.clone()).unwrap();
    env.reset(0);
    let mut world = env.state().clone();
    world.quad_position = world.branch.center + Vec3::new(0.0, 0.0, -0.2);
    world.quad_velocity = Vec3::ZERO;
    let rows = simulate_descent(&world, GRAVITY, 0.01, &DescentConfig::default(), 5.0).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].decision, Decision::Disarm);
}
