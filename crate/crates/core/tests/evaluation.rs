use perch_core::demo::DemoKind;
use perch_core::env::{Action, EnvConfig, Observation, PerchEnv, Transition};
use perch_core::error::EvalError;
use perch_core::eval::*;
use perch_core::learn::train::CurveRow;
use perch_core::reward::Phase;
use perch_core::Vec3;
use proptest::prelude::*;

fn transition(w: f64, done: bool) -> Transition {
    let o = Observation { quad_position: Vec3::ZERO, wrap_count: w, progress: 0.0 };
    Transition {
        observation: o,
        action: Action::new(Vec3::ZERO),
        reward: 0.0,
        next_observation: o,
        done,
        phase: Phase::of_wrap(w),
        contact: false,
        success: false,
    }
}

fn log(w: f64, strike: f64) -> EpisodeLog {
    EpisodeLog { transitions: vec![transition(0.0, false), transition(w, true)], min_strike_distance: strike }
}

#[test]
fn classification_examples() {
    let c = classify_success(&log(1.3, f64::INFINITY)).unwrap();
    assert_eq!((c.outcome, c.reclassified), (Outcome::Success, false));
    assert_eq!(classify_success(&log(0.8, f64::INFINITY)).unwrap().outcome, Outcome::Failure);
    let c = classify_success(&log(0.8, 0.03)).unwrap();
    assert_eq!((c.outcome, c.reclassified), (Outcome::Success, true));
    assert!(matches!(classify_success(&EpisodeLog { transitions: vec![], min_strike_distance: 1.0 }), Err(EvalError::Empty(_))));
    let open = EpisodeLog { transitions: vec![transition(0.2, false)], min_strike_distance: 1.0 };
    assert!(matches!(classify_success(&open), Err(EvalError::Truncated(_))));
}

proptest! {
    #[test]
    fn strict_wrap_rule_is_monotone(a in 0.0..3.0f64, b in 0.0..3.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let win = |w| classify_success(&log(w, f64::INFINITY)).unwrap().outcome == Outcome::Success;
        prop_assert!(!win(lo) || win(hi));
    }

    #[test]
    fn metrics_of_random_errors_are_consistent(e in prop::collection::vec(-2.0..2.0f64, 1..200)) {
        let m = Metrics::of(e.iter().copied());
        prop_assert!((m.mse - m.rmse * m.rmse).abs() <= 1e-12 * (1.0 + m.mse));
        prop_assert!(m.rmse + 1e-12 >= m.mbe.abs() && m.mae <= m.rmse + 1e-12);
    }
}

#[test]
fn metric_examples() {
    let r: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 1.0)).collect();
    let zero = trajectory_errors(&r, &r).unwrap();
    assert_eq!(zero.magnitude, Metrics::default());
    let shifted: Vec<Vec3> = r.iter().map(|p| *p + Vec3::X * 0.1).collect();
    let m = trajectory_errors(&r, &shifted).unwrap().x;
    for (got, want) in [(m.mbe, 0.1), (m.mae, 0.1), (m.rmse, 0.1), (m.mse, 0.01)] {
        assert!((got - want).abs() < 1e-12);
    }
    let m = Metrics::of([0.1, -0.1].into_iter());
    assert!(m.mbe.abs() < 1e-15 && (m.mae - 0.1).abs() < 1e-15 && (m.rmse - 0.1).abs() < 1e-15);
}

#[test]
fn four_decimal_total_row_is_the_axis_average() {
    let axis = |mbe, mae, rmse, mse| Metrics { mbe, mae, rmse, mse };
    let x = axis(0.0369, 0.1784, 0.2157, 0.0465);
    let y = axis(0.0142, 0.0356, 0.0401, 0.0016);
    let z = axis(-0.0077, 0.2163, 0.2443, 0.0597);
    let total = Metrics::mean(&[x, y, z]);
    for (got, rounded) in [(total.mbe, 0.0145), (total.mae, 0.1434), (total.rmse, 0.1667), (total.mse, 0.0359)] {
        assert!((got - rounded).abs() <= 0.5e-4, "{got} vs {rounded}");
    }
}

#[test]
fn grid_is_the_two_tier_pattern_on_both_axes() {
    let axis = sweep_axis();
    assert_eq!(axis.len(), 51);
    assert!(axis.contains(&-100.0) && axis.contains(&300.0) && axis.contains(&120.0) && !axis.contains(&105.0));
    let axes = sweep_points(SweepLayout::Axes);
    assert_eq!(axes.len(), 101);
    assert!(axes.iter().all(|(a, b)| *a == 0.0 || *b == 0.0));
}

#[test]
fn nominal_scripted_point_succeeds_and_failures_give_no_interval() {
    let base = EnvConfig::default();
    let r = robustness_sweep(&base, &SweepPolicy::Scripted(DemoKind::A), &[(0.0, 0.0), (-100.0, 0.0)], 40).unwrap();
    assert_eq!(r.points.len(), 1);
    assert_eq!(r.points[0].successes, 5);
    assert_eq!(r.skipped, vec![(-100.0, 0.0)]);
    assert_eq!((r.tether_interval, r.mass_interval), (Some((0.0, 0.0)), Some((0.0, 0.0))));

    let r = robustness_sweep(&base, &SweepPolicy::Scripted(DemoKind::F), &[(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)], 40).unwrap();
    assert!(r.points.iter().all(|p| p.successes == 0));
    assert_eq!((r.tether_interval, r.mass_interval), (None, None));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sweep.csv");
    r.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("dl_pct,dm_pct,successes"));
    assert_eq!(r.summary_json()["tether_length"], serde_json::Value::Null);
}

#[test]
fn recorded_episode_has_a_snapshot_per_state() {
    let mut env = PerchEnv::new(EnvConfig::default()).unwrap();
    let (log, snaps) = run_episode_recorded(&mut env, &SweepPolicy::Scripted(DemoKind::A), 1).unwrap();
    assert_eq!(snaps.len(), log.transitions.len() + 1);
    assert!(snaps.windows(2).all(|w| w[1].time > w[0].time));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("snap.csv");
    write_snapshots(&snaps, &p).unwrap();
    let header = std::fs::read_to_string(&p).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "time,quad_x,quad_y,quad_z,weight_x,weight_y,weight_z,wrap_angle");
}

fn rows(values: &[(usize, f64)]) -> Vec<CurveRow> {
    values.iter().map(|&(s, v)| CurveRow { env_step: s, episode_reward: None, validation_return: Some(v) }).collect()
}

#[test]
fn curve_aggregation() {
    let flat = rows(&[(100, 2.0), (200, 2.0), (300, 2.0)]);
    let s = aggregate_curves(&[("a".into(), flat)], CurveSeries::Validation, 3, 10.0);
    assert!(s.curves[0].values.iter().all(|v| *v == 2.0));
    assert_eq!(s.steps_to_threshold["a"], None);

    let raw = [1.0, 5.0, 2.0, 8.0];
    assert_eq!(moving_average(&raw, 1), raw.to_vec());

    let run = |hit: usize| rows(&[(hit - 5000, 0.0), (hit, 1.0)]);
    let s = aggregate_curves(&[("fd".into(), run(10_000)), ("fd".into(), run(20_000))], CurveSeries::Validation, 1, 1.0);
    assert_eq!(s.steps_to_threshold["fd"], Some(15_000.0));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("curves.csv");
    write_curves_csv(&s, &p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 5);
}
