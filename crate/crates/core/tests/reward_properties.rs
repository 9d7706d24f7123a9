use perch_core::reward::*;
use perch_core::sim::BranchGeometry;
use perch_core::Vec3;
use proptest::prelude::*;

fn k() -> RewardConstants {
    RewardConstants::default()
}

fn inputs(dx: f64, dz: f64, d_tb: f64, contact: bool, streak: u32, w: f64, speed: f64, len: f64) -> RewardInputs {
    let b = BranchGeometry::default();
    RewardInputs::from_geometry(b.center + Vec3::new(dx, 0.0, dz), speed, &b, &k(), d_tb, contact, streak, w, len)
}

prop_compose! {
    fn any_inputs()(dx in -5.0..5.0f64, dz in -5.0..5.0f64, d_tb in 0.0..4.0f64, contact: bool,
                    streak in 0u32..200, w in 0.0..4.0f64, speed in 0.0..5.0f64, len in 0.3..3.0f64) -> RewardInputs {
        inputs(dx, dz, d_tb, contact, streak, w, speed, len)
    }
}

proptest! {
    #[test]
    fn wrap_reward_in_open_unit_interval(w in 0.0..2.5f64) {
        let r = wrap_reward(w);
        prop_assert!(r > 0.0 && r < 1.0);
    }

    #[test]
    fn wrap_reward_strictly_increasing(a in 0.0..2.5f64, step in 1e-6..1.0f64) {
        prop_assert!(wrap_reward(a + step) > wrap_reward(a));
    }

    #[test]
    fn endwaypoint_non_increasing(a in 0.0..2.0f64, step in 0.0..1.0f64) {
        prop_assert!(endwaypoint_reward(a + step) <= endwaypoint_reward(a));
    }

    #[test]
    fn approach_in_open_interval(i in any_inputs()) {
        let r = approach_reward(&i, &k());
        prop_assert!(r > -1.0 && r < 1.0);
    }

    #[test]
    fn zone_penalty_never_positive(i in any_inputs()) {
        prop_assert!(zone_penalty(&i, &k()) <= 0.0);
    }

    #[test]
    fn phase_totals_within_bounds(i in any_inputs()) {
        let t = total_reward(&i, &k());
        match Phase::of_wrap(i.wrap) {
            Phase::Approach => prop_assert!(t > -2.0 && t < 3.0),
            Phase::Wrap => prop_assert!(t > 1.0 + k().collision_penalty && t < 4.0),
            _ => prop_assert!(t > 2.0 + 2.0 * wrap_reward(1.0) + k().collision_penalty - 1e-12 && t < 5.0),
        }
    }

    #[test]
    fn phases_are_exhaustive_and_exclusive(w in 0.0..3.0f64) {
        let p = Phase::of_wrap(w);
        let cases = [w <= 0.5, w > 0.5 && w < 1.0, w >= 1.0];
        prop_assert_eq!(cases.iter().filter(|c| **c).count(), 1);
        let expected = if cases[0] { Phase::Approach } else if cases[1] { Phase::Wrap } else { Phase::Hang };
        prop_assert_eq!(p, expected);
    }

    #[test]
    fn phase_one_and_two_ignore_tether_length(dx in -5.0..5.0f64, dz in -5.0..5.0f64, w in 0.0..0.99f64, a in 0.3..3.0f64, b in 0.3..3.0f64) {
        let (x, y) = (inputs(dx, dz, 0.5, true, 3, w, 0.1, a), inputs(dx, dz, 0.5, true, 3, w, 0.1, b));
        prop_assert_eq!(total_reward(&x, &k()).to_bits(), total_reward(&y, &k()).to_bits());
    }

    #[test]
    fn angles_in_range(i in any_inputs()) {
        prop_assert!((0.0..360.0).contains(&i.theta_dc));
        prop_assert!((0.0..360.0).contains(&i.theta_upper));
    }

    #[test]
    fn proximity_and_tether_are_continuous(d in 0.0..3.0f64, dt in 0.0..4.0f64) {
        let h = 1e-9;
        prop_assert!((proximity_reward(d + h, dt, &k()) - proximity_reward(d, dt, &k())).abs() < 1e-8);
        prop_assert!((proximity_reward(d, dt + h, &k()) - proximity_reward(d, dt, &k())).abs() < 1e-8);
        prop_assert!((tether_contact_reward(false, 0, d + h, &k()) - tether_contact_reward(false, 0, d, &k())).abs() < 1e-8);
    }
}

#[test]
fn approach_examples() {
    assert_eq!(approach_sum(&RewardInputs::default(), &k()).tanh(), approach_reward(&RewardInputs::default(), &k()));
    assert!((1.5f64.tanh() - 0.9051483).abs() < 1e-7);
}

#[test]
fn wrap_and_total_examples() {
    assert_eq!(wrap_reward(1.0), 0.5);
    assert!((wrap_reward(0.0) - 0.0179862).abs() < 1e-7);
    assert!((wrap_reward(2.0) - 0.9820138).abs() < 1e-7);
    let far = inputs(3.0, 0.0, 2.0, false, 0, 0.75, 0.0, 1.0);
    assert!((total_reward(&far, &k()) - 2.5378828).abs() < 1e-7);
    let hanging = inputs(0.0, -0.6, 2.0, false, 0, 1.2, 0.0, 1.0);
    assert!((total_reward(&hanging, &k()) - 4.3799490).abs() < 1e-7);
}

#[test]
fn phase_boundary_jump_matches_closed_form() {
    let below = inputs(1.5, 0.4, 0.8, false, 0, 0.5, 0.0, 1.0);
    let above = RewardInputs { wrap: 0.5 + 1e-12, ..below };
    let jump = total_reward(&above, &k()) - total_reward(&below, &k());
    let expected = (2.0 + 2.0 * wrap_reward(0.5) + collision_penalty(below.d_b, below.branch_radius, &k()))
        - (2.0 * approach_reward(&below, &k()) + wrap_reward(0.5));
    assert!((jump - expected).abs() < 1e-9, "jump {jump} vs {expected}");
}

#[test]
fn hang_zone_examples() {
    let t = Vec3::new(0.0, 0.0, 2.0);
    assert_eq!(hang_reward(t - Vec3::Z * 0.6, 0.0, t, 1.0, &k()), 1.0);
    assert_eq!(hang_reward(t + Vec3::Z * 0.6, 0.0, t, 1.0, &k()), 0.0);
    assert_eq!(hang_reward(t - Vec3::Z * 0.6, 1.0, t, 1.0, &k()), 0.0);
    assert_eq!(collision_penalty(0.05, 0.02, &k()), -1.0);
    assert_eq!(collision_penalty(0.5, 0.02, &k()), 0.0);
    assert_eq!(collision_penalty(0.02 + 0.1, 0.02, &k()), 0.0);
}

#[test]
fn heatmap_peaks_at_end_waypoint_and_penalises_the_lower_arc() {
    let grid = GridSpec::default();
    let b = BranchGeometry::default();
    let frozen = FrozenInputs::default();
    let map = emit_heatmap(&k(), &grid, &frozen, &b);
    let (i, j) = map.argmax();
    assert!((grid.x(i) - 0.3).abs() < 1e-12 && (grid.z(j) - 0.6).abs() < 1e-12, "argmax at ({}, {})", grid.x(i), grid.z(j));

    let cell = |x: f64, z: f64| {
        let i = (0..grid.nx).min_by(|a, c| (grid.x(*a) - x).abs().total_cmp(&(grid.x(*c) - x).abs())).unwrap();
        let j = (0..grid.nz).min_by(|a, c| (grid.z(*a) - z).abs().total_cmp(&(grid.z(*c) - z).abs())).unwrap();
        map.values[j][i]
    };
    // 0.3 m below the branch versus the mirrored cell above it, outside both arcs
    assert!(cell(0.0, -0.3) < cell(0.0, 0.3));

    let inside = |x: f64, z: f64| x.abs().max(z.abs()) <= frozen.workspace_half_extent;
    let mut lowest = f64::INFINITY;
    for (j, row) in map.values.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            assert!(*v > -1.0 && *v < 1.0);
            if inside(grid.x(i), grid.z(j)) {
                lowest = lowest.min(*v);
            }
        }
    }
    assert_eq!(cell(-6.0, -6.0), lowest);
    let mut csv = Vec::new();
    map.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next(), Some("x,z,value"));
    assert_eq!(text.lines().count(), 1 + grid.nx * grid.nz);
}
