//! Shaped reward for the perching task and its X-Z heatmap.
//!
//! All terms are pure functions of geometric inputs. The contact streak is
//! owned by the environment and passed in.

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::sim::BranchGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConstants {
    /// Safe distance from the target [m].
    pub c_threshold: f64,
    pub c_scale: f64,
    pub c_max: f64,
    pub c_increment: f64,
    pub c_offset: f64,
    pub c_safe: f64,
    /// Height of the upper restricted arc center above the target [m].
    pub upper_arc_offset: f64,
    /// Desired end waypoint, relative to the target center [m].
    pub end_waypoint: Vec3,
    /// Hanging zone as fractions of the tether length.
    pub hang_inner: f64,
    pub hang_outer: f64,
    pub hang_speed: f64,
    /// Collision penalty applies below `radius + collision_margin`.
    pub collision_margin: f64,
    pub collision_penalty: f64,
    /// Reward of a step that leaves the workspace or diverges.
    pub exit_penalty: f64,
}

impl Default for RewardConstants {
    fn default() -> Self {
        Self {
            c_threshold: 1.0,
            c_scale: 1.0,
            c_max: 1.0,
            c_increment: 0.05,
            c_offset: 0.1,
            c_safe: 0.5,
            upper_arc_offset: 1.8,
            end_waypoint: Vec3::new(0.3, 0.0, 0.6),
            hang_inner: 0.3,
            hang_outer: 0.9,
            hang_speed: 0.2,
            collision_margin: 0.1,
            collision_penalty: -1.0,
            exit_penalty: -2.0,
        }
    }
}

impl RewardConstants {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("reward.c_threshold", self.c_threshold),
            ("reward.c_scale", self.c_scale),
            ("reward.c_max", self.c_max),
            ("reward.c_increment", self.c_increment),
            ("reward.c_offset", self.c_offset),
            ("reward.c_safe", self.c_safe),
            ("reward.upper_arc_offset", self.upper_arc_offset),
            ("reward.hang_speed", self.hang_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be > 0"));
            }
        }
        if !(0.0 <= self.hang_inner && self.hang_inner < self.hang_outer) {
            return Err("reward.hang_inner must be in [0, hang_outer)".into());
        }
        if !self.end_waypoint.is_finite() {
            return Err("reward.end_waypoint must be finite".into());
        }
        Ok(())
    }
}

/// Geometric and episode quantities the reward depends on.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardInputs {
    pub quad_position: Vec3,
    pub target: Vec3,
    /// Distance to the end waypoint.
    pub d_t: f64,
    /// Distance to the target center.
    pub d_b: f64,
    /// Last-third tether distance to the target center.
    pub d_tb: f64,
    pub contact: bool,
    pub streak: u32,
    pub wrap: f64,
    /// Angle of the quad about the target, degrees in [0, 360).
    pub theta_dc: f64,
    /// Angle of the quad about the upper arc center, degrees in [0, 360).
    pub theta_upper: f64,
    /// Distance to the upper arc center.
    pub d_upper: f64,
    pub quad_speed: f64,
    pub tether_length: f64,
    pub branch_radius: f64,
}

/// Angle of `p` about `center` in the branch plane, degrees in [0, 360).
pub fn angle_deg(p: Vec3, center: Vec3, branch: &BranchGeometry) -> f64 {
    let (e1, e2) = branch.plane_basis();
    let r = p - center;
    let deg = r.dot(e2).atan2(r.dot(e1)).to_degrees();
    let deg = if deg < 0.0 { deg + 360.0 } else { deg };
    if deg >= 360.0 {
        0.0
    } else {
        deg
    }
}

impl RewardInputs {
    /// Assembles inputs from world geometry.
    #[allow(clippy::too_many_arguments)]
    pub fn from_geometry(
        quad_position: Vec3,
        quad_speed: f64,
        branch: &BranchGeometry,
        k: &RewardConstants,
        d_tb: f64,
        contact: bool,
        streak: u32,
        wrap: f64,
        tether_length: f64,
    ) -> Self {
        let target = branch.center;
        let upper = target + Vec3::Z * k.upper_arc_offset;
        Self {
            quad_position,
            target,
            d_t: quad_position.distance(target + k.end_waypoint),
            d_b: quad_position.distance(target),
            d_tb,
            contact,
            streak,
            wrap,
            theta_dc: angle_deg(quad_position, target, branch),
            theta_upper: angle_deg(quad_position, upper, branch),
            d_upper: quad_position.distance(upper),
            quad_speed,
            tether_length,
            branch_radius: branch.radius,
        }
    }
}

pub fn proximity_reward(d_b: f64, d_t: f64, k: &RewardConstants) -> f64 {
    ((d_b - k.c_threshold) / k.c_scale).min(0.0).max(-1.0) + (1.0 - d_t / 2.0).tanh()
}

pub fn endwaypoint_reward(d_t: f64) -> f64 {
    if d_t < 0.05 {
        1.0
    } else if d_t < 0.10 {
        0.75
    } else if d_t < 0.25 {
        0.5
    } else if d_t < 0.50 {
        0.25
    } else if d_t < 1.00 {
        0.1
    } else {
        0.0
    }
}

pub fn tether_contact_reward(contact: bool, streak: u32, d_tb: f64, k: &RewardConstants) -> f64 {
    let sustained = if contact {
        k.c_max.min(streak as f64 * k.c_increment)
    } else {
        0.0
    };
    sustained + (1.0 - (d_tb - k.c_offset).max(0.0) / k.c_scale)
}

/// Restricted-zone penalty from the quad's position.
pub fn zone_penalty(i: &RewardInputs, k: &RewardConstants) -> f64 {
    let lower_arc = i.theta_dc >= 170.0 || i.theta_dc <= 10.0;
    if lower_arc && i.d_b <= k.c_safe {
        return i.d_b - k.c_safe;
    }
    if (0.0..=180.0).contains(&i.theta_upper) && i.d_upper <= k.c_safe {
        return -(k.c_safe - i.d_upper);
    }
    0.0
}

/// Sum of the four approach terms before squashing.
pub fn approach_sum(i: &RewardInputs, k: &RewardConstants) -> f64 {
    proximity_reward(i.d_b, i.d_t, k)
        + endwaypoint_reward(i.d_t)
        + tether_contact_reward(i.contact, i.streak, i.d_tb, k)
        + zone_penalty(i, k)
}

pub fn approach_reward(i: &RewardInputs, k: &RewardConstants) -> f64 {
    approach_sum(i, k).tanh()
}

pub fn wrap_reward(w: f64) -> f64 {
    0.5 * (1.0 + (2.0 * (w - 1.0)).tanh())
}

/// Inside the hanging zone: below the target, radial distance within
/// `[hang_inner, hang_outer]·ℓ`, and slow.
pub fn in_hang_zone(quad_position: Vec3, target: Vec3, tether_length: f64, k: &RewardConstants) -> bool {
    let below = quad_position.z < target.z;
    let r = quad_position.distance(target);
    below && r >= k.hang_inner * tether_length && r <= k.hang_outer * tether_length
}

pub fn hang_reward(quad_position: Vec3, quad_speed: f64, target: Vec3, tether_length: f64, k: &RewardConstants) -> f64 {
    if in_hang_zone(quad_position, target, tether_length, k) && quad_speed < k.hang_speed {
        1.0
    } else {
        0.0
    }
}

pub fn collision_penalty(d_b: f64, branch_radius: f64, k: &RewardConstants) -> f64 {
    if d_b < branch_radius + k.collision_margin {
        k.collision_penalty
    } else {
        0.0
    }
}

/// Maneuver phase from the wrap count. `w = 0.5` belongs to phase I.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "I")]
    Approach,
    #[serde(rename = "II")]
    Wrap,
    #[serde(rename = "IV")]
    Hang,
    #[serde(rename = "aborted")]
    Aborted,
}

impl Phase {
    pub fn of_wrap(w: f64) -> Phase {
        if w <= 0.5 {
            Phase::Approach
        } else if w < 1.0 {
            Phase::Wrap
        } else {
            Phase::Hang
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::Approach => "I",
            Phase::Wrap => "II",
            Phase::Hang => "IV",
            Phase::Aborted => "aborted",
        }
    }
}

pub fn total_reward(i: &RewardInputs, k: &RewardConstants) -> f64 {
    let wrap = wrap_reward(i.wrap);
    match Phase::of_wrap(i.wrap) {
        Phase::Approach => 2.0 * approach_reward(i, k) + wrap,
        Phase::Wrap => 2.0 + 2.0 * wrap + collision_penalty(i.d_b, i.branch_radius, k),
        _ => {
            2.0 + 2.0 * wrap
                + collision_penalty(i.d_b, i.branch_radius, k)
                + hang_reward(i.quad_position, i.quad_speed, i.target, i.tether_length, k)
        }
    }
}

/// Rectangular X-Z grid, inclusive of both range ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// X range relative to the target center [m].
    pub x_range: (f64, f64),
    pub z_range: (f64, f64),
    pub nx: usize,
    pub nz: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { x_range: (-6.0, 6.0), z_range: (-6.0, 6.0), nx: 241, nz: 241 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.nx < 2 || self.nz < 2 {
            return Err("heatmap resolution must be >= 2 per axis".into());
        }
        if !(self.x_range.0 < self.x_range.1 && self.z_range.0 < self.z_range.1) {
            return Err("heatmap ranges must be increasing".into());
        }
        Ok(())
    }

    pub fn x(&self, i: usize) -> f64 {
        lerp(self.x_range, i, self.nx)
    }

    pub fn z(&self, j: usize) -> f64 {
        lerp(self.z_range, j, self.nz)
    }
}

fn lerp(range: (f64, f64), i: usize, n: usize) -> f64 {
    offset(range, i, n, 0.0)
}

/// `lerp(range, i, n) - origin`, rounded once.
fn offset((lo, hi): (f64, f64), i: usize, n: usize, origin: f64) -> f64 {
    let m = (n - 1) as f64;
    (lo * (m - i as f64) + hi * i as f64 - origin * m) / m
}

/// Non-spatial inputs held fixed across a heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrozenInputs {
    pub d_tb: f64,
    pub contact: bool,
    pub streak: u32,
    pub workspace_half_extent: f64,
}

impl Default for FrozenInputs {
    fn default() -> Self {
        Self { d_tb: 1.0, contact: false, streak: 0, workspace_half_extent: 5.0 }
    }
}

/// `R_approach` sampled on an X-Z grid, `values[j][i]` at `(x(i), z(j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub grid: GridSpec,
    pub target: Vec3,
    pub values: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut v = f64::NEG_INFINITY;
        for (j, row) in self.values.iter().enumerate() {
            for (i, &c) in row.iter().enumerate() {
                if c > v {
                    v = c;
                    best = (i, j);
                }
            }
        }
        best
    }

    /// Rows of `x, z, value` with absolute coordinates.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,z,value")?;
        for (j, row) in self.values.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                writeln!(out, "{},{},{}", self.target.x + self.grid.x(i), self.target.z + self.grid.z(j), v)?;
            }
        }
        Ok(())
    }
}

/// Evaluates `R_approach` over the grid in the branch plane. Cells outside
/// the workspace take the minimum over the cells inside it.
pub fn emit_heatmap(k: &RewardConstants, grid: &GridSpec, frozen: &FrozenInputs, branch: &BranchGeometry) -> Heatmap {
    let target = branch.center;
    let mut values = vec![vec![0.0; grid.nx]; grid.nz];
    let mut inside_min = f64::INFINITY;
    let mut outside = Vec::new();
    for (j, row) in values.iter_mut().enumerate() {
        for (i, cell) in row.iter_mut().enumerate() {
            let (dx, dz) = (grid.x(i), grid.z(j));
            let q = target + Vec3::new(dx, 0.0, dz);
            let mut inputs = RewardInputs::from_geometry(q, 0.0, branch, k, frozen.d_tb, frozen.contact, frozen.streak, 0.0, 1.0);
            // exact on the lattice so tier edges fall on grid cells
            let ex = offset(grid.x_range, i, grid.nx, k.end_waypoint.x);
            let ez = offset(grid.z_range, j, grid.nz, k.end_waypoint.z);
            inputs.d_t = ex.hypot(k.end_waypoint.y).hypot(ez);
            *cell = approach_reward(&inputs, k);
            if dx.abs().max(dz.abs()) > frozen.workspace_half_extent {
                outside.push((i, j));
            } else {
                inside_min = inside_min.min(*cell);
            }
        }
    }
    if inside_min.is_finite() {
        for (i, j) in outside {
            values[j][i] = inside_min;
        }
    }
    Heatmap { grid: *grid, target, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> RewardConstants {
        RewardConstants::default()
    }

    #[test]
    fn proximity_examples() {
        assert_eq!(proximity_reward(1.0, 2.0, &k()), 0.0);
        assert!((proximity_reward(0.5, 0.0, &k()) - 0.2615941559557649).abs() < 1e-12);
        assert!((proximity_reward(0.0, 4.0, &k()) + 1.7615941559557650).abs() < 1e-12);
    }

    #[test]
    fn endwaypoint_tiers() {
        assert_eq!(endwaypoint_reward(0.04), 1.0);
        assert_eq!(endwaypoint_reward(0.30), 0.25);
        assert_eq!(endwaypoint_reward(1.00), 0.0);
        assert_eq!(endwaypoint_reward(0.05), 0.75);
        assert_eq!(endwaypoint_reward(0.50), 0.1);
    }

    #[test]
    fn tether_examples() {
        assert!((tether_contact_reward(true, 10, 0.1, &k()) - 1.5).abs() < 1e-12);
        assert_eq!(tether_contact_reward(true, 1000, 0.1, &k()), 2.0);
        assert!((tether_contact_reward(false, 0, 2.1, &k()) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zone_examples() {
        let b = BranchGeometry::default();
        let at = |dx: f64, dz: f64| {
            RewardInputs::from_geometry(b.center + Vec3::new(dx, 0.0, dz), 0.0, &b, &k(), 1.0, false, 0, 0.0, 1.0)
        };
        let below = at(0.0, -0.3);
        assert!((below.theta_dc - 270.0).abs() < 1e-9);
        assert!((zone_penalty(&below, &k()) + 0.2).abs() < 1e-12);
        assert!((zone_penalty(&at(0.0, 1.8 + 0.2), &k()) + 0.3).abs() < 1e-12);
        assert_eq!(zone_penalty(&at(2.0, 0.0), &k()), 0.0);
    }

    #[test]
    fn composition_examples() {
        assert!((wrap_reward(1.0) - 0.5).abs() < 1e-15);
        assert!((wrap_reward(0.0) - 0.017986209962091559).abs() < 1e-12);
        let mut i = RewardInputs { wrap: 0.75, d_b: 1.0, branch_radius: 0.02, ..Default::default() };
        assert!((total_reward(&i, &k()) - 2.5378828427399903).abs() < 1e-9);
        i.wrap = 1.2;
        i.target = Vec3::new(0.0, 0.0, 2.0);
        i.quad_position = Vec3::new(0.0, 0.0, 1.4);
        i.tether_length = 1.0;
        assert!((total_reward(&i, &k()) - 4.379949).abs() < 1e-6);
    }

    #[test]
    fn hang_and_collision() {
        let t = Vec3::new(0.0, 0.0, 2.0);
        assert_eq!(hang_reward(t - Vec3::Z * 0.6, 0.0, t, 1.0, &k()), 1.0);
        assert_eq!(hang_reward(t + Vec3::Z * 0.6, 0.0, t, 1.0, &k()), 0.0);
        assert_eq!(hang_reward(t - Vec3::Z * 0.6, 1.0, t, 1.0, &k()), 0.0);
        assert_eq!(collision_penalty(0.05, 0.02, &k()), -1.0);
        assert_eq!(collision_penalty(0.5, 0.02, &k()), 0.0);
        assert_eq!(collision_penalty(0.02 + k().collision_margin, 0.02, &k()), 0.0);
    }

    #[test]
    fn phases() {
        assert_eq!(Phase::of_wrap(0.3), Phase::Approach);
        assert_eq!(Phase::of_wrap(0.5), Phase::Approach);
        assert_eq!(Phase::of_wrap(0.75), Phase::Wrap);
        assert_eq!(Phase::of_wrap(1.0), Phase::Hang);
    }
}
