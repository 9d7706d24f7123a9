//! Fixed-timestep physics of the quadrotor, tether chain, perching weight and
//! branch.
//!
//! The quadrotor is a point mass tracking a waypoint with a clamped PD law.
//! The tether is a chain of point masses whose first link is pinned to the
//! quadrotor; the perching weight is the extra mass of the last link. Each
//! step integrates with semi-implicit Euler, then projects distance
//! constraints and branch contacts, then derives velocities from the
//! projected positions.

pub mod contact;
pub mod tether;

use serde::{Deserialize, Serialize};

pub use contact::{collide_cylinder, BranchGeometry, ContactOutcome};
pub use tether::{solve_tether_constraints, ConstraintReport, TetherChain, LENGTH_TOLERANCE};

use crate::error::SimError;
use crate::math::{Vec3, GRAVITY};
use contact::filter_contact_velocity;
use tether::Scratch;

/// Distance from the branch surface within which a link counts as touching.
pub const CONTACT_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub gravity: f64,
    pub constraint_iterations: usize,
    /// Tangential velocity retained by a link in contact with the branch.
    pub tether_friction: f64,
    pub kp: f64,
    pub kd: f64,
    pub max_speed: f64,
    pub max_accel: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 240.0,
            gravity: GRAVITY,
            constraint_iterations: 20,
            tether_friction: 0.9,
            kp: 20.0,
            kd: 9.0,
            max_speed: 5.0,
            max_accel: 40.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("sim.dt must be > 0");
        }
        if self.constraint_iterations < 1 {
            return bad("sim.constraint_iterations must be >= 1");
        }
        if !(self.max_accel > 0.0) {
            return bad("sim.max_accel must be > 0");
        }
        if !(self.max_speed > 0.0) {
            return bad("sim.max_speed must be > 0");
        }
        if !(0.0..=1.0).contains(&self.tether_friction) {
            return bad("sim.tether_friction must be in [0, 1]");
        }
        Ok(())
    }
}

/// Physical parameters of a world to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub quad_mass: f64,
    pub weight_mass: f64,
    pub tether_length: f64,
    pub tether_segments: usize,
    pub tether_mass: f64,
    pub branch: BranchGeometry,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            quad_mass: 0.23,
            weight_mass: 0.010,
            tether_length: 1.0,
            tether_segments: 20,
            tether_mass: 0.002,
            branch: BranchGeometry::default(),
        }
    }
}

impl WorldParams {
    /// Copy with tether length and weight mass scaled by percentage changes.
    /// Tether linear density is preserved.
    pub fn perturbed(&self, tether_pct: f64, mass_pct: f64) -> Self {
        let length_scale = 1.0 + tether_pct / 100.0;
        Self {
            tether_length: self.tether_length * length_scale,
            tether_mass: self.tether_mass * length_scale,
            weight_mass: (self.weight_mass * (1.0 + mass_pct / 100.0)).max(0.0),
            ..self.clone()
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub max_violation: f64,
    /// Any link within `CONTACT_MARGIN` of the branch surface.
    pub contact: bool,
    pub passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub quad_position: Vec3,
    pub quad_velocity: Vec3,
    pub quad_mass: f64,
    pub tether: TetherChain,
    pub branch: BranchGeometry,
    pub time: f64,
    /// Force the tether exerts on the quadrotor, from the last projection.
    pub tether_force: Vec3,
    pub diagnostics: StepDiagnostics,
}

impl WorldState {
    /// Quadrotor at `quad_position` with the tether hanging straight down at rest.
    pub fn at_rest(params: &WorldParams, quad_position: Vec3, gravity: f64) -> Result<Self, SimError> {
        if !(params.quad_mass > 0.0) {
            return Err(SimError::InvalidConfig("quad_mass must be > 0".into()));
        }
        let tether = TetherChain::hanging(
            quad_position,
            params.tether_segments,
            params.tether_length,
            params.tether_mass,
            params.weight_mass,
        )?;
        let tether_force = -Vec3::Z * (tether.suspended_mass() * gravity);
        let mut s = Self {
            quad_position,
            quad_velocity: Vec3::ZERO,
            quad_mass: params.quad_mass,
            tether,
            branch: params.branch,
            time: 0.0,
            tether_force,
            diagnostics: StepDiagnostics::default(),
        };
        s.diagnostics.contact = s.tether_contact();
        Ok(s)
    }

    pub fn weight_position(&self) -> Vec3 {
        self.tether.tip()
    }

    pub fn weight_mass(&self) -> f64 {
        self.tether.tip_mass
    }

    pub fn tether_contact(&self) -> bool {
        let limit = self.branch.radius + CONTACT_MARGIN;
        self.tether
            .link_positions
            .iter()
            .skip(1)
            .any(|p| self.branch.radial_distance(*p) <= limit)
    }

    fn check_finite(&self) -> Result<(), SimError> {
        let ok = self.quad_position.is_finite()
            && self.quad_velocity.is_finite()
            && self.tether.link_positions.iter().all(|p| p.is_finite())
            && self.tether.link_velocities.iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SimError::Divergence { time: self.time })
        }
    }
}

/// How the quadrotor is driven during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuadDrive {
    /// Clamped PD tracking of a position set-point.
    Waypoint(Vec3),
    /// Raw force [N] (thrust vector); gravity and tether force are added.
    Force(Vec3),
    /// Quadrotor held in place.
    Hold,
}

/// Advances the world by one `cfg.dt` tracking `waypoint`.
pub fn step_physics(state: &WorldState, waypoint: Vec3, cfg: &SimConfig) -> Result<WorldState, SimError> {
    let mut next = state.clone();
    step_in_place(&mut next, QuadDrive::Waypoint(waypoint), cfg)?;
    Ok(next)
}

/// In-place step; the workhorse behind `step_physics`.
pub fn step_in_place(state: &mut WorldState, drive: QuadDrive, cfg: &SimConfig) -> Result<(), SimError> {
    let dt = cfg.dt;
    let g = Vec3::Z * -cfg.gravity;
    let tether_accel = state.tether_force / state.quad_mass;

    match drive {
        QuadDrive::Waypoint(target) => {
            if !target.is_finite() {
                return Err(SimError::Divergence { time: state.time });
            }
            let pd = ((target - state.quad_position) * cfg.kp - state.quad_velocity * cfg.kd).clamp_norm(cfg.max_accel);
            // Thrust feed-forward carries the static weight of the suspended payload.
            let feed_forward = Vec3::Z * (state.tether.suspended_mass() * cfg.gravity / state.quad_mass);
            state.quad_velocity = (state.quad_velocity + (pd + tether_accel + feed_forward) * dt).clamp_norm(cfg.max_speed);
        }
        QuadDrive::Force(thrust) => {
            state.quad_velocity += (thrust / state.quad_mass + g + tether_accel) * dt;
        }
        QuadDrive::Hold => state.quad_velocity = Vec3::ZERO,
    }
    state.quad_position += state.quad_velocity * dt;

    let chain = &mut state.tether;
    let n = chain.segments();
    let previous = chain.link_positions.clone();
    for i in 1..=n {
        chain.link_velocities[i] += g * dt;
        let v = chain.link_velocities[i];
        chain.link_positions[i] += v * dt;
    }

    let inv = chain.inverse_masses();
    let mut scratch = Scratch::default();
    let report = tether::project(
        &mut chain.link_positions,
        &inv,
        chain.segment_length,
        state.quad_position,
        Some(&state.branch),
        cfg.constraint_iterations,
        &mut scratch,
    );

    let contact_limit = state.branch.radius + CONTACT_MARGIN;
    let mut contact = false;
    chain.link_velocities[0] = state.quad_velocity;
    for i in 1..=n {
        let p = chain.link_positions[i];
        let mut v = (p - previous[i]) / dt;
        let radial = state.branch.radial_offset(p);
        let d = radial.norm();
        if d <= contact_limit {
            contact = true;
            if let Some(normal) = radial.try_normalize() {
                if v.dot(normal) < 0.0 || d <= state.branch.radius + 1e-9 {
                    v = filter_contact_velocity(v, normal, cfg.tether_friction);
                }
            }
        }
        chain.link_velocities[i] = v;
    }

    let first = (chain.link_positions[1] - chain.link_positions[0]).try_normalize().unwrap_or(-Vec3::Z);
    state.tether_force = first * (report.anchor_impulse / (dt * dt));
    state.time += dt;
    state.diagnostics = StepDiagnostics {
        max_violation: report.max_violation,
        contact,
        passes: report.passes,
    };
    state.check_finite()
}

/// Smallest distance from a link in the final third of the chain (weight
/// end) to the branch center.
pub fn last_third_branch_distance(tether: &TetherChain, branch: &BranchGeometry) -> f64 {
    let n = tether.segments();
    let start = (2 * n).div_ceil(3);
    tether.link_positions[start..]
        .iter()
        .map(|p| p.distance(branch.center))
        .fold(f64::INFINITY, f64::min)
}
