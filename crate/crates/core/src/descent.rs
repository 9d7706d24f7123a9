//! Descent after wrapping: tilt set-point from the tension law, thrust
//! hold-and-ramp, tension estimate and the disarm decision.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IoError, SimError};
use crate::math::{Vec3, GRAVITY};
use crate::sim::WorldState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentConfig {
    /// Vehicle mass used by the tension law [kg].
    pub mass: f64,
    pub gravity: f64,
    /// Hover thrust [N].
    pub hover_thrust: f64,
    pub thrust_start: f64,
    pub thrust_end: f64,
    /// Taut hold before the ramp [s].
    pub hold: f64,
    /// Ramp duration [s].
    pub ramp: f64,
    pub tilt_limit_deg: f64,
    pub clearance_threshold: f64,
    /// Low-thrust disarm level as a fraction of hover thrust.
    pub low_thrust_fraction: f64,
    /// Time the thrust must stay below that level [s].
    pub low_thrust_time: f64,
    /// Desired tether tension [N].
    pub f_ref: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        let weight = 2.3;
        Self {
            mass: weight / GRAVITY,
            gravity: GRAVITY,
            hover_thrust: weight,
            thrust_start: 0.70,
            thrust_end: 0.30,
            hold: 3.0,
            ramp: 4.0,
            tilt_limit_deg: 25.0,
            clearance_threshold: 0.3,
            low_thrust_fraction: 0.18,
            low_thrust_time: 0.5,
            f_ref: 0.9,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 < self.thrust_end && self.thrust_end < self.thrust_start && self.thrust_start <= 1.0) {
            return Err("descent thrust fractions must satisfy 0 < thrust_end < thrust_start <= 1".into());
        }
        if !(self.mass > 0.0 && self.hover_thrust > 0.0) {
            return Err("descent.mass and descent.hover_thrust must be > 0".into());
        }
        if !(self.hold >= 0.0 && self.ramp > 0.0 && self.low_thrust_time >= 0.0) {
            return Err("descent durations must be non-negative (ramp > 0)".into());
        }
        if !(self.tilt_limit_deg > 0.0 && self.tilt_limit_deg < 90.0) {
            return Err("descent.tilt_limit_deg must be in (0, 90)".into());
        }
        Ok(())
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }

    /// End of the thrust ramp [s].
    pub fn ramp_end(&self) -> f64 {
        self.hold + self.ramp
    }
}

/// Tilt giving tension `f_ref` at thrust `thrust`; the arccos argument is
/// clamped to `[-1, 1]` and the angle to the tilt limit. The flag reports
/// that the argument exceeded 1.
pub fn tilt_setpoint_flagged(f_ref: f64, thrust: f64, mass: f64, gravity: f64, limit_deg: f64) -> (f64, bool) {
    let arg = (mass * gravity - f_ref) / thrust;
    let saturated = arg > 1.0;
    let phi = arg.clamp(-1.0, 1.0).acos();
    (phi.min(limit_deg.to_radians()), saturated)
}

pub fn tilt_setpoint(f_ref: f64, thrust: f64, mass: f64, gravity: f64) -> f64 {
    tilt_setpoint_flagged(f_ref, thrust, mass, gravity, 25.0).0
}

/// Hold at `thrust_start`, ramp linearly to `thrust_end`, then plateau.
pub fn thrust_schedule(elapsed: f64, cfg: &DescentConfig) -> f64 {
    let frac = if elapsed < cfg.hold {
        cfg.thrust_start
    } else if elapsed < cfg.ramp_end() {
        let s = (elapsed - cfg.hold) / cfg.ramp;
        cfg.thrust_start + (cfg.thrust_end - cfg.thrust_start) * s
    } else {
        cfg.thrust_end
    };
    frac * cfg.hover_thrust
}

pub fn estimate_tension(thrust: f64, phi: f64, mass: f64, gravity: f64) -> f64 {
    mass * gravity - thrust * phi.cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Continue,
    Disarm,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DescentState {
    pub elapsed: f64,
    pub tilt: f64,
    pub thrust: f64,
    pub tension: f64,
    pub low_thrust_timer: f64,
    /// Latched once the disarm condition held.
    pub disarmed: bool,
}

impl DescentState {
    /// Advances the controller by `dt` given the measured thrust and
    /// clearance, and returns the decision. Disarm is latched.
    pub fn advance(&mut self, dt: f64, thrust: f64, clearance: f64, cfg: &DescentConfig) -> Decision {
        self.elapsed += dt;
        self.thrust = thrust;
        if thrust < cfg.low_thrust_fraction * cfg.hover_thrust {
            self.low_thrust_timer += dt;
        } else {
            self.low_thrust_timer = 0.0;
        }
        descent_terminated(self, clearance, cfg)
    }
}

/// Disarm below the clearance threshold or after sustained low thrust.
pub fn descent_terminated(state: &mut DescentState, clearance: f64, cfg: &DescentConfig) -> Decision {
    // small slack absorbs timer round-off from repeated dt sums
    let low = state.low_thrust_timer >= cfg.low_thrust_time - 1e-9;
    if state.disarmed || clearance < cfg.clearance_threshold || low {
        state.disarmed = true;
        Decision::Disarm
    } else {
        Decision::Continue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentLogRow {
    pub t: f64,
    #[serde(rename = "T")]
    pub thrust: f64,
    pub phi_d: f64,
    pub f_hat: f64,
    /// Tension in the simulated rope [N].
    pub tension: f64,
    pub clearance: f64,
    pub decision: Decision,
}

pub fn write_descent_log(rows: &[DescentLogRow], path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::traj::csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| crate::traj::csv_error(path, e))?;
    }
    w.flush().map_err(|e| IoError::fs(path, e))
}

/// Point of the tether taken as locked by the wrap: the first link from
/// the quad side touching the branch, else the link closest to it.
pub fn wrap_anchor(world: &WorldState) -> Vec3 {
    let b = &world.branch;
    let links = &world.tether.link_positions;
    let limit = b.radius + crate::sim::CONTACT_MARGIN;
    links
        .iter()
        .skip(1)
        .find(|p| b.radial_distance(**p) <= limit)
        .or_else(|| links.iter().min_by(|p, q| b.radial_distance(**p).total_cmp(&b.radial_distance(**q))))
        .copied()
        .unwrap_or(b.center)
}

/// Flies the descent law from `world` until disarm or `max_time`.
///
/// The quad is a point mass on an inextensible rope to [`wrap_anchor`],
/// integrated with step `dt`. Thrust tilts by the set-point away from the
/// anchor in the horizontal plane.
pub fn simulate_descent(world: &WorldState, gravity: f64, dt: f64, cfg: &DescentConfig, max_time: f64) -> Result<Vec<DescentLogRow>, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidConfig("descent time step must be > 0".into()));
    }
    let anchor = wrap_anchor(world);
    let (mut x, mut v) = (world.quad_position, world.quad_velocity);
    let rope = x.distance(anchor);
    let m = world.quad_mass;
    let b = &world.branch;
    let mut state = DescentState::default();
    let mut rows = Vec::new();
    let steps = (max_time / dt).ceil() as usize;
    for _ in 0..steps {
        let thrust = thrust_schedule(state.elapsed, cfg);
        let (phi, _) = tilt_setpoint_flagged(cfg.f_ref, thrust, cfg.mass, cfg.gravity, cfg.tilt_limit_deg);
        let out = x - anchor;
        let away = Vec3::new(out.x, out.y, 0.0).try_normalize().unwrap_or(Vec3::X);
        let force = (Vec3::Z * phi.cos() + away * phi.sin()) * thrust;
        v += (force / m - Vec3::Z * gravity) * dt;
        x += v * dt;
        let mut tension = 0.0;
        let r = x - anchor;
        let d = r.norm();
        if d > rope {
            let n = r / d;
            x = anchor + n * rope;
            let vn = v.dot(n);
            if vn > 0.0 {
                v -= n * vn;
                tension = m * vn / dt;
            }
        }
        if !(x.is_finite() && v.is_finite()) {
            return Err(SimError::Divergence { time: state.elapsed });
        }
        let clearance = b.radial_distance(x) - b.radius;
        let decision = state.advance(dt, thrust, clearance, cfg);
        rows.push(DescentLogRow {
            t: state.elapsed,
            thrust,
            phi_d: phi,
            f_hat: estimate_tension(thrust, phi, cfg.mass, cfg.gravity),
            tension,
            clearance,
            decision,
        });
        if decision == Decision::Disarm {
            break;
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tilt_examples() {
        let (mg, t) = (2.3, 1.61);
        let m = mg / GRAVITY;
        assert!(tilt_setpoint(mg - t, t, m, GRAVITY).abs() < 1e-9);
        let (phi, sat) = tilt_setpoint_flagged(0.9, t, m, GRAVITY, 25.0);
        assert!(!sat);
        assert!((phi - 25f64.to_radians()).abs() < 1e-12);
        let unclamped = ((mg - 0.9) / t).acos().to_degrees();
        assert!((unclamped - 29.591846).abs() < 1e-5);
        let edge = mg - t * 25f64.to_radians().cos();
        assert!((tilt_setpoint(edge, t, m, GRAVITY) - 25f64.to_radians()).abs() < 1e-9);
        let (phi, sat) = tilt_setpoint_flagged(0.0, 1.0, m, GRAVITY, 25.0);
        assert!(sat && phi == 0.0);
    }

    #[test]
    fn schedule_examples() {
        let c = DescentConfig::default();
        let h = c.hover_thrust;
        assert!((thrust_schedule(2.0, &c) - 0.7 * h).abs() < 1e-12);
        assert!((thrust_schedule(5.0, &c) - 0.5 * h).abs() < 1e-12);
        assert!((thrust_schedule(10.0, &c) - 0.3 * h).abs() < 1e-12);
    }

    #[test]
    fn tension_examples() {
        assert!(estimate_tension(2.3, 0.0, 2.3 / GRAVITY, GRAVITY).abs() < 1e-12);
        let f = estimate_tension(1.61, 20f64.to_radians(), 2.3 / GRAVITY, GRAVITY);
        assert!((f - 0.787095).abs() < 1e-5);
        assert!((estimate_tension(0.0, 0.3, 2.3 / GRAVITY, GRAVITY) - 2.3).abs() < 1e-12);
    }

    #[test]
    fn termination_examples() {
        let c = DescentConfig::default();
        let mut s = DescentState::default();
        assert_eq!(descent_terminated(&mut s, 0.25, &c), Decision::Disarm);
        let low = 0.17 * c.hover_thrust;
        let run = |secs: f64| {
            let mut s = DescentState::default();
            let dt = 0.01;
            let mut d = Decision::Continue;
            for _ in 0..(secs / dt).round() as usize {
                d = s.advance(dt, low, 1.0, &c);
            }
            d
        };
        assert_eq!(run(0.4), Decision::Continue);
        assert_eq!(run(0.6), Decision::Disarm);
    }
}
