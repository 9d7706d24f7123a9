//! Speed set-points for a waypoint path under an acceleration limit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::IoError;
use crate::math::Vec3;

/// Default command period [s].
pub const CONTROL_PERIOD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPath {
    pub waypoints: Vec<Vec3>,
    pub control_period: f64,
}

impl WaypointPath {
    pub fn new(waypoints: Vec<Vec3>, control_period: f64) -> Result<Self, IoError> {
        if waypoints.len() < 2 {
            return Err(IoError::Invalid("a waypoint path needs at least 2 waypoints".into()));
        }
        if let Some(i) = waypoints.windows(2).position(|w| w[0] == w[1]) {
            return Err(IoError::Invalid(format!("waypoints {i} and {} coincide", i + 1)));
        }
        if !(control_period > 0.0) {
            return Err(IoError::Invalid("control period must be > 0".into()));
        }
        Ok(Self { waypoints, control_period })
    }

    /// Drops consecutive duplicates so the path is valid.
    pub fn deduplicated(waypoints: &[Vec3], control_period: f64) -> Result<Self, IoError> {
        let mut w: Vec<Vec3> = Vec::with_capacity(waypoints.len());
        for &p in waypoints {
            if w.last() != Some(&p) {
                w.push(p);
            }
        }
        Self::new(w, control_period)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub position: Vec3,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CommandTrajectory {
    pub commands: Vec<Command>,
}

impl CommandTrajectory {
    pub fn speeds(&self) -> Vec<f64> {
        self.commands.iter().map(|c| c.speed).collect()
    }
}

/// Speed at which the weight's kinetic energy covers the swing over a
/// branch: `√(2gℓ)·margin`.
pub fn required_speed(tether_length: f64, gravity: f64, margin: f64) -> f64 {
    (2.0 * gravity * tether_length).sqrt() * margin
}

/// Ramps up by `a_max·Δt_c` per waypoint to `v_req`, then caps the final
/// speed at `√(2·a_max·Δₙ)` and walks the cap backwards so that no step
/// changes speed by more than `a_max·Δt_c`.
pub fn compute_velocity_profile(path: &WaypointPath, a_max: f64, v_req: f64) -> CommandTrajectory {
    let dv = a_max * path.control_period;
    let n = path.waypoints.len();
    let mut v = vec![0.0; n];
    for i in 1..n {
        v[i] = (v[i - 1] + dv).min(v_req);
    }
    let last = path.waypoints[n - 1].distance(path.waypoints[n - 2]);
    v[n - 1] = v[n - 1].min((2.0 * a_max * last).sqrt());
    for i in (1..n).rev() {
        v[i - 1] = v[i - 1].min(v[i] + dv);
    }
    CommandTrajectory {
        commands: path.waypoints.iter().zip(v).map(|(&position, speed)| Command { position, speed }).collect(),
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    index: usize,
    x: f64,
    y: f64,
    z: f64,
    speed: f64,
}

pub fn export_trajectory(traj: &CommandTrajectory, path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for (index, c) in traj.commands.iter().enumerate() {
        let p = c.position;
        w.serialize(Row { index, x: p.x, y: p.y, z: p.z, speed: c.speed }).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| IoError::fs(path, e))
}

pub fn import_trajectory(path: &Path) -> Result<CommandTrajectory, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut commands = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        commands.push(Command { position: Vec3::new(row.x, row.y, row.z), speed: row.speed });
    }
    Ok(CommandTrajectory { commands })
}

/// Reads the `x`, `y`, `z` columns of a CSV file as waypoints.
pub fn import_waypoints(path: &Path) -> Result<Vec<Vec3>, IoError> {
    #[derive(Deserialize)]
    struct Point {
        x: f64,
        y: f64,
        z: f64,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize::<Point>()
        .map(|p| p.map(|p| Vec3::new(p.x, p.y, p.z)).map_err(|e| csv_error(path, e)))
        .collect()
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IoError::fs(path, io),
        other => IoError::Malformed { path: path.into(), line, message: format!("{other:?}") },
    }
}
