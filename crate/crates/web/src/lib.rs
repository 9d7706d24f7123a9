//! WebAssembly bindings behind `www/index.html`.
//!
//! Three views: the approach reward over the branch plane, a scripted
//! rollout stepped frame by frame, and the velocity profile of the flown
//! path. Everything also runs natively, which is how the tests drive it.

use perch_core::config::RunConfig;
use perch_core::demo::{scripted_episode, scripted_policy, DemoKind};
use perch_core::env::{EnvConfig, Observation, PerchEnv};
use perch_core::reward::{emit_heatmap, FrozenInputs, GridSpec, RewardConstants};
use perch_core::traj::{compute_velocity_profile, WaypointPath, CONTROL_PERIOD};
use perch_core::Vec3;
use wasm_bindgen::prelude::*;

fn kind(name: &str) -> Result<DemoKind, String> {
    match name {
        "A" | "a" => Ok(DemoKind::A),
        "A-" | "a-" => Ok(DemoKind::AMinus),
        "F" | "f" => Ok(DemoKind::F),
        other => Err(format!("unknown script '{other}'")),
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

fn env_config(tether_pct: f64, mass_pct: f64) -> EnvConfig {
    let mut cfg = EnvConfig::default();
    cfg.world = cfg.world.perturbed(tether_pct, mass_pct);
    cfg
}

/// Approach reward on an `n x n` grid spanning `±half` metres around the
/// branch, row-major with `z` increasing.
#[wasm_bindgen]
pub fn reward_heatmap(n: usize, half: f64, d_tb: f64) -> Result<Vec<f64>, JsError> {
    heatmap_values(n, half, d_tb).map_err(js)
}

pub fn heatmap_values(n: usize, half: f64, d_tb: f64) -> Result<Vec<f64>, String> {
    let grid = GridSpec { x_range: (-half, half), z_range: (-half, half), nx: n, nz: n };
    grid.validate()?;
    let frozen = FrozenInputs { d_tb, ..FrozenInputs::default() };
    let cfg = EnvConfig::default();
    let map = emit_heatmap(&RewardConstants::default(), &grid, &frozen, &cfg.world.branch);
    Ok(map.values.into_iter().flatten().collect())
}

/// A scripted episode that advances one control step per call.
#[wasm_bindgen]
pub struct Rollout {
    env: PerchEnv,
    policy: Box<dyn FnMut(&PerchEnv, &Observation) -> perch_core::env::Action + Send>,
    obs: Observation,
    total: f64,
    contact: bool,
}

#[wasm_bindgen]
impl Rollout {
    #[wasm_bindgen(constructor)]
    pub fn new(script: &str, seed: u64, tether_pct: f64, mass_pct: f64) -> Result<Rollout, JsError> {
        Self::create(script, seed, tether_pct, mass_pct).map_err(js)
    }

    /// Advances one step; false once the episode has ended.
    pub fn step(&mut self) -> Result<bool, JsError> {
        self.advance().map_err(js)
    }

    /// Quad position then every chain node, flattened `x, z` pairs relative to the branch.
    pub fn points(&self) -> Vec<f64> {
        let s = self.env.state();
        let c = s.branch.center;
        std::iter::once(s.quad_position).chain(s.tether.link_positions.iter().copied()).flat_map(|p| [p.x - c.x, p.z - c.z]).collect()
    }

    pub fn branch_radius(&self) -> f64 {
        self.env.state().branch.radius
    }

    pub fn wraps(&self) -> f64 {
        self.obs.wrap_count
    }

    pub fn total_reward(&self) -> f64 {
        self.total
    }

    pub fn contact(&self) -> bool {
        self.contact
    }

    pub fn steps(&self) -> usize {
        self.env.step_index()
    }

    pub fn done(&self) -> bool {
        self.env.is_done()
    }
}

impl Rollout {
    pub fn create(script: &str, seed: u64, tether_pct: f64, mass_pct: f64) -> Result<Rollout, String> {
        let mut env = PerchEnv::new(env_config(tether_pct, mass_pct)).map_err(|e| e.to_string())?;
        let obs = env.reset(seed);
        let policy = scripted_policy(kind(script)?, env.target(), seed);
        Ok(Rollout { env, policy, obs, total: 0.0, contact: false })
    }

    pub fn advance(&mut self) -> Result<bool, String> {
        if self.env.is_done() {
            return Ok(false);
        }
        let action = (self.policy)(&self.env, &self.obs);
        let t = self.env.step(action).map_err(|e| e.to_string())?;
        self.obs = t.next_observation;
        self.total += t.reward;
        self.contact = t.contact;
        Ok(!t.done)
    }
}

/// Speeds along the path of a scripted wrap. A non-positive `v_req` uses
/// the swing speed of the configured tether.
#[wasm_bindgen]
pub fn velocity_profile(seed: u64, a_max: f64, v_req: f64) -> Result<Vec<f64>, JsError> {
    profile_speeds(seed, a_max, v_req).map_err(js)
}

pub fn profile_speeds(seed: u64, a_max: f64, v_req: f64) -> Result<Vec<f64>, String> {
    if !(a_max > 0.0 && a_max.is_finite()) {
        return Err("a_max must be positive".into());
    }
    let run = RunConfig::default();
    let v_req = if v_req > 0.0 { v_req } else { run.v_req() };
    let mut env = PerchEnv::new(run.env).map_err(|e| e.to_string())?;
    let traj = scripted_episode(DemoKind::A, &mut env, seed).map_err(|e| e.to_string())?;
    let points: Vec<Vec3> =
        std::iter::once(traj[0].observation.quad_position).chain(traj.iter().map(|t| t.next_observation.quad_position)).collect();
    let path = WaypointPath::deduplicated(&points, CONTROL_PERIOD).map_err(|e| e.to_string())?;
    Ok(compute_velocity_profile(&path, a_max, v_req).speeds())
}
