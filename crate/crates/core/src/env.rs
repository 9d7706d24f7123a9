//! Episode semantics over the physics: observation/action contract, wrap
//! accumulation, phases, termination and early stop.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::math::{wrap_to_pi, Vec3};
use crate::reward::{self, Phase, RewardConstants, RewardInputs};
use crate::sim::{last_third_branch_distance, step_in_place, BranchGeometry, QuadDrive, SimConfig, WorldParams, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    #[serde(rename = "pos")]
    pub quad_position: Vec3,
    #[serde(rename = "w")]
    pub wrap_count: f64,
    #[serde(rename = "eta")]
    pub progress: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action {
    pub waypoint: Vec3,
}

impl Action {
    pub fn new(waypoint: Vec3) -> Self {
        Self { waypoint }
    }
}

/// Accumulated signed angle of the weight about the branch axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WrapTracker {
    pub accumulated_angle: f64,
    pub previous_angle: f64,
}

impl WrapTracker {
    /// Tracker seeded with the weight's current angle.
    pub fn starting_at(weight: Vec3, branch: &BranchGeometry) -> Self {
        Self { accumulated_angle: 0.0, previous_angle: branch.angle_of(weight).unwrap_or(0.0) }
    }

    pub fn wraps(&self) -> f64 {
        self.accumulated_angle.abs() / std::f64::consts::TAU
    }

    /// Adds the normalised angle increment and returns the wrap count.
    /// A weight on the axis contributes nothing.
    pub fn update(&mut self, weight: Vec3, branch: &BranchGeometry) -> f64 {
        match branch.angle_of(weight) {
            Some(theta) => {
                self.accumulated_angle += wrap_to_pi(theta - self.previous_angle);
                self.previous_angle = theta;
            }
            None => log::warn!("perching weight on the branch axis, wrap increment skipped"),
        }
        self.wraps()
    }
}

pub fn update_wrap(tracker: WrapTracker, weight_pos: Vec3, branch: &BranchGeometry) -> (WrapTracker, f64) {
    let mut t = tracker;
    let w = t.update(weight_pos, branch);
    (t, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    /// Waypoint in world coordinates.
    Absolute,
    /// Waypoint relative to the current quad position.
    Offset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub substeps_per_action: usize,
    pub workspace_half_extent: f64,
    /// Start position relative to the target center.
    pub start_position: Vec3,
    /// Half-width of the seeded uniform start jitter in X and Z [m].
    pub start_jitter: f64,
    pub hang_speed_threshold: f64,
    pub action_mode: ActionMode,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 300,
            substeps_per_action: 60,
            workspace_half_extent: 5.0,
            start_position: Vec3::new(-2.0, 0.0, 0.6),
            start_jitter: 0.05,
            hang_speed_threshold: 0.2,
            action_mode: ActionMode::Absolute,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.max_steps < 1 {
            return bad("episode.max_steps must be >= 1");
        }
        if self.substeps_per_action < 1 {
            return bad("episode.substeps_per_action must be >= 1");
        }
        if !(self.workspace_half_extent > 0.0) {
            return bad("episode.workspace_half_extent must be > 0");
        }
        if !(self.start_jitter >= 0.0) {
            return bad("episode.start_jitter must be >= 0");
        }
        if self.start_position.max_abs() + self.start_jitter > self.workspace_half_extent {
            return bad("episode.start_position lies outside the workspace");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(rename = "obs")]
    pub observation: Observation,
    #[serde(rename = "act")]
    pub action: Action,
    #[serde(rename = "rew")]
    pub reward: f64,
    #[serde(rename = "next_obs")]
    pub next_observation: Observation,
    pub done: bool,
    pub phase: Phase,
    /// Tether touched the branch during the step.
    #[serde(default)]
    pub contact: bool,
    /// Episode ended in the hanging zone.
    #[serde(default)]
    pub success: bool,
}

impl Transition {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("transition serialises")
    }
}

/// Writes one JSON object per transition.
pub fn write_jsonl<W: Write>(mut out: W, transitions: &[Transition]) -> std::io::Result<()> {
    for t in transitions {
        writeln!(out, "{}", t.to_json_line())?;
    }
    Ok(())
}

/// Reads a JSON-lines transition stream; errors carry the 1-based line.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Transition>, (usize, String)> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| (n + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| (n + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn phase_of(observation: &Observation) -> Phase {
    Phase::of_wrap(observation.wrap_count)
}

/// Everything needed to build an environment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub world: WorldParams,
    pub sim: SimConfig,
    pub episode: EpisodeConfig,
    pub reward: RewardConstants,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.sim.validate()?;
        self.episode.validate()?;
        self.reward.validate().map_err(SimError::InvalidConfig)
    }
}

#[derive(Debug, Clone)]
pub struct PerchEnv {
    pub config: EnvConfig,
    state: WorldState,
    wrap: WrapTracker,
    step_index: usize,
    streak: u32,
    done: bool,
    observation: Observation,
    /// Smallest weight-to-quad distance seen while wrapping.
    min_strike_distance: f64,
}

impl PerchEnv {
    pub fn new(config: EnvConfig) -> Result<Self, SimError> {
        config.validate()?;
        let state = WorldState::at_rest(&config.world, config.world.branch.center, config.sim.gravity)?;
        let mut env = Self {
            config,
            wrap: WrapTracker::default(),
            state,
            step_index: 0,
            streak: 0,
            done: true,
            observation: Observation { quad_position: Vec3::ZERO, wrap_count: 0.0, progress: 0.0 },
            min_strike_distance: f64::INFINITY,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn target(&self) -> Vec3 {
        self.config.world.branch.center
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn observation(&self) -> Observation {
        self.observation
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn contact_streak(&self) -> u32 {
        self.streak
    }

    /// Closest approach of the weight to the quad or the upper tether
    /// during phase II so far.
    pub fn min_strike_distance(&self) -> f64 {
        self.min_strike_distance
    }

    /// Quad at the (jittered) start pose over a vertical tether at rest.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let ep = &self.config.episode;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = ep.start_jitter;
        let jitter = if j > 0.0 {
            Vec3::new(rng.gen_range(-j..=j), 0.0, rng.gen_range(-j..=j))
        } else {
            Vec3::ZERO
        };
        let start = self.target() + ep.start_position + jitter;
        self.state = WorldState::at_rest(&self.config.world, start, self.config.sim.gravity)
            .expect("world parameters validated at construction");
        self.wrap = WrapTracker::starting_at(self.state.weight_position(), &self.state.branch);
        self.step_index = 0;
        self.streak = 0;
        self.done = false;
        self.min_strike_distance = f64::INFINITY;
        self.observation = Observation { quad_position: start, wrap_count: 0.0, progress: 0.0 };
        self.observation
    }

    /// Waypoint actually tracked for `action`, clamped to the workspace.
    pub fn resolve_waypoint(&self, action: &Action) -> Vec3 {
        let raw = match self.config.episode.action_mode {
            ActionMode::Absolute => action.waypoint,
            ActionMode::Offset => self.state.quad_position + action.waypoint,
        };
        self.clamp_to_workspace(raw)
    }

    fn requested(&self, action: &Action) -> Vec3 {
        match self.config.episode.action_mode {
            ActionMode::Absolute => action.waypoint,
            ActionMode::Offset => self.state.quad_position + action.waypoint,
        }
    }

    pub fn clamp_to_workspace(&self, p: Vec3) -> Vec3 {
        let h = self.config.episode.workspace_half_extent;
        let c = self.target();
        Vec3::new(
            p.x.clamp(c.x - h, c.x + h),
            p.y.clamp(c.y - h, c.y + h),
            p.z.clamp(c.z - h, c.z + h),
        )
    }

    fn outside_workspace(&self, p: Vec3) -> bool {
        (p - self.target()).max_abs() > self.config.episode.workspace_half_extent
    }

    /// Reward inputs for the current state.
    pub fn reward_inputs(&self, contact: bool) -> RewardInputs {
        let s = &self.state;
        RewardInputs::from_geometry(
            s.quad_position,
            s.quad_velocity.norm(),
            &s.branch,
            &self.config.reward,
            last_third_branch_distance(&s.tether, &s.branch),
            contact,
            self.streak,
            self.wrap.wraps(),
            s.tether.total_length,
        )
    }

    /// Hang success: wrapped, in the hanging zone, and slow.
    pub fn hang_success(&self) -> bool {
        let s = &self.state;
        self.wrap.wraps() >= 1.0
            && reward::in_hang_zone(s.quad_position, s.branch.center, s.tether.total_length, &self.config.reward)
            && s.quad_velocity.norm() < self.config.episode.hang_speed_threshold
    }

    fn track_strike(&mut self) {
        if Phase::of_wrap(self.wrap.wraps()) != Phase::Wrap {
            return;
        }
        let links = &self.state.tether.link_positions;
        let n = links.len() - 1;
        let tip = links[n];
        let upper = links[..=n / 3].iter().map(|p| p.distance(tip)).fold(f64::INFINITY, f64::min);
        self.min_strike_distance = self.min_strike_distance.min(upper);
    }

    /// Runs one action through `substeps_per_action` physics steps.
    pub fn step(&mut self, action: Action) -> Result<Transition, SimError> {
        if self.done {
            return Err(SimError::EpisodeFinished);
        }
        let before = self.observation;
        let requested = self.requested(&action);
        let waypoint = self.clamp_to_workspace(requested);
        let cfg = self.config.sim.clone();
        let mut contact = false;
        let mut faulted = false;
        for _ in 0..self.config.episode.substeps_per_action {
            if step_in_place(&mut self.state, QuadDrive::Waypoint(waypoint), &cfg).is_err() {
                faulted = true;
                break;
            }
            contact |= self.state.diagnostics.contact;
            let weight = self.state.weight_position();
            self.wrap.update(weight, &self.state.branch);
            self.track_strike();
        }
        self.step_index += 1;
        let progress = (self.step_index as f64 / self.config.episode.max_steps as f64).min(1.0);
        self.streak = if contact { self.streak + 1 } else { 0 };
        let next = Observation {
            quad_position: self.state.quad_position,
            wrap_count: if faulted { before.wrap_count } else { self.wrap.wraps() },
            progress,
        };
        self.observation = next;

        let escaped = faulted || self.outside_workspace(requested) || self.outside_workspace(self.state.quad_position);
        let mut success = false;
        let (reward, phase, done) = if escaped {
            if faulted {
                log::warn!("physics diverged at t = {:.3} s, episode aborted", self.state.time);
            }
            let phase = if faulted { Phase::Aborted } else { phase_of(&next) };
            (self.config.reward.exit_penalty, phase, true)
        } else {
            let r = reward::total_reward(&self.reward_inputs(contact), &self.config.reward);
            let phase = phase_of(&next);
            success = self.hang_success();
            let done = success || self.step_index >= self.config.episode.max_steps;
            (r, phase, done)
        };
        self.done = done;
        Ok(Transition {
            observation: before,
            action: Action::new(waypoint),
            reward,
            next_observation: next,
            done,
            phase,
            contact,
            success,
        })
    }

    /// Replaces the world state, e.g. to replay from a snapshot.
    pub fn set_state(&mut self, state: WorldState) {
        self.wrap = WrapTracker::starting_at(state.weight_position(), &state.branch);
        self.observation = Observation { quad_position: state.quad_position, wrap_count: 0.0, progress: 0.0 };
        self.state = state;
        self.step_index = 0;
        self.streak = 0;
        self.done = false;
    }
}

/// Runs `policy` from `reset(seed)` to the end of the episode.
pub fn rollout<F>(env: &mut PerchEnv, seed: u64, mut policy: F) -> Result<Vec<Transition>, SimError>
where
    F: FnMut(&PerchEnv, &Observation) -> Action,
{
    let mut obs = env.reset(seed);
    let mut out = Vec::new();
    loop {
        let a = policy(env, &obs);
        let t = env.step(a)?;
        obs = t.next_observation;
        let done = t.done;
        out.push(t);
        if done {
            return Ok(out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_tracker_quarter_turns() {
        let b = BranchGeometry::default();
        let at = |theta: f64| b.center + Vec3::new(theta.cos(), 0.0, theta.sin()) * 0.5;
        let mut t = WrapTracker::starting_at(at(0.0), &b);
        let mut w = 0.0;
        for k in 1..=8 {
            w = t.update(at(k as f64 * PI / 4.0), &b);
        }
        assert!((w - 1.0).abs() < 1e-12);
        let mut t = WrapTracker::starting_at(at(0.0), &b);
        t.update(at(PI / 2.0), &b);
        assert!(t.update(at(0.0), &b).abs() < 1e-15);
    }

    #[test]
    fn seam_crossing_increment() {
        let b = BranchGeometry::default();
        let at = |theta: f64| b.center + Vec3::new(theta.cos(), 0.0, theta.sin());
        let mut t = WrapTracker::starting_at(at(3.0), &b);
        t.update(at(-3.0), &b);
        assert!((t.accumulated_angle - 0.28318530717958645).abs() < 1e-12);
    }

    #[test]
    fn axis_point_is_skipped() {
        let b = BranchGeometry::default();
        let mut t = WrapTracker::starting_at(b.center + Vec3::X, &b);
        assert_eq!(t.update(b.center, &b), 0.0);
    }

    #[test]
    fn reset_is_deterministic() {
        let mut env = PerchEnv::new(EnvConfig::default()).unwrap();
        let a = env.reset(7);
        let b = env.reset(7);
        assert_eq!(a, b);
        assert_eq!(a.wrap_count, 0.0);
        assert_eq!(a.progress, 0.0);
        let s = env.state();
        let hang = s.quad_position - Vec3::Z * s.tether.total_length;
        assert!((s.weight_position() - hang).norm() < 1e-3 * s.tether.segment_length);
    }

    #[test]
    fn hover_far_from_branch_is_phase_one() {
        let mut env = PerchEnv::new(EnvConfig::default()).unwrap();
        let obs = env.reset(1);
        let t = env.step(Action::new(obs.quad_position)).unwrap();
        assert_eq!(t.phase, Phase::Approach);
        assert!(!t.done);
        assert!((t.next_observation.progress - 1.0 / 300.0).abs() < 1e-15);
    }

    #[test]
    fn leaving_the_box_stops_early() {
        let mut env = PerchEnv::new(EnvConfig::default()).unwrap();
        env.reset(1);
        let far = env.target() + Vec3::new(6.0, 0.0, 0.0);
        let t = env.step(Action::new(far)).unwrap();
        assert!(t.done);
        assert_eq!(t.reward, env.config.reward.exit_penalty);
        assert!(matches!(env.step(Action::new(far)), Err(SimError::EpisodeFinished)));
    }

    #[test]
    fn jsonl_keys() {
        let mut env = PerchEnv::new(EnvConfig::default()).unwrap();
        let obs = env.reset(3);
        let t = env.step(Action::new(obs.quad_position)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&t.to_json_line()).unwrap();
        for key in ["obs", "act", "rew", "next_obs", "done", "phase"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["obs"]["pos"].as_array().unwrap().len(), 3);
        assert!(v["obs"]["eta"].is_number() && v["obs"]["w"].is_number());
        assert_eq!(v["phase"], "I");
        let back: Transition = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }
}
