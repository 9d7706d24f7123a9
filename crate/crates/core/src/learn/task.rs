//! Environments as seen by the learner: feature-vector observations and
//! actions normalised to `[-1, 1]^d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::env::{Action, ActionMode, Observation, PerchEnv, Transition};
use crate::error::LearnError;
use crate::math::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// `action` lies in `[-1, 1]^act_dim`.
    fn step(&mut self, action: &[f64]) -> Result<Step, LearnError>;
}

/// One-dimensional "move to the origin" task.
///
/// The state starts uniformly in `[-1, 1]`, each action moves it by
/// `action`, and the reward is `-x²` after the move. The optimal policy
/// reaches the origin in one step, so the best return is 0.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    pub x: f64,
    pub horizon: usize,
    t: usize,
}

impl Default for ToyEnv {
    fn default() -> Self {
        Self { x: 0.0, horizon: 5, t: 0 }
    }
}

impl ToyEnv {
    fn obs(&self) -> Vec<f64> {
        vec![self.x, self.t as f64 / self.horizon as f64]
    }

    /// Optimal move for the current state.
    pub fn expert(obs: &[f64]) -> Vec<f64> {
        vec![(-obs[0]).clamp(-1.0, 1.0)]
    }
}

impl Environment for ToyEnv {
    fn obs_dim(&self) -> usize {
        2
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.x = rng.gen_range(-1.0..=1.0);
        self.t = 0;
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, LearnError> {
        self.x = (self.x + action[0].clamp(-1.0, 1.0)).clamp(-2.0, 2.0);
        self.t += 1;
        Ok(Step { obs: self.obs(), reward: -self.x * self.x, done: self.t >= self.horizon })
    }
}

/// Learner view of the perching environment.
///
/// Features are `[(x_q − x_target)/h, w, η]` with `h` the workspace
/// half-extent. Actions map linearly onto the workspace box, or onto a
/// `±offset_scale` displacement in offset mode.
///
/// With `absorbing_hang`, a successful hang counts as an absorbing state:
/// its reward is credited once per step left in the episode, so ending
/// early in the hanging zone never loses return.
#[derive(Debug, Clone)]
pub struct PerchTask {
    pub env: PerchEnv,
    pub offset_scale: f64,
    pub absorbing_hang: bool,
}

pub const PERCH_OBS_DIM: usize = 5;

impl PerchTask {
    pub fn new(env: PerchEnv) -> Self {
        Self { env, offset_scale: 1.0, absorbing_hang: true }
    }

    /// Reward the learner sees for a recorded transition.
    pub fn learner_reward(&self, t: &Transition) -> f64 {
        if self.absorbing_hang && t.success {
            let max = self.env.config.episode.max_steps as f64;
            let remaining = ((1.0 - t.next_observation.progress) * max).round().max(0.0);
            t.reward * (1.0 + remaining)
        } else {
            t.reward
        }
    }

    fn half(&self) -> f64 {
        self.env.config.episode.workspace_half_extent
    }

    pub fn features(&self, o: &Observation) -> Vec<f64> {
        let rel = (o.quad_position - self.env.target()) / self.half();
        vec![rel.x, rel.y, rel.z, o.wrap_count, o.progress]
    }

    pub fn action_of(&self, a: &[f64]) -> Action {
        let v = Vec3::new(a[0], a[1], a[2]);
        match self.env.config.episode.action_mode {
            ActionMode::Absolute => Action::new(self.env.target() + v * self.half()),
            ActionMode::Offset => Action::new(v * self.offset_scale),
        }
    }

    /// Normalised action that reproduces a recorded transition.
    pub fn normalise(&self, t: &Transition) -> Vec<f64> {
        let v = match self.env.config.episode.action_mode {
            ActionMode::Absolute => (t.action.waypoint - self.env.target()) / self.half(),
            ActionMode::Offset => (t.action.waypoint - t.observation.quad_position) / self.offset_scale,
        };
        v.to_array().iter().map(|c| c.clamp(-1.0, 1.0)).collect()
    }

    pub fn sample_of(&self, t: &Transition) -> Sample {
        Sample {
            obs: self.features(&t.observation),
            act: self.normalise(t),
            reward: self.learner_reward(t),
            next_obs: self.features(&t.next_observation),
            done: t.done,
        }
    }
}

impl Environment for PerchTask {
    fn obs_dim(&self) -> usize {
        PERCH_OBS_DIM
    }

    fn act_dim(&self) -> usize {
        3
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let o = self.env.reset(seed);
        self.features(&o)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, LearnError> {
        let t = self.env.step(self.action_of(action))?;
        Ok(Step { obs: self.features(&t.next_observation), reward: self.learner_reward(&t), done: t.done })
    }
}
