//! Soft Actor-Critic with twin critics, entropy temperature tuning and a
//! dual online/demonstration replay.

pub mod buffer;
pub mod task;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::LearnError;
use crate::nn::{Adam, Mlp, Trace};
pub use buffer::{sample_dual_batch, split_counts, DualBatch, ReplayBuffer, Sample};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    /// Initial entropy coefficient.
    pub alpha: f64,
    pub auto_alpha: bool,
    /// Defaults to `-action_dim` when absent.
    pub target_entropy: Option<f64>,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub batch_size: usize,
    pub lambda_demo: f64,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub pretrain_steps: usize,
    pub validation_interval: usize,
    pub validation_episodes: usize,
    /// Uniform random actions before the policy takes over.
    pub random_steps: usize,
    /// Online samples required before updates start.
    pub update_after: usize,
    pub updates_per_step: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.2,
            auto_alpha: true,
            target_entropy: None,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            batch_size: 256,
            lambda_demo: 4.0,
            hidden: vec![64, 64],
            buffer_capacity: 1_000_000,
            pretrain_steps: 1000,
            validation_interval: 5000,
            validation_episodes: 3,
            random_steps: 1000,
            update_after: 256,
            updates_per_step: 1,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) && self.gamma != 0.0 {
            return bad("sac.gamma must be in [0, 1)");
        }
        if !(self.alpha > 0.0) {
            return bad("sac.alpha must be > 0");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("sac.tau must be in (0, 1]");
        }
        if self.batch_size < 2 {
            return bad("sac.batch_size must be >= 2");
        }
        if !(self.lambda_demo >= 1.0) {
            return bad("sac.lambda_demo must be >= 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("sac.hidden must list positive layer widths");
        }
        if self.buffer_capacity < 1 {
            return bad("sac.buffer_capacity must be >= 1");
        }
        if self.validation_interval < 1 || self.validation_episodes < 1 {
            return bad("sac.validation_interval and sac.validation_episodes must be >= 1");
        }
        for lr in [self.actor_lr, self.critic_lr, self.alpha_lr] {
            if !(lr > 0.0) {
                return bad("sac learning rates must be > 0");
            }
        }
        Ok(())
    }
}

/// Losses of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub alpha: f64,
}

/// Reparameterised draw from the squashed Gaussian.
#[derive(Debug, Clone)]
pub struct PolicyDraw {
    trace: Trace,
    /// Normalised action `tanh(u)` in `(-1, 1)`.
    pub squashed: Vec<f64>,
    pub log_prob: f64,
    std: Vec<f64>,
    noise: Vec<f64>,
    /// Raw log-std inside the clamp range.
    free: Vec<bool>,
}

/// Actor, twin critics, their targets, temperature and optimisers.
#[derive(Debug, Clone)]
pub struct Sac {
    pub config: SacConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub log_alpha: f64,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    alpha_opt: Adam,
    rng: ChaCha8Rng,
    pub updates: u64,
}

/// `ln(1 − tanh²u)` without cancellation.
fn log1m_tanh2(u: f64) -> f64 {
    let x = -2.0 * u.abs();
    2.0 * (std::f64::consts::LN_2 - u.abs() - x.exp().ln_1p())
}

impl Sac {
    pub fn new(obs_dim: usize, act_dim: usize, config: SacConfig, seed: u64) -> Result<Self, LearnError> {
        config.validate()?;
        if obs_dim == 0 || act_dim == 0 {
            return Err(LearnError::InvalidConfig("observation and action dimensions must be > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&config.hidden);
            s.push(output);
            s
        };
        let actor = Mlp::new(&sizes(obs_dim, 2 * act_dim), &mut rng);
        let q1 = Mlp::new(&sizes(obs_dim + act_dim, 1), &mut rng);
        let q2 = Mlp::new(&sizes(obs_dim + act_dim, 1), &mut rng);
        Ok(Self {
            actor_opt: Adam::new(actor.params.len(), config.actor_lr),
            q1_opt: Adam::new(q1.params.len(), config.critic_lr),
            q2_opt: Adam::new(q2.params.len(), config.critic_lr),
            alpha_opt: Adam::new(1, config.alpha_lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            log_alpha: config.alpha.ln(),
            actor,
            q1,
            q2,
            rng,
            config,
            obs_dim,
            act_dim,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.act_dim as f64))
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn draw_noise(&mut self) -> Vec<f64> {
        (0..self.act_dim).map(|_| StandardNormal.sample(&mut self.rng)).collect()
    }

    /// Squashed-Gaussian draw for `obs` with fixed standard-normal `noise`.
    pub fn policy_draw(actor: &Mlp, obs: &[f64], noise: &[f64]) -> PolicyDraw {
        let trace = actor.trace(obs);
        let out = trace.output();
        let d = noise.len();
        let mut squashed = Vec::with_capacity(d);
        let mut std = Vec::with_capacity(d);
        let mut free = Vec::with_capacity(d);
        let mut log_prob = 0.0;
        for i in 0..d {
            let raw = out[d + i];
            free.push((LOG_STD_MIN..=LOG_STD_MAX).contains(&raw));
            let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let s = log_std.exp();
            let u = out[i] + s * noise[i];
            squashed.push(u.tanh());
            std.push(s);
            log_prob += -0.5 * noise[i] * noise[i] - log_std - HALF_LN_TAU - log1m_tanh2(u);
        }
        PolicyDraw { trace, squashed, log_prob, std, noise: noise.to_vec(), free }
    }

    /// Noise-free action `tanh(mean)` in normalised coordinates.
    pub fn deterministic_action(&self, obs: &[f64]) -> Vec<f64> {
        let out = self.actor.forward(obs);
        out[..self.act_dim].iter().map(|m| m.tanh()).collect()
    }

    pub fn sample_action(&mut self, obs: &[f64]) -> Vec<f64> {
        let noise = self.draw_noise();
        Self::policy_draw(&self.actor, obs, &noise).squashed
    }

    fn q_input(obs: &[f64], act: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(obs.len() + act.len());
        x.extend_from_slice(obs);
        x.extend_from_slice(act);
        x
    }

    pub fn q_value(q: &Mlp, obs: &[f64], act: &[f64]) -> f64 {
        q.forward(&Self::q_input(obs, act))[0]
    }

    /// Soft Bellman targets with the lower of the two target critics.
    pub fn critic_targets_with(&self, batch: &[&Sample], noise: &[Vec<f64>]) -> Vec<f64> {
        let alpha = self.alpha();
        batch
            .iter()
            .zip(noise)
            .map(|(s, eps)| {
                if s.done || self.config.gamma == 0.0 {
                    return s.reward;
                }
                let draw = Self::policy_draw(&self.actor, &s.next_obs, eps);
                let q1 = Self::q_value(&self.q1_target, &s.next_obs, &draw.squashed);
                let q2 = Self::q_value(&self.q2_target, &s.next_obs, &draw.squashed);
                s.reward + self.config.gamma * (q1.min(q2) - alpha * draw.log_prob)
            })
            .collect()
    }

    pub fn critic_targets(&mut self, batch: &[&Sample]) -> Vec<f64> {
        let noise: Vec<Vec<f64>> = (0..batch.len()).map(|_| self.draw_noise()).collect();
        self.critic_targets_with(batch, &noise)
    }

    /// Mean squared error of `q` against `targets` and its gradient.
    pub fn critic_loss(q: &Mlp, batch: &[&Sample], targets: &[f64]) -> (f64, Vec<f64>) {
        let n = batch.len() as f64;
        let mut grad = vec![0.0; q.params.len()];
        let mut loss = 0.0;
        for (s, y) in batch.iter().zip(targets) {
            let trace = q.trace(&Self::q_input(&s.obs, &s.act));
            let e = trace.output()[0] - y;
            loss += e * e / n;
            q.backward(&trace, &[2.0 * e / n], &mut grad);
        }
        (loss, grad)
    }

    /// `mean(α·log π(ã|o) − min(Q₁, Q₂)(o, ã))` and its gradient in the actor
    /// parameters, with `ã` reparameterised through `noise`.
    pub fn actor_loss(&self, actor: &Mlp, batch: &[&Sample], noise: &[Vec<f64>]) -> (f64, Vec<f64>, Vec<f64>) {
        let n = batch.len() as f64;
        let d = self.act_dim;
        let alpha = self.alpha();
        let mut grad = vec![0.0; actor.params.len()];
        let mut loss = 0.0;
        let mut log_probs = Vec::with_capacity(batch.len());
        for (s, eps) in batch.iter().zip(noise) {
            let draw = Self::policy_draw(actor, &s.obs, eps);
            let x = Self::q_input(&s.obs, &draw.squashed);
            let t1 = self.q1.trace(&x);
            let t2 = self.q2.trace(&x);
            let (qa, qb) = (t1.output()[0], t2.output()[0]);
            let (lower, trace) = if qa <= qb { (&self.q1, &t1) } else { (&self.q2, &t2) };
            let mut scratch = vec![0.0; lower.params.len()];
            let dq_dx = lower.backward(trace, &[1.0], &mut scratch);
            let dq_da = &dq_dx[self.obs_dim..];
            loss += (alpha * draw.log_prob - qa.min(qb)) / n;
            log_probs.push(draw.log_prob);

            let mut dout = vec![0.0; 2 * d];
            for i in 0..d {
                let a = draw.squashed[i];
                let jac = 1.0 - a * a;
                let se = draw.std[i] * draw.noise[i];
                // d log π / du = 2·tanh(u); u = mean + std·noise
                let dl_du = alpha * 2.0 * a - dq_da[i] * jac;
                dout[i] = dl_du / n;
                if draw.free[i] {
                    dout[d + i] = (dl_du * se - alpha) / n;
                }
            }
            actor.backward(&draw.trace, &dout, &mut grad);
        }
        (loss, grad, log_probs)
    }

    /// Temperature loss `−log α · mean(log π + H̄)` and its derivative in `log α`.
    pub fn alpha_loss(&self, log_alpha: f64, log_probs: &[f64]) -> (f64, f64) {
        let h = self.target_entropy();
        let m = log_probs.iter().map(|lp| lp + h).sum::<f64>() / log_probs.len() as f64;
        (-log_alpha * m, -m)
    }

    /// One SAC update on `batch`.
    pub fn update_step(&mut self, batch: &[&Sample]) -> Result<Losses, LearnError> {
        let targets = self.critic_targets(batch);
        let (l1, g1) = Self::critic_loss(&self.q1, batch, &targets);
        let (l2, g2) = Self::critic_loss(&self.q2, batch, &targets);
        if !(l1.is_finite() && l2.is_finite()) {
            return Err(LearnError::Divergence { what: "critic" });
        }
        self.q1_opt.step(&mut self.q1.params, &g1);
        self.q2_opt.step(&mut self.q2.params, &g2);

        let noise: Vec<Vec<f64>> = (0..batch.len()).map(|_| self.draw_noise()).collect();
        let (la, ga, log_probs) = self.actor_loss(&self.actor, batch, &noise);
        if !la.is_finite() {
            return Err(LearnError::Divergence { what: "actor" });
        }
        self.actor_opt.step(&mut self.actor.params, &ga);

        let (lt, gt) = self.alpha_loss(self.log_alpha, &log_probs);
        if !lt.is_finite() {
            return Err(LearnError::Divergence { what: "temperature" });
        }
        if self.config.auto_alpha {
            let mut p = [self.log_alpha];
            self.alpha_opt.step(&mut p, &[gt]);
            self.log_alpha = p[0];
        }

        let tau = self.config.tau;
        self.q1_target.polyak_from(&self.q1, tau);
        self.q2_target.polyak_from(&self.q2, tau);
        self.updates += 1;
        Ok(Losses { critic1: l1, critic2: l2, actor: la, alpha: lt })
    }

    /// Actor-only step with given noise; returns the log-probabilities used.
    pub fn actor_step_with(&mut self, batch: &[&Sample], noise: &[Vec<f64>]) -> Vec<f64> {
        let (_, g, lp) = self.actor_loss(&self.actor, batch, noise);
        self.actor_opt.step(&mut self.actor.params, &g);
        lp
    }

    /// Entropy estimate `−mean log π` on `obs` with fixed `noise`.
    pub fn entropy_estimate(&self, obs: &[Vec<f64>], noise: &[Vec<f64>]) -> f64 {
        -obs.iter().zip(noise).map(|(o, e)| Self::policy_draw(&self.actor, o, e).log_prob).sum::<f64>() / obs.len() as f64
    }

    /// Offline-only updates before any interaction.
    pub fn pretrain(&mut self, offline: &ReplayBuffer, steps: usize) -> Result<(), LearnError> {
        if steps == 0 {
            return Ok(());
        }
        if offline.is_empty() {
            log::warn!("pretraining requested with an empty demonstration buffer, skipped");
            return Ok(());
        }
        let empty = ReplayBuffer::new(1);
        for _ in 0..steps {
            let batch = sample_dual_batch(&empty, offline, self.config.batch_size, self.config.lambda_demo, &mut self.rng)?;
            self.update_step(&batch.samples)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.q1.is_finite() && self.q2.is_finite() && self.log_alpha.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(obs: f64, act: f64, reward: f64, done: bool) -> Sample {
        Sample { obs: vec![obs, -obs], act: vec![act], reward, next_obs: vec![obs * 0.5, 0.1], done }
    }

    fn small() -> Sac {
        let cfg = SacConfig { hidden: vec![8], batch_size: 4, ..SacConfig::default() };
        Sac::new(2, 1, cfg, 11).unwrap()
    }

    #[test]
    fn terminal_targets_are_rewards() {
        let mut sac = small();
        let batch = [sample(0.2, 0.1, 1.5, true), sample(-0.4, 0.3, -0.5, true)];
        let refs: Vec<&Sample> = batch.iter().collect();
        assert_eq!(sac.critic_targets(&refs), vec![1.5, -0.5]);
        sac.config.gamma = 0.0;
        let live = [sample(0.2, 0.1, 0.7, false)];
        let refs: Vec<&Sample> = live.iter().collect();
        assert_eq!(sac.critic_targets(&refs), vec![0.7]);
    }

    #[test]
    fn target_uses_lower_critic() {
        let mut sac = small();
        sac.log_alpha = f64::NEG_INFINITY;
        // output bias only: Q̄₁ ≡ 2, Q̄₂ ≡ 1
        for (q, v) in [(&mut sac.q1_target, 2.0), (&mut sac.q2_target, 1.0)] {
            q.params.iter_mut().for_each(|p| *p = 0.0);
            *q.params.last_mut().unwrap() = v;
        }
        sac.config.gamma = 0.5;
        let batch = [sample(0.2, 0.1, 0.0, false)];
        let refs: Vec<&Sample> = batch.iter().collect();
        let y = sac.critic_targets(&refs);
        assert!((y[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_prob_matches_change_of_variables() {
        let sac = small();
        let obs = [0.3, -0.2];
        let eps = [0.4];
        let draw = Sac::policy_draw(&sac.actor, &obs, &eps);
        let out = sac.actor.forward(&obs);
        let (m, ls) = (out[0], out[1].clamp(LOG_STD_MIN, LOG_STD_MAX));
        let u = m + ls.exp() * eps[0];
        let gauss = -0.5 * ((u - m) / ls.exp()).powi(2) - ls - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let expected = gauss - (1.0 - u.tanh().powi(2)).ln();
        assert!((draw.log_prob - expected).abs() < 1e-12);
    }

    #[test]
    fn stable_log1m_tanh2() {
        for u in [-30.0, -3.0, -0.1, 0.0, 0.5, 4.0, 25.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            if direct.is_finite() && u.abs() < 15.0 {
                assert!((log1m_tanh2(u) - direct).abs() < 1e-9);
            }
            assert!(log1m_tanh2(u).is_finite());
        }
    }
}
