//! Training loop, deterministic validation and checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::task::{Environment, PerchTask};
use super::{sample_dual_batch, ReplayBuffer, Sac, SacConfig, Sample};
use crate::demo::DemoSet;
use crate::error::{IoError, LearnError};
use crate::nn::Mlp;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Seeds of the validation episodes; disjoint from training seeds.
pub const VALIDATION_SEED_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub env_step: usize,
    pub validation_return: Option<f64>,
    pub sac: SacConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub log_alpha: f64,
}

impl Checkpoint {
    pub fn of(agent: &Sac, config_hash: &str, env_step: usize, validation_return: Option<f64>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            env_step,
            validation_return,
            sac: agent.config.clone(),
            obs_dim: agent.obs_dim,
            act_dim: agent.act_dim,
            actor: agent.actor.clone(),
            q1: agent.q1.clone(),
            q2: agent.q2.clone(),
            q1_target: agent.q1_target.clone(),
            q2_target: agent.q2_target.clone(),
            log_alpha: agent.log_alpha,
        }
    }

    /// Agent carrying the stored networks (fresh optimiser state and RNG).
    pub fn restore(&self, seed: u64) -> Result<Sac, LearnError> {
        let mut agent = Sac::new(self.obs_dim, self.act_dim, self.sac.clone(), seed)?;
        if agent.actor.sizes != self.actor.sizes || agent.q1.sizes != self.q1.sizes {
            return Err(LearnError::Checkpoint("layer sizes disagree with the stored configuration".into()));
        }
        agent.actor = self.actor.clone();
        agent.q1 = self.q1.clone();
        agent.q2 = self.q2.clone();
        agent.q1_target = self.q1_target.clone();
        agent.q2_target = self.q2_target.clone();
        agent.log_alpha = self.log_alpha;
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let text = serde_json::to_string(self).expect("checkpoint serialises");
        std::fs::write(path, text).map_err(|e| IoError::fs(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::fs(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| IoError::Malformed { path: path.into(), line: e.line(), message: e.to_string() })?;
        let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(IoError::Version { path: path.into(), found, expected: CHECKPOINT_VERSION });
        }
        serde_json::from_value(value).map_err(|e| IoError::Malformed { path: path.into(), line: 1, message: e.to_string() })
    }
}

/// Short hex digest of any serialisable configuration.
pub fn hash_of<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("configuration serialises");
    Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Mean undiscounted return of the noise-free policy over `episodes`.
pub fn evaluate_policy<E: Environment + ?Sized>(agent: &Sac, env: &mut E, episodes: usize) -> Result<f64, LearnError> {
    let mut total = 0.0;
    for i in 0..episodes {
        let mut obs = env.reset(VALIDATION_SEED_BASE + i as u64);
        loop {
            let a = agent.deterministic_action(&obs);
            let step = env.step(&a)?;
            total += step.reward;
            obs = step.obs;
            if step.done {
                break;
            }
        }
    }
    Ok(total / episodes as f64)
}

/// Best validation so far and where it is persisted.
#[derive(Debug, Clone, Default)]
pub struct CheckpointKeeper {
    pub best_return: Option<f64>,
    pub best: Option<Checkpoint>,
    pub path: Option<PathBuf>,
    pub config_hash: String,
}

impl CheckpointKeeper {
    pub fn new(path: Option<PathBuf>, config_hash: impl Into<String>) -> Self {
        Self { path, config_hash: config_hash.into(), ..Self::default() }
    }

    /// Stores `agent` iff `ret` beats the best return seen so far.
    pub fn offer(&mut self, agent: &Sac, env_step: usize, ret: f64) -> Result<bool, LearnError> {
        if self.best_return.is_some_and(|b| ret <= b) {
            return Ok(false);
        }
        let ck = Checkpoint::of(agent, &self.config_hash, env_step, Some(ret));
        if let Some(p) = &self.path {
            ck.save(p)?;
        }
        self.best_return = Some(ret);
        self.best = Some(ck);
        Ok(true)
    }
}

/// Deterministic rollout; checkpoints when the mean return improves.
pub fn validate_and_checkpoint<E: Environment + ?Sized>(
    agent: &Sac,
    env: &mut E,
    episodes: usize,
    env_step: usize,
    keeper: &mut CheckpointKeeper,
) -> Result<f64, LearnError> {
    let ret = evaluate_policy(agent, env, episodes.max(1))?;
    keeper.offer(agent, env_step, ret)?;
    Ok(ret)
}

/// One learning-curve row. Episode rows carry the episodic reward,
/// validation rows carry the validation return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub env_step: usize,
    pub episode_reward: Option<f64>,
    pub validation_return: Option<f64>,
}

pub fn write_curve_csv<W: Write>(mut out: W, rows: &[CurveRow]) -> std::io::Result<()> {
    writeln!(out, "env_step,episode_reward,validation_return")?;
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(out, "{},{},{}", r.env_step, f(r.episode_reward), f(r.validation_return))?;
    }
    out.flush()
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::fs(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| IoError::Malformed { path: path.into(), line: n + 1, message: m.to_string() };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        let opt = |s: &str| -> Result<Option<f64>, IoError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad("bad number"))
            }
        };
        rows.push(CurveRow {
            env_step: cols[0].parse().map_err(|_| bad("bad env_step"))?,
            episode_reward: opt(cols[1])?,
            validation_return: opt(cols[2])?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub total_steps: usize,
    /// Seed of the first training episode; episodes count up from here.
    pub episode_seed: u64,
    pub checkpoint_path: Option<PathBuf>,
    /// Written when an update diverges.
    pub dump_path: Option<PathBuf>,
    pub config_hash: String,
    /// Stop early once a validation return reaches this value.
    pub stop_at: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub curve: Vec<CurveRow>,
    pub best_return: Option<f64>,
    pub best: Checkpoint,
    pub env_steps: usize,
}

impl TrainReport {
    /// First env step whose validation return reaches `threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<usize> {
        self.curve
            .iter()
            .find(|r| r.validation_return.is_some_and(|v| v >= threshold))
            .map(|r| r.env_step)
    }
}

/// Interleaves interaction, replay insertion, dual-batch updates and
/// periodic validation. `offline` holds demonstrations (may be empty).
pub fn train<E: Environment, V: Environment>(
    agent: &mut Sac,
    env: &mut E,
    val_env: &mut V,
    offline: &ReplayBuffer,
    opts: &TrainOptions,
) -> Result<TrainReport, LearnError> {
    let cfg = agent.config.clone();
    let mut keeper = CheckpointKeeper::new(opts.checkpoint_path.clone(), opts.config_hash.clone());
    let initial = Checkpoint::of(agent, &opts.config_hash, 0, None);
    if let Some(p) = &opts.checkpoint_path {
        initial.save(p)?;
    }
    agent.pretrain(offline, if offline.is_empty() { 0 } else { cfg.pretrain_steps }).map_err(|e| dump(agent, opts, e))?;

    let mut online = ReplayBuffer::new(cfg.buffer_capacity);
    let mut curve = Vec::new();
    let mut episode = opts.episode_seed;
    let mut obs = env.reset(episode);
    let mut episode_reward = 0.0;
    let mut step = 0;
    while step < opts.total_steps {
        let action: Vec<f64> = if step < cfg.random_steps && offline.is_empty() {
            use rand::Rng;
            let d = agent.act_dim;
            (0..d).map(|_| agent.rng().gen_range(-1.0..=1.0)).collect()
        } else {
            agent.sample_action(&obs)
        };
        let s = env.step(&action)?;
        episode_reward += s.reward;
        online.push(Sample { obs: obs.clone(), act: action, reward: s.reward, next_obs: s.obs.clone(), done: s.done })?;
        obs = s.obs;
        step += 1;
        if s.done {
            curve.push(CurveRow { env_step: step, episode_reward: Some(episode_reward), validation_return: None });
            episode += 1;
            obs = env.reset(episode);
            episode_reward = 0.0;
        }

        if online.len() >= cfg.update_after.min(cfg.batch_size) || !offline.is_empty() {
            for _ in 0..cfg.updates_per_step {
                let batch = sample_dual_batch(&online, offline, cfg.batch_size, cfg.lambda_demo, agent.rng())?;
                let samples: Vec<&Sample> = batch.samples;
                agent.update_step(&samples).map_err(|e| dump(agent, opts, e))?;
            }
        }

        if step % cfg.validation_interval == 0 {
            let ret = validate_and_checkpoint(agent, val_env, cfg.validation_episodes, step, &mut keeper)?;
            log::info!("step {step}: validation return {ret:.4}");
            curve.push(CurveRow { env_step: step, episode_reward: None, validation_return: Some(ret) });
            if opts.stop_at.is_some_and(|t| ret >= t) {
                break;
            }
        }
    }
    Ok(TrainReport { curve, best_return: keeper.best_return, best: keeper.best.unwrap_or(initial), env_steps: step })
}

fn dump(agent: &Sac, opts: &TrainOptions, e: LearnError) -> LearnError {
    if let (LearnError::Divergence { .. }, Some(p)) = (&e, &opts.dump_path) {
        let ck = Checkpoint::of(agent, &opts.config_hash, 0, None);
        if let Err(io) = ck.save(p) {
            log::error!("could not write divergence dump: {io}");
        }
    }
    e
}

/// Read-only offline buffer of every transition in `sets`.
pub fn demo_buffer(task: &PerchTask, sets: &[DemoSet]) -> ReplayBuffer {
    ReplayBuffer::read_only(sets.iter().flat_map(|s| s.transitions()).map(|t| task.sample_of(t)).collect())
}
