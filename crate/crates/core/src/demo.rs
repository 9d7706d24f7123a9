//! Scripted demonstration sets and their JSON-lines file format.
//!
//! Three classes stand in for piloted demonstrations:
//! `A` wraps the branch and hangs, `A-` touches the branch without
//! completing a wrap, `F` wanders away from the branch without contact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{rollout, Action, EnvConfig, Observation, PerchEnv, Transition};
use crate::error::IoError;
use crate::math::Vec3;
use crate::reward::Phase;

pub const DEMO_FORMAT_VERSION: u32 = 1;
const MAX_ATTEMPTS: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DemoKind {
    A,
    #[serde(rename = "A-")]
    AMinus,
    F,
}

impl DemoKind {
    pub fn label(self) -> &'static str {
        match self {
            DemoKind::A => "A",
            DemoKind::AMinus => "A-",
            DemoKind::F => "F",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "A" | "a" => Some(DemoKind::A),
            "A-" | "a-" | "A_minus" | "aminus" => Some(DemoKind::AMinus),
            "F" | "f" => Some(DemoKind::F),
            _ => None,
        }
    }

    /// Class invariant on a finished trajectory.
    pub fn accepts(self, traj: &[Transition]) -> bool {
        let Some(last) = traj.last() else { return false };
        let w = last.next_observation.wrap_count;
        let touched = traj.iter().any(|t| t.contact);
        match self {
            DemoKind::A => w >= 1.0 && last.phase == Phase::Hang && last.done,
            DemoKind::AMinus => touched && w < 1.0 && last.phase != Phase::Aborted,
            DemoKind::F => !touched && last.phase != Phase::Aborted,
        }
    }
}

impl std::fmt::Display for DemoKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Waypoint script that wraps the tether: fly over the branch to just past
/// it, hold while the weight swings around, then drop into the hanging zone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrapScript {
    /// Stop point relative to the target.
    pub over: Vec3,
    /// Actions spent holding at `over`.
    pub hold_steps: usize,
    /// Final hang point relative to the target.
    pub hang: Vec3,
}

impl Default for WrapScript {
    fn default() -> Self {
        Self { over: Vec3::new(0.3, 0.0, 0.6), hold_steps: 20, hang: Vec3::new(0.4, 0.0, -0.5) }
    }
}

impl WrapScript {
    pub fn waypoint(&self, target: Vec3, step: usize) -> Vec3 {
        if step < self.hold_steps {
            target + self.over
        } else {
            target + self.hang
        }
    }
}

/// Approach that drags the tether onto the branch and backs off before
/// the weight can swing around.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TouchScript {
    pub reach: Vec3,
    pub reach_steps: usize,
    pub retreat: Vec3,
}

impl Default for TouchScript {
    fn default() -> Self {
        Self { reach: Vec3::new(-0.1, 0.0, 0.6), reach_steps: 6, retreat: Vec3::new(-1.5, 0.0, 0.6) }
    }
}

impl TouchScript {
    pub fn waypoint(&self, target: Vec3, step: usize) -> Vec3 {
        if step < self.reach_steps {
            target + self.reach
        } else {
            target + self.retreat
        }
    }
}

/// Scripted policy of `kind` for an episode reset with `seed`.
pub fn scripted_policy(kind: DemoKind, target: Vec3, seed: u64) -> Box<dyn FnMut(&PerchEnv, &Observation) -> Action + Send> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_de30);
    let mut step = 0usize;
    match kind {
        DemoKind::A => {
            let script = WrapScript::default();
            Box::new(move |_, _| {
                let w = script.waypoint(target, step);
                step += 1;
                Action::new(w)
            })
        }
        DemoKind::AMinus => {
            let mut script = TouchScript::default();
            script.reach.x += rng.gen_range(-0.05..0.05);
            Box::new(move |_, _| {
                let w = script.waypoint(target, step);
                step += 1;
                Action::new(w)
            })
        }
        DemoKind::F => {
            let mut current = Vec3::ZERO;
            Box::new(move |_, obs| {
                if step % 4 == 0 {
                    let rel = obs.quad_position - target;
                    current = target
                        + Vec3::new(
                            (rel.x + rng.gen_range(-0.6..0.6)).clamp(-3.5, -1.5),
                            0.0,
                            (rel.z + rng.gen_range(-0.6..0.6)).clamp(0.0, 1.5),
                        );
                }
                step += 1;
                Action::new(current)
            })
        }
    }
}

/// One scripted episode of `kind` from reset seed `seed`, not checked
/// against the class invariant.
pub fn scripted_episode(kind: DemoKind, env: &mut PerchEnv, seed: u64) -> Result<Vec<Transition>, crate::error::SimError> {
    let policy = scripted_policy(kind, env.target(), seed);
    rollout(env, seed, policy)
}

/// One trajectory of `kind`, retried with successive seeds until the class
/// invariant holds.
pub fn generate_demo(kind: DemoKind, env: &mut PerchEnv, seed: u64) -> Result<Vec<Transition>, IoError> {
    generate_demo_seeded(kind, env, seed).map(|(_, t)| t)
}

/// As [`generate_demo`], also returning the reset seed that succeeded.
pub fn generate_demo_seeded(kind: DemoKind, env: &mut PerchEnv, seed: u64) -> Result<(u64, Vec<Transition>), IoError> {
    for attempt in 0..MAX_ATTEMPTS {
        let s = seed.wrapping_add(attempt);
        match scripted_episode(kind, env, s) {
            Ok(traj) if kind.accepts(&traj) => return Ok((s, traj)),
            Ok(_) => log::debug!("demo {kind} seed {s} violates its class invariant, retrying"),
            Err(e) => log::debug!("demo {kind} seed {s} failed: {e}"),
        }
    }
    Err(IoError::Invalid(format!("no valid {kind} demonstration after {MAX_ATTEMPTS} attempts from seed {seed}")))
}

/// Hash of the configuration that determines stored rewards.
pub fn config_hash(cfg: &EnvConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serialises");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoHeader {
    pub version: u32,
    pub sim_config_hash: String,
    pub label: DemoKind,
    #[serde(default)]
    pub provenance: String,
    /// Reset seed of each trajectory, when known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub header: DemoHeader,
    pub trajectories: Vec<Vec<Transition>>,
}

impl DemoSet {
    pub fn generate(kind: DemoKind, cfg: &EnvConfig, count: usize, seed: u64) -> Result<Self, IoError> {
        let mut env = PerchEnv::new(cfg.clone()).map_err(|e| IoError::Invalid(e.to_string()))?;
        let mut trajectories = Vec::with_capacity(count);
        let mut seeds = Vec::with_capacity(count);
        for i in 0..count {
            let (s, traj) = generate_demo_seeded(kind, &mut env, seed.wrapping_add(1000 * i as u64))?;
            seeds.push(s);
            trajectories.push(traj);
        }
        Ok(Self {
            header: DemoHeader {
                version: DEMO_FORMAT_VERSION,
                sim_config_hash: config_hash(cfg),
                label: kind,
                provenance: format!("scripted {kind} generator, base seed {seed}"),
                seeds,
            },
            trajectories,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Vec::len).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flatten()
    }
}

/// First disagreement found by [`replay_demo`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMismatch {
    pub traj: usize,
    pub step: usize,
    pub stored: f64,
    pub replayed: f64,
}

/// Re-runs each trajectory's actions from its reset seed and compares the
/// rewards bit for bit. Returns the replayed trajectories.
pub fn replay_demo(set: &DemoSet, cfg: &EnvConfig) -> Result<Result<Vec<Vec<Transition>>, ReplayMismatch>, IoError> {
    if set.header.seeds.len() != set.trajectories.len() {
        return Err(IoError::Invalid("demonstration file does not record reset seeds".into()));
    }
    if set.header.sim_config_hash != config_hash(cfg) {
        log::warn!("demonstrations were generated with a different configuration");
    }
    let mut env = PerchEnv::new(cfg.clone()).map_err(|e| IoError::Invalid(e.to_string()))?;
    let mut out = Vec::with_capacity(set.trajectories.len());
    for (traj, (seed, ts)) in set.header.seeds.iter().zip(&set.trajectories).enumerate() {
        env.reset(*seed);
        let mut replayed = Vec::with_capacity(ts.len());
        for (step, t) in ts.iter().enumerate() {
            let r = env.step(t.action).map_err(|e| IoError::Invalid(e.to_string()))?;
            if r.reward.to_bits() != t.reward.to_bits() {
                return Ok(Err(ReplayMismatch { traj, step, stored: t.reward, replayed: r.reward }));
            }
            replayed.push(r);
        }
        out.push(replayed);
    }
    Ok(Ok(out))
}

#[derive(Serialize, Deserialize)]
struct DemoLine {
    traj: usize,
    #[serde(flatten)]
    transition: Transition,
}

pub fn save_transitions(set: &DemoSet, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::fs(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| IoError::fs(path, e);
    writeln!(out, "{}", serde_json::to_string(&set.header).expect("header serialises")).map_err(io)?;
    for (traj, ts) in set.trajectories.iter().enumerate() {
        for t in ts {
            let line = DemoLine { traj, transition: t.clone() };
            writeln!(out, "{}", serde_json::to_string(&line).expect("transition serialises")).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Reads a demonstration file. An empty file yields `None`.
pub fn load_transitions(path: &Path) -> Result<Option<DemoSet>, IoError> {
    let file = File::open(path).map_err(|e| IoError::fs(path, e))?;
    let malformed = |line: usize, message: String| IoError::Malformed { path: path.to_path_buf(), line, message };
    let mut lines = BufReader::new(file).lines().enumerate();
    let header = loop {
        match lines.next() {
            None => {
                log::warn!("{}: empty demonstration file", path.display());
                return Ok(None);
            }
            Some((n, line)) => {
                let line = line.map_err(|e| IoError::fs(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value =
                    serde_json::from_str(&line).map_err(|e| malformed(n + 1, format!("header: {e}")))?;
                let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
                if version != DEMO_FORMAT_VERSION {
                    return Err(IoError::Version { path: path.to_path_buf(), found: version, expected: DEMO_FORMAT_VERSION });
                }
                break serde_json::from_value::<DemoHeader>(value).map_err(|e| malformed(n + 1, format!("header: {e}")))?;
            }
        }
    };
    let mut trajectories: Vec<Vec<Transition>> = Vec::new();
    for (n, line) in lines {
        let line = line.map_err(|e| IoError::fs(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DemoLine = serde_json::from_str(&line).map_err(|e| malformed(n + 1, e.to_string()))?;
        if rec.traj > trajectories.len() {
            return Err(malformed(n + 1, format!("trajectory index {} out of order", rec.traj)));
        }
        if rec.traj == trajectories.len() {
            trajectories.push(Vec::new());
        }
        trajectories[rec.traj].push(rec.transition);
    }
    Ok(Some(DemoSet { header, trajectories }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for k in [DemoKind::A, DemoKind::AMinus, DemoKind::F] {
            assert_eq!(DemoKind::parse(k.label()), Some(k));
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.label()));
        }
    }

    #[test]
    fn hash_tracks_reward_constants() {
        let a = EnvConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.reward.c_safe = 0.6;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
