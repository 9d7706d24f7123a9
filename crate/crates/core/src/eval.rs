//! Trajectory error metrics, success classification, robustness sweeps and
//! learning-curve aggregation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demo::DemoKind;
use crate::env::{Action, EnvConfig, Observation, PerchEnv, Transition};
use crate::error::{EvalError, IoError};
use crate::learn::task::PerchTask;
use crate::learn::train::{Checkpoint, CurveRow};
use crate::learn::Sac;
use crate::math::Vec3;
use crate::sim::WorldState;
use crate::traj::csv_error;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub mbe: f64,
    pub mae: f64,
    pub rmse: f64,
    pub mse: f64,
}

impl Metrics {
    /// Metrics of signed errors `e`.
    pub fn of(e: impl Iterator<Item = f64> + Clone) -> Self {
        Self::of_signed_and_abs(e.clone(), e.map(f64::abs))
    }

    fn of_signed_and_abs(signed: impl Iterator<Item = f64>, abs: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut bias) = (0usize, 0.0);
        for v in signed {
            n += 1;
            bias += v;
        }
        let (mut mae, mut mse) = (0.0, 0.0);
        for a in abs {
            mae += a;
            mse += a * a;
        }
        let nf = n.max(1) as f64;
        let mse = mse / nf;
        Self { mbe: bias / nf, mae: mae / nf, rmse: mse.sqrt(), mse }
    }

    /// Column mean of several metric sets.
    pub fn mean(all: &[Metrics]) -> Self {
        let n = all.len() as f64;
        Self {
            mbe: all.iter().map(|m| m.mbe).sum::<f64>() / n,
            mae: all.iter().map(|m| m.mae).sum::<f64>() / n,
            rmse: all.iter().map(|m| m.rmse).sum::<f64>() / n,
            mse: all.iter().map(|m| m.mse).sum::<f64>() / n,
        }
    }
}

/// Error of `measured` against `reference` per axis and in total.
///
/// `magnitude` is computed over per-sample error norms `‖e‖`, with the
/// bias taken as the mean axis-averaged signed error `(eₓ + e_y + e_z)/3`.
/// `axis_mean` averages the per-axis metrics column-wise, so its MSE is the
/// mean of the axis MSEs rather than the square of its RMSE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub x: Metrics,
    pub y: Metrics,
    pub z: Metrics,
    pub magnitude: Metrics,
    pub axis_mean: Metrics,
}

pub fn trajectory_errors(reference: &[Vec3], measured: &[Vec3]) -> Result<ErrorReport, EvalError> {
    if reference.len() != measured.len() {
        return Err(EvalError::LengthMismatch { reference: reference.len(), measured: measured.len() });
    }
    if reference.is_empty() {
        return Err(EvalError::Empty("trajectory"));
    }
    let err: Vec<Vec3> = measured.iter().zip(reference).map(|(m, r)| *m - *r).collect();
    let axis = |i: usize| Metrics::of(err.iter().map(move |e| e[i]));
    let (x, y, z) = (axis(0), axis(1), axis(2));
    let magnitude = Metrics::of_signed_and_abs(err.iter().map(|e| (e.x + e.y + e.z) / 3.0), err.iter().map(|e| e.norm()));
    Ok(ErrorReport { x, y, z, magnitude, axis_mean: Metrics::mean(&[x, y, z]) })
}

/// Everything `classify_success` needs from an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub transitions: Vec<Transition>,
    /// Closest weight approach to the quad or upper tether while wrapping.
    pub min_strike_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub outcome: Outcome,
    /// Success only through the self-strike rule.
    pub reclassified: bool,
    pub final_wrap: f64,
}

/// Weight-to-quad or weight-to-upper-tether distance counted as a strike [m].
pub const STRIKE_DISTANCE: f64 = 0.05;

/// Success iff the final wrap count reaches 1; a failed wrap in which the
/// weight struck the quad or upper tether also counts as success.
pub fn classify_success(log: &EpisodeLog) -> Result<Classification, EvalError> {
    let last = log.transitions.last().ok_or(EvalError::Empty("episode log"))?;
    if !last.done {
        return Err(EvalError::Truncated(format!("{} transitions, last one not terminal", log.transitions.len())));
    }
    let w = last.next_observation.wrap_count;
    if w >= 1.0 {
        return Ok(Classification { outcome: Outcome::Success, reclassified: false, final_wrap: w });
    }
    let struck = log.min_strike_distance < STRIKE_DISTANCE;
    Ok(Classification {
        outcome: if struck { Outcome::Success } else { Outcome::Failure },
        reclassified: struck,
        final_wrap: w,
    })
}

/// Percentage changes of one sweep axis: ±5 % steps over [−100, +100] %,
/// then +20 % steps up to +300 %.
pub fn sweep_axis() -> Vec<f64> {
    let mut v: Vec<f64> = (-20..=20).map(|k| 5.0 * k as f64).collect();
    v.extend((6..=15).map(|k| 20.0 * k as f64));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepLayout {
    /// Each axis swept with the other at nominal.
    Axes,
    /// Full cross product.
    Grid,
}

/// Grid points `(Δℓ %, Δm %)` of the layout.
pub fn sweep_points(layout: SweepLayout) -> Vec<(f64, f64)> {
    let axis = sweep_axis();
    match layout {
        SweepLayout::Axes => {
            let mut pts: Vec<(f64, f64)> = axis.iter().map(|&dl| (dl, 0.0)).collect();
            pts.extend(axis.iter().filter(|&&dm| dm != 0.0).map(|&dm| (0.0, dm)));
            pts
        }
        SweepLayout::Grid => axis.iter().flat_map(|&dl| axis.iter().map(move |&dm| (dl, dm))).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub dl_pct: f64,
    pub dm_pct: f64,
    pub successes: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub agent: String,
    pub points: Vec<SweepPoint>,
    /// Degenerate combinations that were not run.
    pub skipped: Vec<(f64, f64)>,
    pub tether_interval: Option<(f64, f64)>,
    pub mass_interval: Option<(f64, f64)>,
}

/// Successes out of five needed for a promising grid point.
pub const PROMISING: usize = 4;
pub const EPISODES_PER_POINT: usize = 5;

/// Largest contiguous run of promising values through 0 along one axis.
pub fn tolerance_interval(axis: &[(f64, usize)]) -> Option<(f64, f64)> {
    let mut pts: Vec<(f64, usize)> = axis.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let zero = pts.iter().position(|p| p.0 == 0.0)?;
    if pts[zero].1 < PROMISING {
        return None;
    }
    let mut lo = zero;
    while lo > 0 && pts[lo - 1].1 >= PROMISING {
        lo -= 1;
    }
    let mut hi = zero;
    while hi + 1 < pts.len() && pts[hi + 1].1 >= PROMISING {
        hi += 1;
    }
    Some((pts[lo].0, pts[hi].0))
}

impl SweepReport {
    pub fn from_points(agent: impl Into<String>, points: Vec<SweepPoint>, skipped: Vec<(f64, f64)>) -> Self {
        let tether: Vec<(f64, usize)> = points.iter().filter(|p| p.dm_pct == 0.0).map(|p| (p.dl_pct, p.successes)).collect();
        let mass: Vec<(f64, usize)> = points.iter().filter(|p| p.dl_pct == 0.0).map(|p| (p.dm_pct, p.successes)).collect();
        Self {
            agent: agent.into(),
            tether_interval: tolerance_interval(&tether),
            mass_interval: tolerance_interval(&mass),
            points,
            skipped,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), IoError> {
        #[derive(Serialize)]
        struct Row {
            dl_pct: f64,
            dm_pct: f64,
            successes: usize,
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for p in &self.points {
            w.serialize(Row { dl_pct: p.dl_pct, dm_pct: p.dm_pct, successes: p.successes }).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| IoError::fs(path, e))
    }

    /// Tolerance ranges in the form plotted as horizontal bars.
    pub fn summary_json(&self) -> serde_json::Value {
        let bar = |r: Option<(f64, f64)>| match r {
            Some((lo, hi)) => serde_json::json!({ "min_pct": lo, "max_pct": hi }),
            None => serde_json::Value::Null,
        };
        serde_json::json!({
            "agent": self.agent,
            "promising_threshold": format!("{PROMISING}/{EPISODES_PER_POINT}"),
            "tether_length": bar(self.tether_interval),
            "perching_weight_mass": bar(self.mass_interval),
            "skipped": self.skipped,
        })
    }
}

/// Policy evaluated by the sweep.
#[derive(Debug, Clone)]
pub enum SweepPolicy {
    Scripted(DemoKind),
    Agent(Box<Checkpoint>),
}

impl SweepPolicy {
    pub fn name(&self) -> String {
        match self {
            SweepPolicy::Scripted(k) => format!("scripted-{k}"),
            SweepPolicy::Agent(_) => "agent".into(),
        }
    }
}

/// Runs one episode and returns its log.
pub fn run_episode(env: &mut PerchEnv, policy: &SweepPolicy, seed: u64) -> Result<EpisodeLog, EvalError> {
    run_episode_inner(env, policy, seed, None)
}

/// As [`run_episode`], also recording the state before every step and at
/// the end.
pub fn run_episode_recorded(env: &mut PerchEnv, policy: &SweepPolicy, seed: u64) -> Result<(EpisodeLog, Vec<Snapshot>), EvalError> {
    let mut snaps = Vec::new();
    let log = run_episode_inner(env, policy, seed, Some(&mut snaps))?;
    snaps.push(Snapshot::of(env.state(), env.observation().wrap_count * std::f64::consts::TAU));
    Ok((log, snaps))
}

fn run_episode_inner(
    env: &mut PerchEnv,
    policy: &SweepPolicy,
    seed: u64,
    mut snaps: Option<&mut Vec<Snapshot>>,
) -> Result<EpisodeLog, EvalError> {
    let mut act: Box<dyn FnMut(&PerchEnv, &Observation) -> Action> = match policy {
        SweepPolicy::Scripted(kind) => crate::demo::scripted_policy(*kind, env.target(), seed),
        SweepPolicy::Agent(ck) => {
            let agent: Sac = ck.restore(0)?;
            let task = PerchTask::new(env.clone());
            Box::new(move |_, o| task.action_of(&agent.deterministic_action(&task.features(o))))
        }
    };
    let transitions = crate::env::rollout(env, seed, |e, o| {
        if let Some(s) = snaps.as_deref_mut() {
            s.push(Snapshot::of(e.state(), o.wrap_count * std::f64::consts::TAU));
        }
        act(e, o)
    })?;
    Ok(EpisodeLog { transitions, min_strike_distance: env.min_strike_distance() })
}

fn run_point(base: &EnvConfig, policy: &SweepPolicy, dl: f64, dm: f64, seed: u64) -> Result<SweepPoint, EvalError> {
    let mut cfg = base.clone();
    cfg.world = base.world.perturbed(dl, dm);
    let mut env = PerchEnv::new(cfg)?;
    let mut successes = 0;
    for e in 0..EPISODES_PER_POINT {
        let log = run_episode(&mut env, policy, seed.wrapping_add(e as u64))?;
        if classify_success(&log)?.outcome == Outcome::Success {
            successes += 1;
        }
    }
    Ok(SweepPoint { dl_pct: dl, dm_pct: dm, successes, episodes: EPISODES_PER_POINT })
}

/// Five episodes per grid point around the nominal configuration `base`.
/// A zero-length tether (`Δℓ = −100 %`) is skipped and recorded.
pub fn robustness_sweep(
    base: &EnvConfig,
    policy: &SweepPolicy,
    points: &[(f64, f64)],
    seed: u64,
) -> Result<SweepReport, EvalError> {
    let (skipped, run): (Vec<(f64, f64)>, Vec<(f64, f64)>) = points.iter().partition(|(dl, _)| *dl <= -100.0);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<SweepPoint, EvalError>> = {
        use rayon::prelude::*;
        run.par_iter().map(|&(dl, dm)| run_point(base, policy, dl, dm, seed)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<SweepPoint, EvalError>> = run.iter().map(|&(dl, dm)| run_point(base, policy, dl, dm, seed)).collect();
    let points = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport::from_points(policy.name(), points, skipped))
}

/// Trailing moving average over `window` samples.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Median with `None` treated as never reaching, i.e. larger than any value.
pub fn median_steps(values: &[Option<usize>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<Option<usize>> = values.to_vec();
    v.sort_by(|a, b| match (a, b) {
        (Some(x), Some(y)) => x.cmp(y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2].map(|x| x as f64)
    } else {
        match (v[n / 2 - 1], v[n / 2]) {
            (Some(a), Some(b)) => Some((a + b) as f64 / 2.0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveSeries {
    Episode,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedCurve {
    pub agent: String,
    pub steps: Vec<usize>,
    pub values: Vec<f64>,
    pub steps_to_threshold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub curves: Vec<SmoothedCurve>,
    /// Median env steps to the threshold per agent.
    pub steps_to_threshold: BTreeMap<String, Option<f64>>,
}

/// Smooths each run, finds its first crossing of `threshold` and takes the
/// median across runs of the same agent. Runs without data are skipped.
pub fn aggregate_curves(runs: &[(String, Vec<CurveRow>)], series: CurveSeries, window: usize, threshold: f64) -> CurveSummary {
    let mut curves = Vec::new();
    let mut per_agent: BTreeMap<String, Vec<Option<usize>>> = BTreeMap::new();
    for (agent, rows) in runs {
        let pts: Vec<(usize, f64)> = rows
            .iter()
            .filter_map(|r| {
                let v = match series {
                    CurveSeries::Episode => r.episode_reward,
                    CurveSeries::Validation => r.validation_return,
                };
                v.map(|v| (r.env_step, v))
            })
            .collect();
        if pts.is_empty() {
            log::warn!("run of {agent} has no {series:?} data, excluded");
            continue;
        }
        let raw: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let values = moving_average(&raw, window);
        let steps: Vec<usize> = pts.iter().map(|p| p.0).collect();
        let hit = values.iter().position(|v| *v >= threshold).map(|i| steps[i]);
        per_agent.entry(agent.clone()).or_default().push(hit);
        curves.push(SmoothedCurve { agent: agent.clone(), steps, values, steps_to_threshold: hit });
    }
    let steps_to_threshold = per_agent.into_iter().map(|(a, v)| (a, median_steps(&v))).collect();
    CurveSummary { curves, steps_to_threshold }
}

pub fn write_curves_csv(summary: &CurveSummary, path: &Path) -> Result<(), IoError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| IoError::fs(path, e))?);
    let io = |e| IoError::fs(path, e);
    writeln!(f, "agent,run,env_step,value").map_err(io)?;
    for (run, c) in summary.curves.iter().enumerate() {
        for (s, v) in c.steps.iter().zip(&c.values) {
            writeln!(f, "{},{run},{s},{v}", c.agent).map_err(io)?;
        }
    }
    f.flush().map_err(io)
}

/// One row of the state snapshot CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub quad_x: f64,
    pub quad_y: f64,
    pub quad_z: f64,
    pub weight_x: f64,
    pub weight_y: f64,
    pub weight_z: f64,
    /// Accumulated wrap angle [rad].
    pub wrap_angle: f64,
}

impl Snapshot {
    pub fn of(state: &WorldState, wrap_angle: f64) -> Self {
        let (q, w) = (state.quad_position, state.weight_position());
        Self { time: state.time, quad_x: q.x, quad_y: q.y, quad_z: q.z, weight_x: w.x, weight_y: w.y, weight_z: w.z, wrap_angle }
    }
}

pub fn write_snapshots(rows: &[Snapshot], path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| IoError::fs(path, e))
}
