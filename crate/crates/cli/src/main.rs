//! `perch`: reproducible experiments over the perching simulator.
//!
//! Settings come from, in increasing precedence: built-in defaults, the
//! `--config` TOML file, then command-line flags. The output root is
//! `--output`, else `$PERCH_OUTPUT_ROOT`, else `output_dir` from the config.
//! Each subcommand writes into `<root>/<subcommand>/` next to a
//! `config.toml` snapshot of the effective configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use perch_core::config::{AgentSpec, RunConfig};
use perch_core::demo::{self, DemoKind, DemoSet};
use perch_core::descent::{simulate_descent, write_descent_log};
use perch_core::env::{self, write_jsonl, PerchEnv};
use perch_core::eval::{self, SweepLayout, SweepPolicy};
use perch_core::learn::task::{Environment, PerchTask, PERCH_OBS_DIM};
use perch_core::learn::train::{self, demo_buffer, hash_of, Checkpoint, TrainOptions};
use perch_core::learn::{ReplayBuffer, Sac};
use perch_core::reward::emit_heatmap;
use perch_core::traj::{compute_velocity_profile, export_trajectory, import_waypoints, WaypointPath};

#[derive(Parser, Debug)]
#[command(name = "perch", version, about = "Tethered perching: simulation, learning and evaluation")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root.
    #[arg(long, global = true, env = "PERCH_OUTPUT_ROOT")]
    output: Option<PathBuf>,
    /// Replaces the configured seed list.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate scripted demonstration sets.
    GenDemos(GenDemos),
    /// Train an agent for every seed.
    Train(Train),
    /// Roll out a policy and classify the episodes.
    Evaluate(Evaluate),
    /// Tether-length and weight-mass robustness sweep.
    Sweep(Sweep),
    /// Reward over the X-Z plane.
    Heatmap,
    /// Velocity profile for a waypoint path.
    Trajopt(Trajopt),
    /// Descent and disarm after a scripted wrap.
    DescentSim,
    /// Re-simulate a demonstration file and check its rewards.
    Replay(Replay),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    A,
    #[value(name = "a-")]
    AMinus,
    F,
}

impl From<Kind> for DemoKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::A => DemoKind::A,
            Kind::AMinus => DemoKind::AMinus,
            Kind::F => DemoKind::F,
        }
    }
}

#[derive(Args, Debug)]
struct GenDemos {
    /// Sets to generate; all three by default.
    #[arg(long, value_enum, value_delimiter = ',')]
    kind: Vec<Kind>,
    /// Trajectories per set; defaults to the configured counts.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args, Debug)]
struct Train {
    #[arg(long)]
    agent: Option<AgentSpec>,
    /// Demonstration files; generated from the config when absent.
    #[arg(long, value_delimiter = ',')]
    demos: Vec<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    /// Validation return whose first crossing is reported per seed.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct PolicyArgs {
    /// Trained checkpoint.
    #[arg(long, conflicts_with = "scripted")]
    checkpoint: Option<PathBuf>,
    /// Scripted policy (default A).
    #[arg(long, value_enum)]
    scripted: Option<Kind>,
}

impl PolicyArgs {
    fn policy(&self) -> Result<SweepPolicy, Failure> {
        match &self.checkpoint {
            Some(p) => Ok(SweepPolicy::Agent(Box::new(Checkpoint::load(p).map_err(runtime)?))),
            None => Ok(SweepPolicy::Scripted(self.scripted.unwrap_or(Kind::A).into())),
        }
    }
}

#[derive(Args, Debug)]
struct Evaluate {
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = eval::EPISODES_PER_POINT)]
    episodes: usize,
}

#[derive(Args, Debug)]
struct Sweep {
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, value_enum)]
    layout: Option<LayoutArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LayoutArg {
    Axes,
    Grid,
}

#[derive(Args, Debug)]
struct Trajopt {
    /// CSV with x, y, z columns; a scripted wrap's flown path by default.
    #[arg(long)]
    waypoints: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    a_max: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    v_req: Option<f64>,
}

#[derive(Args, Debug)]
struct Replay {
    #[arg(long)]
    demos: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Config(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

struct Ctx {
    cfg: RunConfig,
    root: PathBuf,
}

impl Ctx {
    /// Creates `<root>/<name>/` and snapshots the configuration there.
    fn out_dir(&self, name: &str) -> Result<PathBuf, Failure> {
        let dir = self.root.join(name);
        fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        self.cfg.save(&dir.join("config.toml")).map_err(runtime)?;
        Ok(dir)
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("json value serialises");
    fs::write(path, text + "\n").map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("usage error: {m}"),
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(config_err)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seeds {
        cfg.seeds = s;
    }
    match &cli.command {
        Command::Train(t) => {
            if let Some(a) = t.agent {
                cfg.agent = a;
            }
            if let Some(n) = t.steps {
                cfg.train.total_steps = n;
            }
        }
        Command::Sweep(s) => {
            if let Some(l) = s.layout {
                cfg.sweep.layout = match l {
                    LayoutArg::Axes => SweepLayout::Axes,
                    LayoutArg::Grid => SweepLayout::Grid,
                };
            }
        }
        Command::Trajopt(t) => {
            if let Some(a) = t.a_max {
                cfg.trajectory.a_max = a;
            }
            if t.v_req.is_some() {
                cfg.trajectory.v_req = t.v_req;
            }
        }
        _ => {}
    }
    cfg.validate().map_err(config_err)?;
    let root = cli.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let ctx = Ctx { cfg, root };
    match cli.command {
        Command::GenDemos(g) => gen_demos(&ctx, &g),
        Command::Train(t) => train_cmd(&ctx, &t),
        Command::Evaluate(e) => evaluate(&ctx, &e),
        Command::Sweep(s) => sweep(&ctx, &s),
        Command::Heatmap => heatmap(&ctx),
        Command::Trajopt(t) => trajopt(&ctx, &t),
        Command::DescentSim => descent(&ctx),
        Command::Replay(r) => replay(&ctx, &r),
    }
}

fn demo_path(dir: &Path, kind: DemoKind) -> PathBuf {
    let name = match kind {
        DemoKind::A => "A",
        DemoKind::AMinus => "A-",
        DemoKind::F => "F",
    };
    dir.join(format!("{name}.jsonl"))
}

fn gen_demos(ctx: &Ctx, g: &GenDemos) -> Result<(), Failure> {
    let dir = ctx.out_dir("gen-demos")?;
    let kinds: Vec<DemoKind> =
        if g.kind.is_empty() { vec![DemoKind::A, DemoKind::AMinus, DemoKind::F] } else { g.kind.iter().map(|&k| k.into()).collect() };
    let seed = ctx.cfg.seeds[0];
    for kind in kinds {
        let count = g.count.unwrap_or(ctx.cfg.demos.of(kind));
        let set = DemoSet::generate(kind, &ctx.cfg.env, count, seed).map_err(runtime)?;
        let path = demo_path(&dir, kind);
        demo::save_transitions(&set, &path).map_err(runtime)?;
        println!("{}: {} trajectories, {} transitions", path.display(), set.trajectories.len(), set.total_steps());
    }
    Ok(())
}

fn load_demo_sets(ctx: &Ctx, paths: &[PathBuf]) -> Result<Vec<DemoSet>, Failure> {
    let agent = ctx.cfg.agent;
    if paths.is_empty() {
        return agent
            .demo_kinds()
            .iter()
            .map(|&k| DemoSet::generate(k, &ctx.cfg.env, ctx.cfg.demos.of(k), ctx.cfg.seeds[0]).map_err(runtime))
            .collect();
    }
    let mut sets = Vec::new();
    for p in paths {
        match demo::load_transitions(p).map_err(config_err)? {
            Some(s) => sets.push(s),
            None => log::warn!("{}: no demonstrations", p.display()),
        }
    }
    let labels: Vec<DemoKind> = sets.iter().map(|s| s.header.label).collect();
    agent.check_demos(&labels).map_err(Failure::Config)?;
    Ok(sets)
}

fn train_cmd(ctx: &Ctx, t: &Train) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    if cfg.agent == AgentSpec::Sac && !t.demos.is_empty() {
        return Err(Failure::Usage("agent sac takes no demonstrations".into()));
    }
    let sets = load_demo_sets(ctx, &t.demos)?;
    let dir = ctx.out_dir(&format!("train/{}", cfg.agent))?;
    let make_env = || PerchEnv::new(cfg.env.clone()).map(PerchTask::new).map_err(runtime);
    let task = make_env()?;
    let offline = if sets.is_empty() { ReplayBuffer::new(1) } else { demo_buffer(&task, &sets) };
    let config_hash = hash_of(cfg);
    let mut runs = Vec::new();
    let mut summary = Vec::new();
    for &seed in &cfg.seeds {
        let run_dir = dir.join(format!("seed{seed}"));
        fs::create_dir_all(&run_dir).map_err(runtime)?;
        let mut agent = Sac::new(PERCH_OBS_DIM, task.act_dim(), cfg.train.sac.clone(), seed).map_err(config_err)?;
        let (mut env, mut val) = (make_env()?, make_env()?);
        let opts = TrainOptions {
            total_steps: cfg.train.total_steps,
            episode_seed: seed.wrapping_mul(1_000_003),
            checkpoint_path: Some(run_dir.join("best.json")),
            dump_path: Some(run_dir.join("divergence.json")),
            config_hash: config_hash.clone(),
            stop_at: None,
        };
        let report = train::train(&mut agent, &mut env, &mut val, &offline, &opts).map_err(runtime)?;
        let curve_path = run_dir.join("curve.csv");
        let file = fs::File::create(&curve_path).map_err(runtime)?;
        train::write_curve_csv(std::io::BufWriter::new(file), &report.curve).map_err(runtime)?;
        println!("seed {seed}: best validation return {:?}", report.best_return);
        summary.push(serde_json::json!({ "seed": seed, "best_return": report.best_return, "env_steps": report.env_steps }));
        runs.push((cfg.agent.to_string(), report.curve));
    }
    let curves = eval::aggregate_curves(&runs, eval::CurveSeries::Validation, 1, t.threshold.unwrap_or(f64::INFINITY));
    eval::write_curves_csv(&curves, &dir.join("validation_curves.csv")).map_err(runtime)?;
    let median = t.threshold.map(|_| curves.steps_to_threshold.get(cfg.agent.name()).copied().flatten());
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({ "agent": cfg.agent.name(), "threshold": t.threshold, "median_steps_to_threshold": median, "runs": summary }),
    )
}

fn evaluate(ctx: &Ctx, e: &Evaluate) -> Result<(), Failure> {
    let policy = e.policy.policy()?;
    let dir = ctx.out_dir("evaluate")?;
    let mut env = PerchEnv::new(ctx.cfg.env.clone()).map_err(runtime)?;
    let mut episodes = Vec::new();
    let mut successes = 0;
    let mut all = Vec::new();
    for i in 0..e.episodes {
        let seed = ctx.cfg.seeds[0].wrapping_add(i as u64);
        let (log, snaps) = eval::run_episode_recorded(&mut env, &policy, seed).map_err(runtime)?;
        let c = eval::classify_success(&log).map_err(runtime)?;
        if c.outcome == eval::Outcome::Success {
            successes += 1;
        }
        eval::write_snapshots(&snaps, &dir.join(format!("snapshots_{i}.csv"))).map_err(runtime)?;
        let ret: f64 = log.transitions.iter().map(|t| t.reward).sum();
        episodes.push(serde_json::json!({ "seed": seed, "return": ret, "classification": c }));
        all.extend(log.transitions);
    }
    let file = fs::File::create(dir.join("transitions.jsonl")).map_err(runtime)?;
    write_jsonl(std::io::BufWriter::new(file), &all).map_err(runtime)?;
    println!("{}: {successes}/{} successful", policy.name(), e.episodes);
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({ "policy": policy.name(), "successes": successes, "episodes": episodes }),
    )
}

fn sweep(ctx: &Ctx, s: &Sweep) -> Result<(), Failure> {
    let policy = s.policy.policy()?;
    let dir = ctx.out_dir("sweep")?;
    let points = eval::sweep_points(ctx.cfg.sweep.layout);
    let report = eval::robustness_sweep(&ctx.cfg.env, &policy, &points, ctx.cfg.seeds[0]).map_err(runtime)?;
    report.write_csv(&dir.join("sweep.csv")).map_err(runtime)?;
    write_json(&dir.join("summary.json"), &report.summary_json())?;
    println!("tether length range {:?}, weight mass range {:?}", report.tether_interval, report.mass_interval);
    Ok(())
}

fn heatmap(ctx: &Ctx) -> Result<(), Failure> {
    let dir = ctx.out_dir("heatmap")?;
    let h = &ctx.cfg.heatmap;
    let map = emit_heatmap(&ctx.cfg.env.reward, &h.grid, &h.frozen, &ctx.cfg.env.world.branch);
    let path = dir.join("heatmap.csv");
    let file = fs::File::create(&path).map_err(runtime)?;
    map.write_csv(std::io::BufWriter::new(file)).map_err(runtime)?;
    let (i, j) = map.argmax();
    println!("{}: maximum {:.4} at x {:.3}, z {:.3}", path.display(), map.values[j][i], h.grid.x(i), h.grid.z(j));
    Ok(())
}

fn trajopt(ctx: &Ctx, t: &Trajopt) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let points = match &t.waypoints {
        Some(p) => import_waypoints(p).map_err(config_err)?,
        None => {
            let mut env = PerchEnv::new(cfg.env.clone()).map_err(runtime)?;
            let traj = demo::scripted_episode(DemoKind::A, &mut env, cfg.seeds[0]).map_err(runtime)?;
            std::iter::once(traj[0].observation.quad_position).chain(traj.iter().map(|t| t.next_observation.quad_position)).collect()
        }
    };
    let path = WaypointPath::deduplicated(&points, cfg.trajectory.control_period).map_err(config_err)?;
    let dir = ctx.out_dir("trajopt")?;
    let profile = compute_velocity_profile(&path, cfg.trajectory.a_max, cfg.v_req());
    let out = dir.join("trajectory.csv");
    export_trajectory(&profile, &out).map_err(runtime)?;
    let peak = profile.speeds().into_iter().fold(0.0, f64::max);
    println!("{}: {} commands, peak speed {peak:.3} m/s", out.display(), profile.commands.len());
    Ok(())
}

fn descent(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let dir = ctx.out_dir("descent-sim")?;
    let mut env = PerchEnv::new(cfg.env.clone()).map_err(runtime)?;
    let traj = demo::scripted_episode(DemoKind::A, &mut env, cfg.seeds[0]).map_err(runtime)?;
    if !traj.last().is_some_and(|t| t.success) {
        return Err(Failure::Runtime("scripted wrap did not end hanging; nothing to descend from".into()));
    }
    let sim = &cfg.env.sim;
    let rows = simulate_descent(env.state(), sim.gravity, sim.dt, &cfg.descent.controller, cfg.descent.max_time).map_err(runtime)?;
    write_descent_log(&rows, &dir.join("descent.csv")).map_err(runtime)?;
    if let Some(last) = rows.last() {
        println!("descent: {:?} after {:.2} s, clearance {:.3} m", last.decision, last.t, last.clearance);
    }
    Ok(())
}

fn replay(ctx: &Ctx, r: &Replay) -> Result<(), Failure> {
    let Some(set) = demo::load_transitions(&r.demos).map_err(config_err)? else {
        return Err(Failure::Config(format!("{}: no demonstrations", r.demos.display())));
    };
    let dir = ctx.out_dir("replay")?;
    let replayed = demo::replay_demo(&set, &ctx.cfg.env).map_err(runtime)?;
    match replayed {
        Ok(trajs) => {
            let all: Vec<env::Transition> = trajs.into_iter().flatten().collect();
            let file = fs::File::create(dir.join("replayed.jsonl")).map_err(runtime)?;
            write_jsonl(std::io::BufWriter::new(file), &all).map_err(runtime)?;
            println!("{}: {} transitions reproduced exactly", r.demos.display(), all.len());
            write_json(&dir.join("summary.json"), &serde_json::json!({ "identical": true, "transitions": all.len() }))
        }
        Err(m) => {
            write_json(&dir.join("summary.json"), &serde_json::json!({ "identical": false, "mismatch": m }))?;
            Err(Failure::Runtime(format!(
                "trajectory {} step {}: stored reward {} but replay gives {}",
                m.traj, m.step, m.stored, m.replayed
            )))
        }
    }
}
