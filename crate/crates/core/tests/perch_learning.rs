use perch_core::demo::{DemoKind, DemoSet};
use perch_core::env::{EnvConfig, PerchEnv};
use perch_core::learn::task::{PerchTask, PERCH_OBS_DIM};
use perch_core::learn::train::{demo_buffer, evaluate_policy};
use perch_core::learn::{Sac, SacConfig};

fn short_env() -> EnvConfig {
    let mut cfg = EnvConfig::default();
    cfg.episode.max_steps = 40;
    cfg
}

fn agent_config() -> SacConfig {
    SacConfig { hidden: vec![64, 64], batch_size: 64, pretrain_steps: 5000, ..SacConfig::default() }
}

#[test]
fn pretraining_on_set_a_beats_the_untrained_policy() {
    let cfg = short_env();
    let set = DemoSet::generate(DemoKind::A, &cfg, 2, 1).unwrap();
    let mut task = PerchTask::new(PerchEnv::new(cfg).unwrap());
    let offline = demo_buffer(&task, &[set]);
    let mut gains = Vec::new();
    for seed in 0..3 {
        let mut agent = Sac::new(PERCH_OBS_DIM, 3, agent_config(), seed).unwrap();
        let before = evaluate_policy(&agent, &mut task, 3).unwrap();
        agent.pretrain(&offline, 5000).unwrap();
        let after = evaluate_policy(&agent, &mut task, 3).unwrap();
        gains.push(after - before);
    }
    gains.sort_by(f64::total_cmp);
    assert!(gains[1] > 0.0, "gains {gains:?}");
}

#[test]
fn pretraining_is_deterministic_given_seed() {
    let cfg = short_env();
    let set = DemoSet::generate(DemoKind::A, &cfg, 1, 1).unwrap();
    let task = PerchTask::new(PerchEnv::new(cfg).unwrap());
    let offline = demo_buffer(&task, &[set]);
    let run = || {
        let mut agent = Sac::new(PERCH_OBS_DIM, 3, SacConfig { hidden: vec![16], batch_size: 32, ..SacConfig::default() }, 7).unwrap();
        agent.pretrain(&offline, 50).unwrap();
        agent.actor.params
    };
    assert_eq!(run(), run());
}
