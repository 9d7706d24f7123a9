use std::path::Path;
use std::process::{Command, Output};

fn perch(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perch"))
        .args(args)
        .arg("--output")
        .arg(root)
        .env_remove("PERCH_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn usage_and_config_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&perch(dir.path(), &["no-such-command"])), 2);
    assert_eq!(code(&perch(dir.path(), &["train", "--agent", "sacfd"])), 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[trajectory]\na_max = -3.0\n").unwrap();
    let o = perch(dir.path(), &["heatmap", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("trajectory.a_max"));

    std::fs::write(&bad, "nonsense = true\n").unwrap();
    assert_eq!(code(&perch(dir.path(), &["heatmap", "--config", bad.to_str().unwrap()])), 3);
}

#[test]
fn mislabelled_demonstrations_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let o = perch(dir.path(), &["gen-demos", "--kind", "f", "--count", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let f = dir.path().join("gen-demos/F.jsonl");
    assert!(f.exists());

    let o = perch(dir.path(), &["train", "--agent", "sacfd-a", "--demos", f.to_str().unwrap(), "--steps", "10"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not use demonstration set"));

    let o = perch(dir.path(), &["train", "--agent", "sac", "--demos", f.to_str().unwrap(), "--steps", "10"]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("train").exists());
}

#[test]
fn heatmap_writes_csv_and_config_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let o = perch(dir.path(), &["heatmap"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("at x 0.300, z 0.600"), "{out}");
    let csv = std::fs::read_to_string(dir.path().join("heatmap/heatmap.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x,z,value"));
    let snapshot = std::fs::read_to_string(dir.path().join("heatmap/config.toml")).unwrap();
    assert!(snapshot.contains("agent = "));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seeds = [11]\n[trajectory]\na_max = 10.0\n").unwrap();
    let o = perch(dir.path(), &["trajopt", "--config", cfg.to_str().unwrap(), "--a-max", "20"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let snapshot = std::fs::read_to_string(dir.path().join("trajopt/config.toml")).unwrap();
    assert!(snapshot.contains("a_max = 20.0"), "{snapshot}");
    assert!(snapshot.contains("seeds = [11]"));
    let traj = std::fs::read_to_string(dir.path().join("trajopt/trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some("index,x,y,z,speed"));
}

#[test]
fn demos_replay_and_scripted_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&perch(dir.path(), &["gen-demos", "--kind", "a", "--count", "1"])), 0);
    let a = dir.path().join("gen-demos/A.jsonl");
    let o = perch(dir.path(), &["replay", "--demos", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("reproduced exactly"));

    let o = perch(dir.path(), &["evaluate", "--scripted", "a", "--episodes", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("2/2 successful"));
    assert!(dir.path().join("evaluate/snapshots_1.csv").exists());

    let o = perch(dir.path(), &["descent-sim"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("descent-sim/descent.csv").exists());
}
