use std::path::Path;
use std::process::{Command, Output};

fn lhpf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lhpf")).args(args).current_dir(cwd).env_remove("LHPF_SEED").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lhpf(&["fly"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = lhpf(&["simulate", "--planner", "expert", "--scenarios", "nope.jsonl", "--report", "r.csv"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error code=3 kind=missing_file"), "{err}");
}

#[test]
fn invalid_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[phase1]\nbatch_size = 0\n").unwrap();
    let o = lhpf(&["gen-data", "--count", "1", "--out", "d", "--config", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("field=phase1"), "{}", stderr(&o));
}

#[test]
fn expert_simulation_is_deterministic_and_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = lhpf(&["gen-data", "--kinds", "straight,dense_traffic", "--count", "2", "--out", "data", "--seed", "4"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(p.join("data/effective_config.toml").exists());
    for report in ["a.csv", "b.csv"] {
        let o = lhpf(&["simulate", "--planner", "expert", "--scenarios", "data", "--report", report, "--traces", "tr"], p);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(p.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 4 + 1);
    let header: Vec<&str> = lines[0].split(',').collect();
    let composite = header.iter().position(|h| *h == "composite_score").unwrap();
    let steps = header.iter().position(|h| *h == "steps").unwrap();
    for row in &lines[1..5] {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[steps], "150");
        assert_eq!(f[composite].parse::<f64>().unwrap(), 100.0, "{row}");
    }
    assert!(lines[5].starts_with("summary"));

    let o = lhpf(&["plot", "--input", "a.csv", "--out", "sim.png"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(p.join("sim.png").exists());
    let o = lhpf(&["plot", "--input", "tr/straight-4.trace.json", "--out", "snaps", "--frames", "0,75,150"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(p.join("snaps/step_150.png").exists());
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = Command::new(env!("CARGO_BIN_EXE_lhpf"))
        .args(["gen-data", "--kinds", "straight", "--count", "1", "--out", "d"])
        .current_dir(p)
        .env("LHPF_SEED", "17")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(p.join("d/scenarios.jsonl")).unwrap();
    assert!(text.contains("\"seed\":17"));
    let cfg = std::fs::read_to_string(p.join("d/effective_config.toml")).unwrap();
    assert!(cfg.contains("seed = 17"));
}
