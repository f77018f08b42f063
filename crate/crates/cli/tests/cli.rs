use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gatemod"))
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).arg("--out").arg(out).output().unwrap()
}

#[test]
fn solve_symmetric_and_single_primitive() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve"], &example("symmetric.json"), dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("w* = [0.5000000000, 0.5000000000]"), "{text}");
    let sol: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["weights"].as_array().unwrap().len(), 2);

    let o = run(&["solve"], &example("single.json"), dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("w* = [1.0000000000]"));
}

#[test]
fn malformed_json_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"instance\": [1,\n").unwrap();
    let o = run(&["solve"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("line") && err.contains("column"), "{err}");
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("euler.json");
    std::fs::write(
        &cfg,
        r#"{"instance": {"primitives": {"rows": [[0.95, 0.05], [0.05, 0.95]]}, "epsilon": 0.05},
            "flow": {"integrator": "euler", "dt": 0.5}}"#,
    )
    .unwrap();
    assert_eq!(run(&["flow"], &cfg, dir.path()).status.code(), Some(2));
    let o = bin().args(["verify", "--scope", "nope"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    // A denormal temperature overflows the gating logits.
    let cfg = dir.path().join("cold.json");
    std::fs::write(
        &cfg,
        r#"{"instance": {"primitives": {"rows": [[0.9, 0.1], [0.1, 0.9]]}, "cost": [0.0, 1.0], "epsilon": 1e-320}}"#,
    )
    .unwrap();
    assert_eq!(run(&["solve"], &cfg, dir.path()).status.code(), Some(3));
}

#[test]
fn horizon_zero_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zero.json");
    std::fs::write(
        &cfg,
        r#"{"instance": {"primitives": {"rows": [[0.9, 0.1], [0.1, 0.9]]}, "epsilon": 0.5},
            "flow": {"horizon": 0.0}, "initial": [0.7, 0.3]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["flow"], &cfg, &out).status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(out.join("weights.svg").exists() && out.join("energy.svg").exists());
}

#[test]
fn manifest_digest_matches_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["flow"], &example("flow_demo.json"), dir.path()).status.code(), Some(0));
    let resolved = std::fs::read(dir.path().join("resolved_config.json")).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_digest"], hex::encode(Sha256::digest(&resolved)));
    assert_eq!(manifest["command"], "flow");
    assert_eq!(manifest["seed"], 7);
    // The resolved file is itself a valid config that reproduces the run.
    let again = dir.path().join("again");
    let o = run(&["flow"], &dir.path().join("resolved_config.json"), &again);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read(dir.path().join("trajectory.csv")).unwrap(),
        std::fs::read(again.join("trajectory.csv")).unwrap()
    );
}

#[test]
fn flow_energy_column_is_non_increasing() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["flow"], &example("flow_demo.json"), dir.path()).status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "energy").unwrap();
    let energy: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert!(energy.windows(2).all(|p| p[1] <= p[0] + 1e-8));
}

#[test]
fn shipped_boids_configs_parse() {
    for name in ["polarization.json", "goal.json"] {
        let text = std::fs::read_to_string(example(name)).unwrap();
        let cfg: gatemod::boids::FlockConfig = serde_json::from_str(&text).unwrap();
        cfg.validate().unwrap();
    }
    let goal: gatemod::boids::FlockConfig =
        serde_json::from_str(&std::fs::read_to_string(example("goal.json")).unwrap()).unwrap();
    assert_eq!(goal.goal, Some([-15.0, -15.0]));
}

#[test]
fn bandit_ingests_csv_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("trials.csv");
    std::fs::write(
        &data,
        "subject,block,trial,choice,reward\n1,1,1,1,2.0\n1,1,2,2,-1.0\n1,1,3,1,3.5\n1,2,1,2,0.5\n1,2,2,1,-0.5\n",
    )
    .unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"experiment": {"variant": "exp2"}, "data": "trials.csv",
            "fit": [{"kind": "hybrid"}, {"kind": "baseline", "baseline": "value"}]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["bandit"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let fits = std::fs::read_to_string(out.join("fits.csv")).unwrap();
    let lines: Vec<&str> = fits.lines().collect();
    assert_eq!(lines[0], "subject,model,loglik,bic,param1,param2");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,hybrid,"));
}
