//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary so
//! the lines always reach the terminal.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gatemod::objective::grad_f;
use gatemod::verify::{self, Check};

struct Outcome {
    id: u8,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn summarize(checks: &[Check]) -> (bool, String) {
    let passed = checks.iter().all(|c| c.passed);
    let detail = checks
        .iter()
        .map(|c| {
            format!(
                "{}{}={:.3e} (bound {:.3e})",
                if c.passed { "" } else { "!" },
                c.name,
                c.measured,
                c.bound
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    (passed, detail)
}

/// Runs `f` and returns its rows (or the error text) with the wall time.
fn timed(f: impl FnOnce() -> gatemod::Result<Vec<Check>>) -> (Result<Vec<Check>, String>, Duration) {
    let start = Instant::now();
    let result = f().map_err(|e| e.to_string());
    (result, start.elapsed())
}

fn outcome(
    id: u8,
    title: &'static str,
    rows: &Result<Vec<Check>, String>,
    elapsed: Duration,
    limit: Option<Duration>,
) -> Outcome {
    let (mut passed, mut detail) = match rows {
        Ok(checks) => {
            let mine: Vec<Check> = checks.iter().filter(|c| c.criterion == Some(id)).cloned().collect();
            let (p, d) = summarize(&mine);
            (p && !mine.is_empty(), d)
        }
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(limit) = limit {
        if elapsed > limit {
            passed = false;
            detail.push_str(&format!("; !runtime {elapsed:.1?} over {limit:?}"));
        } else {
            detail.push_str(&format!("; runtime {elapsed:.1?}"));
        }
    }
    Outcome { id, title, passed, detail }
}

fn examples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples")
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output directory")
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).expect("csv readable"),
            )
        })
        .collect();
    files.sort();
    files
}

/// Runs each command twice and reports the commands whose CSVs differ.
fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_gatemod");
    let root = tempfile_dir();
    let ex = examples();
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("solve", vec!["--config".into(), ex.join("symmetric.json").display().to_string()]),
        ("flow", vec!["--config".into(), ex.join("flow_demo.json").display().to_string()]),
        ("net", vec!["--config".into(), ex.join("net_demo.json").display().to_string()]),
        ("boids", vec!["--config".into(), ex.join("goal.json").display().to_string(), "--seed".into(), "3".into()]),
        ("bandit", vec!["--config".into(), ex.join("bandit_exp1.json").display().to_string()]),
        ("verify", vec!["--scope".into(), "flow".into(), "--seed".into(), "5".into()]),
    ];
    let mut bad = Vec::new();
    let mut compared = 0;
    for (cmd, args) in &runs {
        let mut outputs = Vec::new();
        for (rep, threads) in [(0, "0"), (1, "1")] {
            let out = root.join(format!("{cmd}-{rep}"));
            let status = Command::new(bin)
                .arg(cmd)
                .args(args)
                .arg("--out")
                .arg(&out)
                .env("GATEMOD_THREADS", threads)
                .output()
                .expect("binary runs");
            let code = status.status.code().unwrap_or(-1);
            // verify may legitimately report failing checks (exit 1).
            if code != 0 && !(*cmd == "verify" && code == 1) {
                bad.push(format!("{cmd} exited {code}"));
            }
            outputs.push(csv_bytes(&out));
        }
        if cmd != &"solve" && outputs[0].is_empty() {
            bad.push(format!("{cmd} wrote no csv"));
        }
        compared += outputs[0].len();
        if outputs[0] != outputs[1] {
            bad.push(format!("{cmd} csv differs"));
        }
    }
    let _ = std::fs::remove_dir_all(&root);
    Outcome {
        id: 13,
        title: "determinism of CLI outputs",
        passed: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("{compared} csv files byte-identical across reruns")
        } else {
            bad.join("; ")
        },
    }
}

fn tempfile_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gatemod-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}

fn main() {
    let seed = 0;
    let secs = Duration::from_secs;
    let mut outcomes = Vec::new();
    let mut run = |id, title, limit: Option<u64>, f: &dyn Fn() -> gatemod::Result<Vec<Check>>| {
        let (rows, elapsed) = timed(f);
        outcomes.push(outcome(id, title, &rows, elapsed, limit.map(secs)));
    };
    run(1, "prox identity", Some(30), &|| verify::prox_identity(seed));
    run(2, "gradient and Hessian certification", Some(60), &|| {
        verify::gradient_certification(seed, &grad_f)
    });
    run(3, "equilibrium equals lattice optimum", Some(120), &|| verify::equilibrium_vs_grid(seed));
    // Criterion 5 is measured on the trajectories of criterion 4.
    let (flows, flow_time) = timed(|| verify::contraction_and_descent(seed));
    run(6, "Euler step bound", Some(60), &|| verify::euler_step_rule(seed));
    run(7, "entrainment", Some(60), &verify::entrainment);
    run(8, "circuit equivalence", Some(300), &|| verify::net_equivalence(seed));
    run(9, "biased equilibrium", Some(30), &|| verify::biased_equilibrium(seed));
    run(10, "boids polarization", Some(600), &|| verify::boids_polarization(seed));
    run(11, "boids goal seeking", Some(600), &|| verify::boids_goal(seed));
    run(12, "bandit properties", Some(300), &|| verify::bandit_properties(seed));
    outcomes.push(outcome(4, "contraction", &flows, flow_time, Some(secs(60))));
    outcomes.push(outcome(5, "energy descent and Lyapunov pair", &flows, Duration::ZERO, None));
    outcomes.push(determinism());
    outcomes.sort_by_key(|o| o.id);

    for o in &outcomes {
        println!(
            "{} criterion {:>2} {}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
