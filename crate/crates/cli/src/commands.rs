use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use gatemod::bandit::{self, Model};
use gatemod::boids::{self, FlockConfig};
use gatemod::gateflow::{self, BiasVector};
use gatemod::gatenet::{self, NetState};
use gatemod::io::{fmt_f64, svg_line_plot, Series};
use gatemod::objective::total_objective;
use gatemod::verify::{self, Scope};
use gatemod::{ObjectiveInstance, SimplexVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{load, BanditFile, FlowFile, NetFile, SolveFile};
use crate::{write_manifest, CliError};

fn create(out: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = out.join(name);
    let f = File::create(&path).map_err(|e| CliError::Config(format!("cannot create {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn write_text(out: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let mut f = create(out, name)?;
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn prepare(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", out.display())))
}

fn start_point(inst: &ObjectiveInstance, initial: &Option<Vec<f64>>) -> Result<SimplexVector, CliError> {
    match initial {
        Some(w) => {
            if w.len() != inst.n_pi() {
                return Err(CliError::Config(format!(
                    "initial point has {} entries, expected {}",
                    w.len(),
                    inst.n_pi()
                )));
            }
            Ok(SimplexVector::new(w.clone())?)
        }
        None => Ok(SimplexVector::uniform(inst.n_pi())),
    }
}

fn fmt_vec(w: &[f64]) -> String {
    let parts: Vec<String> = w.iter().map(|v| format!("{v:.10}")).collect();
    format!("[{}]", parts.join(", "))
}

#[derive(Serialize)]
struct Solution {
    weights: Vec<f64>,
    residual: f64,
    objective: f64,
    iterations: usize,
}

pub fn solve(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut file: SolveFile = load(config)?;
    if let Some(s) = seed {
        file.seed = s;
    }
    let inst = file.instance.build(file.seed)?;
    let eq = gateflow::solve_equilibrium(&inst)?;
    let objective = total_objective(&inst, &eq.weights)?;
    prepare(out)?;
    let sol = Solution {
        weights: eq.weights.to_vec(),
        residual: eq.residual,
        objective,
        iterations: eq.iterations,
    };
    let mut text = serde_json::to_string_pretty(&sol).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    write_text(out, "solution.json", &text)?;
    write_manifest(out, "solve", file.seed, &file)?;
    println!("w* = {}", fmt_vec(&eq.weights));
    println!("residual = {:e}", eq.residual);
    println!("objective = {objective}");
    Ok(())
}

pub fn flow(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut file: FlowFile = load(config)?;
    if let Some(s) = seed {
        file.seed = s;
    }
    let inst = file.instance.build(file.seed)?;
    let w0 = start_point(&inst, &file.initial)?;
    let traj = match &file.bias {
        Some(b) => {
            let bias = BiasVector::new(SimplexVector::new(b.clone())?)?;
            gateflow::integrate_biased(&inst, &file.flow, &bias, &w0)?
        }
        None => gateflow::integrate(&inst, &file.flow, &w0)?,
    };
    prepare(out)?;
    let mut csv = create(out, "trajectory.csv")?;
    traj.write_csv(&mut csv)?;
    csv.flush()?;
    let weights: Vec<Series> = (0..inst.n_pi())
        .map(|i| Series {
            label: format!("w_{}", i + 1),
            points: traj.times.iter().zip(&traj.weights).map(|(t, w)| (*t, w[i])).collect(),
        })
        .collect();
    write_text(out, "weights.svg", &svg_line_plot("gating weights", &weights))?;
    let energy = Series {
        label: "energy".into(),
        points: traj.times.iter().copied().zip(traj.energy.iter().copied()).collect(),
    };
    write_text(out, "energy.svg", &svg_line_plot("energy", &[energy]))?;
    write_manifest(out, "flow", file.seed, &file)?;
    println!("w(T) = {}", fmt_vec(traj.last()));
    Ok(())
}

pub fn net(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut file: NetFile = load(config)?;
    if let Some(s) = seed {
        file.seed = s;
    }
    let inst = file.instance.build(file.seed)?;
    let w0 = start_point(&inst, &file.initial)?;
    let s0 = NetState::quasi_steady(&inst, &w0)?;
    let dt = file.dt.unwrap_or_else(|| file.timescales.default_dt());
    let run = gatenet::simulate(&inst, &file.timescales, &s0, file.horizon, dt, file.record_every)?;
    prepare(out)?;
    let mut csv = create(out, "net.csv")?;
    run.write_csv(&mut csv)?;
    csv.flush()?;
    let weights: Vec<Series> = (0..inst.n_pi())
        .map(|i| Series {
            label: format!("w_{}", i + 1),
            points: run.times.iter().zip(&run.states).map(|(t, s)| (*t, s.w[i])).collect(),
        })
        .collect();
    write_text(out, "weights.svg", &svg_line_plot("circuit weights", &weights))?;
    write_manifest(out, "net", file.seed, &file)?;
    println!("w(T) = {}", fmt_vec(&run.last().w));
    if run.floor_hits > 0 {
        eprintln!("warning: positivity floor applied {} times", run.floor_hits);
    }
    Ok(())
}

pub fn boids(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: FlockConfig = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let run = boids::run_flock(&cfg)?;
    prepare(out)?;
    let mut f = create(out, "states.csv")?;
    run.write_states_csv(&mut f)?;
    f.flush()?;
    let mut f = create(out, "weights.csv")?;
    run.write_weights_csv(&mut f)?;
    f.flush()?;
    let mut f = create(out, "metrics.csv")?;
    run.write_metrics_csv(&mut f)?;
    f.flush()?;
    let steps: Vec<f64> = (0..run.polarization.len()).map(|k| k as f64).collect();
    let pol = Series {
        label: "polarization".into(),
        points: steps.iter().copied().zip(run.polarization.iter().copied()).collect(),
    };
    write_text(out, "polarization.svg", &svg_line_plot("polarization", &[pol]))?;
    let names = ["w_sep", "w_ali", "w_coh"];
    let weights: Vec<Series> = (0..3)
        .map(|a| Series {
            label: names[a].into(),
            points: run
                .weights
                .iter()
                .enumerate()
                .map(|(k, ws)| (k as f64, ws.iter().map(|w| w[a]).sum::<f64>() / ws.len() as f64))
                .collect(),
        })
        .collect();
    write_text(out, "weights.svg", &svg_line_plot("mean gating weights", &weights))?;
    if let Some(d) = &run.goal_distance {
        let goal = Series {
            label: "goal distance".into(),
            points: steps.iter().copied().zip(d.iter().copied()).collect(),
        };
        write_text(out, "goal_distance.svg", &svg_line_plot("mean goal distance", &[goal]))?;
    }
    write_manifest(out, "boids", cfg.seed, &cfg)?;
    println!("tail polarization = {:.6}", run.tail_polarization(0.2));
    if let Some(d) = &run.goal_distance {
        println!("goal distance {:.4} -> {:.4}", d[0], d[d.len() - 1]);
    }
    if run.coincident_skips > 0 {
        eprintln!("warning: {} coincident neighbor pairs skipped", run.coincident_skips);
    }
    Ok(())
}

pub fn bandit(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut file: BanditFile = load(config)?;
    if let Some(s) = seed {
        file.seed = s;
    }
    let cfg = &file.experiment;
    cfg.validate()?;
    let trials = match (&file.generator, &file.data) {
        (Some(g), None) => bandit::synthesize_experiment(cfg, g.model, &g.params, file.seed)?,
        (None, Some(path)) => {
            let path = if path.is_relative() {
                config.parent().unwrap_or(Path::new(".")).join(path)
            } else {
                path.clone()
            };
            bandit::ingest_csv(&path)?
        }
        _ => return Err(CliError::Config("give exactly one of 'generator' or 'data'".into())),
    };
    if file.fit.is_empty() {
        return Err(CliError::Config("'fit' lists no models".into()));
    }
    let subjects = bandit::group_by_subject(&trials);
    let fits: Vec<(u32, Vec<bandit::Fit>)> = subjects
        .par_iter()
        .map(|(id, rows)| -> gatemod::Result<(u32, Vec<bandit::Fit>)> {
            let fits = file.fit.iter().map(|m| bandit::fit_model(*m, rows, cfg)).collect::<gatemod::Result<_>>()?;
            Ok((*id, fits))
        })
        .collect::<gatemod::Result<_>>()?;
    prepare(out)?;
    let mut f = create(out, "trials.csv")?;
    bandit::write_trials(&trials, &mut f)?;
    f.flush()?;
    let mut f = create(out, "fits.csv")?;
    writeln!(f, "subject,model,loglik,bic,param1,param2")?;
    for (id, subject_fits) in &fits {
        for fit in subject_fits {
            let p = |i: usize| fit.params.get(i).map_or(String::new(), |v| fmt_f64(*v));
            writeln!(f, "{id},{},{},{},{},{}", fit.model.name(), fmt_f64(fit.loglik), fmt_f64(fit.bic), p(0), p(1))?;
        }
    }
    f.flush()?;
    // Weights are replayed at each subject's own GateMod fit.
    let mut replayed = Vec::new();
    for ((id, rows), (_, subject_fits)) in subjects.iter().zip(&fits) {
        if let Some(fit) = subject_fits.iter().find(|f| matches!(f.model, Model::GateMod { .. })) {
            let Model::GateMod { epsilon } = fit.model else { unreachable!() };
            let policies = bandit::replay_weights(rows, cfg, fit.params[0], fit.params[1], epsilon)?;
            replayed.push((*id, rows, policies));
        }
    }
    if !replayed.is_empty() {
        let mut f = create(out, "weights.csv")?;
        writeln!(f, "subject,trial,w_exploit,w_seek,w_avoid")?;
        for (id, _, policies) in &replayed {
            for (k, p) in policies.iter().enumerate() {
                writeln!(
                    f,
                    "{id},{},{},{},{}",
                    k + 1,
                    fmt_f64(p.weights[0]),
                    fmt_f64(p.weights[1]),
                    fmt_f64(p.weights[2])
                )?;
            }
        }
        f.flush()?;
        let per_trial = cfg.trials_per_block;
        let names = ["exploitation", "uncertainty seeking", "risk aversion"];
        let series: Vec<Series> = (0..3)
            .map(|a| {
                let mut acc = vec![(0.0, 0usize); per_trial];
                for (_, rows, policies) in &replayed {
                    for (t, p) in rows.iter().zip(policies) {
                        let slot = (t.trial as usize).saturating_sub(1).min(per_trial - 1);
                        acc[slot].0 += p.weights[a];
                        acc[slot].1 += 1;
                    }
                }
                Series {
                    label: names[a].into(),
                    points: acc
                        .iter()
                        .enumerate()
                        .filter(|(_, (_, n))| *n > 0)
                        .map(|(i, (s, n))| ((i + 1) as f64, s / *n as f64))
                        .collect(),
                }
            })
            .collect();
        write_text(out, "weights.svg", &svg_line_plot("mean weights by trial within block", &series))?;
    }
    write_manifest(out, "bandit", file.seed, &file)?;
    for (id, subject_fits) in &fits {
        for fit in subject_fits {
            println!(
                "subject {id} {:<9} loglik {:>12.4}  bic {:>12.4}  params {}",
                fit.model.name(),
                fit.loglik,
                fit.bic,
                fmt_vec(&fit.params)
            );
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifyRun<'a> {
    scope: &'a str,
    seed: u64,
}

pub fn verify(scope: &str, out: &Path, seed: u64) -> Result<(), CliError> {
    let parsed: Scope = scope.parse()?;
    let checks = verify::run(parsed, seed)?;
    prepare(out)?;
    let mut f = create(out, "report.csv")?;
    verify::write_report(&checks, &mut f)?;
    f.flush()?;
    write_manifest(out, "verify", seed, &VerifyRun { scope, seed })?;
    for c in &checks {
        println!(
            "{} {:<45} measured {:e} bound {:e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.bound
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::VerifyFailed(failed));
    }
    Ok(())
}
