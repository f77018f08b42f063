//! Two-armed bandit: Kalman beliefs, exploit / uncertainty-seeking /
//! risk-averse primitives gated per trial, probit baselines, likelihood
//! fitting, synthetic data and CSV ingestion.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateflow::{fixed_point_residual, solve_equilibrium};
use crate::instances::stream_rng;
use crate::io::fmt_f64;
use crate::objective::{CostVector, ObjectiveInstance, PrimitiveMatrix};
use crate::simplex::SimplexVector;

/// Spread assigned to an arm whose reward is known exactly.
pub const FIXED_ARM_SPREAD: f64 = 1e-3;
/// Probit arguments are clamped to this range before taking logs.
const PROBIT_CLAMP: f64 = 37.0;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub mu: Vec<f64>,
    /// Posterior spread per arm.
    pub s: Vec<f64>,
}

impl Belief {
    pub fn new(mu: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        if mu.len() != s.len() || mu.len() < 2 {
            return Err(Error::invalid("belief needs matching lengths and at least two arms"));
        }
        if s.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("belief spreads must be positive"));
        }
        Ok(Belief { mu, s })
    }

    /// Block-start belief for the configured experiment.
    pub fn prior(cfg: &ExperimentConfig) -> Self {
        let s0 = cfg.s0_sq.sqrt();
        match cfg.variant {
            Variant::Exp1 => Belief { mu: vec![0.0, 0.0], s: vec![s0, FIXED_ARM_SPREAD] },
            Variant::Exp2 => Belief { mu: vec![0.0, 0.0], s: vec![s0, s0] },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Arm 1 stochastic, arm 2 pays exactly zero.
    Exp1,
    /// Both arms stochastic.
    Exp2,
}

/// How the Kalman equations act on `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpreadSemantics {
    /// `α = s²/(s² + τ²)`, `s ← s − αs`.
    #[default]
    Std,
    /// Same gain, applied to the variance: `s² ← s² − αs²`.
    Variance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub s0_sq: f64,
    pub tau_obs_sq: f64,
    pub blocks: usize,
    pub trials_per_block: usize,
    pub spread_semantics: SpreadSemantics,
    pub subjects: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    variant: Variant,
    s0_sq: Option<f64>,
    tau_obs_sq: Option<f64>,
    blocks: Option<usize>,
    trials_per_block: Option<usize>,
    #[serde(default)]
    spread_semantics: SpreadSemantics,
    subjects: Option<usize>,
}

impl<'de> Deserialize<'de> for ExperimentConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawExperiment::deserialize(d)?;
        let base = ExperimentConfig::for_variant(raw.variant);
        Ok(ExperimentConfig {
            variant: raw.variant,
            s0_sq: raw.s0_sq.unwrap_or(base.s0_sq),
            tau_obs_sq: raw.tau_obs_sq.unwrap_or(base.tau_obs_sq),
            blocks: raw.blocks.unwrap_or(base.blocks),
            trials_per_block: raw.trials_per_block.unwrap_or(base.trials_per_block),
            spread_semantics: raw.spread_semantics,
            subjects: raw.subjects.unwrap_or(base.subjects),
        })
    }
}

impl ExperimentConfig {
    pub fn for_variant(variant: Variant) -> Self {
        ExperimentConfig {
            variant,
            s0_sq: match variant {
                Variant::Exp1 => 10.0,
                Variant::Exp2 => 100.0,
            },
            tau_obs_sq: 10.0,
            blocks: 20,
            trials_per_block: 10,
            spread_semantics: SpreadSemantics::Std,
            subjects: 1,
        }
    }

    pub fn exp1() -> Self {
        Self::for_variant(Variant::Exp1)
    }

    pub fn exp2() -> Self {
        Self::for_variant(Variant::Exp2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s0_sq > 0.0) || !(self.tau_obs_sq > 0.0) {
            return Err(Error::config("s0_sq and tau_obs_sq must be positive"));
        }
        if self.blocks == 0 || self.trials_per_block == 0 || self.subjects == 0 {
            return Err(Error::config("blocks, trials_per_block and subjects must be positive"));
        }
        Ok(())
    }

    /// Arm (0-based) whose belief never changes.
    fn fixed_arm(&self) -> Option<usize> {
        match self.variant {
            Variant::Exp1 => Some(1),
            Variant::Exp2 => None,
        }
    }
}

/// One observed choice. `choice` is 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub subject: u32,
    pub block: u32,
    pub trial: u32,
    pub choice: u8,
    pub reward: f64,
}

/// Applies the Kalman step to the chosen arm (0-based).
pub fn kalman_update(belief: &Belief, arm: usize, reward: f64, cfg: &ExperimentConfig) -> Result<Belief> {
    if arm >= belief.mu.len() {
        return Err(Error::invalid(format!("arm {arm} out of range")));
    }
    let mut b = belief.clone();
    if cfg.fixed_arm() == Some(arm) {
        return Ok(b);
    }
    let s = b.s[arm];
    let alpha = s * s / (s * s + cfg.tau_obs_sq);
    b.mu[arm] += alpha * (reward - b.mu[arm]);
    b.s[arm] = match cfg.spread_semantics {
        SpreadSemantics::Std => s - alpha * s,
        SpreadSemantics::Variance => (s * s * (1.0 - alpha)).sqrt(),
    };
    Ok(b)
}

/// Index of the largest mean; ties go to the lowest index and are flagged.
pub fn exploit_arm(mu: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (i, m) in mu.iter().enumerate().skip(1) {
        if *m > mu[best] {
            best = i;
            tie = false;
        } else if *m == mu[best] {
            tie = true;
        }
    }
    (best, tie)
}

/// Columns: exploitation (0.99 on argmax μ), uncertainty seeking
/// (`s / Σs`), risk aversion (`softmax(−s)`).
pub fn primitives(belief: &Belief) -> Result<PrimitiveMatrix> {
    let n = belief.mu.len();
    let (best, _) = exploit_arm(&belief.mu);
    let exploit: Vec<f64> = (0..n)
        .map(|i| if i == best { 0.99 } else { 0.01 / (n - 1) as f64 })
        .collect();
    let total: f64 = belief.s.iter().sum();
    let seek: Vec<f64> = belief.s.iter().map(|s| s / total).collect();
    let smin = belief.s.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = belief.s.iter().map(|s| (-(s - smin)).exp()).collect();
    let z: f64 = e.iter().sum();
    let avoid: Vec<f64> = e.iter().map(|v| v / z).collect();
    PrimitiveMatrix::from_columns(&[exploit, seek, avoid])
}

fn two_arms(belief: &Belief) -> Result<()> {
    if belief.mu.len() != 2 {
        return Err(Error::invalid("probit policies are defined for two arms"));
    }
    Ok(())
}

/// Probit argument of the hybrid model.
fn hybrid_z(belief: &Belief, gamma: f64, beta: f64) -> f64 {
    let (m, s) = (&belief.mu, &belief.s);
    gamma * (s[0] - s[1]) + beta * (m[0] - m[1]) / (s[0] * s[0] + s[1] * s[1]).sqrt()
}

/// `P(arm 1) = Φ(γ(s₁ − s₂) + β(μ₁ − μ₂)/√(s₁² + s₂²))`.
pub fn hybrid_policy(belief: &Belief, gamma: f64, beta: f64) -> Result<f64> {
    two_arms(belief)?;
    Ok(normal_cdf(hybrid_z(belief, gamma, beta)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// `Φ(β((μ₁ + γs₁) − (μ₂ + γs₂)))`; params `(β, γ)`.
    Ucb,
    /// `Φ((μ₁ − μ₂)/√(s₁² + s₂²))`; no params.
    Thompson,
    /// `Φ(β(μ₁ − μ₂))`; params `(β)`.
    Value,
}

fn baseline_z(kind: Baseline, belief: &Belief, params: &[f64]) -> f64 {
    let (m, s) = (&belief.mu, &belief.s);
    match kind {
        Baseline::Ucb => params[0] * ((m[0] + params[1] * s[0]) - (m[1] + params[1] * s[1])),
        Baseline::Thompson => (m[0] - m[1]) / (s[0] * s[0] + s[1] * s[1]).sqrt(),
        Baseline::Value => params[0] * (m[0] - m[1]),
    }
}

impl Baseline {
    pub fn n_params(self) -> usize {
        match self {
            Baseline::Ucb => 2,
            Baseline::Thompson => 0,
            Baseline::Value => 1,
        }
    }
}

pub fn baseline_policy(kind: Baseline, belief: &Belief, params: &[f64]) -> Result<f64> {
    two_arms(belief)?;
    if params.len() != kind.n_params() {
        return Err(Error::DimensionMismatch { expected: kind.n_params(), found: params.len() });
    }
    Ok(normal_cdf(baseline_z(kind, belief, params)))
}

/// Gated arm policy and primitive weights for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPolicy {
    pub policy: SimplexVector,
    pub weights: SimplexVector,
    pub residual: f64,
}

/// Weights solve the gated problem on the three primitives with cost
/// `−ln q_u`, where `q_u` is the hybrid policy at `(γ, β)`.
pub fn gatemod_trial_policy(belief: &Belief, gamma: f64, beta: f64, epsilon: f64) -> Result<TrialPolicy> {
    two_arms(belief)?;
    let z = hybrid_z(belief, gamma, beta).clamp(-PROBIT_CLAMP, PROBIT_CLAMP);
    let cost = CostVector::new(vec![-normal_cdf(z).ln(), -normal_cdf(-z).ln()])?;
    let inst = ObjectiveInstance::new(primitives(belief)?, cost, epsilon)?;
    let eq = solve_equilibrium(&inst)?;
    let residual = fixed_point_residual(&inst, &eq.weights)?;
    let policy = SimplexVector::new(inst.primitives().mix(&eq.weights))?;
    Ok(TrialPolicy { policy, weights: eq.weights, residual })
}

/// Sum of log chosen-arm probabilities. A zero probability yields
/// `Err(trial index)` so callers can report where the model failed.
pub fn log_likelihood(p_arm1: &[f64], choices: &[u8]) -> Result<std::result::Result<f64, usize>> {
    if p_arm1.len() != choices.len() {
        return Err(Error::DimensionMismatch { expected: choices.len(), found: p_arm1.len() });
    }
    let mut ll = 0.0;
    for (t, (p, c)) in p_arm1.iter().zip(choices).enumerate() {
        let q = match c {
            1 => *p,
            2 => 1.0 - p,
            _ => return Err(Error::invalid(format!("choice {c} at trial {t} is not 1 or 2"))),
        };
        if !(q > 0.0) {
            return Ok(Err(t));
        }
        ll += q.ln();
    }
    Ok(Ok(ll))
}

/// `k ln n − 2 loglik`.
pub fn bic(k_params: usize, n_obs: usize, loglik: f64) -> f64 {
    k_params as f64 * (n_obs as f64).ln() - 2.0 * loglik
}

/// All models that can be fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Model {
    Hybrid,
    Baseline { baseline: Baseline },
    /// Gated primitives on top of the hybrid cost, params `(γ, β)`.
    GateMod { epsilon: f64 },
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Hybrid => "hybrid",
            Model::Baseline { baseline: Baseline::Ucb } => "ucb",
            Model::Baseline { baseline: Baseline::Thompson } => "thompson",
            Model::Baseline { baseline: Baseline::Value } => "value",
            Model::GateMod { .. } => "gatemod",
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Model::Hybrid | Model::GateMod { .. } => 2,
            Model::Baseline { baseline } => baseline.n_params(),
        }
    }

    /// Log-probability that the chosen arm (0-based) is picked.
    fn log_prob(&self, belief: &Belief, params: &[f64], arm: usize) -> Result<f64> {
        let z = match self {
            Model::Hybrid => hybrid_z(belief, params[0], params[1]),
            Model::Baseline { baseline } => baseline_z(*baseline, belief, params),
            Model::GateMod { epsilon } => {
                let tp = gatemod_trial_policy(belief, params[0], params[1], *epsilon)?;
                return Ok(tp.policy[arm].ln());
            }
        };
        // ln Φ(±z) through erfc keeps precision in the tails.
        let zz = if arm == 0 { z } else { -z };
        Ok(normal_cdf(zz).ln())
    }

    /// Probability of arm 1.
    pub fn p_arm1(&self, belief: &Belief, params: &[f64]) -> Result<f64> {
        match self {
            Model::Hybrid => hybrid_policy(belief, params[0], params[1]),
            Model::Baseline { baseline } => baseline_policy(*baseline, belief, params),
            Model::GateMod { epsilon } => Ok(gatemod_trial_policy(belief, params[0], params[1], *epsilon)?.policy[0]),
        }
    }
}

/// Beliefs held before each trial, replaying the records in order. The
/// belief resets whenever `(subject, block)` changes.
pub fn replay_beliefs(trials: &[TrialRecord], cfg: &ExperimentConfig) -> Result<Vec<Belief>> {
    let mut out = Vec::with_capacity(trials.len());
    let mut key = None;
    let mut b = Belief::prior(cfg);
    for t in trials {
        if key != Some((t.subject, t.block)) {
            key = Some((t.subject, t.block));
            b = Belief::prior(cfg);
        }
        out.push(b.clone());
        b = kalman_update(&b, t.choice as usize - 1, t.reward, cfg)?;
    }
    Ok(out)
}

/// Parameters and score of one fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit {
    pub model: Model,
    pub params: Vec<f64>,
    pub loglik: f64,
    pub bic: f64,
    pub n_obs: usize,
    /// Every trial chose the same arm, so the likelihood is nearly flat.
    pub degenerate: bool,
}

fn total_loglik(model: &Model, beliefs: &[Belief], trials: &[TrialRecord], params: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (b, t) in beliefs.iter().zip(trials) {
        match model.log_prob(b, params, t.choice as usize - 1) {
            Ok(v) if v.is_finite() => ll += v,
            _ => return f64::NEG_INFINITY,
        }
    }
    ll
}

/// Grid range and step for the coarse search.
pub const FIT_GRID: (f64, f64, f64) = (-5.0, 5.0, 0.25);

/// Maximizes the likelihood: coarse grid over `[−5, 5]` per parameter,
/// then a Nelder–Mead polish from the best grid point.
pub fn fit_model(model: Model, trials: &[TrialRecord], cfg: &ExperimentConfig) -> Result<Fit> {
    fit_model_with_grid(model, trials, cfg, FIT_GRID.2)
}

/// [`fit_model`] with a custom coarse-grid step.
pub fn fit_model_with_grid(model: Model, trials: &[TrialRecord], cfg: &ExperimentConfig, grid_step: f64) -> Result<Fit> {
    if trials.is_empty() {
        return Err(Error::invalid("no trials to fit"));
    }
    if let Some(t) = trials.iter().find(|t| t.choice != 1 && t.choice != 2) {
        return Err(Error::invalid(format!("choice {} is not 1 or 2", t.choice)));
    }
    let beliefs = replay_beliefs(trials, cfg)?;
    let degenerate = trials.iter().all(|t| t.choice == trials[0].choice);
    let k = model.n_params();
    let f = |p: &[f64]| total_loglik(&model, &beliefs, trials, p);
    let (lo, hi, _) = FIT_GRID;
    let steps = ((hi - lo) / grid_step).round() as usize;
    let axis: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * grid_step).collect();
    let points: Vec<Vec<f64>> = match k {
        0 => vec![vec![]],
        1 => axis.iter().map(|a| vec![*a]).collect(),
        _ => axis.iter().flat_map(|a| axis.iter().map(move |b| vec![*a, *b])).collect(),
    };
    let scored: Vec<(usize, f64)> = points.par_iter().enumerate().map(|(i, p)| (i, f(p))).collect();
    let (best_i, best_v) = scored
        .into_iter()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let mut params = points[best_i].clone();
    let mut loglik = best_v;
    if k > 0 {
        let (p, v) = nelder_mead(|x| -f(x), &params, grid_step / 2.0, 1e-6, 2000);
        if -v >= loglik {
            params = p;
            loglik = -v;
        }
    }
    Ok(Fit {
        model,
        bic: bic(k, trials.len(), loglik),
        params,
        loglik,
        n_obs: trials.len(),
        degenerate,
    })
}

/// Hybrid-model fit returning `(γ, β, loglik)` in [`Fit`].
pub fn fit_hybrid(trials: &[TrialRecord], cfg: &ExperimentConfig) -> Result<Fit> {
    fit_model(Model::Hybrid, trials, cfg)
}

/// Derivative-free simplex search minimizing `f`; stops when the spread of
/// vertex values and the simplex diameter both fall below `tol`.
pub fn nelder_mead<G: Fn(&[f64]) -> f64>(f: G, x0: &[f64], step: f64, tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x);
        simplex.push((x, v));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter <= tol && (spread <= tol || spread.is_nan()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(-0.5);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x);
                (x, v)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.iter().zip(&v.0).map(|(b, y)| b + 0.5 * (y - b)).collect();
                    let fx = eval(&x);
                    *v = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// Latent arm means for one block.
fn draw_block_means<R: Rng>(rng: &mut R, cfg: &ExperimentConfig) -> [f64; 2] {
    let prior = Normal::new(0.0, cfg.s0_sq.sqrt()).expect("positive spread");
    match cfg.variant {
        Variant::Exp1 => [prior.sample(rng), 0.0],
        Variant::Exp2 => [prior.sample(rng), prior.sample(rng)],
    }
}

/// Simulates `cfg.subjects` subjects choosing with `model` at `params`.
/// Each subject draws from the stream `(seed, subject)`.
pub fn synthesize_experiment(cfg: &ExperimentConfig, model: Model, params: &[f64], seed: u64) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    if params.len() != model.n_params() {
        return Err(Error::DimensionMismatch { expected: model.n_params(), found: params.len() });
    }
    let per_subject: Vec<Vec<TrialRecord>> = (0..cfg.subjects)
        .into_par_iter()
        .map(|subject| -> Result<Vec<TrialRecord>> {
            let mut rng = stream_rng(seed, subject as u64, 0);
            let noise = Normal::new(0.0, cfg.tau_obs_sq.sqrt()).expect("positive spread");
            let mut out = Vec::with_capacity(cfg.blocks * cfg.trials_per_block);
            for block in 0..cfg.blocks {
                let means = draw_block_means(&mut rng, cfg);
                let mut b = Belief::prior(cfg);
                for trial in 0..cfg.trials_per_block {
                    let p1 = model.p_arm1(&b, params)?;
                    let arm = if rng.random::<f64>() < p1 { 0 } else { 1 };
                    let reward = if cfg.fixed_arm() == Some(arm) {
                        means[arm]
                    } else {
                        means[arm] + noise.sample(&mut rng)
                    };
                    out.push(TrialRecord {
                        subject: subject as u32 + 1,
                        block: block as u32 + 1,
                        trial: trial as u32 + 1,
                        choice: arm as u8 + 1,
                        reward,
                    });
                    b = kalman_update(&b, arm, reward, cfg)?;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_subject.into_iter().flatten().collect())
}

/// Gated weights along a replayed record sequence.
pub fn replay_weights(trials: &[TrialRecord], cfg: &ExperimentConfig, gamma: f64, beta: f64, epsilon: f64) -> Result<Vec<TrialPolicy>> {
    let beliefs = replay_beliefs(trials, cfg)?;
    beliefs
        .par_iter()
        .map(|b| gatemod_trial_policy(b, gamma, beta, epsilon))
        .collect()
}

/// Splits records into per-subject runs, in order of first appearance.
pub fn group_by_subject(trials: &[TrialRecord]) -> Vec<(u32, Vec<TrialRecord>)> {
    let mut out: Vec<(u32, Vec<TrialRecord>)> = Vec::new();
    for t in trials {
        match out.iter_mut().find(|(s, _)| *s == t.subject) {
            Some((_, v)) => v.push(*t),
            None => out.push((t.subject, vec![*t])),
        }
    }
    out
}

/// Reads `subject,block,trial,choice,reward` with a header row.
pub fn ingest_csv(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = std::fs::File::open(path)?;
    read_trials(file)
}

pub fn read_trials<R: std::io::Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let fields = ["subject", "block", "trial", "choice", "reward"];
    let mut index = [0usize; 5];
    for (k, name) in fields.iter().enumerate() {
        index[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::Parse { line: 1, message: format!("missing column `{name}`") })?;
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |k: usize| rec.get(index[k]).unwrap_or("");
        let int = |k: usize| -> Result<u32> {
            get(k).parse::<u32>().map_err(|_| Error::Parse {
                line,
                message: format!("`{}` is not a nonnegative integer: `{}`", fields[k], get(k)),
            })
        };
        let choice = int(3)?;
        if choice != 1 && choice != 2 {
            return Err(Error::Parse { line, message: format!("choice must be 1 or 2, got {choice}") });
        }
        let reward: f64 = get(4).parse().map_err(|_| Error::Parse {
            line,
            message: format!("`reward` is not a number: `{}`", get(4)),
        })?;
        out.push(TrialRecord {
            subject: int(0)?,
            block: int(1)?,
            trial: int(2)?,
            choice: choice as u8,
            reward,
        });
    }
    Ok(out)
}

pub fn write_trials<W: Write>(trials: &[TrialRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "subject,block,trial,choice,reward")?;
    for t in trials {
        writeln!(out, "{},{},{},{},{}", t.subject, t.block, t.trial, t.choice, fmt_f64(t.reward))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(mu: [f64; 2], s: [f64; 2]) -> Belief {
        Belief::new(mu.to_vec(), s.to_vec()).unwrap()
    }

    #[test]
    fn normal_cdf_matches_quadrature() {
        // Composite Simpson on the density from -12, where the mass is below 1e-32.
        let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        for &x in &[-6.0, -3.0, -1.5, -0.3, 0.0, 0.7, 2.0, 4.5] {
            let (a, n) = (-12.0, 20_000);
            let h = (x - a) / n as f64;
            let mut sum = density(a) + density(x);
            for k in 1..n {
                sum += density(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            let q = sum * h / 3.0;
            let phi = normal_cdf(x);
            assert!((phi - q).abs() <= 1e-12 * q.max(1e-300) + 1e-15, "x={x}: {phi} vs {q}");
        }
    }

    #[test]
    fn kalman_examples() {
        let cfg = ExperimentConfig::exp2();
        let cfg = ExperimentConfig { s0_sq: 10.0, ..cfg };
        let b0 = b([0.0, 0.0], [10f64.sqrt(), 10f64.sqrt()]);
        let b1 = kalman_update(&b0, 0, 2.0, &cfg).unwrap();
        assert!((b1.mu[0] - 1.0).abs() < 1e-15);
        assert!((b1.s[0] - 0.5 * 10f64.sqrt()).abs() < 1e-15);
        assert_eq!((b1.mu[1], b1.s[1]), (0.0, 10f64.sqrt()));
        let var = ExperimentConfig { spread_semantics: SpreadSemantics::Variance, ..cfg.clone() };
        let b2 = kalman_update(&b0, 0, 2.0, &var).unwrap();
        assert!((b2.s[0] * b2.s[0] - 5.0).abs() < 1e-12);
        let tiny = b([0.3, 0.0], [1e-6, 1.0]);
        let b3 = kalman_update(&tiny, 0, 5.0, &cfg).unwrap();
        assert!((b3.mu[0] - 0.3).abs() <= 1e-12 * 4.7);
        let e1 = ExperimentConfig::exp1();
        let p = Belief::prior(&e1);
        assert_eq!(kalman_update(&p, 1, 0.0, &e1).unwrap(), p);
    }

    #[test]
    fn primitive_examples() {
        let pm = primitives(&b([1.0, 0.0], [1.0, 1.0])).unwrap();
        assert_eq!(pm.column(0), vec![0.99, 0.01]);
        assert_eq!(pm.column(1), vec![0.5, 0.5]);
        assert_eq!(pm.column(2), vec![0.5, 0.5]);
        let pm = primitives(&b([0.0, 0.0], [2.0, 1.0])).unwrap();
        assert!((pm.column(1)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((pm.column(2)[0] - 0.2689414213699951).abs() < 1e-12);
        assert_eq!(exploit_arm(&[0.0, 0.0]), (0, true));
        assert_eq!(exploit_arm(&[0.0, 1.0]), (1, false));
    }

    #[test]
    fn policy_examples() {
        let sym = b([0.5, 0.5], [2.0, 2.0]);
        assert_eq!(hybrid_policy(&sym, 1.3, -0.7).unwrap(), 0.5);
        let p = hybrid_policy(&b([1.0, 0.0], [1.0, 1.0]), 0.0, 1.0).unwrap();
        assert!((p - 0.7602499389065233).abs() < 1e-7);
        assert!(hybrid_policy(&b([0.0, 0.0], [2.0, 1.0]), 1e3, 0.0).unwrap() > 1.0 - 1e-12);
        for kind in [Baseline::Ucb, Baseline::Thompson, Baseline::Value] {
            let params = vec![0.8; kind.n_params()];
            assert_eq!(baseline_policy(kind, &sym, &params).unwrap(), 0.5);
        }
        let bel = b([0.4, -0.3], [1.5, 0.7]);
        assert_eq!(
            baseline_policy(Baseline::Thompson, &bel, &[]).unwrap(),
            hybrid_policy(&bel, 0.0, 1.0).unwrap()
        );
        assert_eq!(baseline_policy(Baseline::Value, &bel, &[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn gatemod_policy_examples() {
        // Swapping the arms swaps the policy.
        let tp = gatemod_trial_policy(&b([0.3, -0.2], [1.2, 0.8]), 0.4, 1.0, 0.01).unwrap();
        let sw = gatemod_trial_policy(&b([-0.2, 0.3], [0.8, 1.2]), 0.4, 1.0, 0.01).unwrap();
        assert!((tp.policy[0] - sw.policy[1]).abs() < 1e-10);
        for k in 0..3 {
            assert!((tp.weights[k] - sw.weights[k]).abs() < 1e-10);
        }
        // A mean tie sends the exploitation column to arm 1.
        let tie = gatemod_trial_policy(&b([0.0, 0.0], [1.0, 1.0]), 0.4, 1.0, 0.01).unwrap();
        assert!(tie.policy[0] > 0.5);
        let tp = gatemod_trial_policy(&b([0.2, -0.1], [1.0, 0.5]), 0.3, 1.0, 1e4).unwrap();
        assert!(tp.weights.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-3));
        assert!(tp.residual <= 1e-8);
    }

    #[test]
    fn likelihood_and_bic() {
        let n = 7;
        let ll = log_likelihood(&vec![0.5; n], &vec![1; n]).unwrap().unwrap();
        assert!((ll + n as f64 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(log_likelihood(&[1.0, 0.0], &[1, 2]).unwrap(), Ok(0.0));
        assert_eq!(log_likelihood(&[1.0, 1.0], &[1, 2]).unwrap(), Err(1));
        assert!((bic(2, 200, -100.0) - 210.5966347).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let (x, v) = nelder_mead(|p| (p[0] - 1.0).powi(2) + 3.0 * (p[1] + 2.0).powi(2), &[0.0, 0.0], 0.5, 1e-10, 5000);
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] + 2.0).abs() < 1e-4 && v < 1e-8);
        let (x, _) = nelder_mead(|p| (p[0] - 0.3).powi(2), &[2.0], 0.5, 1e-10, 5000);
        assert!((x[0] - 0.3).abs() < 1e-4);
    }

    #[test]
    fn synthetic_data_properties() {
        let cfg = ExperimentConfig { subjects: 2, ..ExperimentConfig::exp1() };
        let a = synthesize_experiment(&cfg, Model::Hybrid, &[0.5, 2.0], 3).unwrap();
        assert_eq!(a, synthesize_experiment(&cfg, Model::Hybrid, &[0.5, 2.0], 3).unwrap());
        assert_eq!(a.len(), 400);
        assert!(a.iter().filter(|t| t.choice == 2).all(|t| t.reward == 0.0));
        let fit0 = total_loglik(&Model::Hybrid, &replay_beliefs(&a, &cfg).unwrap(), &a, &[0.0, 0.0]);
        assert!((fit0 + 400.0 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn csv_parsing() {
        assert!(read_trials("subject,block,trial,choice,reward\n".as_bytes()).unwrap().is_empty());
        let one = read_trials("subject,block,trial,choice,reward\n1,1,1,2,0.5\n".as_bytes()).unwrap();
        assert_eq!(one, vec![TrialRecord { subject: 1, block: 1, trial: 1, choice: 2, reward: 0.5 }]);
        let err = read_trials("subject,block,trial,choice,reward\n1,1,1,1,0\n1,1,2,3,0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(read_trials("subject,block,choice,reward\n".as_bytes()).is_err());
        assert!(read_trials("subject,block,trial,choice,reward\n1,1,x,1,0\n".as_bytes()).is_err());
        let mut buf = Vec::new();
        write_trials(&one, &mut buf).unwrap();
        assert_eq!(read_trials(buf.as_slice()).unwrap(), one);
    }
}
