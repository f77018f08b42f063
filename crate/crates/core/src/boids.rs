//! Flocking with gated social primitives. Each boid mixes Gaussian
//! separation, alignment and cohesion policies over a ring of accelerations,
//! choosing the weights that minimize the entropy-regularized KL cost
//! against its generative model of where it should be next.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateflow::{fixed_point_residual, solve_equilibrium};
use crate::instances::stream_rng;
use crate::io::fmt_f64;
use crate::objective::{CostVector, ObjectiveInstance, PrimitiveMatrix};
use crate::simplex::{entropy, kl_gaussian, softmax_unchecked, GaussianSpec, SimplexVector};

pub type Vec2 = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoidState {
    pub position: Vec2,
    pub velocity: Vec2,
}

fn d_dt() -> f64 {
    0.05
}
fn d_n() -> usize {
    40
}
fn d_du() -> usize {
    30
}
fn d_vmax() -> f64 {
    1.0
}
fn d_umax() -> f64 {
    3.0
}
fn d_angle() -> f64 {
    320.0
}
fn d_rsep() -> f64 {
    1.0
}
fn d_rali() -> f64 {
    3.0
}
fn d_rcoh() -> f64 {
    12.0
}
fn d_sigma_prim() -> f64 {
    0.1
}
fn d_sigma_state() -> f64 {
    0.01
}
fn d_eps() -> f64 {
    0.5
}
fn d_tau() -> f64 {
    1.0
}
fn d_steps() -> usize {
    400
}
fn d_floor() -> f64 {
    1e-4
}
fn d_spread() -> f64 {
    10.0
}

/// Flock parameters. Covariances are isotropic and given as variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlockConfig {
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_du")]
    pub d_u: usize,
    #[serde(default = "d_vmax")]
    pub v_max: f64,
    #[serde(default = "d_umax")]
    pub u_max: f64,
    /// Full vision cone in degrees.
    #[serde(default = "d_angle")]
    pub vision_angle: f64,
    #[serde(default = "d_rsep")]
    pub r_sep: f64,
    #[serde(default = "d_rali")]
    pub r_ali: f64,
    #[serde(default = "d_rcoh")]
    pub r_coh: f64,
    #[serde(default = "d_sigma_prim")]
    pub sigma_sep: f64,
    #[serde(default = "d_sigma_prim")]
    pub sigma_ali: f64,
    #[serde(default = "d_sigma_prim")]
    pub sigma_coh: f64,
    #[serde(default = "d_sigma_state")]
    pub sigma_p: f64,
    #[serde(default = "d_sigma_state")]
    pub sigma_q: f64,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default)]
    pub informed_fraction: f64,
    #[serde(default)]
    pub goal: Option<Vec2>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_steps")]
    pub steps: usize,
    /// Apply the mixture mean instead of sampling an action.
    #[serde(default)]
    pub expected_action: bool,
    #[serde(default = "d_floor")]
    pub pi_floor: f64,
    /// Side of the square the initial positions are drawn from.
    #[serde(default = "d_spread")]
    pub init_spread: f64,
}

impl Default for FlockConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl FlockConfig {
    /// Goal-seeking defaults: 10% informed, goal at (−15, −15).
    pub fn goal_seeking() -> Self {
        FlockConfig {
            informed_fraction: 0.1,
            goal: Some([-15.0, -15.0]),
            ..FlockConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("v_max", self.v_max),
            ("u_max", self.u_max),
            ("sigma_sep", self.sigma_sep),
            ("sigma_ali", self.sigma_ali),
            ("sigma_coh", self.sigma_coh),
            ("sigma_p", self.sigma_p),
            ("sigma_q", self.sigma_q),
            ("epsilon", self.epsilon),
            ("tau", self.tau),
            ("pi_floor", self.pi_floor),
            ("init_spread", self.init_spread),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        if self.d_u < 2 {
            return Err(Error::config("d_u must be at least 2"));
        }
        if !(self.vision_angle > 0.0 && self.vision_angle <= 360.0) {
            return Err(Error::config("vision_angle must lie in (0, 360]"));
        }
        if !(0.0 < self.r_sep && self.r_sep < self.r_ali && self.r_ali < self.r_coh) {
            return Err(Error::config("radii must satisfy 0 < r_sep < r_ali < r_coh"));
        }
        if !(0.0..=1.0).contains(&self.informed_fraction) {
            return Err(Error::config("informed_fraction must lie in [0, 1]"));
        }
        if self.informed_fraction > 0.0 && self.goal.is_none() {
            return Err(Error::config("informed_fraction > 0 requires a goal"));
        }
        Ok(())
    }

    /// Number of goal-informed boids (the lowest indices).
    pub fn informed_count(&self) -> usize {
        (self.informed_fraction * self.n as f64).round() as usize
    }
}

/// Accelerations available to every boid.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    pub actions: Vec<Vec2>,
}

impl ActionGrid {
    /// `u_max (cos 2πj/d, sin 2πj/d)` for `j = 0..d`.
    pub fn ring(d_u: usize, u_max: f64) -> Self {
        let actions = (0..d_u)
            .map(|j| {
                let th = 2.0 * std::f64::consts::PI * j as f64 / d_u as f64;
                [u_max * th.cos(), u_max * th.sin()]
            })
            .collect();
        ActionGrid { actions }
    }
}

/// Which generative model a boid uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerativeModel {
    Polarization,
    Goal,
}

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// Visible neighbors by zone plus the count of coincident boids skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Neighborhood {
    pub sep: Vec<usize>,
    pub ali: Vec<usize>,
    pub coh: Vec<usize>,
    pub coincident: usize,
}

pub fn visible_neighbors(i: usize, states: &[BoidState], cfg: &FlockConfig) -> Result<Neighborhood> {
    if i >= states.len() {
        return Err(Error::invalid(format!("boid index {i} out of range")));
    }
    let me = states[i];
    let speed = norm(me.velocity);
    let half_cone = cfg.vision_angle.to_radians() / 2.0;
    let mut nb = Neighborhood::default();
    for (j, other) in states.iter().enumerate() {
        if j == i {
            continue;
        }
        let rel = sub(other.position, me.position);
        let d = norm(rel);
        if d == 0.0 {
            nb.coincident += 1;
            continue;
        }
        if d > cfg.r_coh {
            continue;
        }
        if speed > 0.0 {
            let cos = ((me.velocity[0] * rel[0] + me.velocity[1] * rel[1]) / (speed * d)).clamp(-1.0, 1.0);
            if cos.acos() > half_cone {
                continue;
            }
        }
        if d <= cfg.r_sep {
            nb.sep.push(j);
        } else if d <= cfg.r_ali {
            nb.ali.push(j);
        } else {
            nb.coh.push(j);
        }
    }
    Ok(nb)
}

/// Distance modulation of the social forces. At `d = r_sep` the first
/// branch applies, so the function jumps from 0 to `u_max` just above it.
pub fn g_modulation(d: f64, cfg: &FlockConfig) -> Result<f64> {
    if !(d >= 0.0) || d > cfg.r_coh {
        return Err(Error::Domain(format!("distance {d} outside [0, r_coh]")));
    }
    Ok(if d <= cfg.r_sep {
        cfg.u_max * (1.0 - d / cfg.r_sep)
    } else if d <= cfg.r_ali {
        cfg.u_max
    } else {
        cfg.u_max * (cfg.r_coh - d) / (cfg.r_coh - cfg.r_ali)
    })
}

/// Centers of the separation, alignment and cohesion primitives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocialForces {
    pub sep: Vec2,
    pub ali: Vec2,
    pub coh: Vec2,
}

pub fn social_forces(i: usize, states: &[BoidState], cfg: &FlockConfig) -> Result<SocialForces> {
    let nb = visible_neighbors(i, states, cfg)?;
    forces_from(i, states, cfg, &nb)
}

fn forces_from(i: usize, states: &[BoidState], cfg: &FlockConfig, nb: &Neighborhood) -> Result<SocialForces> {
    let me = states[i];
    let average = |set: &[usize], term: &dyn Fn(usize, f64, Vec2) -> Vec2| -> Result<Vec2> {
        let mut acc = [0.0, 0.0];
        for &j in set {
            let rel = sub(states[j].position, me.position);
            let d = norm(rel);
            let t = term(j, g_modulation(d, cfg)?, [rel[0] / d, rel[1] / d]);
            acc[0] += t[0];
            acc[1] += t[1];
        }
        let k = set.len() as f64;
        Ok([acc[0] / k, acc[1] / k])
    };
    let sep = if nb.sep.is_empty() {
        [0.0, 0.0]
    } else {
        average(&nb.sep, &|_, g, e| [-g * e[0], -g * e[1]])?
    };
    let coh = if nb.coh.is_empty() {
        [0.0, 0.0]
    } else {
        average(&nb.coh, &|_, g, e| [g * e[0], g * e[1]])?
    };
    let ali = if nb.ali.is_empty() {
        let s = norm(me.velocity);
        if s > 0.0 {
            [cfg.u_max * me.velocity[0] / s, cfg.u_max * me.velocity[1] / s]
        } else {
            [0.0, 0.0]
        }
    } else {
        average(&nb.ali, &|j, g, _| {
            let v = states[j].velocity;
            let s = norm(v);
            if s > 0.0 { [g * v[0] / s, g * v[1] / s] } else { [0.0, 0.0] }
        })?
    };
    Ok(SocialForces { sep, ali, coh })
}

/// Columns are the isotropic Gaussians around each force, evaluated on the
/// grid, normalized, floored at `pi_floor` and renormalized.
pub fn primitive_matrix(forces: &SocialForces, grid: &ActionGrid, cfg: &FlockConfig) -> Result<PrimitiveMatrix> {
    let d = grid.actions.len();
    let mut raw = DMatrix::zeros(d, 3);
    for (k, (center, var)) in [
        (forces.sep, cfg.sigma_sep),
        (forces.ali, cfg.sigma_ali),
        (forces.coh, cfg.sigma_coh),
    ]
    .into_iter()
    .enumerate()
    {
        let logd: Vec<f64> = grid
            .actions
            .iter()
            .map(|u| {
                let e = sub(*u, center);
                -(e[0] * e[0] + e[1] * e[1]) / (2.0 * var)
            })
            .collect();
        for (j, p) in softmax_unchecked(&logd).into_iter().enumerate() {
            raw[(j, k)] = p;
        }
    }
    PrimitiveMatrix::from_densities(raw, cfg.pi_floor)
}

/// Mean of the generative model `q_x` for boid `i`.
pub fn generative_mean(
    i: usize,
    states: &[BoidState],
    cfg: &FlockConfig,
    nb: &Neighborhood,
    model: GenerativeModel,
) -> Result<[f64; 4]> {
    let me = states[i];
    let predicted = [
        me.position[0] + me.velocity[0] * cfg.dt,
        me.position[1] + me.velocity[1] * cfg.dt,
        me.velocity[0],
        me.velocity[1],
    ];
    match model {
        GenerativeModel::Polarization => {
            let mean_of = |set: &[usize], f: &dyn Fn(&BoidState) -> Vec2| -> Option<Vec2> {
                if set.is_empty() {
                    return None;
                }
                let k = set.len() as f64;
                let s = set.iter().fold([0.0, 0.0], |a, &j| {
                    let v = f(&states[j]);
                    [a[0] + v[0], a[1] + v[1]]
                });
                Some([s[0] / k, s[1] / k])
            };
            let p = mean_of(&nb.coh, &|b| b.position).unwrap_or([predicted[0], predicted[1]]);
            let v = mean_of(&nb.ali, &|b| b.velocity).unwrap_or([predicted[2], predicted[3]]);
            Ok([p[0], p[1], v[0], v[1]])
        }
        GenerativeModel::Goal => {
            let goal = cfg
                .goal
                .ok_or_else(|| Error::config("goal model needs a goal position"))?;
            let to = sub(goal, me.position);
            let d = norm(to);
            let dir = if d > 0.0 { [to[0] / d, to[1] / d] } else { [0.0, 0.0] };
            Ok([goal[0], goal[1], dir[0], dir[1]])
        }
    }
}

/// `c_j = KL(N(μ_p(u_j), Σ_p) || N(x̄_q, Σ_q))` with `μ_p(u) = [p + v dt, v + u dt]`,
/// plus an optional per-action penalty.
pub fn generative_cost(
    i: usize,
    states: &[BoidState],
    grid: &ActionGrid,
    cfg: &FlockConfig,
    model: GenerativeModel,
    penalty: Option<&(dyn Fn(usize, Vec2) -> f64 + Sync)>,
) -> Result<CostVector> {
    let nb = visible_neighbors(i, states, cfg)?;
    cost_from(i, states, grid, cfg, &nb, model, penalty)
}

fn cost_from(
    i: usize,
    states: &[BoidState],
    grid: &ActionGrid,
    cfg: &FlockConfig,
    nb: &Neighborhood,
    model: GenerativeModel,
    penalty: Option<&(dyn Fn(usize, Vec2) -> f64 + Sync)>,
) -> Result<CostVector> {
    let me = states[i];
    let q = generative_mean(i, states, cfg, nb, model)?;
    let equal = cfg.sigma_p == cfg.sigma_q;
    let q_spec = if equal { None } else { Some(GaussianSpec::isotropic(q.to_vec(), cfg.sigma_q)?) };
    let mut c = Vec::with_capacity(grid.actions.len());
    for u in &grid.actions {
        let mu = [
            me.position[0] + me.velocity[0] * cfg.dt,
            me.position[1] + me.velocity[1] * cfg.dt,
            me.velocity[0] + u[0] * cfg.dt,
            me.velocity[1] + u[1] * cfg.dt,
        ];
        let mut cj = match &q_spec {
            None => 0.5 * mu.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / cfg.sigma_q,
            Some(qs) => kl_gaussian(&GaussianSpec::isotropic(mu.to_vec(), cfg.sigma_p)?, qs)?,
        };
        if let Some(pen) = penalty {
            cj += pen(i, *u);
        }
        c.push(cj);
    }
    CostVector::new(c)
}

/// Per-boid outcome of one decision.
#[derive(Debug, Clone, PartialEq)]
pub struct BoidDecision {
    pub weights: SimplexVector,
    pub action: Vec2,
    pub residual: f64,
    pub coincident: usize,
}

/// Independent stream for `(seed, boid, step)`.
pub fn boid_rng(seed: u64, boid: u64, step: u64) -> ChaCha8Rng {
    stream_rng(seed, boid, step)
}

fn decide(
    i: usize,
    states: &[BoidState],
    grid: &ActionGrid,
    cfg: &FlockConfig,
    step: usize,
    penalty: Option<&(dyn Fn(usize, Vec2) -> f64 + Sync)>,
) -> Result<BoidDecision> {
    let nb = visible_neighbors(i, states, cfg)?;
    let forces = forces_from(i, states, cfg, &nb)?;
    let pm = primitive_matrix(&forces, grid, cfg)?;
    let model = if i < cfg.informed_count() {
        GenerativeModel::Goal
    } else {
        GenerativeModel::Polarization
    };
    let cost = cost_from(i, states, grid, cfg, &nb, model, penalty)?;
    let inst = ObjectiveInstance::new(pm, cost, cfg.epsilon)?;
    let eq = solve_equilibrium(&inst).map_err(|e| Error::Numerical {
        step,
        message: format!("boid {i}: {e}"),
    })?;
    let residual = fixed_point_residual(&inst, &eq.weights)?;
    let pmf = inst.primitives().mix(&eq.weights);
    let action = if cfg.expected_action {
        grid.actions
            .iter()
            .zip(&pmf)
            .fold([0.0, 0.0], |a, (u, p)| [a[0] + p * u[0], a[1] + p * u[1]])
    } else {
        let mut rng = boid_rng(cfg.seed, i as u64, step as u64);
        let x: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = pmf.len() - 1;
        for (j, p) in pmf.iter().enumerate() {
            acc += p;
            if x < acc {
                pick = j;
                break;
            }
        }
        grid.actions[pick]
    };
    Ok(BoidDecision {
        weights: eq.weights,
        action,
        residual,
        coincident: nb.coincident,
    })
}

/// Rescales `v` onto the ball of radius `v_max`.
pub fn clamp_speed(v: Vec2, v_max: f64) -> Vec2 {
    let s = norm(v);
    if s > v_max {
        [v[0] * v_max / s, v[1] * v_max / s]
    } else {
        v
    }
}

/// Synchronous update of every boid from the same snapshot. `step` selects
/// the random streams.
pub fn step_flock(
    states: &[BoidState],
    grid: &ActionGrid,
    cfg: &FlockConfig,
    step: usize,
    penalty: Option<&(dyn Fn(usize, Vec2) -> f64 + Sync)>,
) -> Result<(Vec<BoidState>, Vec<BoidDecision>)> {
    let decisions: Vec<BoidDecision> = (0..states.len())
        .into_par_iter()
        .map(|i| decide(i, states, grid, cfg, step, penalty))
        .collect::<Result<_>>()?;
    let next = states
        .iter()
        .zip(&decisions)
        .map(|(s, d)| BoidState {
            position: [s.position[0] + s.velocity[0] * cfg.dt, s.position[1] + s.velocity[1] * cfg.dt],
            velocity: clamp_speed(
                [s.velocity[0] + d.action[0] * cfg.dt, s.velocity[1] + d.action[1] * cfg.dt],
                cfg.v_max,
            ),
        })
        .collect();
    Ok((next, decisions))
}

/// Norm of the mean heading; zero-speed boids are left out. Returns the
/// value and the number excluded.
pub fn polarization(states: &[BoidState]) -> (f64, usize) {
    let mut acc = [0.0, 0.0];
    let mut k = 0usize;
    for s in states {
        let sp = norm(s.velocity);
        if sp > 0.0 {
            acc[0] += s.velocity[0] / sp;
            acc[1] += s.velocity[1] / sp;
            k += 1;
        }
    }
    let excluded = states.len() - k;
    if k == 0 {
        return (0.0, excluded);
    }
    (norm([acc[0] / k as f64, acc[1] / k as f64]), excluded)
}

/// Mean distance from the boids to `goal`.
pub fn goal_distance(states: &[BoidState], goal: Vec2) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    states.iter().map(|s| norm(sub(s.position, goal))).sum::<f64>() / states.len() as f64
}

/// Positions uniform in a centered square of side `init_spread`, headings
/// uniform, speeds uniform in `[v_max/2, v_max]`.
pub fn initial_states(cfg: &FlockConfig) -> Vec<BoidState> {
    let mut rng = boid_rng(cfg.seed, u64::MAX, u64::MAX);
    let half = cfg.init_spread / 2.0;
    (0..cfg.n)
        .map(|_| {
            let px = rng.random_range(-half..half);
            let py = rng.random_range(-half..half);
            let th = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            let sp = rng.random_range(0.5 * cfg.v_max..=cfg.v_max);
            BoidState {
                position: [px, py],
                velocity: [sp * th.cos(), sp * th.sin()],
            }
        })
        .collect()
}

/// Full recorded run.
#[derive(Debug, Clone, PartialEq)]
pub struct FlockRun {
    /// `states[k]` is the flock before step `k`; length `steps + 1`.
    pub states: Vec<Vec<BoidState>>,
    /// `weights[k][i]` chosen by boid `i` at step `k`; length `steps`.
    pub weights: Vec<Vec<SimplexVector>>,
    pub polarization: Vec<f64>,
    pub goal_distance: Option<Vec<f64>>,
    pub max_residual: f64,
    pub coincident_skips: usize,
}

impl FlockRun {
    /// Mean of `f` over the last `fraction` of the steps.
    fn tail_mean(values: &[f64], fraction: f64) -> f64 {
        let k = ((values.len() as f64) * fraction).ceil().max(1.0) as usize;
        let tail = &values[values.len().saturating_sub(k)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// Polarization averaged over the last `fraction` of recorded states.
    pub fn tail_polarization(&self, fraction: f64) -> f64 {
        Self::tail_mean(&self.polarization[1..], fraction)
    }

    /// Per-step mean over boids of the weight entropy, averaged over the
    /// last `fraction` of steps.
    pub fn tail_weight_entropy(&self, fraction: f64) -> f64 {
        let per_step: Vec<f64> = self
            .weights
            .iter()
            .map(|ws| ws.iter().map(|w| entropy(w)).sum::<f64>() / ws.len() as f64)
            .collect();
        Self::tail_mean(&per_step, fraction)
    }

    /// Time average of each weight over the boid range and the last
    /// `fraction` of steps.
    pub fn tail_mean_weights(&self, boids: std::ops::Range<usize>, fraction: f64) -> [f64; 3] {
        let k = ((self.weights.len() as f64) * fraction).ceil().max(1.0) as usize;
        let tail = &self.weights[self.weights.len().saturating_sub(k)..];
        let mut acc = [0.0; 3];
        let mut count = 0.0;
        for ws in tail {
            for w in &ws[boids.clone()] {
                for a in 0..3 {
                    acc[a] += w[a];
                }
                count += 1.0;
            }
        }
        acc.map(|v| v / count)
    }

    /// `step,boid,px,py,vx,vy`.
    pub fn write_states_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,boid,px,py,vx,vy")?;
        for (k, flock) in self.states.iter().enumerate() {
            for (i, s) in flock.iter().enumerate() {
                writeln!(
                    out,
                    "{k},{i},{},{},{},{}",
                    fmt_f64(s.position[0]),
                    fmt_f64(s.position[1]),
                    fmt_f64(s.velocity[0]),
                    fmt_f64(s.velocity[1])
                )?;
            }
        }
        Ok(())
    }

    /// `step,boid,w_sep,w_ali,w_coh`.
    pub fn write_weights_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,boid,w_sep,w_ali,w_coh")?;
        for (k, ws) in self.weights.iter().enumerate() {
            for (i, w) in ws.iter().enumerate() {
                writeln!(out, "{k},{i},{},{},{}", fmt_f64(w[0]), fmt_f64(w[1]), fmt_f64(w[2]))?;
            }
        }
        Ok(())
    }

    /// `step,polarization,goal_distance`; the last column is empty without a goal.
    pub fn write_metrics_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,polarization,goal_distance")?;
        for (k, p) in self.polarization.iter().enumerate() {
            let g = self
                .goal_distance
                .as_ref()
                .map_or(String::new(), |g| fmt_f64(g[k]));
            writeln!(out, "{k},{},{g}", fmt_f64(*p))?;
        }
        Ok(())
    }
}

/// Runs `cfg.steps` synchronous steps from `initial_states(cfg)`.
pub fn run_flock(cfg: &FlockConfig) -> Result<FlockRun> {
    run_flock_from(cfg, initial_states(cfg), None)
}

pub fn run_flock_from(
    cfg: &FlockConfig,
    init: Vec<BoidState>,
    penalty: Option<&(dyn Fn(usize, Vec2) -> f64 + Sync)>,
) -> Result<FlockRun> {
    cfg.validate()?;
    if init.len() != cfg.n {
        return Err(Error::DimensionMismatch { expected: cfg.n, found: init.len() });
    }
    let grid = ActionGrid::ring(cfg.d_u, cfg.u_max);
    let mut run = FlockRun {
        polarization: vec![polarization(&init).0],
        goal_distance: cfg.goal.map(|g| vec![goal_distance(&init, g)]),
        states: vec![init],
        weights: Vec::with_capacity(cfg.steps),
        max_residual: 0.0,
        coincident_skips: 0,
    };
    for k in 0..cfg.steps {
        let current = run.states.last().expect("nonempty");
        let (next, decisions) = step_flock(current, &grid, cfg, k, penalty)?;
        for d in &decisions {
            run.max_residual = run.max_residual.max(d.residual);
            run.coincident_skips += d.coincident;
        }
        run.weights.push(decisions.into_iter().map(|d| d.weights).collect());
        run.polarization.push(polarization(&next).0);
        if let (Some(gd), Some(g)) = (run.goal_distance.as_mut(), cfg.goal) {
            gd.push(goal_distance(&next, g));
        }
        run.states.push(next);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boid(p: Vec2, v: Vec2) -> BoidState {
        BoidState { position: p, velocity: v }
    }

    #[test]
    fn defaults_match_table() {
        let c = FlockConfig::default();
        assert_eq!((c.dt, c.n, c.d_u, c.v_max, c.u_max), (0.05, 40, 30, 1.0, 3.0));
        assert_eq!((c.vision_angle, c.r_sep, c.r_ali, c.r_coh), (320.0, 1.0, 3.0, 12.0));
        assert_eq!((c.sigma_sep, c.sigma_ali, c.sigma_coh, c.sigma_p, c.sigma_q), (0.1, 0.1, 0.1, 0.01, 0.01));
        assert_eq!((c.epsilon, c.tau), (0.5, 1.0));
        assert_eq!(FlockConfig::goal_seeking().goal, Some([-15.0, -15.0]));
        assert!(serde_json::from_str::<FlockConfig>(r#"{"bogus": 1}"#).is_err());
        let bad = FlockConfig { r_ali: 0.5, ..FlockConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn neighbor_zones_and_cone() {
        let cfg = FlockConfig::default();
        let lone = [boid([0.0, 0.0], [1.0, 0.0])];
        assert_eq!(visible_neighbors(0, &lone, &cfg).unwrap(), Neighborhood::default());
        let behind = [boid([0.0, 0.0], [1.0, 0.0]), boid([-2.0, 0.0], [1.0, 0.0])];
        let nb = visible_neighbors(0, &behind, &cfg).unwrap();
        assert!(nb.sep.is_empty() && nb.ali.is_empty() && nb.coh.is_empty());
        let ahead = [boid([0.0, 0.0], [1.0, 0.0]), boid([2.0, 0.0], [1.0, 0.0])];
        let nb = visible_neighbors(0, &ahead, &cfg).unwrap();
        assert_eq!((nb.sep.len(), nb.ali, nb.coh.len()), (0, vec![1], 0));
        let still = [boid([0.0, 0.0], [0.0, 0.0]), boid([-2.0, 0.0], [1.0, 0.0])];
        assert_eq!(visible_neighbors(0, &still, &cfg).unwrap().ali, vec![1]);
    }

    #[test]
    fn modulation_branches() {
        let cfg = FlockConfig::default();
        assert_eq!(g_modulation(0.0, &cfg).unwrap(), 3.0);
        assert_eq!(g_modulation(12.0, &cfg).unwrap(), 0.0);
        assert_eq!(g_modulation(1.0, &cfg).unwrap(), 0.0);
        assert_eq!(g_modulation(1.0 + 1e-12, &cfg).unwrap(), 3.0);
        assert_eq!(g_modulation(3.0, &cfg).unwrap(), 3.0);
        assert!(g_modulation(12.5, &cfg).is_err());
    }

    #[test]
    fn force_examples() {
        let cfg = FlockConfig::default();
        let f = social_forces(0, &[boid([0.0, 0.0], [1.0, 0.0])], &cfg).unwrap();
        assert_eq!((f.sep, f.ali, f.coh), ([0.0, 0.0], [3.0, 0.0], [0.0, 0.0]));
        let pair = [boid([0.0, 0.0], [1.0, 0.0]), boid([3.0, 0.0], [0.0, 1.0])];
        assert_eq!(social_forces(0, &pair, &cfg).unwrap().ali, [0.0, 3.0]);
        let sym = [
            boid([0.0, 0.0], [0.0, 1.0]),
            boid([-6.0, 0.0], [0.0, 1.0]),
            boid([6.0, 0.0], [0.0, 1.0]),
        ];
        let f = social_forces(0, &sym, &cfg).unwrap();
        assert!(norm(f.coh) < 1e-15);
        let same = [boid([0.0, 0.0], [1.0, 0.0]), boid([0.0, 0.0], [1.0, 0.0])];
        assert_eq!(visible_neighbors(0, &same, &cfg).unwrap().coincident, 1);
    }

    #[test]
    fn primitive_columns() {
        let cfg = FlockConfig::default();
        let grid = ActionGrid::ring(30, 3.0);
        assert!(grid.actions.iter().all(|u| norm(*u) <= 3.0 + 1e-12));
        let forces = SocialForces { sep: grid.actions[4], ali: [0.0, 0.0], coh: [1.0, -2.0] };
        let pm = primitive_matrix(&forces, &grid, &cfg).unwrap();
        let col = pm.column(0);
        let argmax = (0..30).max_by(|a, b| col[*a].total_cmp(&col[*b])).unwrap();
        assert_eq!(argmax, 4);
        let flat = pm.column(1);
        assert!(flat.iter().all(|v| (v - 1.0 / 30.0).abs() < 1e-12));
        for a in 0..3 {
            assert!((pm.column(a).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let wide = FlockConfig { sigma_coh: 1e6, ..FlockConfig::default() };
        let pm = primitive_matrix(&forces, &grid, &wide).unwrap();
        assert!(pm.column(2).iter().all(|v| (v - 1.0 / 30.0).abs() < 1e-6));
    }

    #[test]
    fn cost_examples() {
        let cfg = FlockConfig { goal: Some([-15.0, -15.0]), ..FlockConfig::default() };
        let grid = ActionGrid::ring(30, 3.0);
        let states = [boid([0.0, 0.0], [0.0, 0.0])];
        let c = generative_cost(0, &states, &grid, &cfg, GenerativeModel::Goal, None).unwrap();
        let toward = grid.actions.iter().position(|u| u[0] < 0.0 && (u[0] - u[1]).abs() < 1e-9);
        let away = grid.actions.iter().position(|u| u[0] > 0.0 && (u[0] - u[1]).abs() < 1e-9);
        // The 30-ring has no exact diagonal, so compare the nearest headings.
        let best = (0..30).min_by(|a, b| c[*a].total_cmp(&c[*b])).unwrap();
        let worst = (0..30).max_by(|a, b| c[*a].total_cmp(&c[*b])).unwrap();
        assert!(toward.is_none() && away.is_none());
        assert!(grid.actions[best][0] < 0.0 && grid.actions[best][1] < 0.0);
        assert!(grid.actions[worst][0] > 0.0 && grid.actions[worst][1] > 0.0);
        let unequal = FlockConfig { sigma_p: 0.02, ..cfg.clone() };
        let c2 = generative_cost(0, &states, &grid, &unequal, GenerativeModel::Goal, None).unwrap();
        assert_eq!(
            (0..30).min_by(|a, b| c2[*a].total_cmp(&c2[*b])).unwrap(),
            best
        );
        let pen = |_i: usize, u: Vec2| if u[0] < 0.0 { 100.0 } else { 0.0 };
        let c3 = generative_cost(0, &states, &grid, &cfg, GenerativeModel::Goal, Some(&pen)).unwrap();
        assert!(grid.actions[(0..30).min_by(|a, b| c3[*a].total_cmp(&c3[*b])).unwrap()][0] >= 0.0);
    }

    #[test]
    fn equal_covariance_shortcut_matches_closed_form() {
        let cfg = FlockConfig::default();
        let grid = ActionGrid::ring(30, 3.0);
        let states = [boid([0.0, 0.0], [0.3, 0.4]), boid([2.0, 1.0], [-0.5, 0.1]), boid([6.0, 0.0], [0.0, 1.0])];
        let c = generative_cost(0, &states, &grid, &cfg, GenerativeModel::Polarization, None).unwrap();
        let nb = visible_neighbors(0, &states, &cfg).unwrap();
        let q = generative_mean(0, &states, &cfg, &nb, GenerativeModel::Polarization).unwrap();
        let qs = GaussianSpec::isotropic(q.to_vec(), 0.01).unwrap();
        for (j, u) in grid.actions.iter().enumerate() {
            let mu = vec![0.3 * 0.05, 0.4 * 0.05, 0.3 + u[0] * 0.05, 0.4 + u[1] * 0.05];
            let kl = kl_gaussian(&GaussianSpec::isotropic(mu, 0.01).unwrap(), &qs).unwrap();
            assert!((kl - c[j]).abs() < 1e-9 * kl.max(1.0));
        }
    }

    #[test]
    fn clamp_and_metrics() {
        assert_eq!(clamp_speed([1.5, 0.0], 1.0), [1.0, 0.0]);
        let v = clamp_speed([0.9, 1.2], 1.0);
        assert!((norm(v) - 1.0).abs() < 1e-15);
        let same = vec![boid([0.0, 0.0], [1.0, 0.0]); 3];
        assert!((polarization(&same).0 - 1.0).abs() < 1e-15);
        let opp = [boid([0.0, 0.0], [1.0, 0.0]), boid([1.0, 0.0], [-1.0, 0.0])];
        assert_eq!(polarization(&opp).0, 0.0);
        let compass = [
            boid([0.0, 0.0], [1.0, 0.0]),
            boid([0.0, 0.0], [0.0, 1.0]),
            boid([0.0, 0.0], [-1.0, 0.0]),
            boid([0.0, 0.0], [0.0, -1.0]),
        ];
        assert!(polarization(&compass).0 < 1e-15);
        assert_eq!(polarization(&[boid([0.0, 0.0], [0.0, 0.0])]).1, 1);
        assert_eq!(goal_distance(&[boid([3.0, 4.0], [0.0, 0.0])], [0.0, 0.0]), 5.0);
        let shifted = goal_distance(&[boid([13.0, 14.0], [0.0, 0.0])], [10.0, 10.0]);
        assert_eq!(shifted, 5.0);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let cfg = FlockConfig { n: 8, steps: 20, seed: 7, ..FlockConfig::default() };
        let a = run_flock(&cfg).unwrap();
        let b = run_flock(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.max_residual <= 1e-8);
        let c = run_flock(&FlockConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.states, c.states);
    }
}
