//! The softmax gradient flow `τ ẇ = −w + softmax(−ε⁻¹ ∇F(w))`, its biased
//! variant, fixed-step integration with simplex invariance checks, the
//! forward-Euler step rule, and the equilibrium solver.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io::fmt_f64;
use crate::objective::{hessian_f, smoothness_bound, total_objective, ObjectiveInstance};
use crate::ode::{self, Integrator};
use crate::simplex::{softmax_unchecked, SimplexVector};

/// Mass drift tolerated after a step before renormalization.
pub const MASS_DRIFT_TOL: f64 = 1e-6;
/// Fixed-point residual at which the equilibrium solver stops.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;
/// `‖flow_rhs‖∞` below which a trajectory is declared converged.
pub const TRAJECTORY_TOL: f64 = 1e-8;
const NEGATIVE_CLAMP: f64 = 1e-12;

fn default_tau() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    0.01
}
fn default_horizon() -> f64 {
    10.0
}
fn default_record_every() -> usize {
    1
}
fn default_stop() -> Option<f64> {
    Some(TRAJECTORY_TOL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Stop once `‖flow_rhs‖∞` falls below this; `None` runs the full horizon.
    #[serde(default = "default_stop")]
    pub stop_tolerance: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            tau: 1.0,
            integrator: Integrator::Rk4,
            dt: 0.01,
            horizon: 10.0,
            record_every: 1,
            stop_tolerance: Some(TRAJECTORY_TOL),
        }
    }
}

impl FlowConfig {
    /// rk4 with `dt = τ/100`.
    pub fn rk4(tau: f64, horizon: f64) -> Self {
        FlowConfig {
            tau,
            dt: tau / 100.0,
            horizon,
            ..FlowConfig::default()
        }
    }

    pub fn validate(&self, inst: &ObjectiveInstance) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::config("horizon must be nonnegative"));
        }
        if self.horizon > 0.0 && self.dt > self.horizon {
            return Err(Error::config("dt must not exceed horizon"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every must be at least 1"));
        }
        if self.integrator == Integrator::Euler {
            let l_f = smoothness_bound(inst.primitives());
            let (max_step, _) = euler_step_bounds(self.tau, inst.epsilon(), l_f)?;
            if self.dt >= max_step {
                return Err(Error::config(format!(
                    "euler step {} exceeds the contraction bound {max_step:e}",
                    self.dt
                )));
            }
        }
        Ok(())
    }
}

/// Strictly positive bias weights `ŵ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasVector(SimplexVector);

impl BiasVector {
    pub fn new(values: SimplexVector) -> Result<Self> {
        if values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("bias entries must be strictly positive"));
        }
        Ok(BiasVector(values))
    }

    pub fn uniform(n: usize) -> Self {
        BiasVector(SimplexVector::uniform(n))
    }

    pub fn weights(&self) -> &SimplexVector {
        &self.0
    }

    fn log(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.ln()).collect()
    }
}

/// `softmax(−ε⁻¹ Πᵀ(ln(Πw) + c))`, the gated target of the flow.
pub fn gate_target(inst: &ObjectiveInstance, w: &[f64]) -> Result<Vec<f64>> {
    check_dim(inst.n_pi(), w.len())?;
    target(inst, None, w)
}

fn target(inst: &ObjectiveInstance, log_bias: Option<&[f64]>, w: &[f64]) -> Result<Vec<f64>> {
    let mix = inst.primitives().mix(w);
    if let Some(i) = mix.iter().position(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(Error::Domain(format!("mixture entry {i} is not positive")));
    }
    let inv_eps = 1.0 / inst.epsilon();
    let mut z: Vec<f64> = inst
        .neg_reduced_gradient(w)
        .into_iter()
        .map(|g| g * inv_eps)
        .collect();
    if let Some(lb) = log_bias {
        z.iter_mut().zip(lb).for_each(|(zi, b)| *zi += b);
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite gating logits".into()));
    }
    Ok(softmax_unchecked(&z))
}

/// `(1/τ)(−w + softmax(−ε⁻¹Πᵀ(ln(Πw) + c)))`. The `+1` in `∇F` is dropped
/// since softmax is translation invariant.
pub fn flow_rhs(inst: &ObjectiveInstance, tau: f64, w: &[f64]) -> Result<Vec<f64>> {
    check_dim(inst.n_pi(), w.len())?;
    let s = target(inst, None, w)?;
    Ok(w.iter().zip(&s).map(|(wi, si)| (si - wi) / tau).collect())
}

/// Biased flow `(1/τ)(−w + softmax(ln ŵ + ε⁻¹ g(w)))`, `g(w) = −Πᵀ(ln(Πw)+c)`.
/// Its equilibrium is the KL-regularized optimum `w ∝ ŵ exp(ε⁻¹ g(w))`.
pub fn flow_rhs_biased(
    inst: &ObjectiveInstance,
    tau: f64,
    bias: &BiasVector,
    w: &[f64],
) -> Result<Vec<f64>> {
    check_dim(inst.n_pi(), w.len())?;
    check_dim(inst.n_pi(), bias.0.len())?;
    let s = target(inst, Some(&bias.log()), w)?;
    Ok(w.iter().zip(&s).map(|(wi, si)| (si - wi) / tau).collect())
}

/// `(max_step, optimal_step) = (2τ/(1+L_F/ε)², τ/(1+L_F/ε)²)`.
pub fn euler_step_bounds(tau: f64, epsilon: f64, l_f: f64) -> Result<(f64, f64)> {
    if !(tau > 0.0) || !(epsilon > 0.0) || !(l_f >= 0.0) {
        return Err(Error::invalid(
            "euler_step_bounds needs tau > 0, epsilon > 0, l_f >= 0",
        ));
    }
    let k = 1.0 + l_f / epsilon;
    let max_step = 2.0 * tau / (k * k);
    Ok((max_step, 0.5 * max_step))
}

/// One forward-Euler step `w + dt·flow_rhs(w)` with no step-size guard and
/// no renormalization, for probing the discrete map directly.
pub fn euler_map(inst: &ObjectiveInstance, tau: f64, dt: f64, w: &[f64]) -> Result<Vec<f64>> {
    let r = flow_rhs(inst, tau, w)?;
    Ok(w.iter().zip(&r).map(|(a, b)| a + dt * b).collect())
}

/// Recorded path of the flow with its two Lyapunov diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub weights: Vec<SimplexVector>,
    /// `F(w) − εH(w)` at each recorded time.
    pub energy: Vec<f64>,
    /// `‖flow_rhs(w)‖₂` at each recorded time.
    pub residual: Vec<f64>,
    /// Largest pre-correction mass drift seen over the run.
    pub max_mass_drift: f64,
}

impl FlowTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &SimplexVector {
        self.weights.last().expect("trajectory has at least one point")
    }

    /// `t,w_1,...,w_n,energy,residual`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.weights.first().map_or(0, |w| w.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("w_{i}")));
        header.push("energy".into());
        header.push("residual".into());
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[k])];
            row.extend(self.weights[k].iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(self.energy[k]));
            row.push(fmt_f64(self.residual[k]));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Clamps rounding-level negatives, checks mass drift, and rescales to unit mass.
fn restore_simplex(w: &mut [f64], step: usize) -> Result<f64> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(step, "non-finite weight"));
    }
    for v in w.iter_mut() {
        if *v < 0.0 {
            if *v >= -NEGATIVE_CLAMP {
                *v = 0.0;
            } else {
                return Err(Error::numerical(step, format!("weight left the simplex ({v:e})")));
            }
        }
    }
    let mass: f64 = w.iter().sum();
    let drift = (mass - 1.0).abs();
    if drift > MASS_DRIFT_TOL {
        return Err(Error::numerical(step, format!("mass drift {drift:e}")));
    }
    w.iter_mut().for_each(|v| *v /= mass);
    Ok(drift)
}

fn run_flow<R, E>(
    cfg: &FlowConfig,
    w0: &SimplexVector,
    mut rhs: R,
    mut energy: E,
) -> Result<FlowTrajectory>
where
    R: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    E: FnMut(f64, &[f64]) -> Result<f64>,
{
    let steps = ode::step_count(cfg.horizon, cfg.dt);
    let mut traj = FlowTrajectory {
        times: Vec::new(),
        weights: Vec::new(),
        energy: Vec::new(),
        residual: Vec::new(),
        max_mass_drift: 0.0,
    };
    let mut w = w0.to_vec();
    let record = |traj: &mut FlowTrajectory, t: f64, w: &[f64], r: &[f64], e: f64| {
        traj.times.push(t);
        traj.weights.push(SimplexVector::from_normalized(w.to_vec()));
        traj.energy.push(e);
        traj.residual.push(norm2(r));
    };
    let r0 = rhs(0.0, &w)?;
    let e0 = energy(0.0, &w)?;
    record(&mut traj, 0.0, &w, &r0, e0);
    if cfg.stop_tolerance.is_some_and(|tol| norm_inf(&r0) <= tol) {
        return Ok(traj);
    }
    for k in 1..=steps {
        let t_prev = (k - 1) as f64 * cfg.dt;
        let mut next = ode::step(cfg.integrator, &mut rhs, t_prev, &w, cfg.dt)
            .map_err(|e| match e {
                Error::Domain(m) => Error::numerical(k, m),
                other => other,
            })?;
        let drift = restore_simplex(&mut next, k)?;
        traj.max_mass_drift = traj.max_mass_drift.max(drift);
        w = next;
        let t = k as f64 * cfg.dt;
        let r = rhs(t, &w)?;
        let done = k == steps || cfg.stop_tolerance.is_some_and(|tol| norm_inf(&r) <= tol);
        if k % cfg.record_every == 0 || done {
            let e = energy(t, &w)?;
            record(&mut traj, t, &w, &r, e);
        }
        if done {
            break;
        }
    }
    Ok(traj)
}

/// Integrates the flow from `w0`.
pub fn integrate(inst: &ObjectiveInstance, cfg: &FlowConfig, w0: &SimplexVector) -> Result<FlowTrajectory> {
    cfg.validate(inst)?;
    check_dim(inst.n_pi(), w0.len())?;
    run_flow(
        cfg,
        w0,
        |_t, w| flow_rhs(inst, cfg.tau, w),
        |_t, w| total_objective(inst, w),
    )
}

/// Integrates the biased flow; energy is `F(w) + ε KL(w || ŵ)`.
pub fn integrate_biased(
    inst: &ObjectiveInstance,
    cfg: &FlowConfig,
    bias: &BiasVector,
    w0: &SimplexVector,
) -> Result<FlowTrajectory> {
    cfg.validate(inst)?;
    check_dim(inst.n_pi(), w0.len())?;
    run_flow(
        cfg,
        w0,
        |_t, w| flow_rhs_biased(inst, cfg.tau, bias, w),
        |_t, w| crate::objective::biased_objective(inst, bias.weights(), w),
    )
}

/// Integrates with a time-dependent cost `c(t)`; the primitives and `ε` come
/// from `inst`.
pub fn integrate_time_varying<C>(
    inst: &ObjectiveInstance,
    cost_at: C,
    cfg: &FlowConfig,
    w0: &SimplexVector,
) -> Result<FlowTrajectory>
where
    C: Fn(f64) -> Result<crate::objective::CostVector>,
{
    cfg.validate(inst)?;
    check_dim(inst.n_pi(), w0.len())?;
    let at = |t: f64| -> Result<ObjectiveInstance> { inst.with_cost(cost_at(t)?) };
    run_flow(
        cfg,
        w0,
        |t, w| flow_rhs(&at(t)?, cfg.tau, w),
        |t, w| total_objective(&at(t)?, w),
    )
}

/// One sample of the contraction diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionSample {
    pub t: f64,
    /// `‖Δ(t)‖₂ / ‖Δ(0)‖₂`, or 0 when both starts coincide.
    pub ratio: f64,
    /// `exp(−t/τ)`.
    pub bound: f64,
}

/// Runs the flow from two starts over the full horizon and compares the
/// observed distance ratio with `exp(−t/τ)`.
pub fn contraction_report(
    inst: &ObjectiveInstance,
    cfg: &FlowConfig,
    w0a: &SimplexVector,
    w0b: &SimplexVector,
) -> Result<Vec<ContractionSample>> {
    let cfg = FlowConfig {
        stop_tolerance: None,
        ..cfg.clone()
    };
    let a = integrate(inst, &cfg, w0a)?;
    let b = integrate(inst, &cfg, w0b)?;
    let d0 = distance(w0a, w0b);
    Ok(a.times
        .iter()
        .zip(a.weights.iter().zip(&b.weights))
        .map(|(&t, (wa, wb))| ContractionSample {
            t,
            ratio: if d0 == 0.0 { 0.0 } else { distance(wa, wb) / d0 },
            bound: (-t / cfg.tau).exp(),
        })
        .collect())
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A solved equilibrium with its fixed-point residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub weights: SimplexVector,
    /// `‖w − softmax(−ε⁻¹∇F(w))‖∞` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

/// `‖w − softmax(−ε⁻¹∇F(w))‖∞`.
pub fn fixed_point_residual(inst: &ObjectiveInstance, w: &[f64]) -> Result<f64> {
    let s = gate_target(inst, w)?;
    Ok(w.iter().zip(&s).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// Biased analogue of [`fixed_point_residual`].
pub fn biased_fixed_point_residual(inst: &ObjectiveInstance, bias: &BiasVector, w: &[f64]) -> Result<f64> {
    check_dim(inst.n_pi(), w.len())?;
    let s = target(inst, Some(&bias.log()), w)?;
    Ok(w.iter().zip(&s).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// Solves `w = softmax(−ε⁻¹∇F(w))`, the unique minimizer of `F − εH`.
pub fn solve_equilibrium(inst: &ObjectiveInstance) -> Result<Equilibrium> {
    solve_fixed_point(inst, None, None)
}

/// [`solve_equilibrium`] started from `w0` instead of the uniform point.
pub fn solve_equilibrium_from(inst: &ObjectiveInstance, w0: &SimplexVector) -> Result<Equilibrium> {
    check_dim(inst.n_pi(), w0.len())?;
    solve_fixed_point(inst, None, Some(w0))
}

/// Solves the biased fixed point `w ∝ ŵ exp(ε⁻¹ g(w))`.
pub fn solve_biased_equilibrium(inst: &ObjectiveInstance, bias: &BiasVector) -> Result<Equilibrium> {
    check_dim(inst.n_pi(), bias.0.len())?;
    solve_fixed_point(inst, Some(&bias.log()), None)
}

const MAX_ITERATIONS: usize = 100_000;
const NEWTON_TOL: f64 = 1e-14;

/// Damped Newton on the residual `R(w) = w − G(w)` with an Armijo line
/// search on `½‖R‖²`. The Jacobian `I + ε⁻¹ S H` (with `S` the softmax
/// Jacobian and `H = ∇²F`) has eigenvalues with real part at least one, so
/// the Newton direction always exists and is a descent direction. Damped
/// Picard steps take over if the line search stalls.
fn solve_fixed_point(
    inst: &ObjectiveInstance,
    log_bias: Option<&[f64]>,
    start: Option<&SimplexVector>,
) -> Result<Equilibrium> {
    let n = inst.n_pi();
    if n == 1 {
        return Ok(Equilibrium {
            weights: SimplexVector::vertex(1, 0),
            residual: 0.0,
            iterations: 0,
        });
    }
    let residual = |w: &[f64]| -> Option<(Vec<f64>, Vec<f64>)> {
        let s = target(inst, log_bias, w).ok()?;
        let r: Vec<f64> = w.iter().zip(&s).map(|(a, b)| a - b).collect();
        Some((s, r))
    };
    let mut w = start.map_or_else(|| vec![1.0 / n as f64; n], |w0| w0.to_vec());
    let (mut s, mut r) = residual(&w).ok_or_else(|| Error::Domain("bad initial point".into()))?;
    let mut iterations = 0;
    let mut picard_lambda = 0.5;
    while iterations < MAX_ITERATIONS {
        let r_inf = norm_inf(&r);
        if r_inf <= NEWTON_TOL {
            break;
        }
        iterations += 1;
        let phi = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
        let direction = newton_direction(inst, &w, &s, &r);
        let mut accepted = false;
        if let Some(d) = direction {
            let mut alpha = 1.0;
            while alpha > 1e-12 {
                let trial: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                if let Some((ts, tr)) = residual(&trial) {
                    let tphi = 0.5 * tr.iter().map(|v| v * v).sum::<f64>();
                    if tphi <= (1.0 - 2e-4 * alpha) * phi {
                        w = trial;
                        s = ts;
                        r = tr;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
        }
        if !accepted {
            if r_inf <= EQUILIBRIUM_TOL {
                // Rounding floor reached.
                break;
            }
            // Damped Picard step, w ← (1−λ)w + λ G(w).
            let trial: Vec<f64> = w
                .iter()
                .zip(&s)
                .map(|(a, b)| (1.0 - picard_lambda) * a + picard_lambda * b)
                .collect();
            match residual(&trial) {
                Some((ts, tr)) if norm_inf(&tr) < r_inf => {
                    w = trial;
                    s = ts;
                    r = tr;
                }
                _ => {
                    picard_lambda *= 0.5;
                    if picard_lambda < 1e-8 {
                        return Err(Error::NonConvergence {
                            iterations,
                            residual: r_inf,
                        });
                    }
                }
            }
        }
    }
    let mut weights = w;
    for v in weights.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mass: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= mass);
    let final_residual = match residual(&weights) {
        Some((_, r)) => norm_inf(&r),
        None => f64::INFINITY,
    };
    if !(final_residual <= EQUILIBRIUM_TOL) {
        return Err(Error::NonConvergence {
            iterations,
            residual: final_residual,
        });
    }
    Ok(Equilibrium {
        weights: SimplexVector::new(weights)?,
        residual: final_residual,
        iterations,
    })
}

fn newton_direction(inst: &ObjectiveInstance, w: &[f64], s: &[f64], r: &[f64]) -> Option<Vec<f64>> {
    let n = w.len();
    let h = hessian_f(inst, w).ok()?;
    let sv = DVector::from_column_slice(s);
    let sm = DMatrix::from_diagonal(&sv) - &sv * sv.transpose();
    let jac = DMatrix::identity(n, n) + (sm * h) / inst.epsilon();
    let rhs = -DVector::from_column_slice(r);
    let d = jac.lu().solve(&rhs)?;
    if d.iter().all(|v| v.is_finite()) {
        Some(d.iter().copied().collect())
    } else {
        None
    }
}
