//! Rate-coded circuit realizing the flow: a fast unit that estimates the
//! gradient and a slow unit that computes the softmax.
//!
//! ```text
//! τ_g  ȧ = −a + Πw          τ_s ṁ = −m + Σ exp(y)
//! τ_g  ḃ = −b + ln a        τ_s ṙ = −r + y − ln m
//! τ̃_g ẏ = −εy − Πᵀ(b + c)   τ   ẇ = −w + exp(r)
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gateflow::{integrate, FlowConfig};
use crate::io::fmt_f64;
use crate::objective::ObjectiveInstance;
use crate::ode::{self, Integrator};
use crate::simplex::SimplexVector;

/// Floor applied to `a` and `m` after each step.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

fn default_max_ratio() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timescales {
    pub tau_g: f64,
    pub tau_g_tilde: f64,
    pub tau_s: f64,
    pub tau: f64,
    /// Largest allowed ratio between consecutive constants.
    #[serde(default = "default_max_ratio")]
    pub max_ratio: f64,
}

impl Default for Timescales {
    fn default() -> Self {
        Timescales {
            tau_g: 1e-3,
            tau_g_tilde: 1e-2,
            tau_s: 1e-1,
            tau: 1.0,
            max_ratio: default_max_ratio(),
        }
    }
}

impl Timescales {
    /// `(τ r³, τ r², τ r, τ)`.
    pub fn geometric(tau: f64, ratio: f64) -> Result<Self> {
        let ts = Timescales {
            tau_g: tau * ratio.powi(3),
            tau_g_tilde: tau * ratio.powi(2),
            tau_s: tau * ratio,
            tau,
            max_ratio: default_max_ratio().max(ratio),
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<()> {
        let chain = [self.tau_g, self.tau_g_tilde, self.tau_s, self.tau];
        if chain.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::config("time constants must be positive"));
        }
        if !(self.max_ratio > 0.0 && self.max_ratio < 1.0) {
            return Err(Error::config("max_ratio must lie in (0, 1)"));
        }
        for pair in chain.windows(2) {
            if pair[0] / pair[1] > self.max_ratio * (1.0 + 1e-12) {
                return Err(Error::config(format!(
                    "time constants must be separated by at least 1/{}; got {} and {}",
                    1.0 / self.max_ratio,
                    pair[0],
                    pair[1]
                )));
            }
        }
        Ok(())
    }

    /// Default step `τ_g / 20`.
    pub fn default_dt(&self) -> f64 {
        self.tau_g / 20.0
    }
}

/// Circuit variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetState {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub y: Vec<f64>,
    pub m: f64,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
}

impl NetState {
    /// Places every layer at its quasi-steady value given `w`.
    pub fn quasi_steady(inst: &ObjectiveInstance, w: &[f64]) -> Result<Self> {
        check_dim(inst.n_pi(), w.len())?;
        let a = inst.primitives().mix(w);
        if a.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain("mixture must be positive".into()));
        }
        let b: Vec<f64> = a.iter().map(|v| v.ln()).collect();
        let y = fast_target(inst, &b);
        let m: f64 = y.iter().map(|v| v.exp()).sum();
        let r: Vec<f64> = y.iter().map(|v| v - m.ln()).collect();
        Ok(NetState {
            a,
            b,
            y,
            m,
            r,
            w: w.to_vec(),
        })
    }

    fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.a.len() * 2 + self.y.len() * 3 + 1);
        v.extend_from_slice(&self.a);
        v.extend_from_slice(&self.b);
        v.extend_from_slice(&self.y);
        v.push(self.m);
        v.extend_from_slice(&self.r);
        v.extend_from_slice(&self.w);
        v
    }

    fn unflatten(v: &[f64], d: usize, n: usize) -> Self {
        let (a, rest) = v.split_at(d);
        let (b, rest) = rest.split_at(d);
        let (y, rest) = rest.split_at(n);
        let (m, rest) = rest.split_at(1);
        let (r, w) = rest.split_at(n);
        NetState {
            a: a.to_vec(),
            b: b.to_vec(),
            y: y.to_vec(),
            m: m[0],
            r: r.to_vec(),
            w: w.to_vec(),
        }
    }

    fn check(&self, inst: &ObjectiveInstance) -> Result<()> {
        check_dim(inst.d_u(), self.a.len())?;
        check_dim(inst.d_u(), self.b.len())?;
        check_dim(inst.n_pi(), self.y.len())?;
        check_dim(inst.n_pi(), self.r.len())?;
        check_dim(inst.n_pi(), self.w.len())
    }
}

/// `−ε⁻¹ Πᵀ(b + c)`.
fn fast_target(inst: &ObjectiveInstance, b: &[f64]) -> Vec<f64> {
    let bc: Vec<f64> = b.iter().zip(inst.cost().iter()).map(|(x, c)| x + c).collect();
    inst.primitives()
        .project(&bc)
        .into_iter()
        .map(|v| -v / inst.epsilon())
        .collect()
}

/// Time derivative of every circuit variable.
pub fn net_rhs(inst: &ObjectiveInstance, ts: &Timescales, s: &NetState) -> Result<NetState> {
    s.check(inst)?;
    if let Some(i) = s.a.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::numerical(0, format!("a[{i}] is not positive")));
    }
    if !(s.m > 0.0) {
        return Err(Error::numerical(0, "m is not positive"));
    }
    let mix = inst.primitives().mix(&s.w);
    let da = s.a.iter().zip(&mix).map(|(a, p)| (p - a) / ts.tau_g).collect();
    let db = s.b.iter().zip(&s.a).map(|(b, a)| (a.ln() - b) / ts.tau_g).collect();
    let bc: Vec<f64> = s.b.iter().zip(inst.cost().iter()).map(|(x, c)| x + c).collect();
    let proj = inst.primitives().project(&bc);
    let dy = s.y.iter()
        .zip(&proj)
        .map(|(y, p)| (-inst.epsilon() * y - p) / ts.tau_g_tilde)
        .collect();
    let dm = (s.y.iter().map(|v| v.exp()).sum::<f64>() - s.m) / ts.tau_s;
    let ln_m = s.m.ln();
    let dr = s.r.iter().zip(&s.y).map(|(r, y)| (y - ln_m - r) / ts.tau_s).collect();
    let dw = s.w.iter().zip(&s.r).map(|(w, r)| (r.exp() - w) / ts.tau).collect();
    Ok(NetState {
        a: da,
        b: db,
        y: dy,
        m: dm,
        r: dr,
        w: dw,
    })
}

/// Recorded circuit run.
#[derive(Debug, Clone, PartialEq)]
pub struct NetRun {
    pub times: Vec<f64>,
    pub states: Vec<NetState>,
    /// Times `a` or `m` was raised to [`POSITIVITY_FLOOR`].
    pub floor_hits: usize,
}

impl NetRun {
    pub fn last(&self) -> &NetState {
        self.states.last().expect("run has at least one state")
    }

    /// `t,a_1..,b_1..,y_1..,m,r_1..,w_1..`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let (d, n) = self.states.first().map_or((0, 0), |s| (s.a.len(), s.w.len()));
        let mut header = vec!["t".to_string()];
        for (name, k) in [("a", d), ("b", d), ("y", n)] {
            header.extend((1..=k).map(|i| format!("{name}_{i}")));
        }
        header.push("m".into());
        for (name, k) in [("r", n), ("w", n)] {
            header.extend((1..=k).map(|i| format!("{name}_{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let mut row = vec![fmt_f64(*t)];
            row.extend(s.flatten().into_iter().map(fmt_f64));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrates the circuit with rk4 from `s0`, keeping every
/// `record_every`-th state plus the last one.
pub fn simulate(
    inst: &ObjectiveInstance,
    ts: &Timescales,
    s0: &NetState,
    horizon: f64,
    dt: f64,
    record_every: usize,
) -> Result<NetRun> {
    ts.validate()?;
    s0.check(inst)?;
    if !(dt > 0.0) || dt > ts.tau_g / 10.0 * (1.0 + 1e-12) {
        return Err(Error::config(format!(
            "dt must lie in (0, tau_g/10 = {:e}]",
            ts.tau_g / 10.0
        )));
    }
    if !(horizon >= 0.0) {
        return Err(Error::config("horizon must be nonnegative"));
    }
    if record_every == 0 {
        return Err(Error::config("record_every must be at least 1"));
    }
    if s0.a.iter().any(|v| !(*v > 0.0)) || !(s0.m > 0.0) || s0.w.iter().any(|v| *v < 0.0) {
        return Err(Error::invalid("initial state needs a > 0, m > 0, w >= 0"));
    }
    let (d, n) = (inst.d_u(), inst.n_pi());
    let mut rhs = |_t: f64, y: &[f64]| -> Result<Vec<f64>> {
        Ok(net_rhs(inst, ts, &NetState::unflatten(y, d, n))?.flatten())
    };
    let steps = ode::step_count(horizon, dt);
    let mut run = NetRun {
        times: vec![0.0],
        states: vec![s0.clone()],
        floor_hits: 0,
    };
    let mut y = s0.flatten();
    for k in 1..=steps {
        y = ode::step(Integrator::Rk4, &mut rhs, (k - 1) as f64 * dt, &y, dt).map_err(|e| match e {
            Error::Numerical { message, .. } => Error::numerical(k, message),
            other => other,
        })?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(k, "non-finite circuit state"));
        }
        for i in (0..d).chain(std::iter::once(2 * d + n)) {
            if y[i] < POSITIVITY_FLOOR {
                y[i] = POSITIVITY_FLOOR;
                run.floor_hits += 1;
            }
        }
        if k % record_every == 0 || k == steps {
            run.times.push(k as f64 * dt);
            run.states.push(NetState::unflatten(&y, d, n));
        }
    }
    Ok(run)
}

/// Tracking error between the circuit and the flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingReport {
    /// `sup_{t ≥ burn_in} ‖w_net(t) − w_flow(t)‖∞`.
    pub sup_deviation: f64,
    /// Deviation at the horizon.
    pub final_deviation: f64,
    pub floor_hits: usize,
}

/// Runs the circuit and the flow (same `τ`) from `w0` and compares their
/// weights on a common time grid of spacing `τ/100`.
pub fn compare_to_gateflow(
    inst: &ObjectiveInstance,
    ts: &Timescales,
    horizon: f64,
    burn_in: f64,
    w0: &SimplexVector,
) -> Result<TrackingReport> {
    ts.validate()?;
    let sample = ts.tau / 100.0;
    let substeps = (sample / ts.default_dt()).ceil() as usize;
    let dt = sample / substeps as f64;
    let s0 = NetState::quasi_steady(inst, w0)?;
    let net = simulate(inst, ts, &s0, horizon, dt, substeps)?;
    let cfg = FlowConfig {
        tau: ts.tau,
        dt: sample,
        horizon,
        stop_tolerance: None,
        ..FlowConfig::default()
    };
    let flow = integrate(inst, &cfg, w0)?;
    let mut sup: f64 = 0.0;
    let mut last = 0.0;
    for ((t, s), wf) in net.times.iter().zip(&net.states).zip(&flow.weights) {
        let dev = s.w.iter().zip(wf.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if *t >= burn_in - 1e-12 {
            sup = sup.max(dev);
        }
        last = dev;
    }
    Ok(TrackingReport {
        sup_deviation: sup,
        final_deviation: last,
        floor_hits: net.floor_hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateflow::{fixed_point_residual, solve_equilibrium};
    use crate::objective::{CostVector, PrimitiveMatrix};

    fn inst() -> ObjectiveInstance {
        let pm = PrimitiveMatrix::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        ObjectiveInstance::new(pm, CostVector::new(vec![0.0, 2f64.ln()]).unwrap(), 0.5).unwrap()
    }

    fn max_abs(s: &NetState) -> f64 {
        s.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn quasi_steady_zeroes_fast_and_slow_blocks() {
        let inst = inst();
        let s = NetState::quasi_steady(&inst, &[0.3, 0.7]).unwrap();
        let d = net_rhs(&inst, &Timescales::default(), &s).unwrap();
        for v in d.a.iter().chain(&d.b).chain(&d.y).chain(&d.r).chain(std::iter::once(&d.m)) {
            assert!(v.abs() < 1e-10, "{v}");
        }
        let sum: f64 = s.r.iter().map(|r| r.exp()).sum();
        assert!((sum - 1.0).abs() < 1e-14);
    }

    #[test]
    fn stationary_at_equilibrium() {
        let inst = inst();
        let eq = solve_equilibrium(&inst).unwrap();
        let s0 = NetState::quasi_steady(&inst, &eq.weights).unwrap();
        assert!(max_abs(&net_rhs(&inst, &Timescales::default(), &s0).unwrap()) < 1e-9);
        let ts = Timescales::default();
        let run = simulate(&inst, &ts, &s0, 0.05, ts.default_dt(), 100).unwrap();
        for (a, b) in run.last().w.iter().zip(eq.weights.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn converges_to_flow_equilibrium() {
        let inst = inst();
        let eq = solve_equilibrium(&inst).unwrap();
        let ts = Timescales::default();
        let s0 = NetState::quasi_steady(&inst, &SimplexVector::uniform(2)).unwrap();
        let run = simulate(&inst, &ts, &s0, 15.0, ts.default_dt(), 1000).unwrap();
        let w = &run.last().w;
        for (a, b) in w.iter().zip(eq.weights.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
        assert!(fixed_point_residual(&inst, w).unwrap() < 1e-4);
        assert!(run.states.iter().all(|s| s.w.iter().all(|v| *v > 0.0) && s.m > 0.0));
    }

    #[test]
    fn stiffness_and_ordering_guards() {
        let inst = inst();
        let ts = Timescales::default();
        let s0 = NetState::quasi_steady(&inst, &[0.5, 0.5]).unwrap();
        assert!(matches!(simulate(&inst, &ts, &s0, 1.0, 1e-3, 1), Err(Error::Config(_))));
        let bad = Timescales { tau_s: 0.5, ..ts };
        assert!(bad.validate().is_err());
        assert!(Timescales::geometric(1.0, 0.05).is_ok());
    }

    #[test]
    fn single_primitive_pins_weight() {
        let pm = PrimitiveMatrix::from_columns(&[vec![0.25, 0.75]]).unwrap();
        let one = ObjectiveInstance::new(pm, CostVector::new(vec![1.0, -1.0]).unwrap(), 0.3).unwrap();
        let rep = compare_to_gateflow(&one, &Timescales::default(), 1.0, 0.0, &SimplexVector::uniform(1)).unwrap();
        assert!(rep.sup_deviation <= 1e-10);
    }

    #[test]
    fn csv_header_layout() {
        let inst = inst();
        let s0 = NetState::quasi_steady(&inst, &[0.5, 0.5]).unwrap();
        let run = NetRun { times: vec![0.0], states: vec![s0], floor_hits: 0 };
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,a_1,a_2,b_1,b_2,y_1,y_2,m,r_1,r_2,w_1,w_2\n"));
    }
}
