//! Fixed-step explicit integrators over flat state vectors.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

/// Advances `y` by one step of size `dt` under `f(t, y)`.
pub fn step<F>(integrator: Integrator, f: &mut F, t: f64, y: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    match integrator {
        Integrator::Euler => {
            let k1 = f(t, y)?;
            Ok(axpy(y, dt, &k1))
        }
        Integrator::Rk4 => {
            let k1 = f(t, y)?;
            let k2 = f(t + 0.5 * dt, &axpy(y, 0.5 * dt, &k1))?;
            let k3 = f(t + 0.5 * dt, &axpy(y, 0.5 * dt, &k2))?;
            let k4 = f(t + dt, &axpy(y, dt, &k3))?;
            Ok(y.iter()
                .enumerate()
                .map(|(i, v)| v + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect())
        }
    }
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

/// Number of fixed steps covering `horizon`.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    if horizon <= 0.0 {
        0
    } else {
        (horizon / dt).round().max(1.0) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_is_fourth_order_on_exponential_decay() {
        let mut f = |_t: f64, y: &[f64]| Ok(vec![-y[0]]);
        let run = |dt: f64, f: &mut dyn FnMut(f64, &[f64]) -> Result<Vec<f64>>| {
            let mut y = vec![1.0];
            let n = step_count(1.0, dt);
            let mut g = |t: f64, y: &[f64]| f(t, y);
            for k in 0..n {
                y = step(Integrator::Rk4, &mut g, k as f64 * dt, &y, dt).unwrap();
            }
            (y[0] - (-1f64).exp()).abs()
        };
        let e1 = run(0.1, &mut f);
        let e2 = run(0.05, &mut f);
        let order = (e1 / e2).log2();
        assert!((order - 4.0).abs() < 0.2, "observed order {order}");
    }

    #[test]
    fn euler_step_is_explicit() {
        let mut f = |_t: f64, y: &[f64]| Ok(vec![2.0 * y[0]]);
        let y = step(Integrator::Euler, &mut f, 0.0, &[1.0], 0.25).unwrap();
        assert_eq!(y, vec![1.5]);
        assert_eq!(step_count(0.0, 0.1), 0);
        assert_eq!(step_count(1.0, 0.1), 10);
    }
}
