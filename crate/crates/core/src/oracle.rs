//! Brute-force verifiers: simplex lattice search, projected gradient
//! descent, central differences and a lattice prox. None of these share
//! code paths with the solvers they check beyond the objective itself.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::objective::{grad_f, total_objective, ObjectiveInstance};
use crate::simplex::SimplexVector;

/// Largest lattice the oracles will enumerate.
pub const MAX_LATTICE_POINTS: u128 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: f64,
    pub dimension: usize,
}

impl GridSpec {
    pub fn new(resolution: f64, dimension: usize) -> Result<Self> {
        let g = GridSpec { resolution, dimension };
        g.validate()?;
        Ok(g)
    }

    /// Lattice denominator `K = round(1/resolution)`.
    pub fn divisions(&self) -> usize {
        (1.0 / self.resolution).round() as usize
    }

    /// `C(K + n − 1, n − 1)`.
    pub fn lattice_size(&self) -> u128 {
        let k = self.divisions() as u128;
        let n = self.dimension as u128;
        let mut c: u128 = 1;
        for i in 1..n {
            c = c * (k + i) / i;
        }
        c
    }

    fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution <= 1.0) {
            return Err(Error::invalid("resolution must lie in (0, 1]"));
        }
        if self.dimension == 0 || self.dimension > 4 {
            return Err(Error::invalid("lattice dimension must be 1 to 4"));
        }
        let size = self.lattice_size();
        if size > MAX_LATTICE_POINTS {
            return Err(Error::invalid(format!(
                "lattice has {size} points, more than {MAX_LATTICE_POINTS}"
            )));
        }
        Ok(())
    }
}

/// Best lattice point and its value.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub weights: SimplexVector,
    pub value: f64,
    pub points: u128,
}

#[derive(Clone, Copy)]
struct Best {
    value: f64,
    index: u64,
}

impl Best {
    const NONE: Best = Best {
        value: f64::INFINITY,
        index: u64::MAX,
    };

    fn pick(self, other: Best) -> Best {
        if other.value < self.value || (other.value == self.value && other.index < self.index) {
            other
        } else {
            self
        }
    }
}

/// Lexicographic rank of a composition, used only as a tie-break.
fn rank(prefix: &[usize], last_two: (usize, usize), k: usize) -> u64 {
    let mut r: u64 = 0;
    for &p in prefix {
        r = r * (k as u64 + 1) + p as u64;
    }
    r = r * (k as u64 + 1) + last_two.0 as u64;
    r * (k as u64 + 1) + last_two.1 as u64
}

/// Enumerates every prefix `(k_1, …, k_{n−2})` of a composition of `K`.
fn prefixes(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n.saturating_sub(2) {
        let mut next = Vec::new();
        for p in &out {
            let used: usize = p.iter().sum();
            for v in 0..=(k - used) {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Exhaustive minimization of `F(w) − εH(w)` over the simplex lattice.
/// The mixture is updated incrementally along the innermost coordinate pair.
pub fn grid_search_simplex(inst: &ObjectiveInstance, grid: GridSpec) -> Result<GridResult> {
    grid.validate()?;
    check_dim(inst.n_pi(), grid.dimension)?;
    let n = grid.dimension;
    let k = grid.divisions();
    if n == 1 {
        let w = SimplexVector::vertex(1, 0);
        let value = total_objective(inst, &w)?;
        return Ok(GridResult { weights: w, value, points: 1 });
    }
    let kf = k as f64;
    let xlogx: Vec<f64> = (0..=k)
        .map(|i| {
            let x = i as f64 / kf;
            if i == 0 { 0.0 } else { x * x.ln() }
        })
        .collect();
    let pm = inst.primitives();
    let cols: Vec<Vec<f64>> = (0..n).map(|a| pm.column(a)).collect();
    let cost = inst.cost().as_slice();
    let eps = inst.epsilon();
    let d = inst.d_u();
    let value_of = |mix: &[f64], ent: f64| -> f64 {
        let mut f = 0.0;
        for i in 0..d {
            let p = mix[i];
            if p > 0.0 {
                f += p * (p.ln() + cost[i]);
            } else {
                return f64::INFINITY;
            }
        }
        f + eps * ent
    };
    let best = prefixes(n, k)
        .par_iter()
        .map(|prefix| {
            let used: usize = prefix.iter().sum();
            let rem = k - used;
            let mut base = vec![0.0; d];
            let mut ent_prefix = 0.0;
            for (a, &ka) in prefix.iter().enumerate() {
                for i in 0..d {
                    base[i] += ka as f64 / kf * cols[a][i];
                }
                ent_prefix += xlogx[ka];
            }
            let (c1, c2) = (&cols[n - 2], &cols[n - 1]);
            let mut best = Best::NONE;
            // Inner loop: k_{n−1} = j, k_n = rem − j. Recompute exactly every
            // 256 steps to cap drift from the incremental update.
            let mut mix = vec![0.0; d];
            for j in 0..=rem {
                if j % 256 == 0 {
                    for i in 0..d {
                        mix[i] = base[i] + (j as f64 * c1[i] + (rem - j) as f64 * c2[i]) / kf;
                    }
                } else {
                    for i in 0..d {
                        mix[i] += (c1[i] - c2[i]) / kf;
                    }
                }
                let v = value_of(&mix, ent_prefix + xlogx[j] + xlogx[rem - j]);
                best = best.pick(Best {
                    value: v,
                    index: rank(prefix, (j, rem - j), k),
                });
            }
            (best, prefix.clone())
        })
        .reduce(
            || (Best::NONE, Vec::new()),
            |a, b| {
                let p = a.0.pick(b.0);
                if p.index == a.0.index { a } else { b }
            },
        );
    let (b, prefix) = best;
    if !b.value.is_finite() {
        return Err(Error::Domain("no lattice point with positive mixture".into()));
    }
    let weights = decode(b.index, &prefix, n, k);
    let value = total_objective(inst, &weights)?;
    Ok(GridResult {
        weights,
        value,
        points: grid.lattice_size(),
    })
}

fn decode(index: u64, prefix: &[usize], n: usize, k: usize) -> SimplexVector {
    let base = k as u64 + 1;
    let last = (index % base) as usize;
    let second = ((index / base) % base) as usize;
    let mut counts = prefix.to_vec();
    counts.push(second);
    counts.push(last);
    debug_assert_eq!(counts.len(), n);
    SimplexVector::new(counts.iter().map(|c| *c as f64 / k as f64).collect())
        .expect("lattice point is on the simplex")
}

/// Generic lattice minimization of an arbitrary function, used where the
/// objective is not `F − εH`.
pub fn grid_minimize<G>(grid: GridSpec, f: G) -> Result<GridResult>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    grid.validate()?;
    let n = grid.dimension;
    let k = grid.divisions();
    if n == 1 {
        let w = SimplexVector::vertex(1, 0);
        let value = f(&w);
        return Ok(GridResult { weights: w, value, points: 1 });
    }
    let kf = k as f64;
    let (b, prefix) = prefixes(n, k)
        .par_iter()
        .map(|prefix| {
            let rem = k - prefix.iter().sum::<usize>();
            let mut z: Vec<f64> = prefix.iter().map(|c| *c as f64 / kf).collect();
            z.extend([0.0, 0.0]);
            let mut best = Best::NONE;
            for j in 0..=rem {
                z[n - 2] = j as f64 / kf;
                z[n - 1] = (rem - j) as f64 / kf;
                best = best.pick(Best {
                    value: f(&z),
                    index: rank(prefix, (j, rem - j), k),
                });
            }
            (best, prefix.clone())
        })
        .reduce(
            || (Best::NONE, Vec::new()),
            |a, b| {
                let p = a.0.pick(b.0);
                if p.index == a.0.index { a } else { b }
            },
        );
    if !b.value.is_finite() {
        return Err(Error::Domain("objective is infinite on the whole lattice".into()));
    }
    Ok(GridResult {
        weights: decode(b.index, &prefix, n, k),
        value: b.value,
        points: grid.lattice_size(),
    })
}

/// Minimizes `Σ z ln z − xᵀz` over the lattice, using a table of
/// `(j/K) ln(j/K)` so each point costs only additions.
pub fn prox_by_definition(x: &[f64], grid: GridSpec) -> Result<SimplexVector> {
    grid.validate()?;
    check_dim(grid.dimension, x.len())?;
    if grid.dimension > 3 {
        return Err(Error::invalid("prox oracle supports dimension at most 3"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("prox input must be finite"));
    }
    let n = grid.dimension;
    let k = grid.divisions();
    if n == 1 {
        return Ok(SimplexVector::vertex(1, 0));
    }
    let kf = k as f64;
    let table: Vec<Vec<f64>> = x
        .iter()
        .map(|xi| {
            (0..=k)
                .map(|j| {
                    let z = j as f64 / kf;
                    let ent = if j == 0 { 0.0 } else { z * z.ln() };
                    ent - xi * z
                })
                .collect()
        })
        .collect();
    let first_range = if n == 3 { k } else { 0 };
    let (value, counts) = (0..=first_range)
        .into_par_iter()
        .map(|a| {
            let (head, rem) = if n == 3 { (table[0][a], k - a) } else { (0.0, k) };
            let (t1, t2) = (&table[n - 2], &table[n - 1]);
            let mut best = (f64::INFINITY, 0usize);
            for j in 0..=rem {
                let v = head + t1[j] + t2[rem - j];
                if v < best.0 {
                    best = (v, j);
                }
            }
            (best.0, (a, best.1, rem - best.1))
        })
        .reduce(
            || (f64::INFINITY, (usize::MAX, 0, 0)),
            |p, q| if q.0 < p.0 || (q.0 == p.0 && q.1 < p.1) { q } else { p },
        );
    if !value.is_finite() {
        return Err(Error::Domain("prox objective is not finite".into()));
    }
    let (a, b, c) = counts;
    let w = if n == 3 { vec![a, b, c] } else { vec![b, c] };
    Ok(SimplexVector::new(w.into_iter().map(|v| v as f64 / kf).collect())
        .expect("lattice point is on the simplex"))
}

/// Euclidean projection onto the simplex (sort and threshold).
pub fn project_to_simplex(v: &[f64]) -> Result<SimplexVector> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("projection needs a finite nonempty vector"));
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cumulative += uj;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let out: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    let mass: f64 = out.iter().sum();
    SimplexVector::new(out.into_iter().map(|x| x / mass).collect())
}

/// Projected gradient descent on `F − εH`. The entropy gradient
/// `ε(1 + ln w)` is evaluated at `max(w, 1e-300)` so iterates on the
/// boundary are pushed back inside.
pub fn projected_gradient(
    inst: &ObjectiveInstance,
    step: f64,
    iters: usize,
    w0: &SimplexVector,
) -> Result<SimplexVector> {
    check_dim(inst.n_pi(), w0.len())?;
    if !(step > 0.0) {
        return Err(Error::invalid("step must be positive"));
    }
    let eps = inst.epsilon();
    let mut w = w0.clone();
    let mut prev = total_objective(inst, &w)?;
    let mut increases = 0;
    for it in 0..iters {
        let g = grad_f(inst, &w)?;
        let trial: Vec<f64> = w
            .iter()
            .zip(&g)
            .map(|(wi, gi)| wi - step * (gi + eps * (1.0 + wi.max(1e-300).ln())))
            .collect();
        let next = project_to_simplex(&trial)?;
        let value = total_objective(inst, &next).unwrap_or(f64::INFINITY);
        if value > prev + 1e-15 {
            increases += 1;
            if increases >= 100 {
                return Err(Error::NonConvergence {
                    iterations: it + 1,
                    residual: value - prev,
                });
            }
        } else {
            increases = 0;
        }
        prev = value;
        if crate::gateflow::distance(&next, &w) < 1e-15 {
            w = next;
            break;
        }
        w = next;
    }
    Ok(w)
}

/// Central differences `(f(w + h eᵢ) − f(w − h eᵢ)) / 2h` in ambient coordinates.
pub fn finite_difference_gradient<G>(f: G, w: &[f64], h: f64) -> Result<Vec<f64>>
where
    G: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("h must be positive"));
    }
    if w.iter().any(|v| *v < 2.0 * h) {
        return Err(Error::invalid("point is within 2h of the boundary"));
    }
    let mut x = w.to_vec();
    let mut out = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        x[i] = w[i] + h;
        let fp = f(&x)?;
        x[i] = w[i] - h;
        let fm = f(&x)?;
        x[i] = w[i];
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// Spread of `∇F(w) + ε(1 + ln w)` across coordinates; zero at an interior
/// stationary point.
pub fn kkt_residual(inst: &ObjectiveInstance, w: &[f64]) -> Result<f64> {
    let g = grad_f(inst, w)?;
    let eps = inst.epsilon();
    let s: Vec<f64> = g.iter().zip(w).map(|(gi, wi)| gi + eps * (1.0 + wi.ln())).collect();
    let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(hi - lo)
}
