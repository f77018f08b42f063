//! Probability-simplex vectors and the information-theoretic primitives built
//! on them: softmax, entropy, KL divergence, cross-entropy, the entropic
//! proximal map, and the closed-form Gaussian KL.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Entries below this magnitude are treated as exact zeros by entropy/KL.
pub const ZERO_MASS: f64 = 1e-15;
/// Mass drift a constructor will silently renormalize away.
pub const RENORMALIZE_TOL: f64 = 1e-6;
/// Tolerance on the unit-mass invariant after construction.
pub const SIMPLEX_TOL: f64 = 1e-9;
const NEGATIVE_CLAMP: f64 = 1e-12;

/// A nonnegative vector whose entries sum to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    /// Validates `values`, clamping negatives in `[-1e-12, 0)` to zero and
    /// renormalizing when the mass is within `1e-6` of one.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("simplex vector must be non-empty"));
        }
        for (i, v) in values.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("entry {i} is not finite")));
            }
            if *v < 0.0 {
                if *v >= -NEGATIVE_CLAMP {
                    *v = 0.0;
                } else {
                    return Err(Error::invalid(format!("entry {i} is negative ({v:e})")));
                }
            }
        }
        let mass: f64 = values.iter().sum();
        if (mass - 1.0).abs() > RENORMALIZE_TOL {
            return Err(Error::invalid(format!(
                "entries sum to {mass}, not 1 within {RENORMALIZE_TOL:e}"
            )));
        }
        if mass != 1.0 {
            values.iter_mut().for_each(|v| *v /= mass);
        }
        Ok(SimplexVector(values))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform simplex vector needs n > 0");
        SimplexVector(vec![1.0 / n as f64; n])
    }

    /// The `i`-th vertex `e_i` of the `n`-simplex.
    pub fn vertex(n: usize, i: usize) -> Self {
        assert!(i < n, "vertex index out of range");
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        SimplexVector(v)
    }

    /// Wraps values already known to lie on the simplex (e.g. a softmax output).
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        SimplexVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SimplexVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for SimplexVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl<'de> Deserialize<'de> for SimplexVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        SimplexVector::new(v).map_err(serde::de::Error::custom)
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexVector::new(v)
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::invalid("input vector is empty"));
    }
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::invalid(format!("entry {i} is not finite ({})", x[i]))),
        None => Ok(()),
    }
}

/// Shift-stable softmax: the maximum is subtracted before exponentiating.
pub fn softmax(x: &[f64]) -> Result<SimplexVector> {
    check_finite(x)?;
    Ok(SimplexVector::from_normalized(softmax_unchecked(x)))
}

pub(crate) fn softmax_unchecked(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// `ln Σ exp(x_i)`, computed shift-stably.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(w: &[f64]) -> f64 {
    -w.iter()
        .filter(|&&v| v > ZERO_MASS)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// `KL(p || q)` in nats. Returns `+inf` when `p` is not absolutely continuous
/// with respect to `q`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "kl_divergence: length mismatch");
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= ZERO_MASS {
            continue;
        }
        if qi <= ZERO_MASS {
            return f64::INFINITY;
        }
        acc += pi * (pi / qi).ln();
    }
    acc.max(0.0)
}

/// `H(p, q) = -Σ p_i ln q_i`; `+inf` under a support violation.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "cross_entropy: length mismatch");
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= ZERO_MASS {
            continue;
        }
        if qi <= ZERO_MASS {
            return f64::INFINITY;
        }
        acc -= pi * qi.ln();
    }
    acc
}

/// Proximal map of the entropic barrier shifted by `-½‖·‖²`. Its unique
/// minimizer over the simplex is the softmax of `x`.
pub fn prox_entropic_barrier(x: &[f64]) -> Result<SimplexVector> {
    softmax(x)
}

/// A multivariate Gaussian with symmetric positive-definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: covariance.nrows(),
            });
        }
        for i in 0..n {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12 {
                    return Err(Error::invalid("covariance is not symmetric"));
                }
            }
        }
        if covariance.clone().cholesky().is_none() {
            return Err(Error::invalid("covariance is not positive definite"));
        }
        Ok(GaussianSpec {
            mean: DVector::from_vec(mean),
            covariance,
        })
    }

    /// `N(mean, variance · I)`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let n = mean.len();
        GaussianSpec::new(mean, DMatrix::identity(n, n) * variance)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Closed-form `KL(p || q)` between Gaussians via Cholesky factors.
pub fn kl_gaussian(p: &GaussianSpec, q: &GaussianSpec) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    let k = p.dim() as f64;
    let chol_q = q
        .covariance
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("q covariance is singular"))?;
    let chol_p = p
        .covariance
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("p covariance is singular"))?;
    let log_det = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace = chol_q.solve(&p.covariance).trace();
    let diff = &q.mean - &p.mean;
    let maha = diff.dot(&chol_q.solve(&diff));
    let kl = 0.5 * (trace + maha - k + log_det(&chol_q.l()) - log_det(&chol_p.l()));
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in u.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let s = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        assert_abs_diff_eq!(s[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[2], 0.5, epsilon = 1e-15);
        let a = softmax(&[1.0, 2.0]).unwrap();
        let b = softmax(&[1001.0, 1002.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax(&[0.0, f64::NAN]), Err(Error::InvalidArgument(_))));
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
        assert!(softmax(&[]).is_err());
        assert!(prox_entropic_barrier(&[f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(entropy(&SimplexVector::uniform(4)), 4f64.ln(), epsilon = 1e-15);
        assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert_abs_diff_eq!(entropy(&[0.5, 0.5]), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn kl_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(&p, &p), 0.0);
        assert_abs_diff_eq!(kl_divergence(&[1.0, 0.0], &[0.5, 0.5]), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]), f64::INFINITY);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_abs_diff_eq!(cross_entropy(&[0.5, 0.5], &[0.5, 0.5]), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(cross_entropy(&[1.0, 0.0], &[0.5, 0.5]), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(cross_entropy(&[0.5, 0.5], &[1.0, 0.0]), f64::INFINITY);
    }

    #[test]
    fn prox_examples() {
        let x = [0.3, -1.2, 2.5, 0.0];
        assert_eq!(prox_entropic_barrier(&x).unwrap(), softmax(&x).unwrap());
        let p = prox_entropic_barrier(&[3f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn prox_at_origin_matches_one_dimensional_grid() {
        // H_barrier(z) - ½‖z‖² + ½‖x - z‖² on z = (t, 1 - t), x = 0.
        let objective = |t: f64| {
            let z = [t, 1.0 - t];
            -entropy(&z) - 0.5 * (z[0] * z[0] + z[1] * z[1]) + 0.5 * (z[0] * z[0] + z[1] * z[1])
        };
        let best = (0..=10_000)
            .map(|k| k as f64 * 1e-4)
            .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
            .unwrap();
        let p = prox_entropic_barrier(&[0.0, 0.0]).unwrap();
        assert!((p[0] - best).abs() <= 1e-4);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn simplex_constructor_renormalizes_small_drift() {
        let v = SimplexVector::new(vec![0.5 + 4e-7, 0.5]).unwrap();
        assert_abs_diff_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(SimplexVector::new(vec![0.6, 0.6]).is_err());
        assert!(SimplexVector::new(vec![1.1, -0.1]).is_err());
        let clamped = SimplexVector::new(vec![1.0, -1e-13]).unwrap();
        assert_eq!(clamped[1], 0.0);
        assert!(SimplexVector::new(vec![]).is_err());
    }

    #[test]
    fn gaussian_kl_examples() {
        let p = GaussianSpec::isotropic(vec![0.1, -0.2, 0.0, 1.0], 0.01).unwrap();
        assert_abs_diff_eq!(kl_gaussian(&p, &p).unwrap(), 0.0, epsilon = 1e-12);
        // ‖Δμ‖² = 0.02 with Σ = 0.01 I gives ½ · 0.02 / 0.01 = 1.
        let q = GaussianSpec::isotropic(vec![0.2, -0.1, 0.0, 1.0], 0.01).unwrap();
        assert_abs_diff_eq!(kl_gaussian(&p, &q).unwrap(), 1.0, epsilon = 1e-12);
        let r = GaussianSpec::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(kl_gaussian(&p, &r), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gaussian_spec_validation() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(GaussianSpec::new(vec![0.0, 0.0], asym).is_err());
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(GaussianSpec::new(vec![0.0, 0.0], singular).is_err());
    }

    #[test]
    fn gaussian_kl_matches_monte_carlo() {
        let p = GaussianSpec::new(
            vec![0.3, -0.4],
            DMatrix::from_row_slice(2, 2, &[0.8, 0.25, 0.25, 0.5]),
        )
        .unwrap();
        let q = GaussianSpec::new(
            vec![-0.2, 0.1],
            DMatrix::from_row_slice(2, 2, &[1.2, -0.3, -0.3, 0.9]),
        )
        .unwrap();
        let log_density = |g: &GaussianSpec, x: &DVector<f64>| {
            let chol = g.covariance().clone().cholesky().unwrap();
            let d = x - g.mean();
            let maha = d.dot(&chol.solve(&d));
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            -0.5 * (maha + log_det + 2.0 * (2.0 * std::f64::consts::PI).ln())
        };
        let l = p.covariance().clone().cholesky().unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let x = p.mean() + &l * z;
            let v = log_density(&p, &x) - log_density(&q, &x);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = kl_gaussian(&p, &q).unwrap();
        assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} exact {exact} se {se}");
    }

    fn simplex_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn softmax_stays_on_simplex(x in prop::collection::vec(-1000.0f64..1000.0, 1..10)) {
            let s = softmax(&x).unwrap();
            prop_assert!(s.iter().all(|v| *v >= 0.0));
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn softmax_translation_invariant(
            x in prop::collection::vec(-50.0f64..50.0, 1..10),
            u in -500.0f64..500.0,
        ) {
            let a = softmax(&x).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + u).collect();
            let b = softmax(&shifted).unwrap();
            for (p, q) in a.iter().zip(b.iter()) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }

        #[test]
        fn kl_nonnegative_and_zero_on_diagonal(
            (p, q) in (2usize..8).prop_flat_map(|n| (simplex_strategy(n), simplex_strategy(n)))
        ) {
            let d = kl_divergence(&p, &q);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(kl_divergence(&p, &p), 0.0);
            if p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-6) {
                prop_assert!(d > 0.0);
            }
        }

        #[test]
        fn cross_entropy_identity(
            (p, q) in (2usize..8).prop_flat_map(|n| (simplex_strategy(n), simplex_strategy(n)))
        ) {
            let lhs = kl_divergence(&p, &q);
            let rhs = cross_entropy(&p, &q) - entropy(&p);
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn prox_equals_softmax_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(2..=8);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
            let a = prox_entropic_barrier(&x).unwrap();
            let b = softmax(&x).unwrap();
            for (p, q) in a.iter().zip(b.iter()) {
                assert!((p - q).abs() <= 1e-12);
            }
        }
    }
}
