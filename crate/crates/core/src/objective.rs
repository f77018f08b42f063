//! The gating objective in discrete-action form.
//!
//! `Π` is a `d_u × n_π` column-stochastic matrix whose columns are the
//! primitive pmfs, `c` is the per-action cost, and the complexity term is
//! `F(w) = Σ_i (Πw)_i (ln(Πw)_i + c_i)`. The regularized cost is
//! `F(w) - ε H(w)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::simplex::{entropy, RENORMALIZE_TOL};

/// Default floor applied to raw primitive densities before normalization.
pub const DEFAULT_PI_FLOOR: f64 = 1e-4;

/// Column-stochastic matrix of primitive pmfs with full support.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveMatrix {
    entries: DMatrix<f64>,
    pi_min: f64,
    pi_max: f64,
}

impl PrimitiveMatrix {
    /// Builds from a `d_u × n_π` matrix. Columns within `1e-6` of unit mass
    /// are renormalized; every entry must be strictly positive.
    pub fn new(mut entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::invalid("primitive matrix must be non-empty"));
        }
        for (j, mut col) in entries.column_iter_mut().enumerate() {
            if let Some(i) = col.iter().position(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::invalid(format!(
                    "primitive {j} has non-positive or non-finite entry at action {i}"
                )));
            }
            let mass = col.sum();
            if (mass - 1.0).abs() > RENORMALIZE_TOL {
                return Err(Error::invalid(format!(
                    "primitive {j} sums to {mass}, not 1"
                )));
            }
            if (mass - 1.0).abs() > 0.0 {
                col /= mass;
            }
        }
        let pi_min = entries.min();
        let pi_max = entries.max();
        Ok(PrimitiveMatrix {
            entries,
            pi_min,
            pi_max,
        })
    }

    /// Builds from row-major data: `rows[i][α]` is the probability of action
    /// `i` under primitive `α`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d_u = rows.len();
        let n_pi = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != n_pi) {
            return Err(Error::DimensionMismatch {
                expected: n_pi,
                found: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        PrimitiveMatrix::new(DMatrix::from_row_slice(d_u, n_pi, &flat))
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n_pi = columns.len();
        let d_u = columns.first().map_or(0, |c| c.len());
        if let Some(bad) = columns.iter().find(|c| c.len() != d_u) {
            return Err(Error::DimensionMismatch {
                expected: d_u,
                found: bad.len(),
            });
        }
        let flat: Vec<f64> = columns.iter().flatten().copied().collect();
        PrimitiveMatrix::new(DMatrix::from_column_slice(d_u, n_pi, &flat))
    }

    /// Clamps raw (unnormalized) densities to `[floor, ∞)` and normalizes each
    /// column. `pi_min`/`pi_max` are read off the realized matrix.
    pub fn from_densities(mut raw: DMatrix<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::invalid("density floor must be positive"));
        }
        for mut col in raw.column_iter_mut() {
            col.iter_mut().for_each(|v| {
                if !(*v >= floor) {
                    *v = floor;
                }
            });
            let mass = col.sum();
            col /= mass;
        }
        PrimitiveMatrix::new(raw)
    }

    pub fn d_u(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_pi(&self) -> usize {
        self.entries.ncols()
    }

    pub fn pi_min(&self) -> f64 {
        self.pi_min
    }

    pub fn pi_max(&self) -> f64 {
        self.pi_max
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn column(&self, alpha: usize) -> Vec<f64> {
        self.entries.column(alpha).iter().copied().collect()
    }

    /// `Π w`, the mixture pmf over actions.
    pub fn mix(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d_u()];
        for (alpha, &wa) in w.iter().enumerate() {
            for (o, p) in out.iter_mut().zip(self.entries.column(alpha).iter()) {
                *o += p * wa;
            }
        }
        out
    }

    /// `Πᵀ v`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.entries
            .column_iter()
            .map(|col| col.iter().zip(v).map(|(p, x)| p * x).sum())
            .collect()
    }
}

/// Per-action cost `c_i` in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVector(Vec<f64>);

impl CostVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("cost entry {i} is not finite")));
        }
        Ok(CostVector(values))
    }

    pub fn zeros(n: usize) -> Self {
        CostVector(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Adds `κ` to every entry.
    pub fn shifted(&self, kappa: f64) -> Result<Self> {
        CostVector::new(self.0.iter().map(|v| v + kappa).collect())
    }
}

impl std::ops::Deref for CostVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `c_i = KL_i − ln q_u(i)` where `KL_i` is the transition divergence under
/// action `i` and `q_u` the reference policy.
pub fn build_cost(per_action_transition_kl: &[f64], reference_policy: &[f64]) -> Result<CostVector> {
    check_dim(per_action_transition_kl.len(), reference_policy.len())?;
    if let Some(i) = reference_policy.iter().position(|q| !(*q > 0.0)) {
        return Err(Error::invalid(format!(
            "reference policy entry {i} is not strictly positive"
        )));
    }
    CostVector::new(
        per_action_transition_kl
            .iter()
            .zip(reference_policy)
            .map(|(kl, q)| kl - q.ln())
            .collect(),
    )
}

/// Cost for a reference policy tilted by a state-action cost,
/// `q_u ∝ q̃_u exp(−cost)`. The log-normalizer is dropped since a constant
/// shift leaves the gated weights unchanged.
pub fn build_cost_exponentiated(
    base_transition_kl: &[f64],
    base_reference_policy: &[f64],
    state_action_cost: &[f64],
) -> Result<CostVector> {
    check_dim(base_transition_kl.len(), state_action_cost.len())?;
    let base = build_cost(base_transition_kl, base_reference_policy)?;
    CostVector::new(
        base.iter()
            .zip(state_action_cost)
            .map(|(b, c)| b + c)
            .collect(),
    )
}

/// A fully specified gating problem: primitives, cost, temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveInstance {
    primitives: PrimitiveMatrix,
    cost: CostVector,
    epsilon: f64,
}

impl ObjectiveInstance {
    pub fn new(primitives: PrimitiveMatrix, cost: CostVector, epsilon: f64) -> Result<Self> {
        check_dim(primitives.d_u(), cost.len())?;
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(ObjectiveInstance {
            primitives,
            cost,
            epsilon,
        })
    }

    pub fn primitives(&self) -> &PrimitiveMatrix {
        &self.primitives
    }

    pub fn cost(&self) -> &CostVector {
        &self.cost
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_pi(&self) -> usize {
        self.primitives.n_pi()
    }

    pub fn d_u(&self) -> usize {
        self.primitives.d_u()
    }

    pub fn with_cost(&self, cost: CostVector) -> Result<Self> {
        ObjectiveInstance::new(self.primitives.clone(), cost, self.epsilon)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        ObjectiveInstance::new(self.primitives.clone(), self.cost.clone(), epsilon)
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        check_dim(self.n_pi(), w.len())
    }

    /// `ln(Πw) + c`, the per-action log-ratio term. `Πw` must be positive.
    pub(crate) fn action_potential(&self, w: &[f64]) -> Vec<f64> {
        self.primitives
            .mix(w)
            .iter()
            .zip(self.cost.iter())
            .map(|(a, c)| a.ln() + c)
            .collect()
    }

    /// `g(w) = −Πᵀ(ln(Πw) + c)`, the negated gradient without the constant `+1`.
    pub(crate) fn neg_reduced_gradient(&self, w: &[f64]) -> Vec<f64> {
        self.primitives
            .project(&self.action_potential(w))
            .into_iter()
            .map(|v| -v)
            .collect()
    }
}

/// `F(w) = Σ_i (Πw)_i (ln(Πw)_i + c_i)`.
pub fn eval_f(inst: &ObjectiveInstance, w: &[f64]) -> Result<f64> {
    inst.check(w)?;
    let mix = inst.primitives.mix(w);
    if let Some(i) = mix.iter().position(|a| !(*a > 0.0)) {
        return Err(Error::Domain(format!("mixture entry {i} is not positive")));
    }
    Ok(mix
        .iter()
        .zip(inst.cost.iter())
        .map(|(a, c)| a * (a.ln() + c))
        .sum())
}

/// `∇F(w) = Πᵀ(ln(Πw) + c) + 1`.
pub fn grad_f(inst: &ObjectiveInstance, w: &[f64]) -> Result<Vec<f64>> {
    inst.check(w)?;
    Ok(inst
        .primitives
        .project(&inst.action_potential(w))
        .into_iter()
        .map(|v| v + 1.0)
        .collect())
}

/// `∇²F(w)_{αγ} = Σ_i Π_{iα} Π_{iγ} / (Πw)_i`.
pub fn hessian_f(inst: &ObjectiveInstance, w: &[f64]) -> Result<DMatrix<f64>> {
    inst.check(w)?;
    let pi = inst.primitives.entries();
    let inv_mix = DVector::from_iterator(
        inst.d_u(),
        inst.primitives.mix(w).into_iter().map(|a| 1.0 / a),
    );
    let scaled = DMatrix::from_diagonal(&inv_mix) * pi;
    let h = pi.transpose() * scaled;
    Ok((&h + h.transpose()) * 0.5)
}

/// `L_F = n_π · π_max² / π_min`.
pub fn smoothness_bound(pm: &PrimitiveMatrix) -> f64 {
    pm.n_pi() as f64 * pm.pi_max() * pm.pi_max() / pm.pi_min()
}

/// `F(w) − ε H(w)`.
pub fn total_objective(inst: &ObjectiveInstance, w: &[f64]) -> Result<f64> {
    let f = eval_f(inst, w)?;
    Ok(f - inst.epsilon * entropy(w))
}

/// Regularized objective with a bias: `F(w) + ε KL(w || ŵ)`.
pub fn biased_objective(inst: &ObjectiveInstance, bias: &[f64], w: &[f64]) -> Result<f64> {
    check_dim(inst.n_pi(), bias.len())?;
    let f = eval_f(inst, w)?;
    Ok(f + inst.epsilon * crate::simplex::kl_divergence(w, bias))
}
