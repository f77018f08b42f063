//! JSON config files for each command. Every struct serializes back to the
//! resolved form written next to the outputs.

use std::path::{Path, PathBuf};

use gatemod::bandit::{Baseline, ExperimentConfig, Model};
use gatemod::gatenet::Timescales;
use gatemod::instances::{random_instance, stream_rng};
use gatemod::{CostVector, FlowConfig, ObjectiveInstance, PrimitiveMatrix};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn default_pi_floor() -> f64 {
    gatemod::objective::DEFAULT_PI_FLOOR
}

/// Where the primitive matrix comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimitiveSource {
    /// Row-major `d_u × n_π` probabilities.
    Rows(Vec<Vec<f64>>),
    /// Random columns drawn from the run seed; the cost is drawn as well
    /// unless given explicitly.
    Random {
        d_u: usize,
        n_pi: usize,
        #[serde(default = "default_pi_floor")]
        pi_floor: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub primitives: PrimitiveSource,
    /// Per-action cost; zeros when omitted with explicit rows.
    #[serde(default)]
    pub cost: Option<Vec<f64>>,
    pub epsilon: f64,
}

impl InstanceConfig {
    pub fn build(&self, seed: u64) -> Result<ObjectiveInstance, CliError> {
        let inst = match &self.primitives {
            PrimitiveSource::Rows(rows) => {
                let pm = PrimitiveMatrix::from_rows(rows)?;
                let cost = match &self.cost {
                    Some(c) => CostVector::new(c.clone())?,
                    None => CostVector::zeros(pm.d_u()),
                };
                ObjectiveInstance::new(pm, cost, self.epsilon)?
            }
            PrimitiveSource::Random { d_u, n_pi, pi_floor } => {
                if *d_u == 0 || *n_pi == 0 {
                    return Err(CliError::Config("d_u and n_pi must be positive".into()));
                }
                let mut rng = stream_rng(seed, 0, 0);
                let inst = random_instance(&mut rng, *d_u, *n_pi, self.epsilon, *pi_floor)?;
                match &self.cost {
                    Some(c) => inst.with_cost(CostVector::new(c.clone())?)?,
                    None => inst,
                }
            }
        };
        Ok(inst)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveFile {
    pub instance: InstanceConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowFile {
    pub instance: InstanceConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    /// Start point; uniform when omitted.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    /// Positive bias weights for the biased flow.
    #[serde(default)]
    pub bias: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_net_horizon() -> f64 {
    10.0
}
fn default_net_record() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetFile {
    pub instance: InstanceConfig,
    #[serde(default)]
    pub timescales: Timescales,
    #[serde(default = "default_net_horizon")]
    pub horizon: f64,
    /// Defaults to `τ_g/20`.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_net_record")]
    pub record_every: usize,
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

/// Model and parameters used to synthesize choices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub model: Model,
    pub params: Vec<f64>,
}

fn default_fit() -> Vec<Model> {
    vec![
        Model::Hybrid,
        Model::Baseline { baseline: Baseline::Ucb },
        Model::Baseline { baseline: Baseline::Thompson },
        Model::Baseline { baseline: Baseline::Value },
        Model::GateMod { epsilon: 0.01 },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditFile {
    pub experiment: ExperimentConfig,
    /// Synthesize data from this model; exclusive with `data`.
    #[serde(default)]
    pub generator: Option<Generator>,
    /// CSV with `subject,block,trial,choice,reward`.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default = "default_fit")]
    pub fit: Vec<Model>,
    #[serde(default)]
    pub seed: u64,
}
