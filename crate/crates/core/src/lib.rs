//! Gated mixtures of primitive policies: the convex objective over simplex
//! weights, its softmax gradient flow, a rate-coded network realization,
//! brute-force oracles, and two application models (flocking and a
//! two-armed bandit).

pub mod error;
pub mod io;
pub mod ode;
pub mod simplex;
pub mod objective;
pub mod gateflow;
pub mod gatenet;
pub mod oracle;
pub mod instances;
pub mod boids;
pub mod bandit;
pub mod verify;

pub use error::{Error, Result};
pub use gateflow::{
    euler_step_bounds, flow_rhs, flow_rhs_biased, integrate, solve_equilibrium, BiasVector,
    Equilibrium, FlowConfig, FlowTrajectory,
};
pub use objective::{CostVector, ObjectiveInstance, PrimitiveMatrix};
pub use ode::Integrator;
pub use simplex::{softmax, GaussianSpec, SimplexVector};
