//! Decentralized gradient-projection voltage control on radial distribution
//! networks.
//!
//! The crate covers the linearized network model, the per-bus controller,
//! stochastic nominal-voltage dynamics, asynchronous update schedules, an
//! exact box-QP oracle with tracking bounds, and a Monte-Carlo harness that
//! ties them together from a JSON scenario.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod scenario;
pub mod scheduler;

pub use control::{gp_step, ControllerConfig, VarLimits};
pub use dynamics::{Ar1Params, Ar1Process, LimitsProfile};
pub use error::{Error, Result};
pub use harness::{EnsembleResult, Physics, RunMode, StepRecord};
pub use network::{build_matrices, Line, NetworkMatrices, RadialNetwork, Scaling};
pub use oracle::{BetaPrime, BoundParams, BoxQpSolver, QpInstance};
pub use scenario::{PreparedScenario, Scenario};
pub use scheduler::Schedule;

pub use nalgebra::{DMatrix, DVector};
