//! Drone-swarm traffic patrolling: grid world, synthetic traffic fields,
//! idleness bookkeeping, a shared Double DQN learner with a coordinated
//! joint-action solver, baseline policies and an evaluation harness.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix it to `f64`, which is what the harness and CLI use.

pub mod environment;
pub mod error;
pub mod gridmap;
pub mod harness;
pub mod idleness;
pub mod learner;
pub mod policies;
pub mod qnet;
pub mod scalar;
pub mod statereward;

pub use environment::{DemandEnv, Environment, SyntheticEnv, TrafficField};
pub use error::{PatrolError, Result};
pub use gridmap::{Action, ActionMask, CellIndex, GridSpec};
pub use policies::PolicyKind;
pub use scalar::Scalar;

pub type Real = f64;
pub type QNet = qnet::QParams<f64>;
pub type QNet32 = qnet::QParams<f32>;
pub type Idleness = idleness::IdlenessMap<f64>;
pub type State = statereward::StateVector<f64>;
pub type Synthetic = environment::SyntheticEnv<f64>;
pub type Demand = environment::DemandEnv<f64>;
pub type Env = environment::Environment<f64>;
pub type Buffer = learner::ReplayBuffer<f64>;
pub type World = learner::WorldState<f64>;
