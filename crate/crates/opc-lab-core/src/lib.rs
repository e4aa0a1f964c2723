//! Core library for the OPC lab: analytic environments, transition models with
//! on-policy corrections, branched rollouts, policy-improvement diagnostics, and
//! norm-optimal iterative learning control.
//!
//! The crate is organized around plain data types (environments, trajectories,
//! models, policies) and pure functions over them. Everything is deterministic
//! given a seed; random draws go through explicitly passed [`rng`] streams.

pub mod analysis;
pub mod env;
pub mod error;
pub mod ilc;
pub mod io;
pub mod linalg;
pub mod models;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod scalar;

pub use env::{
    Averaging, InitState, LinearGaussianEnv, RewardSpec, StateBox, Trajectory, Transition,
};
pub use error::{LabError, LabResult};
pub use models::{
    EnsembleModel, LearnedLinearModel, MeanModel, OpcModel, ReplayBuffer, ReplayModel,
    TimeOffsetModel,
};
pub use policy::{GaussianLinearPolicy, LinearPolicy, Policy};
pub use rollout::{BranchedRolloutConfig, SimBuffer, SimEntry, SimModel};

/// State vector (dimension `n_s`).
pub type StateVec = nalgebra::DVector<f64>;
/// Action vector (dimension `n_a`).
pub type ActionVec = nalgebra::DVector<f64>;
/// Dense matrix alias used throughout.
pub type Mat = nalgebra::DMatrix<f64>;
