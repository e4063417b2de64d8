//! Real-time ADMM model predictive control with closed-loop guarantees.
//!
//! The library condenses a linear MPC problem into a box-constrained QP,
//! runs a fixed number of ADMM iterations per sampling instant, and
//! analyzes the resulting closed loop through an augmented state that
//! carries the warm-started iterates: stability of the linear-regime
//! matrix, invariant sets where the analysis is exact, cost-to-go bounds,
//! and a benchmark pipeline comparing warm-start strategies.

pub mod admm;
pub mod analysis;
pub mod augmented;
pub mod error;
pub mod fixture;
pub mod mpc;
pub mod numerics;
pub mod sets;

pub use admm::{AdmmKernel, AdmmParams, AdmmState, GainSequence, KktFactor};
pub use augmented::{AugmentedModel, InitRule, UpdateRule};
pub use error::{Error, Result};
pub use mpc::{BoxSet, CondensedQp, LinearSystem, MpcProblem, MpcSpec};
