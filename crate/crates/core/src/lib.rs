//! Doubly robust interval estimation for the value of the greedy policy
//! learned online by two-armed contextual bandits.
//!
//! The crate provides the bandit itself (online ridge arms with UCB, Thompson
//! sampling or ε-greedy selection and an eigenvalue clipping guard), the
//! exploration-probability model, the doubly robust estimator with its
//! variance and Wald interval, data-generating environments, and a Monte Carlo
//! harness.

// NaN-rejecting `!(x > 0.0)` checks and index loops over small dense
// matrices are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod arm;
pub mod env;
pub mod error;
pub mod estimator;
pub mod exploration;
pub mod harness;
pub mod linalg;
pub mod policy;

pub use arm::{ArmState, FeatureMap, OutcomeModel};
pub use env::{DatasetEnv, Environment, SyntheticEnv};
pub use error::{DreamError, Result};
pub use estimator::{InteractionRecord, ValueReport};
pub use exploration::{ExplorationModel, KappaKind};
pub use harness::{ExperimentConfig, MethodSpec, MetricsRow, MonteCarloResult};
pub use policy::{Action, Algorithm, PolicySpec, Schedule};
