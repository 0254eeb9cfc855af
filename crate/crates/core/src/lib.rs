//! Metareasoning for stochastic shortest path planning.
//!
//! The crate pairs an anytime BRTDP planner with an agent that decides, at
//! every world step, whether to spend a step thinking (the `NOP` action) or to
//! act on the planner's current recommendation.
//!
//! - [`mdp`]: SSP MDPs and exact solvers.
//! - [`gridworld`]: the 100x100 wind-grid benchmark domains.
//! - [`brtdp`]: the bounded planner and its drop history.
//! - [`metareasoner`]: value-of-computation estimates and the think/act rule.
//! - [`baselines`]: the comparison agents.
//! - [`meta_exact`]: exact meta-level MDPs for small instances.
//! - [`harness`]: episodes, experiments, sweeps and CSV output.

pub mod baselines;
pub mod brtdp;
pub mod gridworld;
pub mod harness;
pub mod mdp;
pub mod meta_exact;
pub mod metareasoner;

pub use mdp::{BaseMdp, Policy, ValueFn};
