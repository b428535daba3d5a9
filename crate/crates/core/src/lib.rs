//! Planning in finite-horizon (factored) MDPs treated as variational inference.
//!
//! The crate provides:
//!
//! - [`model`]: flat and factored MDP data model, validation, flattening,
//!   normalized-entropy measurement, reward normalization.
//! - [`mdpio`]: a bit-exact text format for factored MDPs and CSV result
//!   output.
//! - [`oracle`]: exact (exponential-cost, desk-scale) computation of the
//!   quantity of interest for marginal, marginal-with-uniform-prior, MAP,
//!   marginal-MAP and planning inference, plus policy evaluation and
//!   brute-force cross-checks.
//! - [`vbp`]: value belief propagation on factored MDPs, including the
//!   MaxEnt-regularized update families and their additive-reward limit.
//! - [`polytope`]: the additive-limit linear program over the local polytope,
//!   the concave upper bound solved by Frank-Wolfe, and determinization
//!   bounds for flat MDPs.
//! - [`domains`]: built-in problem sources (controlled-entropy synthetic
//!   generator, reactivity-avoidance environment).
//! - [`harness`]: episodic simulation with replanning and common random
//!   numbers, comparison sweeps, and aggregation.

pub mod domains;
pub mod harness;
pub mod mdpio;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod polytope;
pub mod randgen;
pub mod rng;
pub mod vbp;
