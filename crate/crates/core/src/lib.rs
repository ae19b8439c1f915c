//! Evolutionary structure attacks on graph neural networks.
//!
//! The crate bundles everything needed to run a gradient-free genetic search
//! over sparse edge-flip perturbations of a graph:
//!
//! - [`graph`]: CSR graphs, the upper-triangle pair index, perturbation
//!   application, budgets and the GRPH binary container.
//! - [`gnn`]: a from-scratch two-layer GCN / MLP with manual backprop and
//!   block-diagonal stacked inference.
//! - [`objectives`]: fitness functions (accuracy, cross-entropy, tanh-margin,
//!   conformal coverage / set size, certified ratio under sparse smoothing).
//! - [`ga`]: population, selection, crossover, mutation and local projection.
//! - [`attack`]: the attack drivers and their JSON-serializable results.
//! - [`synth`]: stochastic block model generator for self-contained runs.

pub mod attack;
pub mod error;
pub mod ga;
pub mod gnn;
pub mod graph;
pub mod objectives;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{AttackScope, Candidate, Graph};
