//! Three-level hierarchical Dirichlet process model for case-control
//! genotype data with environmental covariates: data ingestion, a
//! parallelized Gibbs sampler with retrospective atom generation and a
//! transformation-based hyperparameter move, calibrated Bayesian tests, and
//! synthetic data generation.

// Group/gene loops index several parallel arrays at once, nested genotype
// containers are spelled out where they appear, and `!(x > 0.0)` guards are
// deliberate NaN catches.
#![allow(
    clippy::needless_range_loop,
    clippy::type_complexity,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments
)]

pub mod atom;
pub mod config;
pub mod data;
pub mod error;
pub mod gibbs;
pub mod infer;
pub mod model;
pub mod registry;
pub mod report;
pub mod rng;
pub mod runner;
pub mod simgen;
pub mod state;
pub mod sticks;
pub mod tmcmc;
pub mod urns;

pub use error::{Error, Result};
