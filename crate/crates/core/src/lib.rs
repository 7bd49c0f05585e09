//! Node-wise graph incremental learning lab.
//!
//! Vertex batches arrive task by task and attach to a growing graph, which
//! shifts the neighbourhood (ego-graph) distribution of vertices seen earlier.
//! The crate provides:
//!
//! - [`graph`]: snapshots, ego graphs, induced views and stratified splits;
//! - [`csbm`]: a two-community contextual stochastic block model with a
//!   per-batch community schedule, plus a Monte-Carlo check of how the
//!   schedule moves old vertices' expected neighbourhood means;
//! - [`mmd`]: multi-bandwidth kernel and MMD² estimator with gradients;
//! - [`nn`]: a mean-aggregation GNN with per-task heads and manual backprop;
//! - [`train`]: bare / joint / replay trainers and the MMD structural-shift
//!   regularizer, plus the full task sequence driver;
//! - [`metrics`]: performance matrix, APS/AFS/FAP/FAF and forgetting-bound
//!   diagnostics;
//! - [`io`]: text bundle and run-artifact formats;
//! - [`cli`]: the `ngil` command-line front end.

pub mod cli;
pub mod csbm;
pub mod error;
pub mod graph;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod mmd;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use matrix::{Matrix, SampleMatrix};
