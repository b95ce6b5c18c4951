//! Truly sparse multilayer perceptron training.
//!
//! Weights are stored in compressed sparse row form and only existing
//! connections are ever materialized, updated, or communicated. On top of
//! the CSR kernels this crate provides:
//!
//! - Erdős–Rényi sparse initialization and SET prune/regrow topology
//!   evolution ([`topology`])
//! - the All-ReLU activation and neuron-importance pruning ([`nn`],
//!   [`topology`])
//! - sequential momentum-SGD training ([`train`])
//! - the two-phase WASAP parallel trainer with a parameter server and
//!   stale-update filtering, plus its synchronous WASSP variant ([`wasap`])
//! - dataset ingestion, standardization, and a Madelon-style synthetic
//!   classification generator ([`data`])
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `sparsetrain` binary for a thin command-line front end
//! (`gen-data`, `train`, `eval`, `inspect`).

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod dense;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod real;
pub mod seeds;
pub mod sparse;
pub mod topology;
pub mod train;
pub mod wasap;

pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use nn::{Activation, GradientUpdate, InitScheme, LossKind, NetworkConfig, SparseNetwork};
pub use optim::OptimizerState;
pub use real::Real;
pub use sparse::{SparseWeights, Support, SupportDelta};
pub use topology::EvolutionConfig;
pub use train::{EpochRecord, TrainOptions, TrainReport};
