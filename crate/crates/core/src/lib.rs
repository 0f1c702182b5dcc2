//! Trainable network pruning with learnable per-layer thresholds.
//!
//! Every prunable weight group `W` of a network is replaced by
//! `theta(W; t)`, a smooth shrinkage map with a learnable threshold `t`
//! ([`pruning_math`]). Weights and thresholds are trained jointly
//! ([`training`]), then weights whose mapped magnitude falls under a small
//! cutoff are dropped and survivors are stored in CSR form
//! ([`export`]). [`data_io`] reads MNIST and persists models.

pub mod autodiff;
pub mod data_io;
mod error;
pub mod export;
pub mod gradcheck;
pub mod network;
pub mod pruning_math;
pub mod tensor;
pub mod training;

pub use error::{Error, FormatError, Result};
pub use export::{prune, SparseLayer, SparseModel};
pub use network::{LayerKind, LayerSpec, Network, NetworkSpec, ThresholdGranularity};
pub use pruning_math::PruneParams;
pub use tensor::{DType, Real, Tensor};
pub use training::{train, TrainConfig, TrainReport};
