//! Iterative magnitude pruning with flow-based stopping criteria.
//!
//! The crate bundles a small deterministic training engine (dense and
//! convolutional layers with masked parameters), sparsity metrics built on
//! L_p quasi-norms, information/gradient flow snapshots, and the outer
//! prune/retrain loop that ties them together. Experiments are driven by the
//! companion `incop` CLI.
//!
//! With the default `parallel` feature, batch loops run on rayon; the
//! sequential fallback produces bit-identical numbers (see [`kernels`]).

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod imp;
pub mod kernels;
pub mod layer;
pub mod loss;
pub mod network;
pub mod sparsity;
pub mod tensor;

pub use error::{Error, Result};
pub use layer::{cnn_specs, mlp_specs, Activation, LayerKind, LayerSpec};
pub use network::{build_network, Network, SgdConfig, WeightSnapshot};
pub use tensor::Tensor;
