//! Replay-free continual learning with per-task filter expansion.
//!
//! Each task adds a group of filters to every conv layer, a batch norm and a
//! classification head; everything belonging to earlier tasks stays frozen.
//! At test time the task of a sample is predicted from the gradient norms it
//! induces in every task view.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod growth;
pub mod harness;
pub mod inference;
pub mod network;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{DataError, Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = network::ExpandableNetwork<f32>;
pub type Network64 = network::ExpandableNetwork<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type TaskDataset32 = data::TaskDataset<f32>;
pub type TaskDataset64 = data::TaskDataset<f64>;
