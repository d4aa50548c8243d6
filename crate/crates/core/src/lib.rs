//! Hierarchical Tucker (HT) tensor layers and the HT-LSTM built on them.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense row-major tensors and pairwise contraction.
//! - [`tree`]: binary dimension trees with per-node hierarchical ranks.
//! - [`ht`]: the HT format itself (leaf frames, transfer tensors) and the
//!   tensorized linear layer that wraps it.
//! - [`layer`]: forward matvec and exact gradients for an HT layer, executed
//!   along a planned contraction path.
//! - [`lstm`]: the HT-LSTM cell, sequence model and backpropagation through time.
//! - [`train`]: loss, Adam, synthetic data and the training loop.
//! - [`complexity`]: parameter and flop accounting for HT, TT, TR and BT.

pub mod complexity;
pub mod error;
pub mod ht;
pub mod layer;
pub mod lstm;
pub mod plan;
pub mod tensor;
pub mod train;
pub mod tree;

pub use error::{Error, Result};
pub use ht::{HtLinearLayer, HtTensor, ScalePolicy};
pub use layer::LayerGradients;
pub use lstm::{CellState, GateLayout, LstmConfig, LstmGradients, LstmParams};
pub use tensor::DenseTensor;
pub use tree::{DimTree, InteriorSplit, NodeId};
