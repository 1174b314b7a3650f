//! Small reverse-mode differentiation engine.
//!
//! Only the operations the camera layer and the inference head need are
//! provided. Graphs are rebuilt for every batch: leaves are added with
//! [`Graph::param`] or [`Graph::constant`], ops append nodes, and
//! [`Graph::backward`] fills in gradients for every trainable leaf.

mod graph;
mod tensor;

pub use graph::{leaky_clip, leaky_clip_slope, Graph, Var};
pub use tensor::Tensor;
