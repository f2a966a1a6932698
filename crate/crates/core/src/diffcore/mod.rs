//! Dense `f64` tensors, a reverse-mode tape, layer primitives, Adam and a
//! checkpoint container.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod nn;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Container;
pub use graph::{Bound, Gradients, Graph, Var};
pub use nn::{dense_forward, recurrent_step, Activation, LstmState};
pub use params::ParamTree;
pub use tensor::Tensor;

/// Row-wise softmax of a constant matrix, outside any graph.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let y = g.softmax_rows(x);
    g.value(y).clone()
}

/// Diagonal Gaussian log density per row.
pub fn gaussian_log_prob(actions: &Tensor, mean: &Tensor, log_std: &Tensor) -> Vec<f64> {
    graph::gaussian_log_prob_rows(actions, mean, log_std)
}
