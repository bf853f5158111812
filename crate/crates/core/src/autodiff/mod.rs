//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation is recorded on an append-only [`Graph`]. A backward pass
//! does not produce bare numbers: it records the vector-Jacobian products as
//! ordinary nodes on the same graph. The gradient of a scalar field with
//! respect to its input is therefore a node like any other, and a loss built
//! from it can be differentiated with respect to parameters. This is how the
//! potential drift `-∇_z U` enters the training loss.
//!
//! Population losses that are far cheaper to differentiate by hand enter the
//! graph through [`Graph::custom_scalar`]; their gradients are first-order
//! only.
//!
//! Shapes are checked eagerly and a mismatch panics with the operation name,
//! in the manner of `ndarray`.

mod backward;
mod graph;

use ndarray::Array2;
use thiserror::Error;

pub use graph::{Graph, NodeId};
pub(crate) use graph::softplus_scalar;

pub type Mat = Array2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("gradient requested of a non-scalar node with shape {shape:?}")]
    NonScalarOutput { shape: (usize, usize) },
    #[error("non-finite gradient produced while differentiating node {node} (`{op}`)")]
    NonFinite { node: usize, op: &'static str },
    #[error("operation `{op}` (node {node}) does not support differentiating its gradient")]
    Unsupported { op: &'static str, node: usize },
}

/// `∇_z f(z)` for a scalar function built on a fresh graph.
pub fn grad_wrt_input<F>(f: F, z: &[f64]) -> Result<Vec<f64>, DiffError>
where
    F: FnOnce(&mut Graph, NodeId) -> NodeId,
{
    let mut g = Graph::new();
    let zn = g.variable(Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row vector"));
    let out = f(&mut g, zn);
    let grads = g.gradient_values(out, &[zn])?;
    Ok(grads[0].iter().copied().collect())
}

/// Gradients of `loss` with respect to every parameter leaf, in order.
pub fn grad_wrt_params(
    graph: &mut Graph,
    loss: NodeId,
    params: &[NodeId],
) -> Result<Vec<Mat>, DiffError> {
    graph.gradient_values(loss, params)
}
