//! Dense reverse-mode automatic differentiation for small MLP workloads.
//!
//! A [`Graph`] records rank-2 tensor operations; [`Graph::backward`] returns
//! gradients of a scalar root with respect to leaves. Because adjoints are
//! recorded as graph nodes, gradients can be differentiated again
//! ([`Graph::grad_of_grad`], [`Graph::grad_nodes`]).
//!
//! ```
//! use lbsac_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.variable(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let dx = g.backward(y, &[x]).unwrap();
//! assert_eq!(dx[0].item(), 6.0);
//! ```

mod check;
mod error;
mod grad;
mod graph;
mod kernels;
mod scalar;
mod tensor;

pub use check::{finite_diff_check, FdOptions, FdReport};
pub use error::{GraphError, Result};
pub use graph::{Graph, NodeId, Op};
pub use scalar::Scalar;
pub use tensor::Tensor;
