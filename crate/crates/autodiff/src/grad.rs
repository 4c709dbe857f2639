//! Reverse-mode differentiation.
//!
//! Adjoints are recorded as ordinary nodes of the same graph, which makes
//! every gradient differentiable again (used for second-order terms).

use crate::error::{GraphError, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// Adjoint nodes `∂root/∂leaf` for each leaf in `wrt`.
    ///
    /// The returned nodes are evaluated. A leaf the root does not depend on
    /// gets a zero constant.
    pub fn grad_nodes(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        let shape = self.check(root)?.shape.clone();
        if shape.iter().product::<usize>() != 1 {
            return Err(GraphError::NonScalarRoot(shape));
        }
        for &leaf in wrt {
            if !matches!(self.check(leaf)?.op, Op::Leaf { .. }) {
                return Err(GraphError::NotALeaf(leaf.0));
            }
        }
        self.evaluate(root)?;

        let n = root.0 + 1;
        let mut relevant = vec![false; n];
        for &leaf in wrt {
            if leaf.0 < n {
                relevant[leaf.0] = true;
            }
        }
        for i in 0..n {
            let node = &self.nodes[i];
            if !relevant[i] && !node.op.is_mask() && node.inputs.iter().any(|p| relevant[p.0]) {
                relevant[i] = true;
            }
        }
        let mut reaches_root = vec![false; n];
        reaches_root[root.0] = true;
        for i in (0..n).rev() {
            if reaches_root[i] {
                for p in &self.nodes[i].inputs {
                    reaches_root[p.0] = true;
                }
            }
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; n];
        if relevant[root.0] {
            adjoint[root.0] = Some(self.constant(Tensor::full(&shape, T::one())));
        }
        for i in (0..n).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !(relevant[i] && reaches_root[i]) {
                continue;
            }
            let inputs = self.nodes[i].inputs.clone();
            for (pos, &p) in inputs.iter().enumerate() {
                if !relevant[p.0] {
                    continue;
                }
                let contribution = self.vjp(NodeId(i), pos, g)?;
                adjoint[p.0] = Some(match adjoint[p.0] {
                    Some(acc) => self.add(acc, contribution)?,
                    None => contribution,
                });
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for &leaf in wrt {
            let node = match adjoint.get(leaf.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let zeros = Tensor::zeros(&self.nodes[leaf.0].shape.clone());
                    self.constant(zeros)
                }
            };
            self.evaluate(node)?;
            out.push(node);
        }
        Ok(out)
    }

    /// Gradient values `∂root/∂leaf`.
    pub fn backward(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor<T>>> {
        let nodes = self.grad_nodes(root, wrt)?;
        Ok(nodes
            .into_iter()
            .map(|g| self.nodes[g.0].value.clone().expect("evaluated"))
            .collect())
    }

    /// `∂/∂outer Σ(∂root/∂inner)`: the derivative of the summed first-order
    /// gradient with respect to the `outer` leaves.
    pub fn grad_of_grad(
        &mut self,
        root: NodeId,
        inner: NodeId,
        outer: &[NodeId],
    ) -> Result<Vec<Tensor<T>>> {
        let g = self.grad_nodes(root, &[inner])?[0];
        let s = self.sum(g)?;
        self.backward(s, outer)
    }

    /// Contribution of adjoint `g` of `node` to its input at `pos`.
    fn vjp(&mut self, node: NodeId, pos: usize, g: NodeId) -> Result<NodeId> {
        let op = self.nodes[node.0].op.clone();
        let inputs = self.nodes[node.0].inputs.clone();
        let x = inputs[0];
        let x_shape = self.nodes[x.0].shape.clone();
        let input_shape = self.nodes[inputs[pos].0].shape.clone();
        match op {
            Op::Leaf { .. } | Op::ReluMask | Op::ClampMask { .. } | Op::ArgMinMask(_) => {
                unreachable!("no inputs to differentiate")
            }
            Op::MatMul { ta, tb } => {
                let (a, b) = (inputs[0], inputs[1]);
                match (pos, ta, tb) {
                    (0, false, _) => self.matmul_t(g, b, false, !tb),
                    (0, true, _) => self.matmul_t(b, g, tb, true),
                    (_, _, false) => self.matmul_t(a, g, !ta, false),
                    (_, _, true) => self.matmul_t(g, a, true, ta),
                }
            }
            Op::Add => self.sum_to(g, &input_shape),
            Op::Sub => {
                let d = if pos == 0 { g } else { self.neg(g)? };
                self.sum_to(d, &input_shape)
            }
            Op::Mul => {
                let other = inputs[1 - pos];
                let d = self.mul(g, other)?;
                self.sum_to(d, &input_shape)
            }
            Op::Div => {
                let b = inputs[1];
                if pos == 0 {
                    let d = self.div(g, b)?;
                    self.sum_to(d, &input_shape)
                } else {
                    // d(a/b)/db = -(a/b)/b
                    let gy = self.mul(g, node)?;
                    let q = self.div(gy, b)?;
                    let d = self.neg(q)?;
                    self.sum_to(d, &input_shape)
                }
            }
            Op::Neg => self.neg(g),
            Op::Scale(c) => self.scale(g, c),
            Op::AddScalar(_) => Ok(g),
            Op::Tanh => {
                let y2 = self.square(node)?;
                let neg = self.neg(y2)?;
                let slope = self.add_scalar(neg, 1.0)?;
                self.mul(g, slope)
            }
            Op::Relu => {
                let mask = self.relu_mask(x)?;
                self.mul(g, mask)
            }
            Op::Exp => self.mul(g, node),
            Op::Log => self.div(g, x),
            Op::Square => {
                let twice = self.scale(x, 2.0)?;
                self.mul(g, twice)
            }
            Op::Sqrt => {
                let half = self.scale(g, 0.5)?;
                self.div(half, node)
            }
            Op::Clamp { lo, hi } => {
                let mask = self.clamp_mask(x, lo, hi)?;
                self.mul(g, mask)
            }
            Op::Sum | Op::SumAxis(_) => self.broadcast_to(g, &x_shape),
            Op::Mean => {
                let n = x_shape.iter().product::<usize>() as f64;
                let b = self.broadcast_to(g, &x_shape)?;
                self.scale(b, 1.0 / n)
            }
            Op::MeanAxis(axis) => {
                let n = x_shape[axis] as f64;
                let b = self.broadcast_to(g, &x_shape)?;
                self.scale(b, 1.0 / n)
            }
            Op::BroadcastTo => self.sum_to(g, &x_shape),
            Op::SumTo => self.broadcast_to(g, &x_shape),
            Op::SliceCols { start, .. } => self.pad_cols(g, start, x_shape[1]),
            Op::PadCols { start } => self.slice_cols(g, start, x_shape[1]),
            Op::Concat => {
                let offset: usize = inputs[..pos]
                    .iter()
                    .map(|p| self.nodes[p.0].shape[1])
                    .sum();
                self.slice_cols(g, offset, input_shape[1])
            }
            Op::MinAxis(axis) => {
                let mask = self.argmin_mask(x, axis)?;
                let b = self.broadcast_to(g, &x_shape)?;
                self.mul(b, mask)
            }
            Op::GatherRows(idx) => self.scatter_add_rows(g, idx, x_shape[0]),
            Op::ScatterAddRows(idx) => self.gather_rows(g, idx),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        assert_eq!(g.backward(y, &[x]).unwrap()[0].item(), 6.0);
    }

    #[test]
    fn tanh_derivative_at_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::scalar(0.0));
        let y = g.tanh(x).unwrap();
        assert_eq!(g.backward(y, &[x]).unwrap()[0].item(), 1.0);
    }

    #[test]
    fn cube_second_derivative() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::scalar(2.0));
        let x2 = g.square(x).unwrap();
        let x3 = g.mul(x2, x).unwrap();
        assert_eq!(g.grad_of_grad(x3, x, &[x]).unwrap()[0].item(), 12.0);
    }

    #[test]
    fn mixed_second_derivative() {
        let mut g = Graph::<f64>::new();
        let w = g.variable(Tensor::scalar(0.7));
        let x = g.variable(Tensor::scalar(-1.3));
        let y = g.mul(w, x).unwrap();
        assert_eq!(g.grad_of_grad(y, x, &[w]).unwrap()[0].item(), 1.0);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::matrix(1, 3, vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x).unwrap();
        let s = g.sum(y).unwrap();
        assert_eq!(g.backward(s, &[x]).unwrap()[0].data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn clamp_gradient_inside_only() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::matrix(1, 4, vec![-2.0, -1.0, 0.5, 3.0]).unwrap());
        let y = g.clamp(x, -1.0, 2.0).unwrap();
        let s = g.sum(y).unwrap();
        assert_eq!(g.backward(s, &[x]).unwrap()[0].data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn min_gradient_goes_to_first_minimum() {
        let mut g = Graph::<f64>::new();
        let q = g.variable(Tensor::matrix(2, 3, vec![1.0, 1.0, 2.0, 5.0, 4.0, 3.0]).unwrap());
        let m = g.min_axis(q, 1).unwrap();
        let s = g.sum(m).unwrap();
        assert_eq!(
            g.backward(s, &[q]).unwrap()[0].data(),
            &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::scalar(1.0));
        let unused = g.variable(Tensor::zeros(&[2, 2]));
        let y = g.exp(x).unwrap();
        let grads = g.backward(y, &[x, unused]).unwrap();
        assert_eq!(grads[0].item(), 1.0_f64.exp());
        assert_eq!(grads[1], Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.variable(Tensor::ones(&[2, 2]));
        let y = g.tanh(x).unwrap();
        assert_eq!(
            g.backward(y, &[x]).unwrap_err(),
            GraphError::NonScalarRoot(vec![2, 2])
        );
    }

    #[test]
    fn foreign_or_non_leaf_wrt_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.variable(Tensor::ones(&[1, 1]));
        let y = g.exp(x).unwrap();
        assert_eq!(g.backward(y, &[y]).unwrap_err(), GraphError::NotALeaf(y.index()));
        assert_eq!(
            g.backward(y, &[NodeId(99)]).unwrap_err(),
            GraphError::UnknownNode(99)
        );
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = x·w + x·x with w constant: df/dx = w + 2x.
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::scalar(1.5));
        let w = g.constant(Tensor::scalar(4.0));
        let a = g.mul(x, w).unwrap();
        let b = g.mul(x, x).unwrap();
        let f = g.add(a, b).unwrap();
        assert_eq!(g.backward(f, &[x]).unwrap()[0].item(), 7.0);
    }
}
