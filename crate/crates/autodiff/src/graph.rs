//! Computation graph: node arena, builders and lazy forward evaluation.

use std::sync::Arc;

use crate::error::{GraphError, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kind of a node. Operand node ids live in the node's input list.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf { trainable: bool },
    MatMul { ta: bool, tb: bool },
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Tanh,
    Relu,
    Exp,
    Log,
    Square,
    Sqrt,
    Clamp { lo: f64, hi: f64 },
    Sum,
    Mean,
    SumAxis(usize),
    MeanAxis(usize),
    BroadcastTo,
    SumTo,
    SliceCols { start: usize, len: usize },
    PadCols { start: usize },
    Concat,
    MinAxis(usize),
    GatherRows(Arc<[usize]>),
    ScatterAddRows(Arc<[usize]>),
    /// 1 where the input is strictly positive. Zero derivative.
    ReluMask,
    /// 1 strictly inside `(lo, hi)`. Zero derivative.
    ClampMask { lo: f64, hi: f64 },
    /// One-hot position of the minimum along an axis. Zero derivative.
    ArgMinMask(usize),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Clamp { .. } => "clamp",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumAxis(_) => "sum_axis",
            Op::MeanAxis(_) => "mean_axis",
            Op::BroadcastTo => "broadcast",
            Op::SumTo => "sum_to",
            Op::SliceCols { .. } => "slice",
            Op::PadCols { .. } => "pad",
            Op::Concat => "concat",
            Op::MinAxis(_) => "min_axis",
            Op::GatherRows(_) => "gather",
            Op::ScatterAddRows(_) => "scatter_add",
            Op::ReluMask => "relu_mask",
            Op::ClampMask { .. } => "clamp_mask",
            Op::ArgMinMask(_) => "argmin_mask",
        }
    }

    /// Ops whose output is locally constant in their inputs.
    pub(crate) fn is_mask(&self) -> bool {
        matches!(self, Op::ReluMask | Op::ClampMask { .. } | Op::ArgMinMask(_))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node<T> {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<NodeId>,
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Option<Tensor<T>>,
}

/// Arena of nodes in topological (insertion) order.
///
/// Values are computed lazily by [`Graph::evaluate`] and cached until a leaf
/// they depend on is rebound. Backward passes append their adjoint
/// computations to the same arena, so gradients are themselves
/// differentiable.
#[derive(Clone, Debug, Default)]
pub struct Graph<T = f32> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn check(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes.get(id.0).ok_or(GraphError::UnknownNode(id.0))
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Cached value, if the node has been evaluated.
    pub fn value(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes.get(id.0).and_then(|n| n.value.as_ref())
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            value: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor<T>, trainable: bool) -> NodeId {
        assert_eq!(value.shape().len(), 2, "graph tensors are rank 2");
        let shape = value.shape().to_vec();
        self.nodes.push(Node {
            op: Op::Leaf { trainable },
            inputs: Vec::new(),
            shape,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that gradients may be requested for.
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, true)
    }

    /// Leaf held fixed (data, frozen parameters, sampled noise).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(T::from_f64(value)))
    }

    /// Rebind a leaf and invalidate every cached value downstream of it.
    pub fn bind(&mut self, id: NodeId, value: Tensor<T>) -> Result<()> {
        let node = self.check(id)?;
        if !matches!(node.op, Op::Leaf { .. }) {
            return Err(GraphError::NotALeaf(id.0));
        }
        if node.shape != value.shape() {
            return Err(GraphError::ShapeMismatch {
                op: "bind",
                lhs: node.shape.clone(),
                rhs: value.shape().to_vec(),
            });
        }
        self.nodes[id.0].value = Some(value);
        let mut dirty = vec![false; self.nodes.len()];
        dirty[id.0] = true;
        for i in id.0 + 1..self.nodes.len() {
            if self.nodes[i].inputs.iter().any(|p| dirty[p.0]) {
                dirty[i] = true;
                self.nodes[i].value = None;
            }
        }
        Ok(())
    }

    /// Forward value of `root`, computing any missing ancestors.
    pub fn evaluate(&mut self, root: NodeId) -> Result<&Tensor<T>> {
        self.check(root)?;
        if self.nodes[root.0].value.is_none() {
            let mut needed = vec![false; root.0 + 1];
            needed[root.0] = true;
            for i in (0..=root.0).rev() {
                if needed[i] && self.nodes[i].value.is_none() {
                    for p in &self.nodes[i].inputs {
                        needed[p.0] = true;
                    }
                }
            }
            for (i, &need) in needed.iter().enumerate() {
                if need && self.nodes[i].value.is_none() {
                    let v = self.compute(i);
                    self.nodes[i].value = Some(v);
                }
            }
        }
        Ok(self.nodes[root.0].value.as_ref().expect("evaluated"))
    }

    /// Evaluate and take a copy of the value.
    pub fn eval_cloned(&mut self, root: NodeId) -> Result<Tensor<T>> {
        self.evaluate(root).cloned()
    }

    fn compute(&self, i: usize) -> Tensor<T> {
        let node = &self.nodes[i];
        let arg = |k: usize| -> &Tensor<T> {
            self.nodes[node.inputs[k].0]
                .value
                .as_ref()
                .expect("inputs evaluated before use")
        };
        let shape = &node.shape;
        match &node.op {
            Op::Leaf { .. } => unreachable!("leaves always hold a value"),
            Op::MatMul { ta, tb } => kernels::matmul(arg(0), arg(1), *ta, *tb),
            Op::Add => kernels::binary(arg(0), arg(1), shape, |x, y| x + y),
            Op::Sub => kernels::binary(arg(0), arg(1), shape, |x, y| x - y),
            Op::Mul => kernels::binary(arg(0), arg(1), shape, |x, y| x * y),
            Op::Div => kernels::binary(arg(0), arg(1), shape, |x, y| x / y),
            Op::Neg => arg(0).map(|x| -x),
            Op::Scale(c) => {
                let c = T::from_f64(*c);
                arg(0).map(|x| x * c)
            }
            Op::AddScalar(c) => {
                let c = T::from_f64(*c);
                arg(0).map(|x| x + c)
            }
            Op::Tanh => arg(0).map(|x| x.tanh()),
            Op::Relu => arg(0).map(|x| if x <= T::zero() { T::zero() } else { x }),
            Op::Exp => arg(0).map(|x| x.exp()),
            Op::Log => arg(0).map(|x| x.ln()),
            Op::Square => arg(0).map(|x| x * x),
            Op::Sqrt => arg(0).map(|x| x.sqrt()),
            Op::Clamp { lo, hi } => {
                let (lo, hi) = (T::from_f64(*lo), T::from_f64(*hi));
                arg(0).map(|x| x.max(lo).min(hi))
            }
            Op::Sum => Tensor::scalar(arg(0).sum()),
            Op::Mean => Tensor::scalar(arg(0).mean()),
            Op::SumAxis(axis) => kernels::sum_axis(arg(0), *axis),
            Op::MeanAxis(axis) => {
                let x = arg(0);
                let n = T::from_f64(x.shape()[*axis] as f64);
                kernels::sum_axis(x, *axis).map(|v| v / n)
            }
            Op::BroadcastTo => kernels::broadcast_to(arg(0), shape),
            Op::SumTo => kernels::sum_to(arg(0), shape),
            Op::SliceCols { start, len } => kernels::slice_cols(arg(0), *start, *len),
            Op::PadCols { start } => kernels::pad_cols(arg(0), *start, shape[1]),
            Op::Concat => {
                let parts: Vec<&Tensor<T>> = (0..node.inputs.len()).map(arg).collect();
                kernels::concat_cols(&parts)
            }
            Op::MinAxis(axis) => kernels::min_axis(arg(0), *axis),
            Op::GatherRows(idx) => kernels::gather_rows(arg(0), idx),
            Op::ScatterAddRows(idx) => kernels::scatter_add_rows(arg(0), idx, shape[0]),
            Op::ReluMask => arg(0).map(|x| if x > T::zero() { T::one() } else { T::zero() }),
            Op::ClampMask { lo, hi } => {
                let (lo, hi) = (T::from_f64(*lo), T::from_f64(*hi));
                arg(0).map(|x| if x > lo && x < hi { T::one() } else { T::zero() })
            }
            Op::ArgMinMask(axis) => kernels::argmin_mask(arg(0), *axis),
        }
    }

    fn unary(&mut self, op: Op, x: NodeId) -> Result<NodeId> {
        let shape = self.check(x)?.shape.clone();
        Ok(self.push(op, vec![x], shape))
    }

    fn elementwise(&mut self, op: Op, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.check(a)?.shape.clone();
        let sb = self.check(b)?.shape.clone();
        let shape = kernels::broadcast_shape(&sa, &sb).ok_or_else(|| GraphError::ShapeMismatch {
            op: op.name(),
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        Ok(self.push(op, vec![a, b], shape))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let sa = self.check(a)?.shape.clone();
        let sb = self.check(b)?.shape.clone();
        let (m, ka) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (kb, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if ka != kb {
            return Err(GraphError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(self.push(Op::MatMul { ta, tb }, vec![a, b], vec![m, n]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Op::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(Op::Div, a, b)
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Neg, x)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(Op::Scale(c), x)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(Op::AddScalar(c), x)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Tanh, x)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Relu, x)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Exp, x)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Log, x)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Square, x)
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Sqrt, x)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if !(lo <= hi) {
            return Err(GraphError::InvalidArgument {
                op: "clamp",
                shape: self.check(x)?.shape.clone(),
                reason: format!("empty range [{lo}, {hi}]"),
            });
        }
        self.unary(Op::Clamp { lo, hi }, x)
    }

    /// Sum of all elements, as a `[1, 1]` scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        Ok(self.push(Op::Sum, vec![x], vec![1, 1]))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        Ok(self.push(Op::Mean, vec![x], vec![1, 1]))
    }

    fn reduced_shape(&self, x: NodeId, axis: usize, op: &'static str) -> Result<Vec<usize>> {
        let mut shape = self.check(x)?.shape.clone();
        if axis > 1 {
            return Err(GraphError::InvalidArgument {
                op,
                shape,
                reason: format!("axis {axis} out of range"),
            });
        }
        shape[axis] = 1;
        Ok(shape)
    }

    /// Sum along `axis`, keeping it as a size-1 dimension.
    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.reduced_shape(x, axis, "sum_axis")?;
        Ok(self.push(Op::SumAxis(axis), vec![x], shape))
    }

    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.reduced_shape(x, axis, "mean_axis")?;
        Ok(self.push(Op::MeanAxis(axis), vec![x], shape))
    }

    /// Minimum along `axis`. The gradient flows to the first minimising entry.
    pub fn min_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.reduced_shape(x, axis, "min_axis")?;
        Ok(self.push(Op::MinAxis(axis), vec![x], shape))
    }

    pub fn broadcast_to(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let from = self.check(x)?.shape.clone();
        if from == shape {
            return Ok(x);
        }
        if !kernels::broadcastable_to(&from, shape) {
            return Err(GraphError::ShapeMismatch {
                op: "broadcast",
                lhs: from,
                rhs: shape.to_vec(),
            });
        }
        Ok(self.push(Op::BroadcastTo, vec![x], shape.to_vec()))
    }

    /// Sum over broadcast dimensions so the result has `shape`.
    pub fn sum_to(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let from = self.check(x)?.shape.clone();
        if from == shape {
            return Ok(x);
        }
        if !kernels::broadcastable_to(shape, &from) {
            return Err(GraphError::ShapeMismatch {
                op: "sum_to",
                lhs: from,
                rhs: shape.to_vec(),
            });
        }
        Ok(self.push(Op::SumTo, vec![x], shape.to_vec()))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.check(x)?.shape.clone();
        if len == 0 || start + len > shape[1] {
            return Err(GraphError::InvalidArgument {
                op: "slice",
                shape,
                reason: format!("columns {start}..{} out of range", start + len),
            });
        }
        Ok(self.push(Op::SliceCols { start, len }, vec![x], vec![shape[0], len]))
    }

    /// Embed `x` at column `start` of a zero matrix with `total` columns.
    pub fn pad_cols(&mut self, x: NodeId, start: usize, total: usize) -> Result<NodeId> {
        let shape = self.check(x)?.shape.clone();
        if start + shape[1] > total {
            return Err(GraphError::InvalidArgument {
                op: "pad",
                shape,
                reason: format!("cannot place at column {start} of {total}"),
            });
        }
        Ok(self.push(Op::PadCols { start }, vec![x], vec![shape[0], total]))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(GraphError::InvalidArgument {
                op: "concat",
                shape: vec![],
                reason: "no inputs".into(),
            });
        };
        let rows = self.check(first)?.shape[0];
        let mut cols = 0;
        for &p in parts {
            let s = &self.check(p)?.shape;
            if s[0] != rows {
                return Err(GraphError::ShapeMismatch {
                    op: "concat",
                    lhs: self.nodes[first.0].shape.clone(),
                    rhs: s.clone(),
                });
            }
            cols += s[1];
        }
        if parts.len() == 1 {
            return Ok(first);
        }
        Ok(self.push(Op::Concat, parts.to_vec(), vec![rows, cols]))
    }

    /// Rows of `x` selected by `indices` (repeats allowed).
    pub fn gather_rows(&mut self, x: NodeId, indices: impl Into<Arc<[usize]>>) -> Result<NodeId> {
        let indices = indices.into();
        let shape = self.check(x)?.shape.clone();
        if indices.is_empty() || indices.iter().any(|&i| i >= shape[0]) {
            return Err(GraphError::InvalidArgument {
                op: "gather",
                shape,
                reason: "row index out of range or empty index list".into(),
            });
        }
        let out = vec![indices.len(), shape[1]];
        Ok(self.push(Op::GatherRows(indices), vec![x], out))
    }

    /// Adjoint of [`Graph::gather_rows`]: row `k` of `x` is added into row
    /// `indices[k]` of a zero matrix with `rows` rows.
    pub fn scatter_add_rows(
        &mut self,
        x: NodeId,
        indices: impl Into<Arc<[usize]>>,
        rows: usize,
    ) -> Result<NodeId> {
        let indices = indices.into();
        let shape = self.check(x)?.shape.clone();
        if indices.len() != shape[0] || indices.iter().any(|&i| i >= rows) {
            return Err(GraphError::InvalidArgument {
                op: "scatter_add",
                shape,
                reason: "index list does not match rows".into(),
            });
        }
        Ok(self.push(Op::ScatterAddRows(indices), vec![x], vec![rows, shape[1]]))
    }

    pub(crate) fn relu_mask(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::ReluMask, x)
    }

    pub(crate) fn clamp_mask(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.unary(Op::ClampMask { lo, hi }, x)
    }

    pub(crate) fn argmin_mask(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.unary(Op::ArgMinMask(axis), x)
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let h = self.matmul(x, w)?;
        self.add(h, b)
    }

    /// Per-row normalisation to zero mean and unit variance (no affine).
    ///
    /// Built from primitive nodes so it is differentiable to any order.
    /// The variance is floored by `eps` inside the square root, so a
    /// constant row maps to zeros.
    pub fn layer_norm(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let mu = self.mean_axis(x, 1)?;
        let centered = self.sub(x, mu)?;
        let sq = self.square(centered)?;
        let var = self.mean_axis(sq, 1)?;
        let var = self.add_scalar(var, eps)?;
        let std = self.sqrt(var)?;
        self.div(centered, std)
    }
}
