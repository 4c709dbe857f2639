use thiserror::Error;

/// Errors raised while building or differentiating a graph.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid argument for shape {shape:?}: {reason}")]
    InvalidArgument {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("tensor shape {shape:?} does not match {len} elements")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("node {0} is not a leaf of this graph")]
    NotALeaf(usize),
    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;
