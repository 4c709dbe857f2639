//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::graph::{Graph, NodeId, Op};
use crate::kernels;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    pub epsilon: f64,
    /// Check at most this many evenly spaced elements of the leaf.
    pub max_elements: Option<usize>,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            epsilon: 1e-3,
            max_elements: None,
            floor: 1e-6,
        }
    }
}

impl FdOptions {
    pub fn with_epsilon(epsilon: f64) -> Self {
        FdOptions {
            epsilon,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FdReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Elements whose perturbation crossed a relu, clamp or min kink.
    pub excluded: usize,
    /// Perturbed forward values that were not finite.
    pub nan_count: usize,
}

/// Compare the analytic gradient of scalar `root` with respect to `leaf`
/// against central differences.
///
/// The leaf's original value is restored afterwards.
pub fn finite_diff_check<T: Scalar>(
    graph: &mut Graph<T>,
    root: NodeId,
    leaf: NodeId,
    opts: FdOptions,
) -> Result<FdReport> {
    let analytic = graph.backward(root, &[leaf])?.remove(0);
    let original = graph.eval_cloned(leaf)?;
    let numel = original.numel();
    let count = opts.max_elements.map_or(numel, |m| m.min(numel)).max(1);
    let eps = T::from_f64(opts.epsilon);

    let mut report = FdReport::default();
    for k in 0..count {
        let idx = k * numel / count;
        let probe = |delta: T, graph: &mut Graph<T>| -> Result<(f64, Vec<u32>)> {
            let mut t = original.clone();
            t.data_mut()[idx] = t.data()[idx] + delta;
            graph.bind(leaf, t)?;
            let v = graph.evaluate(root)?.item().as_f64();
            Ok((v, kink_signature(graph, root)))
        };
        let (plus, sig_plus) = probe(eps, graph)?;
        let (minus, sig_minus) = probe(-eps, graph)?;
        if !plus.is_finite() || !minus.is_finite() {
            report.nan_count += 1;
            continue;
        }
        if sig_plus != sig_minus {
            report.excluded += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * opts.epsilon);
        let a = analytic.data()[idx].as_f64();
        let denom = a.abs().max(numeric.abs()).max(opts.floor);
        report.max_rel_error = report.max_rel_error.max((a - numeric).abs() / denom);
        report.checked += 1;
    }
    graph.bind(leaf, original)?;
    graph.evaluate(root)?;
    Ok(report)
}

/// Activation pattern of every non-smooth op feeding `root`.
fn kink_signature<T: Scalar>(graph: &Graph<T>, root: NodeId) -> Vec<u32> {
    let mut sig = Vec::new();
    for node in &graph.nodes[..=root.index()] {
        let Some(input) = node.inputs.first() else { continue };
        let Some(x) = graph.nodes[input.index()].value.as_ref() else { continue };
        match &node.op {
            Op::Relu => sig.extend(x.data().iter().map(|&v| (v > T::zero()) as u32)),
            Op::Clamp { lo, hi } => {
                let (lo, hi) = (T::from_f64(*lo), T::from_f64(*hi));
                sig.extend(x.data().iter().map(|&v| (v > lo) as u32 + 2 * (v < hi) as u32));
            }
            Op::MinAxis(axis) => {
                sig.extend(kernels::argmin(x, *axis).into_iter().map(|i| i as u32))
            }
            _ => {}
        }
    }
    sig
}
