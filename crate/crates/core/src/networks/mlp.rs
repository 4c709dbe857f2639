use lbsac_autodiff::{Graph, NodeId, Scalar, Tensor};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Variance floor inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor<f32>,
    pub shift: Tensor<f32>,
}

/// Dense layer `x · weight + bias`; `weight` is `[in, out]`, `bias` `[1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
    pub norm: Option<LayerNormParams>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Multi-layer perceptron with ReLU between layers and a linear output.
///
/// With layer normalisation enabled, every hidden layer normalises after
/// the affine transform and before the ReLU; the output layer never does.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Initial parameter distribution of an [`Mlp`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Init {
    /// Constant hidden-layer bias; `None` draws biases like the weights.
    pub hidden_bias: Option<f32>,
    /// Uniform bound of the output layer's weights and bias; `None` uses
    /// `1/sqrt(fan_in)`.
    pub output_bound: Option<f64>,
}

impl Init {
    /// Everything uniform in `±1/sqrt(fan_in)`.
    pub const FAN_IN: Init = Init {
        hidden_bias: None,
        output_bound: None,
    };
    /// Near-zero initial Q-values and action slopes.
    pub const CRITIC: Init = Init {
        hidden_bias: Some(0.1),
        output_bound: Some(3e-3),
    };
    /// Near-zero initial mean and log-std.
    pub const POLICY: Init = Init {
        hidden_bias: Some(0.1),
        output_bound: Some(1e-3),
    };
}

impl Mlp {
    /// Weights and biases drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn new(widths: &[usize], layer_norm: bool, rng: &mut Rng) -> Self {
        Self::with_init(widths, layer_norm, Init::FAN_IN, rng)
    }

    pub fn with_init(widths: &[usize], layer_norm: bool, init: Init, rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "widths must be positive");
        let count = widths.len() - 1;
        let layers = (0..count)
            .map(|l| {
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                let output = l + 1 == count;
                let bound = match init.output_bound {
                    Some(b) if output => b,
                    _ => 1.0 / (fan_in as f64).sqrt(),
                };
                let mut draw = |rows, cols| {
                    Tensor::from_fn(rows, cols, |_, _| rng.uniform_range(-bound, bound) as f32)
                };
                let weight = draw(fan_in, fan_out);
                let bias = match init.hidden_bias {
                    Some(b) if !output => Tensor::full(&[1, fan_out], b),
                    _ => draw(1, fan_out),
                };
                let norm = (layer_norm && !output).then(|| LayerNormParams {
                    gain: Tensor::ones(&[1, fan_out]),
                    shift: Tensor::zeros(&[1, fan_out]),
                });
                Layer { weight, bias, norm }
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("MLP without layers"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.shape() != [1, layer.fan_out()] {
                return Err(Error::invalid(format!("layer {l}: bias shape mismatch")));
            }
            if l > 0 && layers[l - 1].fan_out() != layer.fan_in() {
                return Err(Error::invalid(format!("layer {l}: width does not chain")));
            }
            if let Some(n) = &layer.norm {
                if n.gain.shape() != layer.bias.shape() || n.shift.shape() != layer.bias.shape() {
                    return Err(Error::invalid(format!("layer {l}: norm shape mismatch")));
                }
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in()];
        w.extend(self.layers.iter().map(Layer::fan_out));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn has_layer_norm(&self) -> bool {
        self.layers.iter().any(|l| l.norm.is_some())
    }

    /// Parameter tensors in canonical order: per layer weight, bias, then
    /// gain and shift when normalised.
    pub fn params(&self) -> Vec<&Tensor<f32>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(n) = &l.norm {
                out.push(&n.gain);
                out.push(&n.shift);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gain);
                out.push(&mut n.shift);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }

    /// Insert the parameters as leaves of `graph`, converting precision.
    pub fn bind<T: Scalar>(&self, graph: &mut Graph<T>, trainable: bool) -> BoundMlp {
        let mut leaf = |t: &Tensor<f32>| {
            let v = t.cast::<T>();
            if trainable {
                graph.variable(v)
            } else {
                graph.constant(v)
            }
        };
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                weight: leaf(&l.weight),
                bias: leaf(&l.bias),
                norm: l.norm.as_ref().map(|n| (leaf(&n.gain), leaf(&n.shift))),
            })
            .collect();
        BoundMlp { layers }
    }

    /// Plain forward pass outside any training graph.
    pub fn forward(&self, input: &Tensor<f32>, network: &'static str) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(input.clone());
        let trace = bound.forward_traced(&mut g, x)?;
        bound.check_finite(&mut g, &trace, network)?;
        Ok(g.eval_cloned(*trace.last().expect("non-empty"))?)
    }
}

#[derive(Clone, Debug)]
pub struct BoundLayer {
    pub weight: NodeId,
    pub bias: NodeId,
    pub norm: Option<(NodeId, NodeId)>,
}

/// Graph handles for one network's parameters.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub layers: Vec<BoundLayer>,
}

impl BoundMlp {
    /// Leaves in the same order as [`Mlp::params`].
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight);
            out.push(l.bias);
            if let Some((g, s)) = l.norm {
                out.push(g);
                out.push(s);
            }
        }
        out
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        Ok(*self.forward_traced(g, x)?.last().expect("non-empty"))
    }

    /// Forward pass returning every layer's output node.
    pub fn forward_traced<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<Vec<NodeId>> {
        let last = self.layers.len() - 1;
        let mut h = x;
        let mut trace = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            h = g.affine(h, layer.weight, layer.bias)?;
            if l < last {
                if let Some((gain, shift)) = layer.norm {
                    h = g.layer_norm(h, LAYER_NORM_EPS)?;
                    h = g.mul(h, gain)?;
                    h = g.add(h, shift)?;
                }
                h = g.relu(h)?;
            }
            trace.push(h);
        }
        Ok(trace)
    }

    /// First layer (by index) whose output contains a non-finite value.
    pub fn check_finite<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        trace: &[NodeId],
        network: &'static str,
    ) -> Result<()> {
        for (layer, &node) in trace.iter().enumerate() {
            if !g.evaluate(node)?.is_finite() {
                return Err(Error::NonFinite { network, layer });
            }
        }
        Ok(())
    }
}
