//! Policy and critic networks.

mod checkpoint;
mod critic;
mod mlp;
mod policy;

pub use checkpoint::{decode_mlp, encode_mlp, load_mlp, save_mlp, NETWORK_MAGIC};
pub use critic::{min_over_ensemble, CriticEnsemble};
pub use mlp::{BoundLayer, BoundMlp, Init, Layer, LayerNormParams, Mlp, LAYER_NORM_EPS};
pub use policy::{
    squashed_gaussian, PolicyHead, PolicySample, SampleMode, SquashedGaussianPolicy, LOG_STD_MAX,
    LOG_STD_MIN, TANH_EPS,
};
