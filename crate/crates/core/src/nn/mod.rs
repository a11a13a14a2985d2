//! Minimal feed-forward network engine: exact gradients, SGD, activation
//! capture and parameter-change accounting. All arithmetic is `f64` with a
//! fixed reduction order, so results are reproducible bit-for-bit.

pub mod checkpoint;
mod loss;
mod mlp;
mod optim;
mod params;
mod tensor;
pub mod train;

pub use loss::{cross_entropy, per_example_cross_entropy, soft_cross_entropy, softmax};
pub use mlp::{
    backward, backward_with_features, forward, predict_logits, Activation, ForwardTrace,
    MlpArchitecture,
};
pub use optim::{clip_grad_norm, sgd_step, SgdConfig, Velocity};
pub use params::{l1_norm, param_delta, squared_cosine, GradSet, ParamDelta, ParamSet};
pub use tensor::Tensor2D;
