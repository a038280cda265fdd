//! Dense small-network arithmetic with exact analytic derivatives.

pub mod embed;
pub mod mlp;

pub use embed::{sinusoidal_embed, TimeEmbedding, DEFAULT_FREQUENCY_BASE};
pub use mlp::{
    mlp_forward, mlp_grad_input, mlp_hessian_input, mlp_param_gradients, Activation, Layer, MlpParams, MlpTrace,
    TraceLevel, MAX_HESSIAN_DIM,
};
