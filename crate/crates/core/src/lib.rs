//! Flow-factorized latent representations.
//!
//! A sequence VAE whose latent trajectories are driven by `K` learned potential
//! fields: each step moves samples along `grad u^k` and tracks their density by
//! the change-of-variables log-determinant. A Hamilton-Jacobi residual penalty
//! pushes each flow toward a dynamic optimal-transport path, and independent
//! grid-PDE and Gaussian-W2 oracles check the whole construction.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod hj;
pub mod linalg;
pub mod ot;
pub mod potential;
pub mod real;
pub mod tensor;
pub mod train;
pub mod vae;

pub use error::{Error, Result};
pub use real::{DType, Real};
pub use tensor::{DenseArray, ImageShape, Sequence};

pub type Array64 = DenseArray<f64>;
pub type Array32 = DenseArray<f32>;
pub type Mlp64 = autodiff::MlpParams<f64>;
pub type Mlp32 = autodiff::MlpParams<f32>;
pub type Bank64 = potential::PotentialBank<f64>;
pub type Bank32 = potential::PotentialBank<f32>;
