//! Condition-number analysis of neural-network weight tensors.
//!
//! The crate reads checkpoints in the KTAN container ([`tensor_io`]),
//! computes per-tensor singular-value spectra ([`spectral`]), turns them into
//! budgeted fine-tuning plans that unfreeze the lowest-κ tensors
//! ([`selection`]), checks the Gaussian entropy identities that motivate the
//! ranking ([`infotheory`]), and runs a small forgetting experiment on a
//! hand-written MLP ([`toytrain`]).
//!
//! Matrix and network code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the concrete instantiations used throughout.

pub mod error;
pub mod infotheory;
pub mod linalg;
pub mod rng;
mod scalar;
pub mod selection;
pub mod spectral;
pub mod tensor_io;
pub mod toytrain;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Mlp64 = toytrain::MlpModel<f64>;
pub type Mlp32 = toytrain::MlpModel<f32>;
