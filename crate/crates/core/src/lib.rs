//! Counterexample ranking for visual question answering.
//!
//! The numeric kernels ([`vector`], [`neuralcx::MlpParams`],
//! [`neuralcx::AdamState`], the losses) are generic over [`Real`]; the
//! aliases below fix the scalar.

pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod neuralcx;
pub mod oracle;
pub mod pipeline;
pub mod real;
pub mod rng;
pub mod scorers;
pub mod types;
pub mod vector;

pub use error::{CxError, Result};
pub use real::Real;

pub type Mlp64 = neuralcx::MlpParams<f64>;
pub type Mlp32 = neuralcx::MlpParams<f32>;
pub type Adam64 = neuralcx::AdamState<f64>;
pub type Adam32 = neuralcx::AdamState<f32>;
pub type Vector64 = vector::FeatureVector<f64>;
pub type Vector32 = vector::FeatureVector<f32>;
