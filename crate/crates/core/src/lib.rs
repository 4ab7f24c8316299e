//! Password-guess generation and evaluation toolkit.
//!
//! The pipeline: ingest a leaked-password corpus ([`corpus`]), train a
//! character-level Wasserstein GAN with gradient penalty on it ([`model`],
//! [`train`], backed by the tape-based autodiff engine in [`ndgrad`]),
//! sample candidate passwords at high throughput with deduplication
//! ([`sample`]), and measure match rates against held-out password sets
//! ([`eval`]). Two classic baselines ship alongside the GAN: a 3-gram
//! Markov model ([`markov`]) and a small word-mangling rule engine
//! ([`mangle`]).
//!
//! All numeric code is generic over the scalar type via [`scalar::Scalar`];
//! production models run in `f32` (see the type aliases below), while test
//! oracles instantiate the same code at `f64`.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod mangle;
pub mod markov;
pub mod model;
pub mod ndgrad;
pub mod sample;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Production tensor scalar: the models train and sample in 32-bit floats.
pub type F = f32;

/// Tape over the production scalar.
pub type Tape = ndgrad::Tape<F>;
/// Host-side tensor over the production scalar.
pub type Tensor = ndgrad::HostTensor<F>;
