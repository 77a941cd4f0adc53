//! Bidirectional masked generative transformer over two paired
//! discrete-token modalities.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense tensors with a reverse-mode autodiff tape.
//! - [`tokenizer`]: frozen codebooks and a synthetic paired-token source.
//! - [`masking`]: training-time mask ratios, mask application and token drop.
//! - [`model`]: the two-modality encoder/decoder transformer with tied heads.
//! - [`trainer`]: mask-denoising loss, optimizer and checkpoints.
//! - [`sampler`]: iterative unmasking with classifier-free guidance.
//! - [`eval`]: oracle accuracy, conditional KL and Fréchet distance.
//! - [`config`]: flat `key=value` run configuration.

mod binfmt;
pub mod config;
pub mod error;
pub mod eval;
pub mod masking;
pub mod model;
pub mod numerics;
pub mod sampler;
pub mod tokenizer;
pub mod trainer;

pub use binfmt::FormatError;
pub use error::{Error, Result};

/// The random stream used everywhere; its full state is checkpointable.
pub type SeedRng = rand_chacha::ChaCha8Rng;
