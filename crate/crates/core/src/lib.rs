//! Novel view synthesis with pure transformers.
//!
//! Posed input images and a target camera are turned into patch tokens
//! (RGB plus per-pixel Plücker rays), run through either an encoder-decoder
//! transformer with a fixed set of learned latent tokens or a single-stream
//! decoder-only transformer, and decoded back into target-view pixels.
//!
//! The crate carries its own small reverse-mode differentiation core
//! ([`diffnum`]), the training recipe ([`training`]), a procedural multi-view
//! data generator with an analytic renderer ([`data`]), and evaluation
//! harnesses ([`eval`]).

pub mod data;
pub mod diffnum;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod model;
pub mod seed;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
