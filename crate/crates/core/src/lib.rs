//! Desk-scale text-to-image generation with word-level attention.
//!
//! The pipeline: a bidirectional-LSTM text encoder and a small CNN image
//! encoder are pretrained with a fine-grained image-text matching loss,
//! then a multi-stage generator with word-attention layers is trained
//! adversarially against per-stage discriminators, with the matching loss
//! as an extra generator objective. Everything runs on a from-scratch
//! f64 tensor type with tape-based reverse-mode autodiff.

pub mod checkpoint;
pub mod config;
pub mod damsm;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gan;
pub mod generator;
pub mod gradsuite;
pub mod image_encoder;
pub mod layers;
pub mod raster;
pub mod rng;
pub mod tensor;
pub mod text_encoder;
pub mod train;
pub mod viz;
pub mod vocab;

pub use error::{Error, Result};
pub use tensor::Tensor;
