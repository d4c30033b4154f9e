//! Feedback Former: a desk-scale semantic-segmentation library.
//!
//! The model is a four-stage MetaFormer encoder with attention token mixers
//! and a Semantic FPN decoder. Inference can run a second round over the same
//! weights, injecting a transformed copy of the first round's finest decoder
//! features back into stage 1; the lightweight module doing that transform is
//! the Lite Feedback Module, with attention-based feedback modules kept as
//! baselines.
//!
//! Everything runs on a small built-in tensor engine with reverse-mode
//! differentiation ([`tensor`]), so training, evaluation, profiling, and
//! gradient checking work on a CPU with no external ML runtime.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod feedback;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod profile;
pub mod render;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
