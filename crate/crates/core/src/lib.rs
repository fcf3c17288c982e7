//! Error-aware interactive semantic parsing for NLMaps queries.
//!
//! The crate parses natural-language geo-questions into the NLMaps MRL with a
//! multi-source GRU encoder-decoder, measures the decoder's uncertainty,
//! turns the least certain output token into a clarification question and
//! learns from synthetic dialogues and human token markings.

pub mod config;
pub mod corpus;
pub mod dialogue;
pub mod metrics;
pub mod mrl;
pub mod scalar;
pub mod seq2seq;
pub mod toy;
pub mod uncertainty;

pub use scalar::Scalar;

/// Double-precision model (training, gradient checks).
pub type Model64 = seq2seq::Model<f64>;
/// Single-precision model.
pub type Model32 = seq2seq::Model<f32>;
pub type Hypothesis64 = seq2seq::Hypothesis<f64>;
pub type Hypothesis32 = seq2seq::Hypothesis<f32>;
pub type TokenUncertainty64 = uncertainty::TokenUncertainty<f64>;
