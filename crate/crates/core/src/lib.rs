//! Semantic location tokenization for mobility modeling.
//!
//! The crate covers the full offline pipeline around a generative mobility
//! model: check-in ingestion and splitting, textual location descriptions,
//! embedding ingestion, a residual-quantized autoencoder that turns each
//! location into a short hierarchical token sequence, instruction-tuning
//! dataset construction, a trie-constrained beam-search decoder with a
//! pluggable scorer, and ranking evaluation.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the precision used by the pipeline.

pub mod decoder;
pub mod describe;
pub mod embed;
pub mod error;
pub mod eval;
pub mod geo;
pub mod ingest;
pub mod io;
pub mod pipeline;
pub mod quantizer;
pub mod scalar;
pub mod sft;
pub mod synth;
pub mod tokens;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Format version written into every manifest produced by the pipeline.
pub const FORMAT_VERSION: u32 = 1;

/// Double-precision residual-quantized autoencoder used by the pipeline.
pub type RqVae = quantizer::RqVaeModel<f64>;
/// Single-precision variant, matching the on-disk parameter blob.
pub type RqVaeF32 = quantizer::RqVaeModel<f32>;
/// Embedding table at pipeline precision.
pub type Embeddings = embed::EmbeddingTable<f64>;
/// Quantization result at pipeline precision.
pub type Quantized = quantizer::QuantizeResult<f64>;
