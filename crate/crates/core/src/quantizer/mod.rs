//! Residual-quantized autoencoder (RQ-VAE) that maps a location embedding to
//! a short sequence of code indices, one per quantization level.
//!
//! The encoder MLP projects an input vector `s` to a `code_dim` latent `z`.
//! Level `l` picks the codevector nearest to the incoming residual
//! `r_{l-1}` (with `r_0 = z`) and subtracts it. The decoder reconstructs `s`
//! from the sum of chosen codevectors. Training minimizes
//!
//! ```text
//! L = ||s - dec(zhat)||^2
//!   + sum_l ||sg[r_{l-1}] - v_l||^2 + alpha * ||r_{l-1} - sg[v_l]||^2
//! ```
//!
//! with straight-through gradients across the argmin.

mod backprop;
mod checkpoint;
mod config;
mod kmeans;
mod model;
mod optim;
mod train;

pub use backprop::{batch_gradients, example_backward, losses, ExampleBackward, Losses};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use config::{CodebookInit, QuantizerConfig};
pub use kmeans::kmeans;
pub use model::{quantize, Codebooks, LinearShape, QuantizeResult, RqVaeModel};
pub use optim::AdamW;
pub use train::{init_model, tokenize_all, train, train_step, BatchMetrics, EpochStats, TokenizedLocation, Trainer};
