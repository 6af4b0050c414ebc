//! Compact Transformer encoder mapping a trajectory to a fixed-size embedding.

mod checkpoint;
mod config;
mod input;
mod layout;
pub mod linalg;
mod model;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, quantize_to_f32, save_checkpoint, CheckpointManifest,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{EncoderConfig, TokenLayout};
pub use input::{encode_input, PaddedInput};
pub use layout::{LayerLayout, Layout, TensorKind};
pub use model::{normalize_backward, normalize_embedding, ActivationTape, Embedding, EncoderParams, Gradients, Mode};

use crate::error::Result;
use crate::geometry::NormalizedTrajectory;

/// Eval-mode, unit-normalized embedding of one trajectory.
pub fn embed_trajectory(params: &EncoderParams, nt: &NormalizedTrajectory) -> Result<Embedding> {
    let input = encode_input(nt, params.config())?;
    let raw = params.embed(&input)?;
    normalize_embedding(&raw)
}
