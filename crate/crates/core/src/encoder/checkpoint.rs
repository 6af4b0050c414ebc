//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TRJL"
//! 4       4     format version (u32 LE) = 1
//! 8       4     num_layers   (u32 LE)
//! 12      4     num_heads    (u32 LE)
//! 16      4     d_model      (u32 LE)
//! 20      4     d_emb        (u32 LE)
//! 24      4     max_seq_len  (u32 LE)
//! 28      4     token_layout (u32 LE; 0 = scalar-tokens, 1 = point-tokens)
//! 32      8     input_dropout (f64 LE)
//! 40      8     attn_dropout  (f64 LE)
//! 48      8     parameter count P (u64 LE)
//! 56      4*P   parameters, f32 LE, in the order documented in `layout`
//! ```
//!
//! A JSON manifest (`manifest.json`) sits next to the binary with the same
//! config plus free-form training metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{EncoderConfig, TokenLayout};
use super::model::EncoderParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TRJL";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 56;

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "checkpoint",
        reason: reason.into(),
    }
}

/// Rounds every parameter through `f32`, i.e. to exactly what a checkpoint stores.
pub fn quantize_to_f32(params: &mut EncoderParams) {
    for v in params.values_mut() {
        *v = *v as f32 as f64;
    }
}

pub fn encode_checkpoint(params: &EncoderParams) -> Vec<u8> {
    let cfg = params.config();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.num_layers, cfg.num_heads, cfg.d_model, cfg.d_emb, cfg.max_seq_len] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.token_layout.code().to_le_bytes());
    out.extend_from_slice(&cfg.input_dropout.to_le_bytes());
    out.extend_from_slice(&cfg.attn_dropout.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for &v in params.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EncoderParams> {
    if bytes.len() < HEADER_LEN {
        return Err(bad("truncated header"));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing TRJL magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let token_layout = TokenLayout::from_code(u32_at(28)).ok_or_else(|| bad("unknown token layout"))?;
    let config = EncoderConfig {
        num_layers: u32_at(8) as usize,
        num_heads: u32_at(12) as usize,
        d_model: u32_at(16) as usize,
        d_emb: u32_at(20) as usize,
        max_seq_len: u32_at(24) as usize,
        token_layout,
        input_dropout: f64_at(32),
        attn_dropout: f64_at(40),
    };
    config.validate()?;
    let count = u64::from_le_bytes(bytes[48..56].try_into().unwrap()) as usize;
    if count != config.param_count() {
        return Err(bad(format!(
            "parameter count {count} does not match config ({})",
            config.param_count()
        )));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * count {
        return Err(bad(format!(
            "expected {} parameter bytes, found {}",
            4 * count,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    EncoderParams::from_values(config, values)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &EncoderParams) -> Result<()> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderParams> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub encoder: EncoderConfig,
    pub param_count: usize,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl CheckpointManifest {
    pub fn new(config: &EncoderConfig, metadata: serde_json::Value) -> Self {
        Self {
            format: "trajlet-checkpoint".into(),
            version: CHECKPOINT_VERSION,
            encoder: config.clone(),
            param_count: config.param_count(),
            metadata,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_after_quantization_is_exact() {
        let cfg = EncoderConfig {
            d_model: 8,
            num_heads: 2,
            d_emb: 4,
            max_seq_len: 16,
            ..EncoderConfig::default()
        };
        let mut p = EncoderParams::init(cfg, 11).unwrap();
        quantize_to_f32(&mut p);
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..4], b"TRJL");
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let cfg = EncoderConfig {
            d_model: 8,
            num_heads: 2,
            d_emb: 4,
            max_seq_len: 16,
            ..EncoderConfig::default()
        };
        let p = EncoderParams::init(cfg, 1).unwrap();
        let bytes = encode_checkpoint(&p);
        assert!(decode_checkpoint(&bytes[..10]).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 4]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_checkpoint(&wrong).is_err());
    }
}
