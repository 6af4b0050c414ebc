use crate::error::{Error, Result};
use crate::geometry::NormalizedTrajectory;

use super::config::EncoderConfig;

/// Fixed-size token matrix plus validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedInput {
    /// `max_seq_len x token_dim`, row-major; padded rows are zero.
    pub tokens: Vec<f64>,
    /// `true` marks a valid token.
    pub mask: Vec<bool>,
    pub token_dim: usize,
}

impl PaddedInput {
    pub fn seq_len(&self) -> usize {
        self.mask.len()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid_positions(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    pub fn token(&self, pos: usize) -> &[f64] {
        &self.tokens[pos * self.token_dim..(pos + 1) * self.token_dim]
    }
}

pub fn encode_input(nt: &NormalizedTrajectory, cfg: &EncoderConfig) -> Result<PaddedInput> {
    let needed = cfg.token_layout.tokens_for(nt.len());
    if needed > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            needed,
            max: cfg.max_seq_len,
        });
    }
    if needed == 0 {
        return Err(Error::EmptySequence);
    }
    let token_dim = cfg.token_dim();
    let mut tokens = vec![0.0; cfg.max_seq_len * token_dim];
    // Both layouts share the flat x0, y0, x1, y1, ... order; only the row width differs.
    for (i, p) in nt.points.iter().enumerate() {
        tokens[2 * i] = p.x;
        tokens[2 * i + 1] = p.y;
    }
    let mut mask = vec![false; cfg.max_seq_len];
    mask[..needed].fill(true);
    Ok(PaddedInput {
        tokens,
        mask,
        token_dim,
    })
}
