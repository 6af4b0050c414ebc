use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a trajectory of `T` points is laid out as tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenLayout {
    /// `2T` tokens of width 1 (x0, y0, x1, y1, ...).
    ScalarTokens,
    /// `T` tokens of width 2.
    PointTokens,
}

impl TokenLayout {
    pub fn token_dim(self) -> usize {
        match self {
            TokenLayout::ScalarTokens => 1,
            TokenLayout::PointTokens => 2,
        }
    }

    pub fn tokens_for(self, points: usize) -> usize {
        match self {
            TokenLayout::ScalarTokens => 2 * points,
            TokenLayout::PointTokens => points,
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            TokenLayout::ScalarTokens => 0,
            TokenLayout::PointTokens => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(TokenLayout::ScalarTokens),
            1 => Some(TokenLayout::PointTokens),
            _ => None,
        }
    }
}

impl fmt::Display for TokenLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenLayout::ScalarTokens => "scalar-tokens",
            TokenLayout::PointTokens => "point-tokens",
        })
    }
}

impl FromStr for TokenLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" | "scalar-tokens" => Ok(TokenLayout::ScalarTokens),
            "point" | "point-tokens" => Ok(TokenLayout::PointTokens),
            other => Err(Error::InvalidConfig(format!("unknown token layout `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_emb: usize,
    pub max_seq_len: usize,
    pub input_dropout: f64,
    pub attn_dropout: f64,
    pub token_layout: TokenLayout,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 1,
            num_heads: 4,
            d_model: 512,
            d_emb: 16,
            max_seq_len: 128,
            input_dropout: 0.3,
            attn_dropout: 0.2,
            token_layout: TokenLayout::PointTokens,
        }
    }
}

impl EncoderConfig {
    /// The literal 1024-slot scalar-token layout.
    pub fn scalar_1024() -> Self {
        Self {
            max_seq_len: 1024,
            token_layout: TokenLayout::ScalarTokens,
            ..Self::default()
        }
    }

    pub fn with_arch(mut self, heads: usize, layers: usize) -> Self {
        self.num_heads = heads;
        self.num_layers = layers;
        self
    }

    pub fn d_ffn(&self) -> usize {
        4 * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn token_dim(&self) -> usize {
        self.token_layout.token_dim()
    }

    /// Short architecture tag such as `4H1L`.
    pub fn arch_tag(&self) -> String {
        format!("{}H{}L", self.num_heads, self.num_layers)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_layers == 0 {
            return bad("num_layers must be >= 1".into());
        }
        if self.num_heads == 0 || self.d_model == 0 || self.d_model % self.num_heads != 0 {
            return bad(format!(
                "d_model ({}) must be a positive multiple of num_heads ({})",
                self.d_model, self.num_heads
            ));
        }
        if self.d_emb == 0 {
            return bad("d_emb must be >= 1".into());
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be >= 1".into());
        }
        for (name, p) in [
            ("input_dropout", self.input_dropout),
            ("attn_dropout", self.attn_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        Ok(())
    }

    /// Closed-form count of learnable parameters.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let f = self.d_ffn();
        let input = self.token_dim() * d + d;
        let per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        let final_norm = 2 * d;
        let output = d * self.d_emb + self.d_emb;
        input + self.num_layers * per_layer + final_norm + output
    }
}
