//! Flat parameter layout.
//!
//! Every learnable tensor lives in one contiguous `Vec<f64>`, in this order:
//!
//! ```text
//! input.weight   token_dim x d_model
//! input.bias     d_model
//! per layer l in 0..L:
//!   ln1.gain, ln1.bias                 d_model each
//!   wq, bq, wk, bk, wv, bv, wo, bo     d_model x d_model / d_model
//!   ln2.gain, ln2.bias                 d_model each
//!   ffn.w1 (d_model x d_ffn), ffn.b1 (d_ffn)
//!   ffn.w2 (d_ffn x d_model), ffn.b2 (d_model)
//! final_norm.gain, final_norm.bias     d_model each
//! output.weight  d_model x d_emb
//! output.bias    d_emb
//! ```
//!
//! Matrices are row-major with the input dimension as rows, i.e. `y = x W + b`.
//! The checkpoint format stores parameters in exactly this order.

use std::ops::Range;

use super::config::EncoderConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerLayout {
    pub ln1_gain: Range<usize>,
    pub ln1_bias: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_gain: Range<usize>,
    pub ln2_bias: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub input_weight: Range<usize>,
    pub input_bias: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub final_gain: Range<usize>,
    pub final_bias: Range<usize>,
    pub output_weight: Range<usize>,
    pub output_bias: Range<usize>,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl Layout {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ffn();
        let mut c = Cursor(0);
        let input_weight = c.take(cfg.token_dim() * d);
        let input_bias = c.take(d);
        let layers = (0..cfg.num_layers)
            .map(|_| LayerLayout {
                ln1_gain: c.take(d),
                ln1_bias: c.take(d),
                wq: c.take(d * d),
                bq: c.take(d),
                wk: c.take(d * d),
                bk: c.take(d),
                wv: c.take(d * d),
                bv: c.take(d),
                wo: c.take(d * d),
                bo: c.take(d),
                ln2_gain: c.take(d),
                ln2_bias: c.take(d),
                w1: c.take(d * f),
                b1: c.take(f),
                w2: c.take(f * d),
                b2: c.take(d),
            })
            .collect();
        let final_gain = c.take(d);
        let final_bias = c.take(d);
        let output_weight = c.take(d * cfg.d_emb);
        let output_bias = c.take(cfg.d_emb);
        Layout {
            input_weight,
            input_bias,
            layers,
            final_gain,
            final_bias,
            output_weight,
            output_bias,
            total: c.0,
        }
    }

    /// Named tensor ranges with `(fan_in, fan_out)` for matrices and `None` for vectors.
    pub fn tensors(&self, cfg: &EncoderConfig) -> Vec<(String, Range<usize>, TensorKind)> {
        let d = cfg.d_model;
        let f = cfg.d_ffn();
        let mut out = vec![
            (
                "input.weight".to_string(),
                self.input_weight.clone(),
                TensorKind::Matrix(cfg.token_dim(), d),
            ),
            ("input.bias".to_string(), self.input_bias.clone(), TensorKind::Bias),
        ];
        for (l, ly) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layer{l}.{n}");
            out.extend([
                (p("ln1.gain"), ly.ln1_gain.clone(), TensorKind::Gain),
                (p("ln1.bias"), ly.ln1_bias.clone(), TensorKind::Bias),
                (p("wq"), ly.wq.clone(), TensorKind::Matrix(d, d)),
                (p("bq"), ly.bq.clone(), TensorKind::Bias),
                (p("wk"), ly.wk.clone(), TensorKind::Matrix(d, d)),
                (p("bk"), ly.bk.clone(), TensorKind::Bias),
                (p("wv"), ly.wv.clone(), TensorKind::Matrix(d, d)),
                (p("bv"), ly.bv.clone(), TensorKind::Bias),
                (p("wo"), ly.wo.clone(), TensorKind::Matrix(d, d)),
                (p("bo"), ly.bo.clone(), TensorKind::Bias),
                (p("ln2.gain"), ly.ln2_gain.clone(), TensorKind::Gain),
                (p("ln2.bias"), ly.ln2_bias.clone(), TensorKind::Bias),
                (p("ffn.w1"), ly.w1.clone(), TensorKind::Matrix(d, f)),
                (p("ffn.b1"), ly.b1.clone(), TensorKind::Bias),
                (p("ffn.w2"), ly.w2.clone(), TensorKind::Matrix(f, d)),
                (p("ffn.b2"), ly.b2.clone(), TensorKind::Bias),
            ]);
        }
        out.extend([
            ("final_norm.gain".to_string(), self.final_gain.clone(), TensorKind::Gain),
            ("final_norm.bias".to_string(), self.final_bias.clone(), TensorKind::Bias),
            (
                "output.weight".to_string(),
                self.output_weight.clone(),
                TensorKind::Matrix(d, cfg.d_emb),
            ),
            ("output.bias".to_string(), self.output_bias.clone(), TensorKind::Bias),
        ]);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Matrix(usize, usize),
    Bias,
    Gain,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_total_matches_closed_form() {
        for (h, l, d, e) in [(1, 1, 8, 4), (4, 1, 512, 16), (4, 2, 64, 16), (8, 4, 512, 128)] {
            let cfg = EncoderConfig {
                num_heads: h,
                num_layers: l,
                d_model: d,
                d_emb: e,
                ..EncoderConfig::default()
            };
            let layout = Layout::new(&cfg);
            assert_eq!(layout.total, cfg.param_count());
            let tensors = layout.tensors(&cfg);
            let covered: usize = tensors.iter().map(|t| t.1.len()).sum();
            assert_eq!(covered, layout.total);
            // contiguous, in order
            for w in tensors.windows(2) {
                assert_eq!(w[0].1.end, w[1].1.start);
            }
        }
    }
}
