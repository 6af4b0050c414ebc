//! Transformer encoder forward pass and its exact reverse-mode gradient.
//!
//! Structure (pre-norm):
//!
//! ```text
//! X0 = dropout_in(tokens W_in + b_in + PE)
//! for each layer:
//!     X = X + MHA(LN1(X))          attention probabilities get dropout_attn
//!     X = X + FFN(LN2(X))          FFN(z) = GELU(z W1 + b1) W2 + b2
//! c  = mean over valid rows of LN_final(X)
//! e  = c W_out + b_out
//! ```
//!
//! Padded positions are masked out of attention keys and pooling. Because a
//! masked row can only ever influence itself, the computation is carried out
//! on the valid rows alone; this is exactly equivalent to masking and keeps
//! the padded 1024-slot layout as cheap as the compact one.

use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::rng::{self, hash_words, unit_from_hash};

use super::config::EncoderConfig;
use super::input::PaddedInput;
use super::layout::{Layout, TensorKind};
use super::linalg::{affine, colsum_acc, matmul, matmul_nt, matmul_nt_acc, matmul_tn_acc};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

const SITE_INPUT: u64 = 1;
const SITE_ATTN: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active; masks are a pure function of `seed` and the element's position.
    Train {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Scales an embedding onto the unit sphere.
pub fn normalize_embedding(e: &Embedding) -> Result<Embedding> {
    let n = e.norm();
    if !(n > 1e-12) {
        return Err(Error::ZeroEmbedding);
    }
    Ok(Embedding {
        values: e.values.iter().map(|v| v / n).collect(),
        normalized: true,
    })
}

/// Pulls a gradient w.r.t. a normalized embedding back to the raw embedding:
/// `d raw = (g - u (u . g)) / |raw|`.
pub fn normalize_backward(raw: &Embedding, unit: &Embedding, grad_unit: &[f64]) -> Vec<f64> {
    let n = raw.norm();
    let ug: f64 = unit.values.iter().zip(grad_unit).map(|(u, g)| u * g).sum();
    unit.values
        .iter()
        .zip(grad_unit)
        .map(|(u, g)| (g - u * ug) / n)
        .collect()
}

/// Learnable parameters plus the fixed sinusoidal position table.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    layout: Layout,
    positional: Vec<f64>,
    values: Vec<f64>,
}

fn sinusoidal_table(max_len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; max_len * d];
    for pos in 0..max_len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let freq = (-(10_000f64.ln()) * 2.0 * pair / d as f64).exp();
            let ang = pos as f64 * freq;
            pe[pos * d + i] = if i % 2 == 0 { ang.sin() } else { ang.cos() };
        }
    }
    pe
}

impl EncoderParams {
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let positional = sinusoidal_table(config.max_seq_len, config.d_model);
        let values = vec![0.0; layout.total];
        Ok(Self {
            config,
            layout,
            positional,
            values,
        })
    }

    /// Xavier-uniform matrices, unit LayerNorm gains, zero biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = rng::substream(seed, "init");
        for (_, range, kind) in p.layout.tensors(&p.config) {
            match kind {
                TensorKind::Matrix(fan_in, fan_out) => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let dist = Uniform::new(-a, a);
                    for v in &mut p.values[range] {
                        *v = dist.sample(&mut rng);
                    }
                }
                TensorKind::Gain => p.values[range].fill(1.0),
                TensorKind::Bias => {}
            }
        }
        Ok(p)
    }

    pub fn from_values(config: EncoderConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("parameters must be finite".into()));
        }
        p.values = values;
        Ok(p)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn positional(&self) -> &[f64] {
        &self.positional
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Eval-mode embedding without keeping the tape.
    pub fn embed(&self, input: &PaddedInput) -> Result<Embedding> {
        self.forward(input, Mode::Eval).map(|(e, _)| e)
    }
}

/// Gradients from one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Same layout as [`EncoderParams::values`].
    pub params: Vec<f64>,
    /// `max_seq_len x token_dim`; padded rows are always zero.
    pub input: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerTape {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `H x n x n` softmax outputs before dropout.
    probs: Vec<f64>,
    /// `H x n x n` dropout scale (0 or 1/(1-p)); `None` when dropout is off.
    attn_keep: Option<Vec<f64>>,
    o: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    b: Vec<f64>,
    hpre: Vec<f64>,
    hact: Vec<f64>,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ActivationTape {
    config: EncoderConfig,
    param_len: usize,
    seq_len: usize,
    positions: Vec<usize>,
    tokens: Vec<f64>,
    input_keep: Option<Vec<f64>>,
    layers: Vec<LayerTape>,
    final_xhat: Vec<f64>,
    final_rstd: Vec<f64>,
    pooled: Vec<f64>,
}

impl ActivationTape {
    pub fn valid_tokens(&self) -> usize {
        self.positions.len()
    }
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], d: usize, out: &mut [f64], xhat: &mut [f64], rstd: &mut [f64]) {
    for (r, ((xr, or), hr)) in x
        .chunks_exact(d)
        .zip(out.chunks_exact_mut(d))
        .zip(xhat.chunks_exact_mut(d))
        .enumerate()
    {
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (xr[i] - mean) * rs;
            hr[i] = h;
            or[i] = h * gain[i] + bias[i];
        }
    }
}

/// Returns `dx` and accumulates `dgain`, `dbias`.
fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gain: &[f64],
    d: usize,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for (r, ((dyr, hr), dxr)) in dy
        .chunks_exact(d)
        .zip(xhat.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .enumerate()
    {
        for i in 0..d {
            dgain[i] += dyr[i] * hr[i];
            dbias[i] += dyr[i];
            dxhat[i] = dyr[i] * gain[i];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dh = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for i in 0..d {
            dxr[i] = rstd[r] * (dxhat[i] - mean_d - hr[i] * mean_dh);
        }
    }
    dx
}

#[inline]
fn gelu(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn keep_scale(seed: u64, key: [u64; 5], p: f64) -> f64 {
    let u = unit_from_hash(hash_words(&[seed, key[0], key[1], key[2], key[3], key[4]]));
    if u < p {
        0.0
    } else {
        1.0 / (1.0 - p)
    }
}

/// Copies columns `h*dh..(h+1)*dh` of an `n x d` matrix.
fn head_slice(m: &[f64], n: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dh);
    for r in 0..n {
        out.extend_from_slice(&m[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    out
}

fn head_scatter_add(dst: &mut [f64], src: &[f64], n: usize, d: usize, h: usize, dh: usize) {
    for r in 0..n {
        for c in 0..dh {
            dst[r * d + h * dh + c] += src[r * dh + c];
        }
    }
}

fn check_finite(v: &[f64], stage: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { stage })
    }
}

impl EncoderParams {
    pub fn forward(&self, input: &PaddedInput, mode: Mode) -> Result<(Embedding, ActivationTape)> {
        let cfg = &self.config;
        if input.seq_len() != cfg.max_seq_len || input.token_dim != cfg.token_dim() {
            return Err(Error::InvalidConfig(format!(
                "input is {}x{}, encoder expects {}x{}",
                input.seq_len(),
                input.token_dim,
                cfg.max_seq_len,
                cfg.token_dim()
            )));
        }
        let positions = input.valid_positions();
        let n = positions.len();
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        let d = cfg.d_model;
        let f = cfg.d_ffn();
        let td = cfg.token_dim();
        let nh = cfg.num_heads;
        let dh = cfg.head_dim();
        let w = &self.values;
        let ly = &self.layout;
        let dropout_seed = match mode {
            Mode::Eval => None,
            Mode::Train { seed } => Some(seed),
        };

        let mut tokens = Vec::with_capacity(n * td);
        for &p in &positions {
            tokens.extend_from_slice(input.token(p));
        }

        // input projection + positions + dropout
        let mut x = vec![0.0; n * d];
        affine(
            &tokens,
            &w[ly.input_weight.clone()],
            &w[ly.input_bias.clone()],
            &mut x,
            n,
            td,
            d,
        );
        for (r, &p) in positions.iter().enumerate() {
            for (xv, pv) in x[r * d..(r + 1) * d]
                .iter_mut()
                .zip(&self.positional[p * d..(p + 1) * d])
            {
                *xv += pv;
            }
        }
        let input_keep = match dropout_seed {
            Some(seed) if cfg.input_dropout > 0.0 => {
                let mut keep = vec![0.0; n * d];
                for (r, &p) in positions.iter().enumerate() {
                    for c in 0..d {
                        keep[r * d + c] = keep_scale(seed, [SITE_INPUT, 0, 0, p as u64, c as u64], cfg.input_dropout);
                    }
                }
                x.iter_mut().zip(&keep).for_each(|(v, k)| *v *= k);
                Some(keep)
            }
            _ => None,
        };

        let scale = 1.0 / (dh as f64).sqrt();
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for (li, lw) in ly.layers.iter().enumerate() {
            let mut a = vec![0.0; n * d];
            let mut xhat1 = vec![0.0; n * d];
            let mut rstd1 = vec![0.0; n];
            layer_norm(
                &x,
                &w[lw.ln1_gain.clone()],
                &w[lw.ln1_bias.clone()],
                d,
                &mut a,
                &mut xhat1,
                &mut rstd1,
            );

            let mut q = vec![0.0; n * d];
            let mut k = vec![0.0; n * d];
            let mut v = vec![0.0; n * d];
            affine(&a, &w[lw.wq.clone()], &w[lw.bq.clone()], &mut q, n, d, d);
            affine(&a, &w[lw.wk.clone()], &w[lw.bk.clone()], &mut k, n, d, d);
            affine(&a, &w[lw.wv.clone()], &w[lw.bv.clone()], &mut v, n, d, d);

            let mut probs = vec![0.0; nh * n * n];
            let mut attn_keep = match dropout_seed {
                Some(_) if cfg.attn_dropout > 0.0 => Some(vec![0.0; nh * n * n]),
                _ => None,
            };
            let mut o = vec![0.0; n * d];
            let mut scores = vec![0.0; n * n];
            let mut oh = vec![0.0; n * dh];
            for h in 0..nh {
                let qh = head_slice(&q, n, d, h, dh);
                let kh = head_slice(&k, n, d, h, dh);
                let vh = head_slice(&v, n, d, h, dh);
                matmul_nt(&qh, &kh, &mut scores, n, dh, n);
                let ph = &mut probs[h * n * n..(h + 1) * n * n];
                for (srow, prow) in scores.chunks_exact(n).zip(ph.chunks_exact_mut(n)) {
                    let mx = srow.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s * scale));
                    let mut z = 0.0;
                    for (pv, &s) in prow.iter_mut().zip(srow) {
                        *pv = (s * scale - mx).exp();
                        z += *pv;
                    }
                    prow.iter_mut().for_each(|pv| *pv /= z);
                }
                let dropped: Vec<f64>;
                let used: &[f64] = match (&mut attn_keep, dropout_seed) {
                    (Some(keep), Some(seed)) => {
                        let kh_mask = &mut keep[h * n * n..(h + 1) * n * n];
                        for i in 0..n {
                            for j in 0..n {
                                kh_mask[i * n + j] = keep_scale(
                                    seed,
                                    [SITE_ATTN, li as u64, h as u64, positions[i] as u64, positions[j] as u64],
                                    cfg.attn_dropout,
                                );
                            }
                        }
                        dropped = ph.iter().zip(kh_mask.iter()).map(|(p, m)| p * m).collect();
                        &dropped
                    }
                    _ => ph,
                };
                matmul(used, &vh, &mut oh, n, n, dh);
                head_scatter_add(&mut o, &oh, n, d, h, dh);
            }

            let mut attn_out = vec![0.0; n * d];
            affine(&o, &w[lw.wo.clone()], &w[lw.bo.clone()], &mut attn_out, n, d, d);
            x.iter_mut().zip(&attn_out).for_each(|(xv, av)| *xv += av);

            let mut b = vec![0.0; n * d];
            let mut xhat2 = vec![0.0; n * d];
            let mut rstd2 = vec![0.0; n];
            layer_norm(
                &x,
                &w[lw.ln2_gain.clone()],
                &w[lw.ln2_bias.clone()],
                d,
                &mut b,
                &mut xhat2,
                &mut rstd2,
            );
            let mut hpre = vec![0.0; n * f];
            affine(&b, &w[lw.w1.clone()], &w[lw.b1.clone()], &mut hpre, n, d, f);
            let hact: Vec<f64> = hpre.iter().map(|&z| gelu(z)).collect();
            let mut ffn_out = vec![0.0; n * d];
            affine(&hact, &w[lw.w2.clone()], &w[lw.b2.clone()], &mut ffn_out, n, f, d);
            x.iter_mut().zip(&ffn_out).for_each(|(xv, fv)| *xv += fv);

            layers.push(LayerTape {
                xhat1,
                rstd1,
                a,
                q,
                k,
                v,
                probs,
                attn_keep,
                o,
                xhat2,
                rstd2,
                b,
                hpre,
                hact,
            });
        }
        check_finite(&x, "encoder layers")?;

        let mut y = vec![0.0; n * d];
        let mut final_xhat = vec![0.0; n * d];
        let mut final_rstd = vec![0.0; n];
        layer_norm(
            &x,
            &w[ly.final_gain.clone()],
            &w[ly.final_bias.clone()],
            d,
            &mut y,
            &mut final_xhat,
            &mut final_rstd,
        );

        let mut pooled = vec![0.0; d];
        colsum_acc(&y, &mut pooled, d);
        pooled.iter_mut().for_each(|v| *v /= n as f64);

        let mut emb = vec![0.0; cfg.d_emb];
        affine(
            &pooled,
            &w[ly.output_weight.clone()],
            &w[ly.output_bias.clone()],
            &mut emb,
            1,
            d,
            cfg.d_emb,
        );
        check_finite(&emb, "embedding")?;

        let tape = ActivationTape {
            config: cfg.clone(),
            param_len: self.values.len(),
            seq_len: input.seq_len(),
            positions,
            tokens,
            input_keep,
            layers,
            final_xhat,
            final_rstd,
            pooled,
        };
        Ok((Embedding::new(emb), tape))
    }

    /// Gradient of `<embedding, d_embedding>` with respect to every parameter and input token.
    pub fn backward(&self, tape: &ActivationTape, d_embedding: &[f64]) -> Result<Gradients> {
        let cfg = &self.config;
        if tape.config != *cfg || tape.param_len != self.values.len() {
            return Err(Error::TapeMismatch("tape was recorded with a different encoder".into()));
        }
        if d_embedding.len() != cfg.d_emb {
            return Err(Error::TapeMismatch(format!(
                "upstream gradient has length {}, expected {}",
                d_embedding.len(),
                cfg.d_emb
            )));
        }
        let n = tape.positions.len();
        let d = cfg.d_model;
        let f = cfg.d_ffn();
        let td = cfg.token_dim();
        let nh = cfg.num_heads;
        let dh = cfg.head_dim();
        let w = &self.values;
        let ly = &self.layout;
        let mut g = vec![0.0; w.len()];

        // output projection
        matmul_tn_acc(
            &tape.pooled,
            d_embedding,
            &mut g[ly.output_weight.clone()],
            1,
            d,
            cfg.d_emb,
        );
        for (gb, &de) in g[ly.output_bias.clone()].iter_mut().zip(d_embedding) {
            *gb += de;
        }
        let mut dpooled = vec![0.0; d];
        matmul_nt(d_embedding, &w[ly.output_weight.clone()], &mut dpooled, 1, cfg.d_emb, d);

        // mean pool
        let inv_n = 1.0 / n as f64;
        let mut dy = vec![0.0; n * d];
        for row in dy.chunks_exact_mut(d) {
            row.iter_mut().zip(&dpooled).for_each(|(r, &p)| *r = p * inv_n);
        }

        let (gf, gb) = split_two(&mut g, &ly.final_gain, &ly.final_bias);
        let mut dx = layer_norm_backward(
            &dy,
            &tape.final_xhat,
            &tape.final_rstd,
            &w[ly.final_gain.clone()],
            d,
            gf,
            gb,
        );

        let scale = 1.0 / (dh as f64).sqrt();
        for (lw, lt) in ly.layers.iter().zip(&tape.layers).rev() {
            // FFN block: x2 = x1 + FFN(LN2(x1))
            matmul_tn_acc(&lt.hact, &dx, &mut g[lw.w2.clone()], n, f, d);
            colsum_acc(&dx, &mut g[lw.b2.clone()], d);
            let mut dh_act = vec![0.0; n * f];
            matmul_nt(&dx, &w[lw.w2.clone()], &mut dh_act, n, d, f);
            let dh_pre: Vec<f64> = dh_act.iter().zip(&lt.hpre).map(|(gv, &z)| gv * gelu_grad(z)).collect();
            matmul_tn_acc(&lt.b, &dh_pre, &mut g[lw.w1.clone()], n, d, f);
            colsum_acc(&dh_pre, &mut g[lw.b1.clone()], f);
            let mut db = vec![0.0; n * d];
            matmul_nt(&dh_pre, &w[lw.w1.clone()], &mut db, n, f, d);
            let (g2, b2) = split_two(&mut g, &lw.ln2_gain, &lw.ln2_bias);
            let dx1_ln = layer_norm_backward(&db, &lt.xhat2, &lt.rstd2, &w[lw.ln2_gain.clone()], d, g2, b2);
            dx.iter_mut().zip(&dx1_ln).for_each(|(a, b)| *a += b);

            // attention block: x1 = x + Wo(MHA(LN1(x)))
            matmul_tn_acc(&lt.o, &dx, &mut g[lw.wo.clone()], n, d, d);
            colsum_acc(&dx, &mut g[lw.bo.clone()], d);
            let mut d_o = vec![0.0; n * d];
            matmul_nt(&dx, &w[lw.wo.clone()], &mut d_o, n, d, d);

            let mut dq = vec![0.0; n * d];
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            let mut dp = vec![0.0; n * n];
            for h in 0..nh {
                let qh = head_slice(&lt.q, n, d, h, dh);
                let kh = head_slice(&lt.k, n, d, h, dh);
                let vh = head_slice(&lt.v, n, d, h, dh);
                let doh = head_slice(&d_o, n, d, h, dh);
                let ph = &lt.probs[h * n * n..(h + 1) * n * n];
                let keep = lt.attn_keep.as_ref().map(|k| &k[h * n * n..(h + 1) * n * n]);
                let used: Vec<f64> = match keep {
                    Some(k) => ph.iter().zip(k).map(|(p, m)| p * m).collect(),
                    None => ph.to_vec(),
                };
                // out_h = used * v_h
                matmul_nt(&doh, &vh, &mut dp, n, dh, n);
                let mut dvh = vec![0.0; n * dh];
                matmul_tn_acc(&used, &doh, &mut dvh, n, n, dh);
                if let Some(k) = keep {
                    dp.iter_mut().zip(k).for_each(|(g, m)| *g *= m);
                }
                // softmax backward, then the 1/sqrt(dh) scale
                for (prow, dprow) in ph.chunks_exact(n).zip(dp.chunks_exact_mut(n)) {
                    let dot: f64 = prow.iter().zip(dprow.iter()).map(|(p, g)| p * g).sum();
                    for (g, &p) in dprow.iter_mut().zip(prow) {
                        *g = p * (*g - dot) * scale;
                    }
                }
                let mut dqh = vec![0.0; n * dh];
                matmul(&dp, &kh, &mut dqh, n, n, dh);
                let mut dkh = vec![0.0; n * dh];
                matmul_tn_acc(&dp, &qh, &mut dkh, n, n, dh);
                head_scatter_add(&mut dq, &dqh, n, d, h, dh);
                head_scatter_add(&mut dk, &dkh, n, d, h, dh);
                head_scatter_add(&mut dv, &dvh, n, d, h, dh);
            }

            let mut da = vec![0.0; n * d];
            for (dproj, wr, br) in [(&dq, &lw.wq, &lw.bq), (&dk, &lw.wk, &lw.bk), (&dv, &lw.wv, &lw.bv)] {
                matmul_tn_acc(&lt.a, dproj, &mut g[wr.clone()], n, d, d);
                colsum_acc(dproj, &mut g[br.clone()], d);
                matmul_nt_acc(dproj, &w[wr.clone()], &mut da, n, d, d);
            }
            let (g1, b1) = split_two(&mut g, &lw.ln1_gain, &lw.ln1_bias);
            let dx_ln = layer_norm_backward(&da, &lt.xhat1, &lt.rstd1, &w[lw.ln1_gain.clone()], d, g1, b1);
            dx.iter_mut().zip(&dx_ln).for_each(|(a, b)| *a += b);
        }

        // input dropout and projection
        if let Some(keep) = &tape.input_keep {
            dx.iter_mut().zip(keep).for_each(|(g, k)| *g *= k);
        }
        matmul_tn_acc(&tape.tokens, &dx, &mut g[ly.input_weight.clone()], n, td, d);
        colsum_acc(&dx, &mut g[ly.input_bias.clone()], d);
        let mut dtok = vec![0.0; n * td];
        matmul_nt(&dx, &w[ly.input_weight.clone()], &mut dtok, n, d, td);
        let mut input = vec![0.0; tape.seq_len * td];
        for (r, &p) in tape.positions.iter().enumerate() {
            input[p * td..(p + 1) * td].copy_from_slice(&dtok[r * td..(r + 1) * td]);
        }
        Ok(Gradients { params: g, input })
    }
}

/// Two disjoint mutable sub-slices where `a` precedes `b`.
fn split_two<'a>(
    g: &'a mut [f64],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (left, right) = g.split_at_mut(b.start);
    (&mut left[a.clone()], &mut right[..b.len()])
}
