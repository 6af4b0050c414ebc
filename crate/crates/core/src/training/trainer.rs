use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    encode_input, normalize_backward, normalize_embedding, quantize_to_f32, save_checkpoint, ActivationTape,
    CheckpointManifest, Embedding, EncoderConfig, EncoderParams, Mode, PaddedInput,
};
use crate::error::{Error, Result};
use crate::geometry::NormalizedTrajectory;
use crate::rng;
use crate::similarity::{similarity_matrix_masked, Metric, DEFAULT_ALPHA};

use super::loss::triplet_loss;
use super::mining::{mine_dynamic, mine_random, MiningMode, MiningPhase};
use super::optim::{AdamHyper, OptimizerState};
use super::schedule::one_cycle_lr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub margin: f64,
    pub sim_threshold: f64,
    pub metric: Metric,
    pub alpha: f64,
    pub mining: MiningMode,
    pub lr_max: f64,
    pub seed: u64,
    /// Triplets per step are capped at `triplet_cap_factor * batch_size`.
    pub triplet_cap_factor: usize,
    /// Write an intermediate checkpoint every this many steps (0 = never).
    pub checkpoint_every: usize,
    pub input_dropout: Option<f64>,
    pub attn_dropout: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            steps: 1000,
            margin: 0.5,
            sim_threshold: 0.7,
            metric: Metric::CosineCombined,
            alpha: DEFAULT_ALPHA,
            mining: MiningMode::Random,
            lr_max: 1e-3,
            seed: 0,
            triplet_cap_factor: 4,
            checkpoint_every: 0,
            input_dropout: None,
            attn_dropout: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.sim_threshold > 0.0 && self.sim_threshold < 1.0) {
            return bad(format!("sim_threshold must lie in (0, 1), got {}", self.sim_threshold));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be finite and >= 0, got {}", self.margin));
        }
        if self.batch_size < 3 {
            return bad(format!("batch_size must be >= 3, got {}", self.batch_size));
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return bad(format!("lr_max must be positive, got {}", self.lr_max));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.triplet_cap_factor == 0 {
            return bad("triplet_cap_factor must be >= 1".into());
        }
        for p in [self.input_dropout, self.attn_dropout].into_iter().flatten() {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout must lie in [0, 1), got {p}"));
            }
        }
        Ok(())
    }

    /// Encoder config with this run's dropout overrides applied.
    pub fn apply_overrides(&self, encoder: &EncoderConfig) -> EncoderConfig {
        let mut cfg = encoder.clone();
        if let Some(p) = self.input_dropout {
            cfg.input_dropout = p;
        }
        if let Some(p) = self.attn_dropout {
            cfg.attn_dropout = p;
        }
        cfg
    }

    fn phase_at(&self, step: usize) -> MiningPhase {
        if 2 * step < self.steps {
            MiningPhase::SemiHard
        } else {
            MiningPhase::Hard
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// Mean triplet loss; `None` when the step had no triplets and was skipped.
    pub loss: Option<f64>,
    pub triplet_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_count: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub log: Vec<StepRecord>,
}

impl TrainOutcome {
    /// Losses of the non-skipped steps, in order.
    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().filter_map(|r| r.loss).collect()
    }
}

struct Forwarded {
    raw: Embedding,
    unit: Embedding,
    tape: ActivationTape,
}

/// Trains an encoder; `on_step` sees the parameters after every step.
pub fn train_with<F>(
    bank: &[NormalizedTrajectory],
    cfg: &TrainConfig,
    encoder: &EncoderConfig,
    mut on_step: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&StepRecord, &EncoderParams) -> Result<()>,
{
    cfg.validate()?;
    if bank.len() < cfg.batch_size {
        return Err(Error::InvalidConfig(format!(
            "bank has {} trajectories, fewer than batch_size {}",
            bank.len(),
            cfg.batch_size
        )));
    }
    let enc_cfg = cfg.apply_overrides(encoder);
    enc_cfg.validate()?;
    let inputs: Vec<PaddedInput> = bank
        .par_iter()
        .map(|nt| encode_input(nt, &enc_cfg).map_err(|e| e.context(nt.source_id.clone())))
        .collect::<Result<_>>()?;

    let mut params = EncoderParams::init(enc_cfg.clone(), cfg.seed)?;
    let mut optim = OptimizerState::new(params.len(), AdamHyper::default());
    let mut batch_rng = rng::substream(cfg.seed, "batch");
    let mut mining_rng = rng::substream(cfg.seed, "mining");
    let dropout_seed = rng::substream_seed(cfg.seed, "dropout");
    let cap = cfg.triplet_cap_factor * cfg.batch_size;
    let last = cfg.steps - 1;
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let lr = one_cycle_lr(step, last, cfg.lr_max);
        let members = index::sample(&mut batch_rng, bank.len(), cfg.batch_size).into_vec();
        let batch: Vec<NormalizedTrajectory> = members.iter().map(|&i| bank[i].clone()).collect();
        let sim = similarity_matrix_masked(&batch, cfg.metric, cfg.alpha)?;

        let fwd: Vec<Forwarded> = members
            .par_iter()
            .enumerate()
            .map(|(pos, &i)| {
                let seed = rng::hash_words(&[dropout_seed, step as u64, pos as u64]);
                let (raw, tape) = params.forward(&inputs[i], Mode::Train { seed })?;
                let unit = normalize_embedding(&raw).map_err(|e| e.context(bank[i].source_id.clone()))?;
                Ok(Forwarded { raw, unit, tape })
            })
            .collect::<Result<_>>()?;

        let (mut triplets, fallback_count) = match cfg.mining {
            MiningMode::Random => (mine_random(&sim, cfg.sim_threshold, &mut mining_rng), None),
            MiningMode::Dynamic => {
                let units: Vec<Embedding> = fwd.iter().map(|f| f.unit.clone()).collect();
                let out = mine_dynamic(
                    &sim,
                    &units,
                    cfg.sim_threshold,
                    cfg.phase_at(step),
                    cfg.margin,
                    &mut mining_rng,
                );
                (out.triplets, Some(out.fallback_count))
            }
        };
        if triplets.len() > cap {
            let mut keep = index::sample(&mut mining_rng, triplets.len(), cap).into_vec();
            keep.sort_unstable();
            triplets = keep.into_iter().map(|k| triplets[k]).collect();
        }

        let mut record = StepRecord {
            step,
            lr,
            loss: None,
            triplet_count: triplets.len(),
            fallback_count,
        };
        if triplets.is_empty() {
            on_step(&record, &params)?;
            log.push(record);
            continue;
        }

        let d = enc_cfg.d_emb;
        let scale = 1.0 / triplets.len() as f64;
        let mut grad_unit = vec![vec![0.0; d]; fwd.len()];
        let mut loss = 0.0;
        for t in &triplets {
            let out = triplet_loss(
                &fwd[t.anchor].unit.values,
                &fwd[t.positive].unit.values,
                &fwd[t.negative].unit.values,
                cfg.margin,
            );
            loss += out.loss;
            for (slot, g) in [
                (t.anchor, &out.grad_anchor),
                (t.positive, &out.grad_positive),
                (t.negative, &out.grad_negative),
            ] {
                for (acc, &v) in grad_unit[slot].iter_mut().zip(g) {
                    *acc += scale * v;
                }
            }
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("mean loss {loss} over {} triplets", triplets.len()),
            });
        }
        record.loss = Some(loss);

        let per_sample: Vec<Option<Vec<f64>>> = fwd
            .par_iter()
            .zip(&grad_unit)
            .map(|(f, g)| {
                if g.iter().all(|&v| v == 0.0) {
                    return Ok(None);
                }
                let d_raw = normalize_backward(&f.raw, &f.unit, g);
                Ok(Some(params.backward(&f.tape, &d_raw)?.params))
            })
            .collect::<Result<_>>()?;
        let mut grads = vec![0.0; params.len()];
        for g in per_sample.iter().flatten() {
            for (acc, &v) in grads.iter_mut().zip(g) {
                *acc += v;
            }
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("non-finite gradient at parameter {i}"),
            });
        }
        optim.step(params.values_mut(), &grads, lr);
        on_step(&record, &params)?;
        log.push(record);
    }

    quantize_to_f32(&mut params);
    Ok(TrainOutcome { params, log })
}

pub fn train(bank: &[NormalizedTrajectory], cfg: &TrainConfig, encoder: &EncoderConfig) -> Result<TrainOutcome> {
    train_with(bank, cfg, encoder, |_, _| Ok(()))
}

pub const FINAL_CHECKPOINT: &str = "model.trjl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

/// Trains and writes `model.trjl`, `manifest.json`, `train_log.jsonl` and
/// optional `step-NNNNNN.trjl` snapshots into `dir`.
pub fn train_to_dir(
    bank: &[NormalizedTrajectory],
    cfg: &TrainConfig,
    encoder: &EncoderConfig,
    dir: &Path,
) -> Result<TrainOutcome> {
    fs::create_dir_all(dir)?;
    let mut log_file = std::io::BufWriter::new(fs::File::create(dir.join(TRAIN_LOG_FILE))?);
    let outcome = train_with(bank, cfg, encoder, |rec, params| {
        serde_json::to_writer(&mut log_file, rec)?;
        log_file.write_all(b"\n")?;
        let done = rec.step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps {
            let mut snap = params.clone();
            quantize_to_f32(&mut snap);
            save_checkpoint(dir.join(format!("step-{done:06}.trjl")), &snap)?;
        }
        Ok(())
    })?;
    log_file.flush()?;
    save_checkpoint(dir.join(FINAL_CHECKPOINT), &outcome.params)?;
    let losses = outcome.losses();
    let metadata = serde_json::json!({
        "train": cfg,
        "bank_size": bank.len(),
        "skipped_steps": outcome.log.len() - losses.len(),
        "final_loss": losses.last(),
    });
    let manifest = CheckpointManifest::new(outcome.params.config(), metadata);
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(outcome)
}
