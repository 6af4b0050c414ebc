//! Architecture / embedding-size / metric / dropout sweep.
//!
//! Each configuration is trained, embedded and evaluated; one CSV row per
//! configuration is written with the header [`SWEEP_HEADER`]. A failing
//! configuration gets `status = error: ...` and empty metric cells; the sweep
//! carries on.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{cluster_purity, evaluate_retrieval, EmbeddingEngine, SearchMode, DEFAULT_K};
use crate::geometry::NormalizedTrajectory;
use crate::retrieval::build_bank;
use crate::similarity::Metric;
use crate::training::{matched_threshold, train_to_dir, TrainConfig};

pub const SWEEP_HEADER: &str =
    "heads,layers,d_emb,metric,input_dropout,attn_dropout,sim_threshold,status,min_ade,min_fde,avg_ade,avg_fde,purity,final_loss";
pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// `(heads, layers)` pairs.
    pub architectures: Vec<(usize, usize)>,
    pub d_embs: Vec<usize>,
    pub metrics: Vec<Metric>,
    /// `(input, attention)` dropout pairs; empty means the encoder defaults.
    #[serde(default)]
    pub dropouts: Vec<(f64, f64)>,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Recalibrate the threshold of non-cosine metrics to the positive-pair
    /// rate cosine reaches at `train.sim_threshold`.
    #[serde(default)]
    pub match_positive_rate: bool,
}

fn default_k() -> usize {
    DEFAULT_K
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() || self.d_embs.is_empty() || self.metrics.is_empty() {
            return Err(Error::InvalidConfig(
                "sweep needs at least one architecture, d_emb and metric".into(),
            ));
        }
        Ok(())
    }

    fn dropout_list(&self) -> Vec<(f64, f64)> {
        if self.dropouts.is_empty() {
            vec![(self.encoder.input_dropout, self.encoder.attn_dropout)]
        } else {
            self.dropouts.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub heads: usize,
    pub layers: usize,
    pub d_emb: usize,
    pub metric: Metric,
    pub input_dropout: f64,
    pub attn_dropout: f64,
    pub sim_threshold: f64,
    pub status: String,
    pub min_ade: Option<f64>,
    pub min_fde: Option<f64>,
    pub avg_ade: Option<f64>,
    pub avg_fde: Option<f64>,
    pub purity: Option<f64>,
    pub final_loss: Option<f64>,
}

impl SweepRow {
    pub fn tag(&self) -> String {
        format!(
            "{}H{}L-d{}-{}-p{}-{}",
            self.heads,
            self.layers,
            self.d_emb,
            self.metric.short_name(),
            self.input_dropout,
            self.attn_dropout
        )
    }

    fn csv_line(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let status = if self.status.contains([',', '"', '\n']) {
            format!("\"{}\"", self.status.replace('"', "\"\"").replace('\n', " "))
        } else {
            self.status.clone()
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.heads,
            self.layers,
            self.d_emb,
            self.metric.short_name(),
            self.input_dropout,
            self.attn_dropout,
            self.sim_threshold,
            status,
            cell(self.min_ade),
            cell(self.min_fde),
            cell(self.avg_ade),
            cell(self.avg_fde),
            cell(self.purity),
            cell(self.final_loss),
        )
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

fn run_one(
    row: &mut SweepRow,
    spec: &SweepSpec,
    train_bank: &[NormalizedTrajectory],
    queries: &[NormalizedTrajectory],
    dir: &Path,
) -> Result<()> {
    let encoder = EncoderConfig {
        d_emb: row.d_emb,
        input_dropout: row.input_dropout,
        attn_dropout: row.attn_dropout,
        ..spec.encoder.clone()
    }
    .with_arch(row.heads, row.layers);
    let train = TrainConfig {
        metric: row.metric,
        sim_threshold: row.sim_threshold,
        ..spec.train.clone()
    };
    let outcome = train_to_dir(train_bank, &train, &encoder, dir)?;
    row.final_loss = outcome.losses().last().copied();
    let bank = build_bank(train_bank, &outcome.params)?;
    let engine = EmbeddingEngine::new(&bank, &outcome.params, SearchMode::Exact);
    let report = evaluate_retrieval(&engine, queries, spec.k)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    row.min_ade = Some(report.aggregate.min_ade);
    row.min_fde = Some(report.aggregate.min_fde);
    row.avg_ade = Some(report.aggregate.avg_ade);
    row.avg_fde = Some(report.aggregate.avg_fde);
    if train_bank.iter().all(|t| t.label.is_some()) {
        row.purity = Some(cluster_purity(&engine, spec.k, None)?);
    }
    Ok(())
}

/// Runs every configuration in order and writes `sweep.csv` into `out_dir`.
pub fn run_sweep(
    spec: &SweepSpec,
    train_bank: &[NormalizedTrajectory],
    queries: &[NormalizedTrajectory],
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for &metric in &spec.metrics {
        let threshold = if spec.match_positive_rate {
            matched_threshold(train_bank, &spec.train, metric)?
        } else {
            spec.train.sim_threshold
        };
        for &(heads, layers) in &spec.architectures {
            for &d_emb in &spec.d_embs {
                for (input_dropout, attn_dropout) in spec.dropout_list() {
                    let mut row = SweepRow {
                        heads,
                        layers,
                        d_emb,
                        metric,
                        input_dropout,
                        attn_dropout,
                        sim_threshold: threshold,
                        status: "ok".into(),
                        min_ade: None,
                        min_fde: None,
                        avg_ade: None,
                        avg_fde: None,
                        purity: None,
                        final_loss: None,
                    };
                    let dir = out_dir.join(row.tag());
                    if let Err(e) = run_one(&mut row, spec, train_bank, queries, &dir) {
                        row.status = format!("error: {e}");
                        row.min_ade = None;
                        row.min_fde = None;
                        row.avg_ade = None;
                        row.avg_fde = None;
                        row.purity = None;
                    }
                    rows.push(row);
                    fs::write(out_dir.join(SWEEP_CSV), sweep_csv(&rows))?;
                }
            }
        }
    }
    Ok(rows)
}
