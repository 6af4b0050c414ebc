use rand::seq::index;

use crate::error::Result;
use crate::geometry::NormalizedTrajectory;
use crate::rng;
use crate::similarity::{similarity_matrix_masked, Metric};

use super::TrainConfig;

/// Members drawn when estimating positive-pair rates.
pub const CALIBRATION_SAMPLE: usize = 400;

/// Threshold for `metric` that yields the same fraction of positive pairs
/// as cosine-combined similarity does at `cfg.sim_threshold`, estimated on a
/// seeded sample of the bank.
pub fn matched_threshold(bank: &[NormalizedTrajectory], cfg: &TrainConfig, metric: Metric) -> Result<f64> {
    if metric == Metric::CosineCombined || bank.len() < 2 {
        return Ok(cfg.sim_threshold);
    }
    let mut rng = rng::substream(cfg.seed, "calibration");
    let n = bank.len().min(CALIBRATION_SAMPLE);
    let mut picks = index::sample(&mut rng, bank.len(), n).into_vec();
    picks.sort_unstable();
    let sample: Vec<NormalizedTrajectory> = picks.iter().map(|&i| bank[i].clone()).collect();
    let reference = similarity_matrix_masked(&sample, Metric::CosineCombined, cfg.alpha)?;
    let rate = reference.positive_rate(cfg.sim_threshold);
    let target = similarity_matrix_masked(&sample, metric, cfg.alpha)?;
    Ok(target.threshold_for_rate(rate).min(1f64.next_down()))
}
