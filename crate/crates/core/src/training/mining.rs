//! Online triplet mining inside a batch.
//!
//! Positives are every other batch member whose input-space similarity to the
//! anchor is at least the threshold; each ordered (anchor, positive) pair gets
//! exactly one negative drawn from members strictly below the threshold.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encoder::Embedding;
use crate::rng::Rng;
use crate::similarity::SimilarityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningPhase {
    /// `d(a, n) < d(a, p)`
    Hard,
    /// `d(a, p) < d(a, n) < d(a, p) + margin`
    SemiHard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningMode {
    Random,
    /// Semi-hard band for the first half of training, hard band afterwards.
    Dynamic,
}

struct Pools {
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

fn pools(sim: &SimilarityMatrix, anchor: usize, threshold: f64) -> Option<Pools> {
    if sim.is_excluded(anchor) {
        return None;
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (j, &s) in sim.row(anchor).iter().enumerate() {
        if j == anchor || sim.is_excluded(j) || s.is_nan() {
            continue;
        }
        if s >= threshold {
            positives.push(j);
        } else {
            negatives.push(j);
        }
    }
    (!positives.is_empty() && !negatives.is_empty()).then_some(Pools { positives, negatives })
}

/// One uniformly random below-threshold negative per (anchor, positive) pair.
pub fn mine_random(sim: &SimilarityMatrix, threshold: f64, rng: &mut Rng) -> Vec<Triplet> {
    let mut out = Vec::new();
    for anchor in 0..sim.size {
        let Some(p) = pools(sim, anchor, threshold) else {
            continue;
        };
        for &positive in &p.positives {
            let negative = p.negatives[rng.gen_range(0..p.negatives.len())];
            out.push(Triplet {
                anchor,
                positive,
                negative,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicMining {
    pub triplets: Vec<Triplet>,
    /// Triplets whose negative came from the random fallback (empty band).
    pub fallback_count: usize,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Like [`mine_random`], but the negative is drawn from the phase's
/// embedding-distance band when that band is non-empty.
pub fn mine_dynamic(
    sim: &SimilarityMatrix,
    embeddings: &[Embedding],
    threshold: f64,
    phase: MiningPhase,
    margin: f64,
    rng: &mut Rng,
) -> DynamicMining {
    assert_eq!(embeddings.len(), sim.size, "one embedding per batch member");
    let mut triplets = Vec::new();
    let mut fallback_count = 0;
    let mut band = Vec::new();
    for anchor in 0..sim.size {
        let Some(p) = pools(sim, anchor, threshold) else {
            continue;
        };
        let ea = &embeddings[anchor].values;
        let d_neg: Vec<f64> = p.negatives.iter().map(|&n| euclid(ea, &embeddings[n].values)).collect();
        for &positive in &p.positives {
            let d_ap = euclid(ea, &embeddings[positive].values);
            band.clear();
            band.extend(p.negatives.iter().zip(&d_neg).filter_map(|(&n, &d_an)| {
                let inside = match phase {
                    MiningPhase::Hard => d_an < d_ap,
                    MiningPhase::SemiHard => d_ap < d_an && d_an < d_ap + margin,
                };
                inside.then_some(n)
            }));
            let negative = if band.is_empty() {
                fallback_count += 1;
                p.negatives[rng.gen_range(0..p.negatives.len())]
            } else {
                band[rng.gen_range(0..band.len())]
            };
            triplets.push(Triplet {
                anchor,
                positive,
                negative,
            });
        }
    }
    DynamicMining {
        triplets,
        fallback_count,
    }
}

/// Checks the threshold predicates of every triplet against the matrix.
pub fn verify_triplets(sim: &SimilarityMatrix, threshold: f64, triplets: &[Triplet]) -> bool {
    triplets.iter().all(|t| {
        t.anchor != t.positive
            && t.anchor != t.negative
            && t.positive != t.negative
            && sim.get(t.anchor, t.positive) >= threshold
            && sim.get(t.anchor, t.negative) < threshold
    })
}
