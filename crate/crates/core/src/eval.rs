//! Retrieval metrics (minADE, minFDE, avgADE, avgFDE at K) and label purity.
//!
//! All metrics are computed in the canonical (normalized) frame.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{embed_trajectory, EncoderParams};
use crate::error::{Error, Result};
use crate::geometry::{ade, fde, NormalizedTrajectory, Point};
use crate::retrieval::{quantize_query, search_exact, EmbeddingBank, IvfIndex, QueryResult};

pub const DEFAULT_K: usize = 6;
pub const REPORT_FORMAT: &str = "trajlet-report";
pub const REPORT_VERSION: u32 = 1;

fn over<C: AsRef<[Point]>>(
    query: &[Point],
    candidates: &[C],
    f: fn(&[Point], &[Point]) -> Result<f64>,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    candidates.iter().map(|c| f(query, c.as_ref())).collect()
}

fn min_of(v: Vec<f64>) -> f64 {
    v.into_iter().fold(f64::INFINITY, f64::min)
}

fn mean_of(v: Vec<f64>) -> f64 {
    let n = v.len() as f64;
    v.into_iter().sum::<f64>() / n
}

pub fn min_ade<C: AsRef<[Point]>>(query: &[Point], candidates: &[C]) -> Result<f64> {
    over(query, candidates, ade).map(min_of)
}

pub fn min_fde<C: AsRef<[Point]>>(query: &[Point], candidates: &[C]) -> Result<f64> {
    over(query, candidates, fde).map(min_of)
}

pub fn avg_ade<C: AsRef<[Point]>>(query: &[Point], candidates: &[C]) -> Result<f64> {
    over(query, candidates, ade).map(mean_of)
}

pub fn avg_fde<C: AsRef<[Point]>>(query: &[Point], candidates: &[C]) -> Result<f64> {
    over(query, candidates, fde).map(mean_of)
}

/// Anything that returns the `k` bank trajectories closest to a query.
pub trait RetrievalEngine: Sync {
    fn name(&self) -> String;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn trajectory(&self, index: usize) -> &NormalizedTrajectory;

    fn query(&self, query: &NormalizedTrajectory, k: usize) -> Result<QueryResult>;

    /// Query with bank member `index`; engines may reuse precomputed state.
    fn query_member(&self, index: usize, k: usize) -> Result<QueryResult> {
        self.query(self.trajectory(index), k)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SearchMode<'a> {
    Exact,
    Ivf { index: &'a IvfIndex, nprobe: usize },
}

/// Learned retrieval: embed the query, then search the bank.
pub struct EmbeddingEngine<'a> {
    pub bank: &'a EmbeddingBank,
    pub params: &'a EncoderParams,
    pub mode: SearchMode<'a>,
}

impl<'a> EmbeddingEngine<'a> {
    pub fn new(bank: &'a EmbeddingBank, params: &'a EncoderParams, mode: SearchMode<'a>) -> Self {
        Self { bank, params, mode }
    }

    pub fn search(&self, query: &[f64], k: usize) -> QueryResult {
        match self.mode {
            SearchMode::Exact => search_exact(self.bank, query, k),
            SearchMode::Ivf { index, nprobe } => index.search(self.bank, query, k, nprobe),
        }
    }
}

impl RetrievalEngine for EmbeddingEngine<'_> {
    fn name(&self) -> String {
        match self.mode {
            SearchMode::Exact => "embedding-exact".into(),
            SearchMode::Ivf { index, nprobe } => format!("embedding-ivf-{}-{nprobe}", index.nlist),
        }
    }

    fn len(&self) -> usize {
        self.bank.len()
    }

    fn trajectory(&self, index: usize) -> &NormalizedTrajectory {
        &self.bank.trajectories()[index]
    }

    fn query(&self, query: &NormalizedTrajectory, k: usize) -> Result<QueryResult> {
        let e = embed_trajectory(self.params, query)?;
        Ok(self.search(&quantize_query(&e.values), k))
    }

    fn query_member(&self, index: usize, k: usize) -> Result<QueryResult> {
        let row: Vec<f64> = self.bank.row(index).iter().map(|&v| v as f64).collect();
        Ok(self.search(&row, k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub min_ade: f64,
    pub min_fde: f64,
    pub avg_ade: f64,
    pub avg_fde: f64,
}

impl MetricSet {
    pub fn of<C: AsRef<[Point]>>(query: &[Point], candidates: &[C]) -> Result<Self> {
        let ades = over(query, candidates, ade)?;
        let fdes = over(query, candidates, fde)?;
        Ok(Self {
            min_ade: min_of(ades.clone()),
            avg_ade: mean_of(ades),
            min_fde: min_of(fdes.clone()),
            avg_fde: mean_of(fdes),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query_id: String,
    pub neighbor_ids: Vec<String>,
    #[serde(flatten)]
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub format: String,
    pub version: u32,
    pub engine: String,
    pub k: usize,
    pub query_count: usize,
    pub bank_size: usize,
    /// Means over all queries.
    pub aggregate: MetricSet,
    pub queries: Vec<QueryRow>,
}

/// Retrieves `k` candidates per query and scores them.
pub fn evaluate_retrieval<E: RetrievalEngine + ?Sized>(
    engine: &E,
    queries: &[NormalizedTrajectory],
    k: usize,
) -> Result<RetrievalReport> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let rows: Vec<QueryRow> = queries
        .par_iter()
        .map(|q| {
            let run = || -> Result<QueryRow> {
                let result = engine.query(q, k)?;
                let cands: Vec<&[Point]> = result
                    .neighbors
                    .iter()
                    .map(|n| engine.trajectory(n.index).points.as_slice())
                    .collect();
                Ok(QueryRow {
                    query_id: q.source_id.clone(),
                    neighbor_ids: result.neighbors.into_iter().map(|n| n.id).collect(),
                    metrics: MetricSet::of(&q.points, &cands)?,
                })
            };
            run().map_err(|e| e.context(q.source_id.clone()))
        })
        .collect::<Result<_>>()?;
    let n = rows.len().max(1) as f64;
    let mut agg = MetricSet {
        min_ade: 0.0,
        min_fde: 0.0,
        avg_ade: 0.0,
        avg_fde: 0.0,
    };
    for r in &rows {
        agg.min_ade += r.metrics.min_ade;
        agg.min_fde += r.metrics.min_fde;
        agg.avg_ade += r.metrics.avg_ade;
        agg.avg_fde += r.metrics.avg_fde;
    }
    agg.min_ade /= n;
    agg.min_fde /= n;
    agg.avg_ade /= n;
    agg.avg_fde /= n;
    Ok(RetrievalReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        engine: engine.name(),
        k,
        query_count: rows.len(),
        bank_size: engine.len(),
        aggregate: agg,
        queries: rows,
    })
}

/// Mean fraction of each member's top-`k` neighbors (itself excluded) that
/// share its label. `only` restricts which members act as queries.
pub fn cluster_purity<E: RetrievalEngine + ?Sized>(engine: &E, k: usize, only: Option<&[&str]>) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let labels: Vec<&str> = (0..engine.len())
        .map(|i| {
            let t = engine.trajectory(i);
            t.label
                .as_deref()
                .ok_or_else(|| Error::MissingLabels(t.source_id.clone()))
        })
        .collect::<Result<_>>()?;
    let queries: Vec<usize> = (0..labels.len())
        .filter(|&i| only.is_none_or(|set| set.contains(&labels[i])))
        .collect();
    if queries.is_empty() {
        return Err(Error::InvalidConfig("no labeled queries for purity".into()));
    }
    let fractions: Vec<f64> = queries
        .par_iter()
        .map(|&i| {
            let result = engine.query_member(i, k + 1)?;
            let mut idx = result.indices();
            match idx.iter().position(|&j| j == i) {
                Some(p) => {
                    idx.remove(p);
                }
                None => {
                    idx.truncate(k);
                }
            }
            if idx.is_empty() {
                return Ok(0.0);
            }
            let same = idx.iter().filter(|&&j| labels[j] == labels[i]).count();
            Ok(same as f64 / idx.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(fractions.iter().sum::<f64>() / fractions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(offset: f64) -> Vec<Point> {
        (0..5).map(|i| Point::new(i as f64, offset)).collect()
    }

    #[test]
    fn hand_arithmetic() {
        let q = line(0.0);
        let cands = vec![line(1.0), line(3.0)];
        assert_eq!(min_ade(&q, &cands).unwrap(), 1.0);
        assert_eq!(avg_ade(&q, &cands).unwrap(), 2.0);
        assert_eq!(min_fde(&q, &cands).unwrap(), 1.0);
        assert_eq!(avg_fde(&q, &cands).unwrap(), 2.0);
    }

    #[test]
    fn query_among_candidates_gives_zero_min() {
        let q = line(0.0);
        let cands = vec![line(2.0), q.clone()];
        assert_eq!(min_ade(&q, &cands).unwrap(), 0.0);
        assert_eq!(min_fde(&q, &cands).unwrap(), 0.0);
        assert_eq!(avg_fde(&q, &vec![q.clone(); 6]).unwrap(), 0.0);
    }

    #[test]
    fn identical_candidates_make_avg_equal_min() {
        let q = line(0.0);
        let cands = vec![line(0.5); 4];
        assert_eq!(min_ade(&q, &cands).unwrap(), avg_ade(&q, &cands).unwrap());
    }

    #[test]
    fn empty_candidates_error() {
        let none: Vec<Vec<Point>> = vec![];
        assert!(matches!(min_ade(&line(0.0), &none), Err(Error::EmptyCandidates)));
        assert!(matches!(avg_fde(&line(0.0), &none), Err(Error::EmptyCandidates)));
    }
}
