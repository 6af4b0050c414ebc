//! Embedding bank with exact and IVF nearest-neighbor search.
//!
//! Bank file (`bank.trjb`), little-endian:
//!
//! ```text
//! "TRJB" | version u32 = 1 | N u64 | d_emb u32
//! N x (id length u32 | id UTF-8 bytes)
//! N x d_emb f32 rows
//! ```
//!
//! Canonical-frame trajectories sit next to it in `bank.trj`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{embed_trajectory, EncoderParams};
use crate::error::{Error, Result};
use crate::geometry::NormalizedTrajectory;
use crate::rng;
use crate::trjfile;

pub const BANK_MAGIC: &[u8; 4] = b"TRJB";
pub const BANK_VERSION: u32 = 1;
pub const BANK_FILE: &str = "bank.trjb";
pub const BANK_TRAJECTORIES: &str = "bank.trj";
pub const KMEANS_ITERATIONS: usize = 25;
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    ids: Vec<String>,
    d_emb: usize,
    rows: Vec<f32>,
    trajectories: Vec<NormalizedTrajectory>,
    by_id: HashMap<String, usize>,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "bank",
        reason: reason.into(),
    }
}

impl EmbeddingBank {
    /// Rows are taken as stored; ids come from the trajectories.
    pub fn new(d_emb: usize, rows: Vec<f32>, trajectories: Vec<NormalizedTrajectory>) -> Result<Self> {
        if rows.len() != d_emb * trajectories.len() {
            return Err(Error::InvalidConfig(format!(
                "{} embedding values for {} trajectories of dimension {d_emb}",
                rows.len(),
                trajectories.len()
            )));
        }
        let ids: Vec<String> = trajectories.iter().map(|t| t.source_id.clone()).collect();
        let mut by_id = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if by_id.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate trajectory id {id:?} in bank")));
            }
        }
        if d_emb > 0 {
            for (i, row) in rows.chunks_exact(d_emb).enumerate() {
                let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(Error::InvalidConfig(format!("bank row {} has norm {norm}", ids[i])));
                }
            }
        }
        Ok(Self {
            ids,
            d_emb,
            rows,
            trajectories,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.d_emb..(i + 1) * self.d_emb]
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn trajectories(&self) -> &[NormalizedTrajectory] {
        &self.trajectories
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Distance from `query` to row `i`.
    #[inline]
    pub fn distance(&self, query: &[f64], i: usize) -> f64 {
        row_distance(query, self.row(i))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.rows.len() * 4);
        out.extend_from_slice(BANK_MAGIC);
        out.extend_from_slice(&BANK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.d_emb as u32).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses the binary part; returns ids, dimension and rows.
    pub fn parse_bytes(bytes: &[u8]) -> Result<(Vec<String>, usize, Vec<f32>)> {
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(at..at + n).ok_or_else(|| bad("truncated file"))?;
            at += n;
            Ok(s)
        };
        if take(4)? != BANK_MAGIC {
            return Err(bad("missing TRJB magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != BANK_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(take(len)?).map_err(|_| bad("id is not UTF-8"))?;
            ids.push(id.to_string());
        }
        let body = take(4 * n * d)?;
        let rows = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if at != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok((ids, d, rows))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(BANK_FILE), self.to_bytes())?;
        let mut text = String::new();
        for t in &self.trajectories {
            trjfile::format_record(&mut text, &t.source_id, t.label.as_deref(), &t.points);
        }
        fs::write(dir.join(BANK_TRAJECTORIES), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (ids, d, rows) = Self::parse_bytes(&fs::read(dir.join(BANK_FILE))?)?;
        let trajectories: Vec<NormalizedTrajectory> = trjfile::load(dir.join(BANK_TRAJECTORIES))?
            .into_iter()
            .map(|t| NormalizedTrajectory::from_canonical(t.id, t.label, t.points))
            .collect();
        if trajectories.len() != ids.len() || trajectories.iter().zip(&ids).any(|(t, id)| &t.source_id != id) {
            return Err(bad("trajectory sidecar does not match the id table"));
        }
        Self::new(d, rows, trajectories)
    }
}

#[inline]
fn row_distance(query: &[f64], row: &[f32]) -> f64 {
    query
        .iter()
        .zip(row)
        .map(|(&q, &r)| {
            let d = q - r as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Rounds a query through `f32` so it compares bit-for-bit with stored rows.
pub fn quantize_query(query: &[f64]) -> Vec<f64> {
    query.iter().map(|&v| v as f32 as f64).collect()
}

/// Eval-mode embeddings of every trajectory, stored as `f32`.
pub fn build_bank(trajectories: &[NormalizedTrajectory], params: &EncoderParams) -> Result<EmbeddingBank> {
    let rows: Vec<Vec<f64>> = trajectories
        .par_iter()
        .map(|t| {
            embed_trajectory(params, t)
                .map(|e| e.values)
                .map_err(|e| e.context(t.source_id.clone()))
        })
        .collect::<Result<_>>()?;
    let flat = rows.iter().flatten().map(|&v| v as f32).collect();
    EmbeddingBank::new(params.config().d_emb, flat, trajectories.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub k: usize,
    /// Ascending by distance, ties broken by id.
    pub neighbors: Vec<Neighbor>,
}

impl QueryResult {
    pub fn ids(&self) -> Vec<&str> {
        self.neighbors.iter().map(|n| n.id.as_str()).collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.neighbors.iter().map(|n| n.index).collect()
    }
}

/// Top `k` of `(distance, index)` candidates, ordered by distance then id.
pub fn top_k(ids: &[String], mut scored: Vec<(f64, usize)>, k: usize) -> QueryResult {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then_with(|| ids[a.1].cmp(&ids[b.1]));
    if scored.len() > k && k > 0 {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored.truncate(k);
    QueryResult {
        k,
        neighbors: scored
            .into_iter()
            .map(|(distance, index)| Neighbor {
                id: ids[index].clone(),
                index,
                distance,
            })
            .collect(),
    }
}

pub fn search_exact(bank: &EmbeddingBank, query: &[f64], k: usize) -> QueryResult {
    let scored = (0..bank.len()).map(|i| (bank.distance(query, i), i)).collect();
    top_k(&bank.ids, scored, k)
}

/// Inverted-file index over bank rows.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    pub nlist: usize,
    pub build_seed: u64,
    pub d_emb: usize,
    /// `nlist x d_emb`, unit-normalized.
    pub centroids: Vec<f64>,
    pub lists: Vec<Vec<usize>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[f64], d: usize, x: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, cen) in centroids.chunks_exact(d).enumerate() {
        let dist = sq_dist(x, cen);
        if dist < best.0 {
            best = (dist, c);
        }
    }
    best.1
}

fn normalize_rows(centroids: &mut [f64], d: usize) {
    for c in centroids.chunks_exact_mut(d) {
        let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            c.iter_mut().for_each(|v| *v /= n);
        }
    }
}

impl IvfIndex {
    /// Spherical k-means: [`KMEANS_ITERATIONS`] rounds of assign / mean /
    /// renormalize from `nlist` distinct sampled rows. An emptied cluster takes
    /// the member of the currently largest cluster farthest from that
    /// cluster's centroid.
    pub fn build(bank: &EmbeddingBank, nlist: usize, seed: u64) -> Result<Self> {
        if nlist == 0 {
            return Err(Error::InvalidConfig("nlist must be >= 1".into()));
        }
        let n = bank.len();
        if n < nlist {
            return Err(Error::TooFewVectors { needed: nlist, have: n });
        }
        let d = bank.d_emb;
        let data: Vec<f64> = bank.rows.iter().map(|&v| v as f64).collect();
        let row = |i: usize| &data[i * d..(i + 1) * d];
        let mut rng = rng::substream(seed, "kmeans");
        let mut centroids: Vec<f64> = index::sample(&mut rng, n, nlist)
            .into_iter()
            .flat_map(|i| row(i).to_vec())
            .collect();
        let mut assign = vec![0usize; n];

        for _ in 0..KMEANS_ITERATIONS {
            assign = (0..n).into_par_iter().map(|i| nearest(&centroids, d, row(i))).collect();
            let mut counts = vec![0usize; nlist];
            for &c in &assign {
                counts[c] += 1;
            }
            while let Some(empty) = counts.iter().position(|&c| c == 0) {
                let largest = (0..nlist).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
                if counts[largest] < 2 {
                    break;
                }
                let cen = centroids[largest * d..(largest + 1) * d].to_vec();
                let far = (0..n)
                    .filter(|&i| assign[i] == largest)
                    .max_by(|&a, &b| sq_dist(row(a), &cen).total_cmp(&sq_dist(row(b), &cen)).then(b.cmp(&a)))
                    .unwrap();
                assign[far] = empty;
                counts[largest] -= 1;
                counts[empty] += 1;
            }
            let mut sums = vec![0.0; nlist * d];
            for (i, &c) in assign.iter().enumerate() {
                for (s, &v) in sums[c * d..(c + 1) * d].iter_mut().zip(row(i)) {
                    *s += v;
                }
            }
            for c in 0..nlist {
                if counts[c] > 0 {
                    for (dst, &s) in centroids[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                        *dst = s / counts[c] as f64;
                    }
                }
            }
            normalize_rows(&mut centroids, d);
        }
        assign = (0..n).into_par_iter().map(|i| nearest(&centroids, d, row(i))).collect();
        let mut lists = vec![Vec::new(); nlist];
        for (i, &c) in assign.iter().enumerate() {
            lists[c].push(i);
        }
        Ok(Self {
            nlist,
            build_seed: seed,
            d_emb: d,
            centroids,
            lists,
        })
    }

    /// The `nprobe` centroids nearest to `query`, nearest first (ties by list index).
    pub fn probe_order(&self, query: &[f64], nprobe: usize) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = self
            .centroids
            .chunks_exact(self.d_emb)
            .enumerate()
            .map(|(c, cen)| (sq_dist(query, cen), c))
            .collect();
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().take(nprobe).map(|(_, c)| c).collect()
    }

    pub fn search(&self, bank: &EmbeddingBank, query: &[f64], k: usize, nprobe: usize) -> QueryResult {
        let nprobe = nprobe.clamp(1, self.nlist);
        let scored = self
            .probe_order(query, nprobe)
            .into_iter()
            .flat_map(|c| self.lists[c].iter().copied())
            .map(|i| (bank.distance(query, i), i))
            .collect();
        top_k(&bank.ids, scored, k)
    }
}

pub fn build_ivf(bank: &EmbeddingBank, nlist: usize, seed: u64) -> Result<IvfIndex> {
    IvfIndex::build(bank, nlist, seed)
}

pub fn search_ivf(index: &IvfIndex, bank: &EmbeddingBank, query: &[f64], k: usize, nprobe: usize) -> QueryResult {
    index.search(bank, query, k, nprobe)
}

/// Payload trajectories of a result, in result order.
pub fn retrieve_trajectories(bank: &EmbeddingBank, result: &QueryResult) -> Result<Vec<NormalizedTrajectory>> {
    result
        .neighbors
        .iter()
        .map(|n| {
            bank.index_of(&n.id)
                .map(|i| bank.trajectories[i].clone())
                .ok_or_else(|| Error::UnknownId(n.id.clone()))
        })
        .collect()
}

/// Fraction of the exact top-`k` ids that `approx` also returned.
pub fn recall_at_k(exact: &QueryResult, approx: &QueryResult) -> f64 {
    if exact.neighbors.is_empty() {
        return 1.0;
    }
    let found = exact
        .neighbors
        .iter()
        .filter(|n| approx.neighbors.iter().any(|a| a.index == n.index))
        .count();
    found as f64 / exact.neighbors.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn traj(id: &str) -> NormalizedTrajectory {
        NormalizedTrajectory::from_canonical(id, None, vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)])
    }

    fn toy_bank(rows: &[[f32; 2]]) -> EmbeddingBank {
        let trajs = (0..rows.len()).map(|i| traj(&format!("t{i}"))).collect();
        EmbeddingBank::new(2, rows.iter().flatten().copied().collect(), trajs).unwrap()
    }

    #[test]
    fn empty_bank_is_valid_and_returns_nothing() {
        let bank = EmbeddingBank::new(4, vec![], vec![]).unwrap();
        assert!(search_exact(&bank, &[1.0, 0.0, 0.0, 0.0], 6).neighbors.is_empty());
    }

    #[test]
    fn exact_search_orders_and_breaks_ties_by_id() {
        let bank = toy_bank(&[[1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0]]);
        let r = search_exact(&bank, &[1.0, 0.0], 10);
        assert_eq!(r.ids(), vec!["t0", "t1", "t2", "t3"]);
        assert_eq!(r.neighbors[0].distance, 0.0);
        assert_eq!(r.neighbors[1].distance, r.neighbors[2].distance);
    }

    #[test]
    fn invariants_are_checked() {
        let trajs = vec![traj("a"), traj("a")];
        assert!(EmbeddingBank::new(1, vec![1.0, 1.0], trajs).is_err());
        assert!(EmbeddingBank::new(1, vec![0.5], vec![traj("a")]).is_err());
        assert!(EmbeddingBank::new(2, vec![1.0], vec![traj("a")]).is_err());
    }

    #[test]
    fn too_few_vectors_for_ivf() {
        let bank = toy_bank(&[[1.0, 0.0]]);
        assert!(matches!(
            build_ivf(&bank, 2, 0),
            Err(Error::TooFewVectors { needed: 2, have: 1 })
        ));
    }

    #[test]
    fn unknown_id_is_reported() {
        let bank = toy_bank(&[[1.0, 0.0]]);
        let r = QueryResult {
            k: 1,
            neighbors: vec![Neighbor {
                id: "nope".into(),
                index: 0,
                distance: 0.0,
            }],
        };
        assert!(matches!(retrieve_trajectories(&bank, &r), Err(Error::UnknownId(_))));
    }

    #[test]
    fn bytes_roundtrip_and_reject_corruption() {
        let bank = toy_bank(&[[1.0, 0.0], [0.0, 1.0]]);
        let bytes = bank.to_bytes();
        let (ids, d, rows) = EmbeddingBank::parse_bytes(&bytes).unwrap();
        assert_eq!((ids.as_slice(), d, rows.as_slice()), (bank.ids(), 2, bank.rows()));
        assert!(EmbeddingBank::parse_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[3] = b'X';
        assert!(EmbeddingBank::parse_bytes(&wrong).is_err());
    }
}
