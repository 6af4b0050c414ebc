//! Non-learned retrieval: precomputed ADE matrix, endpoint k-d tree and
//! multi-waypoint k-d trees.
//!
//! Distance matrix file (`TRJD`), little-endian:
//!
//! ```text
//! "TRJD" | version u32 = 1 | N u64
//! N x (id length u32 | id UTF-8 bytes)
//! N x N f64 ADE values, row-major
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::RetrievalEngine;
use crate::geometry::{ade, NormalizedTrajectory, Point};
use crate::retrieval::{top_k, QueryResult};

/// Largest bank accepted by [`build_distance_matrix`].
pub const MAX_MATRIX_BANK: usize = 20_000;
pub const MATRIX_MAGIC: &[u8; 4] = b"TRJD";
pub const MATRIX_VERSION: u32 = 1;

fn uniform_length(trajs: &[NormalizedTrajectory]) -> Result<usize> {
    let len = trajs.first().map_or(0, |t| t.len());
    if let Some(bad) = trajs.iter().find(|t| t.len() != len) {
        return Err(Error::LengthMismatch {
            left: len,
            right: bad.len(),
        }
        .context(bad.source_id.clone()));
    }
    Ok(len)
}

/// Symmetric `N x N` ADE matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrixStore {
    pub ids: Vec<String>,
    pub values: Vec<f64>,
}

impl DistanceMatrixStore {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.values.len());
        out.extend_from_slice(MATRIX_MAGIC);
        out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |r: &str| Error::Format {
            kind: "distance-matrix",
            reason: r.into(),
        };
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(at..at + n).ok_or_else(|| bad("truncated file"))?;
            at += n;
            Ok(s)
        };
        if take(4)? != MATRIX_MAGIC {
            return Err(bad("missing TRJD magic"));
        }
        if u32::from_le_bytes(take(4)?.try_into().unwrap()) != MATRIX_VERSION {
            return Err(bad("unsupported version"));
        }
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if n > MAX_MATRIX_BANK {
            return Err(Error::BankTooLarge {
                n,
                limit: MAX_MATRIX_BANK,
            });
        }
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            ids.push(String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("id is not UTF-8"))?);
        }
        let values = take(8 * n * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if at != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { ids, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn build_distance_matrix(trajs: &[NormalizedTrajectory]) -> Result<DistanceMatrixStore> {
    let n = trajs.len();
    if n > MAX_MATRIX_BANK {
        return Err(Error::BankTooLarge {
            n,
            limit: MAX_MATRIX_BANK,
        });
    }
    uniform_length(trajs)?;
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| ade(&trajs[i].points, &trajs[j].points))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(DistanceMatrixStore {
        ids: trajs.iter().map(|t| t.source_id.clone()).collect(),
        values,
    })
}

/// Exact top-`k` bank trajectories by ADE to `query` (linear scan).
pub fn query_distance_matrix(
    store: &DistanceMatrixStore,
    bank: &[NormalizedTrajectory],
    query: &[Point],
    k: usize,
) -> Result<QueryResult> {
    let scored = bank
        .iter()
        .enumerate()
        .map(|(i, t)| Ok((ade(query, &t.points)?, i)))
        .collect::<Result<_>>()?;
    Ok(top_k(&store.ids, scored, k))
}

/// Top-`k` for bank member `index`, read from its stored row.
pub fn query_distance_matrix_row(store: &DistanceMatrixStore, index: usize, k: usize) -> QueryResult {
    let scored = store.row(index).iter().enumerate().map(|(j, &d)| (d, j)).collect();
    top_k(&store.ids, scored, k)
}

#[derive(Debug, Clone, PartialEq)]
struct KdNode {
    point: Point,
    index: usize,
    axis: u8,
    left: Option<usize>,
    right: Option<usize>,
}

/// Balanced 2-D k-d tree (median splits, alternating axes). Payloads are
/// indices into an id table used for tie-breaking.
#[derive(Debug, Clone, PartialEq)]
pub struct KdTree {
    nodes: Vec<KdNode>,
    root: Option<usize>,
}

#[derive(PartialEq)]
struct HeapItem<'a> {
    dist: f64,
    index: usize,
    id: &'a str,
}

impl Eq for HeapItem<'_> {}

impl PartialOrd for HeapItem<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then_with(|| self.id.cmp(other.id))
    }
}

fn coord(p: Point, axis: u8) -> f64 {
    if axis == 0 {
        p.x
    } else {
        p.y
    }
}

impl KdTree {
    pub fn build(points: &[Point]) -> Self {
        let mut items: Vec<(Point, usize)> = points.iter().copied().zip(0..).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(&mut items, 0, &mut nodes);
        Self { nodes, root }
    }

    fn build_rec(items: &mut [(Point, usize)], depth: usize, nodes: &mut Vec<KdNode>) -> Option<usize> {
        if items.is_empty() {
            return None;
        }
        let axis = (depth % 2) as u8;
        items.sort_by(|a, b| coord(a.0, axis).total_cmp(&coord(b.0, axis)).then(a.1.cmp(&b.1)));
        let mid = items.len() / 2;
        let (point, index) = items[mid];
        let slot = nodes.len();
        nodes.push(KdNode {
            point,
            index,
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = items.split_at_mut(mid);
        let left = Self::build_rec(lo, depth + 1, nodes);
        let right = Self::build_rec(&mut rest[1..], depth + 1, nodes);
        nodes[slot].left = left;
        nodes[slot].right = right;
        Some(slot)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Exact `k` nearest by Euclidean distance, ties broken by `ids`.
    pub fn nearest(&self, ids: &[String], query: Point, k: usize) -> QueryResult {
        let mut heap: BinaryHeap<HeapItem> = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            if let Some(root) = self.root {
                self.search(root, ids, query, k, &mut heap);
            }
        }
        let scored = heap.into_iter().map(|h| (h.dist, h.index)).collect();
        top_k(ids, scored, k)
    }

    fn search<'a>(&self, at: usize, ids: &'a [String], q: Point, k: usize, heap: &mut BinaryHeap<HeapItem<'a>>) {
        let node = &self.nodes[at];
        let item = HeapItem {
            dist: q.dist(node.point),
            index: node.index,
            id: &ids[node.index],
        };
        if heap.len() < k {
            heap.push(item);
        } else if item < *heap.peek().unwrap() {
            heap.pop();
            heap.push(item);
        }
        let diff = coord(q, node.axis) - coord(node.point, node.axis);
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.search(n, ids, q, k, heap);
        }
        if let Some(f) = far {
            // ties at the boundary may still beat the worst by id
            if heap.len() < k || diff.abs() <= heap.peek().unwrap().dist {
                self.search(f, ids, q, k, heap);
            }
        }
    }
}

/// k-d tree over canonical-frame final points.
pub struct EndpointKnn<'a> {
    pub bank: &'a [NormalizedTrajectory],
    ids: Vec<String>,
    tree: KdTree,
}

impl<'a> EndpointKnn<'a> {
    pub fn build(bank: &'a [NormalizedTrajectory]) -> Self {
        let ends: Vec<Point> = bank.iter().map(|t| t.endpoint()).collect();
        Self {
            bank,
            ids: bank.iter().map(|t| t.source_id.clone()).collect(),
            tree: KdTree::build(&ends),
        }
    }

    pub fn query_point(&self, endpoint: Point, k: usize) -> QueryResult {
        self.tree.nearest(&self.ids, endpoint, k)
    }
}

impl RetrievalEngine for EndpointKnn<'_> {
    fn name(&self) -> String {
        "endpoint-knn".into()
    }

    fn len(&self) -> usize {
        self.bank.len()
    }

    fn trajectory(&self, index: usize) -> &NormalizedTrajectory {
        &self.bank[index]
    }

    fn query(&self, query: &NormalizedTrajectory, k: usize) -> Result<QueryResult> {
        Ok(self.query_point(query.endpoint(), k))
    }
}

/// `count` time indices spread evenly over `(0, t - 1]`, ending at the last point.
pub fn default_waypoints(t: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, t.saturating_sub(1).max(1));
    (1..=count).map(|i| i * (t - 1) / count).collect()
}

/// One k-d tree per waypoint time index.
///
/// A bank trajectory's score is the sum over waypoints of its distance to the
/// reference point where it made that waypoint's top-`k`, and that
/// waypoint's `k`-th distance where it did not.
pub struct MultipointKnn<'a> {
    pub bank: &'a [NormalizedTrajectory],
    pub waypoints: Vec<usize>,
    ids: Vec<String>,
    trees: Vec<KdTree>,
}

impl<'a> MultipointKnn<'a> {
    pub fn build(bank: &'a [NormalizedTrajectory], waypoints: Vec<usize>) -> Result<Self> {
        let len = uniform_length(bank)?;
        if let Some(&w) = waypoints.iter().find(|&&w| w >= len) {
            return Err(Error::InvalidConfig(format!(
                "waypoint index {w} out of range for length {len}"
            )));
        }
        if waypoints.is_empty() {
            return Err(Error::InvalidConfig("at least one waypoint is required".into()));
        }
        let trees = waypoints
            .iter()
            .map(|&w| KdTree::build(&bank.iter().map(|t| t.points[w]).collect::<Vec<_>>()))
            .collect();
        Ok(Self {
            bank,
            waypoints,
            ids: bank.iter().map(|t| t.source_id.clone()).collect(),
            trees,
        })
    }

    pub fn query_points(&self, reference: &[Point], k: usize) -> Result<QueryResult> {
        if reference.len() != self.waypoints.len() {
            return Err(Error::WaypointCountMismatch {
                expected: self.waypoints.len(),
                got: reference.len(),
            });
        }
        let per: Vec<QueryResult> = self
            .trees
            .iter()
            .zip(reference)
            .map(|(tree, &p)| tree.nearest(&self.ids, p, k))
            .collect();
        let penalties: Vec<f64> = per
            .iter()
            .map(|r| r.neighbors.last().map_or(0.0, |n| n.distance))
            .collect();
        let mut found: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
        for (w, r) in per.iter().enumerate() {
            for n in &r.neighbors {
                found.entry(n.index).or_insert_with(|| vec![None; per.len()])[w] = Some(n.distance);
            }
        }
        let scored = found
            .into_iter()
            .map(|(index, ds)| {
                let score = ds.iter().zip(&penalties).map(|(d, &p)| d.unwrap_or(p)).sum::<f64>();
                (score, index)
            })
            .collect();
        Ok(top_k(&self.ids, scored, k))
    }
}

impl RetrievalEngine for MultipointKnn<'_> {
    fn name(&self) -> String {
        format!("multipoint-knn-{}", self.waypoints.len())
    }

    fn len(&self) -> usize {
        self.bank.len()
    }

    fn trajectory(&self, index: usize) -> &NormalizedTrajectory {
        &self.bank[index]
    }

    fn query(&self, query: &NormalizedTrajectory, k: usize) -> Result<QueryResult> {
        let reference: Vec<Point> = self
            .waypoints
            .iter()
            .map(|&w| query.points.get(w).copied())
            .collect::<Option<_>>()
            .ok_or(Error::LengthMismatch {
                left: self.bank.first().map_or(0, |t| t.len()),
                right: query.len(),
            })?;
        self.query_points(&reference, k)
    }
}

/// Brute-force ADE retrieval backed by a precomputed matrix for bank members.
pub struct DistanceMatrixEngine<'a> {
    pub store: &'a DistanceMatrixStore,
    pub bank: &'a [NormalizedTrajectory],
}

impl RetrievalEngine for DistanceMatrixEngine<'_> {
    fn name(&self) -> String {
        "distance-matrix".into()
    }

    fn len(&self) -> usize {
        self.bank.len()
    }

    fn trajectory(&self, index: usize) -> &NormalizedTrajectory {
        &self.bank[index]
    }

    fn query(&self, query: &NormalizedTrajectory, k: usize) -> Result<QueryResult> {
        query_distance_matrix(self.store, self.bank, &query.points, k)
    }

    fn query_member(&self, index: usize, k: usize) -> Result<QueryResult> {
        Ok(query_distance_matrix_row(self.store, index, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nt(id: &str, pts: &[(f64, f64)]) -> NormalizedTrajectory {
        NormalizedTrajectory::from_canonical(id, None, pts.iter().map(|&p| p.into()).collect())
    }

    #[test]
    fn single_member_matrix_is_zero() {
        let m = build_distance_matrix(&[nt("a", &[(0.0, 0.0), (1.0, 0.0)])]).unwrap();
        assert_eq!(m.values, vec![0.0]);
    }

    #[test]
    fn constant_offset_gives_unit_distance() {
        let m = build_distance_matrix(&[
            nt("a", &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]),
            nt("b", &[(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]),
        ])
        .unwrap();
        assert_eq!(m.values, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn mixed_lengths_are_rejected() {
        let r = build_distance_matrix(&[
            nt("a", &[(0.0, 0.0), (1.0, 0.0)]),
            nt("b", &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]),
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn matrix_bytes_roundtrip() {
        let m = build_distance_matrix(&[
            nt("a", &[(0.0, 0.0), (1.0, 0.3)]),
            nt("b", &[(0.0, 0.0), (2.0, -1.0)]),
            nt("c", &[(0.0, 0.0), (0.5, 0.5)]),
        ])
        .unwrap();
        assert_eq!(DistanceMatrixStore::from_bytes(&m.to_bytes()).unwrap(), m);
    }

    #[test]
    fn kd_tree_coincident_query_first() {
        let pts = [Point::new(1.0, 2.0), Point::new(-3.0, 0.5), Point::new(4.0, 4.0)];
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let tree = KdTree::build(&pts);
        let r = tree.nearest(&ids, Point::new(-3.0, 0.5), 2);
        assert_eq!(r.neighbors[0].id, "b");
        assert_eq!(r.neighbors[0].distance, 0.0);
        assert_eq!(tree.nearest(&ids, Point::ORIGIN, 10).neighbors.len(), 3);
    }

    #[test]
    fn waypoint_count_is_checked() {
        let bank = vec![nt("a", &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])];
        let mp = MultipointKnn::build(&bank, vec![1, 2]).unwrap();
        assert!(matches!(
            mp.query_points(&[Point::ORIGIN], 1),
            Err(Error::WaypointCountMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn default_waypoints_end_at_last_index() {
        assert_eq!(default_waypoints(60, 4), vec![14, 29, 44, 59]);
        assert_eq!(default_waypoints(2, 4), vec![1]);
    }
}
