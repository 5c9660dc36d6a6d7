//! HNSW approximate nearest-neighbor index over unit-norm embeddings, plus an
//! exhaustive scan used as an oracle.
//!
//! Graph construction uses the distance `1 - dot(u, v)` in `f32`. Reported
//! scores are cosines recomputed in `f64`, so approximate and exact search
//! agree bit-for-bit on every id they both return. Result order is
//! `(cosine desc, entry_id asc)`.
//!
//! Node levels come from a ChaCha stream keyed by `(seed, entry_id)`, which
//! makes an index a pure function of its parameters and insertion order.
//! Deletion only tombstones a node; [`HnswIndex::rebuild`] compacts.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{dot, Embedding, EntryId, UNIT_NORM_TOLERANCE};

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HnswParams {
    /// Maximum degree on upper layers; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 32,
            ef_construction: 200,
            ef_search: 128,
            seed: 0x5eed,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<(), DenseError> {
        if self.m < 2 {
            return Err(DenseError::InvalidParams("m must be >= 2"));
        }
        if self.ef_construction < self.m {
            return Err(DenseError::InvalidParams("ef_construction must be >= m"));
        }
        if self.ef_search < 1 {
            return Err(DenseError::InvalidParams("ef_search must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DenseError {
    #[error("entry {0} already indexed")]
    DuplicateId(EntryId),
    #[error("embedding has {found} values, index dimension is {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding is not unit norm (norm {0})")]
    NotUnitNorm(f64),
    #[error("index is empty")]
    EmptyIndex,
    #[error("result count must be >= 1")]
    ZeroResults,
    #[error("entry {0} not indexed")]
    UnknownId(EntryId),
    #[error("invalid HNSW parameters: {0}")]
    InvalidParams(&'static str),
    #[error("inconsistent graph snapshot: {0}")]
    BadSnapshot(&'static str),
}

/// Work done by one search; used to check sub-linear scaling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub visited: usize,
}

#[derive(Clone, Copy)]
struct Cand {
    dist: f32,
    idx: u32,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.idx.cmp(&other.idx))
    }
}

#[inline]
fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    acc.iter().sum::<f32>() + tail
}

struct Visited {
    bits: Vec<u64>,
    count: usize,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            bits: vec![0; n.div_ceil(64)],
            count: 0,
        }
    }

    /// Returns true the first time `idx` is seen.
    #[inline]
    fn insert(&mut self, idx: u32) -> bool {
        let (w, b) = ((idx / 64) as usize, idx % 64);
        let mask = 1u64 << b;
        if self.bits[w] & mask != 0 {
            return false;
        }
        self.bits[w] |= mask;
        self.count += 1;
        true
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Level for a node, drawn from the per-entry stream keyed by `(seed, id)`.
pub fn assign_level(seed: u64, id: EntryId, m: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed) ^ splitmix64(id.0.rotate_left(17)));
    let u: f64 = 1.0 - rng.gen::<f64>();
    let ml = 1.0 / libm::log(m as f64);
    let level = libm::floor(-libm::log(u) * ml);
    (level as usize).min(MAX_LEVEL)
}

/// Serializable view of a graph, used by on-disk segments.
#[derive(Debug, Clone, PartialEq)]
pub struct HnswSnapshot {
    pub params: HnswParams,
    pub dim: usize,
    pub entry_point: Option<u32>,
    pub max_level: usize,
    pub nodes: Vec<NodeSnapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSnapshot {
    pub id: EntryId,
    pub deleted: bool,
    pub vector: Vec<f32>,
    /// Neighbor node indices per layer; `links.len() - 1` is the node level.
    pub links: Vec<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    params: HnswParams,
    dim: usize,
    vectors: Vec<f32>,
    ids: Vec<EntryId>,
    links: Vec<Vec<Vec<u32>>>,
    deleted: Vec<bool>,
    lookup: BTreeMap<EntryId, u32>,
    entry_point: Option<u32>,
    max_level: usize,
    live: usize,
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams) -> Result<Self, DenseError> {
        params.validate()?;
        Ok(Self {
            params,
            dim,
            vectors: Vec::new(),
            ids: Vec::new(),
            links: Vec::new(),
            deleted: Vec::new(),
            lookup: BTreeMap::new(),
            entry_point: None,
            max_level: 0,
            live: 0,
        })
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Live (non-tombstoned) entries.
    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    pub fn contains(&self, id: EntryId) -> bool {
        self.lookup.get(&id).is_some_and(|&i| !self.deleted[i as usize])
    }

    pub fn set_ef_search(&mut self, ef_search: usize) {
        self.params.ef_search = ef_search.max(1);
    }

    #[inline]
    fn vector(&self, idx: u32) -> &[f32] {
        let start = idx as usize * self.dim;
        &self.vectors[start..start + self.dim]
    }

    #[inline]
    fn dist_to(&self, query: &[f32], idx: u32) -> f32 {
        1.0 - dot_f32(query, self.vector(idx))
    }

    fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn check_query(&self, values: &[f32]) -> Result<(), DenseError> {
        if values.len() != self.dim {
            return Err(DenseError::DimensionMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        Ok(())
    }

    pub fn insert(&mut self, id: EntryId, embedding: &Embedding) -> Result<(), DenseError> {
        self.check_query(embedding.values())?;
        let norm = embedding.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(DenseError::NotUnitNorm(norm));
        }
        if self.lookup.contains_key(&id) {
            return Err(DenseError::DuplicateId(id));
        }
        let level = assign_level(self.params.seed, id, self.params.m);
        let idx = self.ids.len() as u32;
        self.vectors.extend_from_slice(embedding.values());
        self.ids.push(id);
        self.links.push(vec![Vec::new(); level + 1]);
        self.deleted.push(false);
        self.lookup.insert(id, idx);
        self.live += 1;

        let Some(mut ep) = self.entry_point else {
            self.entry_point = Some(idx);
            self.max_level = level;
            return Ok(());
        };

        let query: Vec<f32> = embedding.values().to_vec();
        let mut visited = Visited::new(self.ids.len());
        for layer in (level + 1..=self.max_level).rev() {
            ep = self.greedy_closest(&query, ep, layer, &mut visited);
        }
        let mut entry_points = vec![ep];
        for layer in (0..=level.min(self.max_level)).rev() {
            let mut visited = Visited::new(self.ids.len());
            let found = self.search_layer(&query, &entry_points, self.params.ef_construction, layer, &mut visited);
            let neighbors = self.select_neighbors(&found, self.params.m);
            for &n in &neighbors {
                self.links[n as usize][layer].push(idx);
                if self.links[n as usize][layer].len() > self.max_degree(layer) {
                    self.shrink(n, layer);
                }
            }
            self.links[idx as usize][layer] = neighbors;
            entry_points = found.iter().map(|c| c.idx).collect();
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry_point = Some(idx);
        }
        Ok(())
    }

    fn greedy_closest(&self, query: &[f32], start: u32, layer: usize, visited: &mut Visited) -> u32 {
        let mut best = Cand {
            dist: self.dist_to(query, start),
            idx: start,
        };
        visited.count += 1;
        loop {
            let mut improved = false;
            for &n in &self.links[best.idx as usize][layer] {
                visited.count += 1;
                let c = Cand {
                    dist: self.dist_to(query, n),
                    idx: n,
                };
                if c < best {
                    best = c;
                    improved = true;
                }
            }
            if !improved {
                return best.idx;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` candidates, closest first.
    fn search_layer(&self, query: &[f32], entry_points: &[u32], ef: usize, layer: usize, visited: &mut Visited) -> Vec<Cand> {
        let mut frontier: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut best: BinaryHeap<Cand> = BinaryHeap::new();
        for &ep in entry_points {
            if visited.insert(ep) {
                let c = Cand {
                    dist: self.dist_to(query, ep),
                    idx: ep,
                };
                frontier.push(Reverse(c));
                best.push(c);
                if best.len() > ef {
                    best.pop();
                }
            }
        }
        while let Some(Reverse(current)) = frontier.pop() {
            if let Some(worst) = best.peek() {
                if current.dist > worst.dist && best.len() >= ef {
                    break;
                }
            }
            for &n in &self.links[current.idx as usize][layer] {
                if !visited.insert(n) {
                    continue;
                }
                let d = self.dist_to(query, n);
                let admit = best.len() < ef || best.peek().is_some_and(|w| d < w.dist);
                if admit {
                    let c = Cand { dist: d, idx: n };
                    frontier.push(Reverse(c));
                    best.push(c);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every already selected neighbor, then top up with pruned ones.
    fn select_neighbors(&self, sorted: &[Cand], m: usize) -> Vec<u32> {
        let mut selected: Vec<u32> = Vec::with_capacity(m);
        let mut pruned: Vec<u32> = Vec::new();
        for c in sorted {
            if selected.len() >= m {
                break;
            }
            let cv = self.vector(c.idx);
            let diverse = selected
                .iter()
                .all(|&s| 1.0 - dot_f32(cv, self.vector(s)) > c.dist);
            if diverse {
                selected.push(c.idx);
            } else {
                pruned.push(c.idx);
            }
        }
        for p in pruned {
            if selected.len() >= m {
                break;
            }
            selected.push(p);
        }
        selected
    }

    fn shrink(&mut self, node: u32, layer: usize) {
        let base: Vec<f32> = self.vector(node).to_vec();
        let mut cands: Vec<Cand> = self.links[node as usize][layer]
            .iter()
            .map(|&n| Cand {
                dist: self.dist_to(&base, n),
                idx: n,
            })
            .collect();
        cands.sort_unstable();
        let kept = self.select_neighbors(&cands, self.max_degree(layer));
        self.links[node as usize][layer] = kept;
    }

    fn finalize(&self, cands: impl Iterator<Item = u32>, query: &[f32], n: usize) -> Vec<(EntryId, f64)> {
        let mut out: Vec<(EntryId, f64)> = cands
            .filter(|&i| !self.deleted[i as usize])
            .map(|i| (self.ids[i as usize], dot(query, self.vector(i)).clamp(-1.0, 1.0)))
            .collect();
        sort_hits(&mut out);
        out.truncate(n);
        out
    }

    /// Approximate top-`n` by cosine.
    pub fn search(&self, query: &Embedding, n: usize) -> Result<Vec<(EntryId, f64)>, DenseError> {
        self.search_with_stats(query, n, self.params.ef_search).map(|(hits, _)| hits)
    }

    pub fn search_with_stats(
        &self,
        query: &Embedding,
        n: usize,
        ef_search: usize,
    ) -> Result<(Vec<(EntryId, f64)>, SearchStats), DenseError> {
        self.check_query(query.values())?;
        if n == 0 {
            return Err(DenseError::ZeroResults);
        }
        let Some(mut ep) = self.entry_point.filter(|_| self.live > 0) else {
            return Err(DenseError::EmptyIndex);
        };
        let q = query.values();
        let mut visited = Visited::new(self.ids.len());
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy_closest(q, ep, layer, &mut visited);
        }
        let greedy_work = visited.count;
        let mut visited = Visited::new(self.ids.len());
        let found = self.search_layer(q, &[ep], ef_search.max(n), 0, &mut visited);
        let stats = SearchStats {
            visited: greedy_work + visited.count,
        };
        Ok((self.finalize(found.into_iter().map(|c| c.idx), q, n), stats))
    }

    /// Exhaustive top-`n`; same contract and ordering as [`Self::search`].
    pub fn search_exact(&self, query: &Embedding, n: usize) -> Result<Vec<(EntryId, f64)>, DenseError> {
        self.check_query(query.values())?;
        if n == 0 {
            return Err(DenseError::ZeroResults);
        }
        if self.live == 0 {
            return Err(DenseError::EmptyIndex);
        }
        Ok(self.finalize(0..self.ids.len() as u32, query.values(), n))
    }

    /// Tombstones an entry; it stays in the graph for routing until rebuild.
    pub fn remove(&mut self, id: EntryId) -> Result<(), DenseError> {
        match self.lookup.get(&id) {
            Some(&i) if !self.deleted[i as usize] => {
                self.deleted[i as usize] = true;
                self.live -= 1;
                Ok(())
            }
            _ => Err(DenseError::UnknownId(id)),
        }
    }

    /// Re-inserts live entries in their original order, dropping tombstones.
    pub fn rebuild(&self) -> Result<Self, DenseError> {
        let mut fresh = Self::new(self.dim, self.params)?;
        for i in 0..self.ids.len() as u32 {
            if !self.deleted[i as usize] {
                let e = Embedding::raw(self.vector(i).to_vec());
                fresh.insert(self.ids[i as usize], &e)?;
            }
        }
        Ok(fresh)
    }

    pub fn snapshot(&self) -> HnswSnapshot {
        HnswSnapshot {
            params: self.params,
            dim: self.dim,
            entry_point: self.entry_point,
            max_level: self.max_level,
            nodes: (0..self.ids.len())
                .map(|i| NodeSnapshot {
                    id: self.ids[i],
                    deleted: self.deleted[i],
                    vector: self.vector(i as u32).to_vec(),
                    links: self.links[i].clone(),
                })
                .collect(),
        }
    }

    pub fn from_snapshot(snap: HnswSnapshot) -> Result<Self, DenseError> {
        let mut index = Self::new(snap.dim, snap.params)?;
        let n = snap.nodes.len();
        if n > u32::MAX as usize {
            return Err(DenseError::BadSnapshot("too many nodes"));
        }
        match snap.entry_point {
            None if n > 0 => return Err(DenseError::BadSnapshot("missing entry point")),
            Some(ep) if ep as usize >= n => return Err(DenseError::BadSnapshot("entry point out of range")),
            _ => {}
        }
        for (i, node) in snap.nodes.into_iter().enumerate() {
            if node.vector.len() != snap.dim {
                return Err(DenseError::BadSnapshot("vector dimension"));
            }
            if node.links.is_empty() || node.links.len() > snap.max_level + 1 {
                return Err(DenseError::BadSnapshot("node level"));
            }
            if node.links.iter().flatten().any(|&l| l as usize >= n) {
                return Err(DenseError::BadSnapshot("link out of range"));
            }
            if index.lookup.insert(node.id, i as u32).is_some() {
                return Err(DenseError::DuplicateId(node.id));
            }
            index.vectors.extend_from_slice(&node.vector);
            index.ids.push(node.id);
            index.links.push(node.links);
            index.deleted.push(node.deleted);
            if !node.deleted {
                index.live += 1;
            }
        }
        if let Some(ep) = snap.entry_point {
            if index.links[ep as usize].len() != snap.max_level + 1 {
                return Err(DenseError::BadSnapshot("entry point level"));
            }
        }
        index.entry_point = snap.entry_point;
        index.max_level = snap.max_level;
        Ok(index)
    }
}

/// Sorts `(id, cosine)` pairs by cosine descending, then id ascending.
pub fn sort_hits(hits: &mut [(EntryId, f64)]) {
    hits.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize_embedding;
    use rand::Rng;

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
        loop {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            if let Ok(e) = normalize_embedding(&v, dim) {
                return e;
            }
        }
    }

    fn build(n: usize, dim: usize, params: HnswParams, seed: u64) -> (HnswIndex, Vec<Embedding>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut index = HnswIndex::new(dim, params).unwrap();
        let mut vecs = Vec::new();
        for i in 0..n {
            let e = random_unit(&mut rng, dim);
            index.insert(EntryId(i as u64), &e).unwrap();
            vecs.push(e);
        }
        (index, vecs)
    }

    #[test]
    fn params_validated() {
        assert!(HnswParams { m: 1, ..Default::default() }.validate().is_err());
        assert!(HnswParams { m: 8, ef_construction: 4, ..Default::default() }.validate().is_err());
        assert!(HnswParams { ef_search: 0, ..Default::default() }.validate().is_err());
        assert!(HnswParams::default().validate().is_ok());
    }

    #[test]
    fn single_vector_finds_itself() {
        let (index, vecs) = build(1, 16, HnswParams::default(), 1);
        let hits = index.search(&vecs[0], 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, EntryId(0));
        assert!((hits[0].1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn duplicate_and_dimension_errors() {
        let (mut index, vecs) = build(2, 16, HnswParams::default(), 2);
        assert_eq!(index.insert(EntryId(1), &vecs[0]), Err(DenseError::DuplicateId(EntryId(1))));
        let wrong = normalize_embedding(&[1.0, 0.0], 2).unwrap();
        assert!(matches!(index.insert(EntryId(9), &wrong), Err(DenseError::DimensionMismatch { .. })));
        assert!(matches!(index.search(&wrong, 1), Err(DenseError::DimensionMismatch { .. })));
        assert_eq!(index.search(&vecs[0], 0), Err(DenseError::ZeroResults));
        let empty = HnswIndex::new(16, HnswParams::default()).unwrap();
        assert_eq!(empty.search(&vecs[0], 1), Err(DenseError::EmptyIndex));
        assert_eq!(empty.search_exact(&vecs[0], 1), Err(DenseError::EmptyIndex));
        let raw = Embedding::raw(alloc::vec![0.5; 16]);
        assert!(matches!(index.insert(EntryId(5), &raw), Err(DenseError::NotUnitNorm(_))));
    }

    #[test]
    fn every_stored_vector_ranks_itself_first() {
        let (index, vecs) = build(1000, 32, HnswParams::default(), 3);
        for (i, v) in vecs.iter().enumerate() {
            let exact = index.search_exact(v, 1).unwrap();
            assert_eq!(exact[0].0, EntryId(i as u64));
            let approx = index.search(v, 1).unwrap();
            assert_eq!(approx[0].0, EntryId(i as u64), "vector {i}");
        }
    }

    #[test]
    fn orthogonal_query_ties_break_by_id() {
        let dim = 16;
        let mut index = HnswIndex::new(dim, HnswParams { m: 4, ef_construction: 8, ef_search: 8, seed: 1 }).unwrap();
        for i in 0..6u64 {
            let mut v = alloc::vec![0.0f32; dim];
            v[(i % 3) as usize] = 1.0;
            index.insert(EntryId(10 - i), &normalize_embedding(&v, dim).unwrap()).unwrap();
        }
        let mut q = alloc::vec![0.0f32; dim];
        q[15] = 1.0;
        let q = normalize_embedding(&q, dim).unwrap();
        let exact = index.search_exact(&q, 6).unwrap();
        let ids: Vec<u64> = exact.iter().map(|h| h.0 .0).collect();
        assert_eq!(ids, alloc::vec![5, 6, 7, 8, 9, 10]);
        assert!(exact.iter().all(|h| h.1 == 0.0));
        assert_eq!(index.search(&q, 6).unwrap(), exact);
    }

    #[test]
    fn large_beam_equals_exact() {
        let (mut index, _) = build(600, 24, HnswParams { m: 8, ef_construction: 32, ef_search: 8, seed: 7 }, 4);
        index.set_ef_search(600);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let q = random_unit(&mut rng, 24);
            assert_eq!(index.search(&q, 10).unwrap(), index.search_exact(&q, 10).unwrap());
        }
    }

    #[test]
    fn deterministic_for_seed_and_order() {
        let p = HnswParams { m: 8, ef_construction: 40, ef_search: 20, seed: 11 };
        let (a, _) = build(300, 16, p, 5);
        let (b, _) = build(300, 16, p, 5);
        assert_eq!(a.snapshot(), b.snapshot());
    }

    #[test]
    fn tombstones_and_rebuild() {
        let (mut index, vecs) = build(200, 16, HnswParams { m: 8, ef_construction: 32, ef_search: 64, seed: 3 }, 6);
        index.remove(EntryId(7)).unwrap();
        assert_eq!(index.remove(EntryId(7)), Err(DenseError::UnknownId(EntryId(7))));
        assert_eq!(index.len(), 199);
        assert!(!index.contains(EntryId(7)));
        let hits = index.search(&vecs[7], 200).unwrap();
        assert!(hits.iter().all(|h| h.0 != EntryId(7)));
        let rebuilt = index.rebuild().unwrap();
        assert_eq!(rebuilt.len(), 199);
        assert_eq!(rebuilt.snapshot().nodes.len(), 199);
        assert_eq!(rebuilt.search_exact(&vecs[8], 3).unwrap(), index.search_exact(&vecs[8], 3).unwrap());
    }

    #[test]
    fn snapshot_round_trip_and_validation() {
        let (index, vecs) = build(100, 8, HnswParams { m: 4, ef_construction: 16, ef_search: 16, seed: 9 }, 8);
        let snap = index.snapshot();
        let restored = HnswIndex::from_snapshot(snap.clone()).unwrap();
        assert_eq!(restored.search(&vecs[3], 5).unwrap(), index.search(&vecs[3], 5).unwrap());
        let mut broken = snap.clone();
        broken.nodes[0].links[0].push(1000);
        assert!(HnswIndex::from_snapshot(broken).is_err());
        let mut broken = snap;
        broken.entry_point = Some(500);
        assert!(HnswIndex::from_snapshot(broken).is_err());
    }

    #[test]
    fn levels_follow_geometric_decay() {
        let m = 16;
        let levels: Vec<usize> = (0..20_000u64).map(|i| assign_level(1, EntryId(i), m)).collect();
        let above = levels.iter().filter(|&&l| l >= 1).count() as f64 / levels.len() as f64;
        // P(level >= 1) = 1/m
        assert!((above - 1.0 / m as f64).abs() < 0.01, "{above}");
        assert_eq!(assign_level(1, EntryId(5), m), assign_level(1, EntryId(5), m));
    }
}
