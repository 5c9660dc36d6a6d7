//! Fusion scoring and the merge-and-rank retrieval procedure.
//!
//! `score = λ_s·cos(v_i, v_q) + λ_e·entity_match + λ_c·discourse_match`,
//! computed over the union of the dense top-`n` and the symbolic candidates.
//! A query missing a feature scores 0 on that term; weights are never
//! renormalized. Final order is `(score desc, timestamp desc, entry_id asc)`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::dense::DenseError;
use crate::model::{dot, DiscourseLabel, EntityMention, EntryId, FusionWeights, MemoryEntry, Query, RankedResult};
use crate::store::MemoryStore;
use crate::symbolic::{KeyFamilies, SymbolicIndex, DEFAULT_CANDIDATE_CAP};

pub const DEFAULT_DENSE_N: usize = 50;
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscourseMode {
    /// 1 if the label sets intersect.
    Binary,
    /// Jaccard overlap of the label sets.
    #[default]
    Graded,
}

/// How a query entity's weight depends on its cluster size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterWeighting {
    /// `ln(1 + size)`, `ln 2` for unseen clusters.
    #[default]
    Log,
    /// `size`, 1 for unseen clusters.
    Linear,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntityMatchMode {
    /// Coreference id match, falling back to the lowercased surface name.
    #[default]
    CorefOrName,
    /// Surface names only (coreference disabled).
    NameOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenseMode {
    #[default]
    Approximate,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig {
    pub weights: FusionWeights,
    pub dense_n: usize,
    pub symbolic_cap: usize,
    pub k: usize,
    pub discourse_mode: DiscourseMode,
    pub weighting: ClusterWeighting,
    pub entity_mode: EntityMatchMode,
    pub dense_mode: DenseMode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            weights: FusionWeights::default(),
            dense_n: DEFAULT_DENSE_N,
            symbolic_cap: DEFAULT_CANDIDATE_CAP,
            k: DEFAULT_K,
            discourse_mode: DiscourseMode::default(),
            weighting: ClusterWeighting::default(),
            entity_mode: EntityMatchMode::default(),
            dense_mode: DenseMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("store is empty")]
    EmptyStore,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(&'static str),
    #[error("query embedding has {found} values, store dimension is {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dense index: {0}")]
    Dense(DenseError),
}

impl From<DenseError> for RetrievalError {
    fn from(e: DenseError) -> Self {
        match e {
            DenseError::DimensionMismatch { expected, found } => Self::DimensionMismatch { expected, found },
            DenseError::EmptyIndex => Self::EmptyStore,
            other => Self::Dense(other),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k < 1 {
            return Err(RetrievalError::InvalidConfig("k must be >= 1"));
        }
        if self.dense_n < self.k {
            return Err(RetrievalError::InvalidConfig("dense_n must be >= k"));
        }
        Ok(())
    }

    /// Pure cosine ranking with no symbolic pool.
    pub fn dense_only(&self) -> Self {
        Self {
            weights: FusionWeights::dense_only(),
            symbolic_cap: 0,
            ..*self
        }
    }

    pub fn key_families(&self) -> KeyFamilies {
        KeyFamilies {
            coref: self.entity_mode == EntityMatchMode::CorefOrName,
            ..KeyFamilies::default()
        }
    }
}

/// Source of coreference cluster sizes.
pub trait ClusterSizes {
    fn cluster_size(&self, coref_id: &str) -> u64;
}

impl ClusterSizes for SymbolicIndex {
    fn cluster_size(&self, coref_id: &str) -> u64 {
        SymbolicIndex::cluster_size(self, coref_id)
    }
}

impl ClusterSizes for BTreeMap<alloc::string::String, u64> {
    fn cluster_size(&self, coref_id: &str) -> u64 {
        self.get(coref_id).copied().unwrap_or(0)
    }
}

fn entity_weight(size: u64, weighting: ClusterWeighting) -> f64 {
    match weighting {
        ClusterWeighting::Log => libm::log(1.0 + size.max(1) as f64),
        ClusterWeighting::Linear => size.max(1) as f64,
        ClusterWeighting::Uniform => 1.0,
    }
}

/// Cluster-size-weighted share of query entities present in `stored`.
pub fn entity_match(
    stored: &[EntityMention],
    query: &[EntityMention],
    stats: &impl ClusterSizes,
    mode: EntityMatchMode,
    weighting: ClusterWeighting,
) -> f64 {
    if query.is_empty() {
        return 0.0;
    }
    let mut matched = 0.0;
    let mut total = 0.0;
    for q in query {
        let w = entity_weight(stats.cluster_size(&q.coref_id), weighting);
        total += w;
        let q_name = q.name_key();
        let hit = stored.iter().any(|s| match mode {
            EntityMatchMode::CorefOrName => s.coref_id == q.coref_id || s.name_key() == q_name,
            EntityMatchMode::NameOnly => s.name_key() == q_name,
        });
        if hit {
            matched += w;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        matched / total
    }
}

pub fn discourse_match(stored: &[DiscourseLabel], query: &[DiscourseLabel], mode: DiscourseMode) -> f64 {
    let a: BTreeSet<&DiscourseLabel> = stored.iter().collect();
    let b: BTreeSet<&DiscourseLabel> = query.iter().collect();
    let inter = a.intersection(&b).count();
    match mode {
        DiscourseMode::Binary => {
            if inter > 0 {
                1.0
            } else {
                0.0
            }
        }
        DiscourseMode::Graded => {
            let union = a.union(&b).count();
            if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            }
        }
    }
}

/// Per-term values for one candidate, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateTerms {
    pub entry_id: EntryId,
    pub sim: f64,
    pub entity: f64,
    pub discourse: f64,
}

impl CandidateTerms {
    pub fn weigh(&self, weights: &FusionWeights) -> RankedResult {
        RankedResult {
            entry_id: self.entry_id,
            score: weights.combine(self.sim, self.entity, self.discourse),
            sim_term: self.sim,
            entity_term: self.entity,
            discourse_term: self.discourse,
        }
    }
}

pub fn score_terms(entry: &MemoryEntry, query: &Query, stats: &impl ClusterSizes, cfg: &RetrievalConfig) -> Result<CandidateTerms, RetrievalError> {
    let (a, b) = (entry.embedding.values(), query.embedding.values());
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(CandidateTerms {
        entry_id: entry.id,
        sim: dot(a, b).clamp(-1.0, 1.0),
        entity: entity_match(&entry.entities, &query.entities, stats, cfg.entity_mode, cfg.weighting),
        discourse: discourse_match(&entry.discourse, &query.discourse, cfg.discourse_mode),
    })
}

/// Scores one entry against a query.
pub fn fuse_score(
    entry: &MemoryEntry,
    query: &Query,
    weights: &FusionWeights,
    stats: &impl ClusterSizes,
    cfg: &RetrievalConfig,
) -> Result<RankedResult, RetrievalError> {
    Ok(score_terms(entry, query, stats, cfg)?.weigh(weights))
}

/// `(score desc, timestamp desc, entry_id asc)`.
pub fn rank_order(store: &MemoryStore, a: &RankedResult, b: &RankedResult) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| {
            let ta = store.get(a.entry_id).map(|e| e.timestamp.as_str());
            let tb = store.get(b.entry_id).map(|e| e.timestamp.as_str());
            tb.cmp(&ta)
        })
        .then(a.entry_id.cmp(&b.entry_id))
}

fn check(store: &MemoryStore, query: &Query, cfg: &RetrievalConfig) -> Result<(), RetrievalError> {
    cfg.validate()?;
    if store.is_empty() {
        return Err(RetrievalError::EmptyStore);
    }
    if query.embedding.dim() != store.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: store.dim(),
            found: query.embedding.dim(),
        });
    }
    Ok(())
}

/// Dense candidate stage.
pub fn dense_candidates(store: &MemoryStore, query: &Query, cfg: &RetrievalConfig) -> Result<Vec<(EntryId, f64)>, RetrievalError> {
    check(store, query, cfg)?;
    let hits = match cfg.dense_mode {
        DenseMode::Approximate => store.dense().search(&query.embedding, cfg.dense_n)?,
        DenseMode::Exact => store.dense().search_exact(&query.embedding, cfg.dense_n)?,
    };
    Ok(hits)
}

/// Symbolic candidate stage.
pub fn symbolic_candidates(store: &MemoryStore, query: &Query, cfg: &RetrievalConfig) -> BTreeSet<EntryId> {
    store
        .symbolic()
        .candidates(query, cfg.symbolic_cap, cfg.key_families())
}

/// Per-term values for the merged candidate pool, in ascending id order.
pub fn pool_terms(
    store: &MemoryStore,
    query: &Query,
    cfg: &RetrievalConfig,
    dense: &[(EntryId, f64)],
    symbolic: &BTreeSet<EntryId>,
) -> Result<Vec<CandidateTerms>, RetrievalError> {
    let mut pool: BTreeSet<EntryId> = symbolic.clone();
    pool.extend(dense.iter().map(|h| h.0));
    pool.into_iter()
        .filter_map(|id| store.get(id))
        .map(|e| score_terms(e, query, store.symbolic(), cfg))
        .collect()
}

/// Weighs terms and returns the top `k` in rank order.
pub fn rank_terms(store: &MemoryStore, terms: &[CandidateTerms], weights: &FusionWeights, k: usize) -> Vec<RankedResult> {
    let mut ranked: Vec<RankedResult> = terms.iter().map(|t| t.weigh(weights)).collect();
    ranked.sort_by(|a, b| rank_order(store, a, b));
    ranked.truncate(k);
    ranked
}

/// Fusion stage: scores the merged pool and keeps the top `k`.
pub fn fuse(
    store: &MemoryStore,
    query: &Query,
    cfg: &RetrievalConfig,
    dense: &[(EntryId, f64)],
    symbolic: &BTreeSet<EntryId>,
) -> Result<Vec<RankedResult>, RetrievalError> {
    let terms = pool_terms(store, query, cfg, dense, symbolic)?;
    Ok(rank_terms(store, &terms, &cfg.weights, cfg.k))
}

/// Merge-and-rank retrieval over the dense and symbolic candidate pools.
pub fn retrieve(store: &MemoryStore, query: &Query, cfg: &RetrievalConfig) -> Result<Vec<RankedResult>, RetrievalError> {
    let dense = dense_candidates(store, query, cfg)?;
    let symbolic = symbolic_candidates(store, query, cfg);
    fuse(store, query, cfg, &dense, &symbolic)
}

/// Scores every stored entry; the unpooled reference ranking.
pub fn retrieve_exhaustive(store: &MemoryStore, query: &Query, cfg: &RetrievalConfig) -> Result<Vec<RankedResult>, RetrievalError> {
    check(store, query, cfg)?;
    let terms: Vec<CandidateTerms> = store
        .entries()
        .map(|e| score_terms(e, query, store.symbolic(), cfg))
        .collect::<Result<_, _>>()?;
    Ok(rank_terms(store, &terms, &cfg.weights, cfg.k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{toy_annotate, toy_embed};
    use crate::dense::HnswParams;
    use crate::model::{Embedding, EntityMention};
    use alloc::string::String;
    use alloc::vec;

    fn stats(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(k, v)| (String::from(*k), *v)).collect()
    }

    #[test]
    fn entity_match_examples() {
        let s = stats(&[("E17", 1), ("A", 3), ("B", 1)]);
        let full = entity_match(
            &[EntityMention::new("John", "E17", "PERSON")],
            &[EntityMention::new("he", "E17", "PERSON")],
            &s,
            EntityMatchMode::CorefOrName,
            ClusterWeighting::Log,
        );
        assert_eq!(full, 1.0);
        assert_eq!(
            entity_match(&[EntityMention::new("x", "E17", "P")], &[], &s, EntityMatchMode::CorefOrName, ClusterWeighting::Log),
            0.0
        );
        let partial = entity_match(
            &[EntityMention::new("a", "A", "P")],
            &[EntityMention::new("a", "A", "P"), EntityMention::new("b", "B", "P")],
            &s,
            EntityMatchMode::CorefOrName,
            ClusterWeighting::Log,
        );
        // ln 4 / (ln 4 + ln 2) = 2/3
        assert!((partial - 2.0 / 3.0).abs() < 1e-12);
        assert!((partial - 0.667).abs() < 1e-3);
    }

    #[test]
    fn entity_match_fallbacks_and_strategies() {
        let s = stats(&[("A", 3)]);
        let stored = [EntityMention::new("Parkview Hotel", "X9", "LOC")];
        let q = [EntityMention::new("parkview hotel", "A", "LOC"), EntityMention::new("Nowhere", "U", "LOC")];
        // name fallback; unseen cluster U weighs ln 2
        let log = entity_match(&stored, &q, &s, EntityMatchMode::CorefOrName, ClusterWeighting::Log);
        assert!((log - libm::log(4.0) / (libm::log(4.0) + libm::log(2.0))).abs() < 1e-12);
        let lin = entity_match(&stored, &q, &s, EntityMatchMode::NameOnly, ClusterWeighting::Linear);
        assert!((lin - 0.75).abs() < 1e-12);
        let uni = entity_match(&stored, &q, &s, EntityMatchMode::NameOnly, ClusterWeighting::Uniform);
        assert!((uni - 0.5).abs() < 1e-12);
        let pron = [EntityMention::new("he", "A", "PERSON")];
        let by_id = [EntityMention::new("John", "A", "PERSON")];
        assert_eq!(entity_match(&by_id, &pron, &s, EntityMatchMode::NameOnly, ClusterWeighting::Log), 0.0);
    }

    #[test]
    fn discourse_match_examples() {
        use DiscourseLabel::*;
        assert_eq!(discourse_match(&[Cause, Contrast], &[Contrast, Cause], DiscourseMode::Graded), 1.0);
        assert_eq!(discourse_match(&[Cause], &[Contrast], DiscourseMode::Binary), 0.0);
        assert_eq!(discourse_match(&[Elaboration, Cause], &[Cause], DiscourseMode::Graded), 0.5);
        assert_eq!(discourse_match(&[Elaboration, Cause], &[Cause], DiscourseMode::Binary), 1.0);
        assert_eq!(discourse_match(&[], &[], DiscourseMode::Graded), 0.0);
    }

    fn unit_pair(cos: f64) -> (Embedding, Embedding) {
        let a = Embedding::raw(vec![1.0, 0.0]);
        let b = Embedding::raw(vec![cos as f32, libm::sqrt(1.0 - cos * cos) as f32]);
        (a, b)
    }

    fn bare_entry(embedding: Embedding) -> MemoryEntry {
        MemoryEntry {
            id: EntryId(1),
            utterance: "u".into(),
            speaker: "s".into(),
            timestamp: "t".into(),
            dialogue_id: "d".into(),
            session_id: 0,
            turn_id: 0,
            entities: vec![EntityMention::new("John", "E17", "PERSON")],
            dep_triples: vec![],
            discourse: vec![],
            embedding,
        }
    }

    #[test]
    fn fuse_score_arithmetic() {
        let (a, b) = unit_pair(0.8);
        let entry = bare_entry(a);
        let query = Query {
            text: "q".into(),
            embedding: b,
            entities: vec![EntityMention::new("he", "E17", "PERSON")],
            discourse: vec![DiscourseLabel::Cause],
            gold: None,
        };
        let s = stats(&[("E17", 1)]);
        let cfg = RetrievalConfig::default();
        let w = FusionWeights::new(0.5, 0.3, 0.2).unwrap();
        let r = fuse_score(&entry, &query, &w, &s, &cfg).unwrap();
        assert!((r.sim_term - 0.8).abs() < 1e-6);
        assert_eq!(r.entity_term, 1.0);
        assert_eq!(r.discourse_term, 0.0);
        assert!((r.score - 0.70).abs() < 1e-6);
        let dense = fuse_score(&entry, &query, &FusionWeights::dense_only(), &s, &cfg).unwrap();
        assert_eq!(dense.score, dense.sim_term);
    }

    #[test]
    fn identical_features_score_one() {
        let text = "Dr. Morales said the MRI was clear.";
        let ann = toy_annotate(text, &[]);
        let emb = toy_embed(text, 64).unwrap();
        let entry = MemoryEntry {
            entities: ann.entities.clone(),
            discourse: ann.discourse.clone(),
            ..bare_entry(emb.clone())
        };
        let query = Query {
            text: text.into(),
            embedding: emb,
            entities: ann.entities,
            discourse: ann.discourse,
            gold: None,
        };
        let s = stats(&[]);
        for w in [(0.5, 0.3, 0.2), (0.9, 0.05, 0.05), (0.4, 0.0, 0.6)] {
            let w = FusionWeights::new(w.0, w.1, w.2).unwrap();
            let r = fuse_score(&entry, &query, &w, &s, &RetrievalConfig::default()).unwrap();
            assert!((r.score - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = RetrievalConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.k = 0;
        assert!(cfg.validate().is_err());
        cfg.k = 60;
        assert!(cfg.validate().is_err());
        assert_eq!(RetrievalConfig::default().dense_only().symbolic_cap, 0);
    }

    #[test]
    fn single_entry_store() {
        let mut store = MemoryStore::new(32, HnswParams::default()).unwrap();
        let e = MemoryEntry {
            embedding: toy_embed("book a taxi", 32).unwrap(),
            ..bare_entry(Embedding::raw(vec![]))
        };
        store.insert(e.clone()).unwrap();
        let q = Query {
            text: "taxi".into(),
            embedding: toy_embed("taxi please", 32).unwrap(),
            entities: vec![],
            discourse: vec![],
            gold: None,
        };
        let cfg = RetrievalConfig::default();
        let out = retrieve(&store, &q, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        let expected = fuse_score(&e, &q, &cfg.weights, store.symbolic(), &cfg).unwrap();
        assert_eq!(out[0], expected);
        let empty = MemoryStore::new(32, HnswParams::default()).unwrap();
        assert_eq!(retrieve(&empty, &q, &cfg), Err(RetrievalError::EmptyStore));
        let wrong = Query { embedding: toy_embed("taxi", 16).unwrap(), ..q };
        assert!(matches!(retrieve(&store, &wrong, &cfg), Err(RetrievalError::DimensionMismatch { .. })));
    }

    #[test]
    fn ties_prefer_recent_then_low_id() {
        let mut store = MemoryStore::new(32, HnswParams::default()).unwrap();
        let emb = toy_embed("same words", 32).unwrap();
        for (id, ts) in [(0u64, "2024-01-01T00:00:00"), (1, "2024-02-01T00:00:00"), (2, "2024-02-01T00:00:00")] {
            store
                .insert(MemoryEntry {
                    id: EntryId(id),
                    timestamp: ts.into(),
                    turn_id: id as u32,
                    ..bare_entry(emb.clone())
                })
                .unwrap();
        }
        let q = Query { text: "q".into(), embedding: emb, entities: vec![], discourse: vec![], gold: None };
        let ids: Vec<u64> = retrieve(&store, &q, &RetrievalConfig::default())
            .unwrap()
            .iter()
            .map(|r| r.entry_id.0)
            .collect();
        assert_eq!(ids, vec![1, 2, 0]);
    }
}
