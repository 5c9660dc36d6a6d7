//! Factual Recall, retrieval-level Discourse Coherence and ablations.
//!
//! A query is recalled when any of its top-`k` results is a gold supporting
//! entry or contains the gold answer span (lowercased, whitespace collapsed).
//! Discourse Coherence compares the coreference ids of entities found in the
//! retrieved evidence against the gold cluster assignments.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::engine::{retrieve, EntityMatchMode, RetrievalConfig, RetrievalError};
use crate::model::{EntryId, GoldInfo, Query, RankedResult};
use crate::store::MemoryStore;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("query {0} has no gold information")]
    MissingGold(usize),
    #[error("query {0} has no gold coreference assignments")]
    MissingCorefGold(usize),
    #[error("no query has entities comparable against gold assignments")]
    NoComparableEntities,
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("retrieval failed on query {index}: {source}")]
    Retrieval { index: usize, source: RetrievalError },
}

/// Lowercase and collapse runs of whitespace.
pub fn normalize_span(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for w in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&w.to_lowercase());
    }
    out
}

/// 0-based rank of the first result satisfying the gold criterion.
pub fn first_hit(store: &MemoryStore, results: &[RankedResult], gold: &GoldInfo) -> Option<usize> {
    let span = normalize_span(&gold.answer_span);
    results.iter().position(|r| {
        gold.supporting_entry_ids.contains(&r.entry_id)
            || (!span.is_empty()
                && store
                    .get(r.entry_id)
                    .is_some_and(|e| normalize_span(&e.utterance).contains(&span)))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query_index: usize,
    pub hit_rank: Option<usize>,
    pub matched_entry: Option<EntryId>,
    pub results: Vec<RankedResult>,
    /// `(comparable, agreeing)` entity counts for Discourse Coherence.
    pub coref: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrResult {
    pub fr: f64,
    pub recalled: usize,
    pub total: usize,
    pub per_query: Vec<QueryOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcResult {
    pub dc: f64,
    /// Queries contributing to the mean.
    pub scored: usize,
    /// Queries without any comparable entity.
    pub excluded: usize,
    pub per_query: Vec<Option<f64>>,
}

fn gold_of(queries: &[Query]) -> Result<Vec<&GoldInfo>, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| q.gold.as_ref().ok_or(EvalError::MissingGold(i)))
        .collect()
}

fn run_queries(queries: &[Query], store: &MemoryStore, cfg: &RetrievalConfig) -> Result<Vec<Vec<RankedResult>>, EvalError> {
    queries
        .iter()
        .enumerate()
        .map(|(index, q)| retrieve(store, q, cfg).map_err(|source| EvalError::Retrieval { index, source }))
        .collect()
}

/// Coreference agreement of retrieved evidence with gold assignments.
pub fn coref_agreement(store: &MemoryStore, results: &[RankedResult], gold: &GoldInfo) -> Option<(usize, usize)> {
    let assignments = gold.coref_assignments.as_ref()?;
    let mut comparable = 0;
    let mut agree = 0;
    for r in results {
        let Some(entry) = store.get(r.entry_id) else { continue };
        for e in &entry.entities {
            let gold_id = assignments
                .get(&e.name)
                .or_else(|| assignments.iter().find(|(k, _)| k.to_lowercase() == e.name_key()).map(|(_, v)| v));
            if let Some(g) = gold_id {
                comparable += 1;
                if *g == e.coref_id {
                    agree += 1;
                }
            }
        }
    }
    Some((comparable, agree))
}

fn outcomes(store: &MemoryStore, golds: &[&GoldInfo], results: Vec<Vec<RankedResult>>) -> Vec<QueryOutcome> {
    results
        .into_iter()
        .zip(golds)
        .enumerate()
        .map(|(query_index, (results, gold))| {
            let hit_rank = first_hit(store, &results, gold);
            QueryOutcome {
                query_index,
                hit_rank,
                matched_entry: hit_rank.map(|r| results[r].entry_id),
                coref: coref_agreement(store, &results, gold),
                results,
            }
        })
        .collect()
}

fn fr_from(per_query: Vec<QueryOutcome>) -> FrResult {
    let total = per_query.len();
    let recalled = per_query.iter().filter(|o| o.hit_rank.is_some()).count();
    FrResult {
        fr: recalled as f64 / total as f64,
        recalled,
        total,
        per_query,
    }
}

fn dc_from(per_query: &[QueryOutcome]) -> Result<DcResult, EvalError> {
    let scores: Vec<Option<f64>> = per_query
        .iter()
        .map(|o| match o.coref {
            Some((c, a)) if c > 0 => Some(a as f64 / c as f64),
            _ => None,
        })
        .collect();
    let scored: Vec<f64> = scores.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(EvalError::NoComparableEntities);
    }
    Ok(DcResult {
        dc: scored.iter().sum::<f64>() / scored.len() as f64,
        scored: scored.len(),
        excluded: scores.len() - scored.len(),
        per_query: scores,
    })
}

pub fn eval_fr(queries: &[Query], store: &MemoryStore, cfg: &RetrievalConfig) -> Result<FrResult, EvalError> {
    let golds = gold_of(queries)?;
    let results = run_queries(queries, store, cfg)?;
    Ok(fr_from(outcomes(store, &golds, results)))
}

pub fn eval_dc(queries: &[Query], store: &MemoryStore, cfg: &RetrievalConfig) -> Result<DcResult, EvalError> {
    let golds = gold_of(queries)?;
    if let Some(i) = golds.iter().position(|g| g.coref_assignments.is_none()) {
        return Err(EvalError::MissingCorefGold(i));
    }
    let results = run_queries(queries, store, cfg)?;
    dc_from(&outcomes(store, &golds, results))
}

/// FR and DC for one configuration, repeated `runs` times.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fr: f64,
    /// `None` when no query has comparable entities.
    pub dc: Option<f64>,
    pub fr_std: Option<f64>,
    pub dc_std: Option<f64>,
    pub runs: usize,
    pub recalled: usize,
    pub total: usize,
    pub dc_excluded: usize,
    pub config: RetrievalConfig,
    pub per_query: Vec<QueryOutcome>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

pub fn evaluate(queries: &[Query], store: &MemoryStore, cfg: &RetrievalConfig, runs: usize) -> Result<EvalReport, EvalError> {
    let golds = gold_of(queries)?;
    let runs = runs.max(1);
    let mut frs = Vec::with_capacity(runs);
    let mut dcs = Vec::with_capacity(runs);
    let mut last = None;
    for _ in 0..runs {
        let results = run_queries(queries, store, cfg)?;
        let per_query = outcomes(store, &golds, results);
        let dc = dc_from(&per_query).ok();
        let fr = fr_from(per_query);
        frs.push(fr.fr);
        if let Some(d) = &dc {
            dcs.push(d.dc);
        }
        last = Some((fr, dc));
    }
    let (fr, dc) = last.expect("runs >= 1");
    let (fr_mean, fr_std) = mean_std(&frs);
    let dc_stats = (!dcs.is_empty()).then(|| mean_std(&dcs));
    Ok(EvalReport {
        fr: fr_mean,
        dc: dc_stats.map(|s| s.0),
        fr_std: (runs > 1).then_some(fr_std),
        dc_std: if runs > 1 { dc_stats.map(|s| s.1) } else { None },
        runs,
        recalled: fr.recalled,
        total: fr.total,
        dc_excluded: dc.as_ref().map_or(0, |d| d.excluded),
        config: *cfg,
        per_query: fr.per_query,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AblationVariant {
    Full,
    NoDiscourse,
    NoCoref,
    NoDep,
    DenseOnly,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        Self::Full,
        Self::NoDiscourse,
        Self::NoCoref,
        Self::NoDep,
        Self::DenseOnly,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoDiscourse => "no-discourse",
            Self::NoCoref => "no-coref",
            Self::NoDep => "no-dep",
            Self::DenseOnly => "dense-only",
        }
    }

    /// Retrieval config for this variant. `NoDep` changes the store, not the
    /// config.
    pub fn config(&self, base: &RetrievalConfig) -> RetrievalConfig {
        match self {
            Self::Full | Self::NoDep => *base,
            Self::NoDiscourse => RetrievalConfig {
                weights: base.weights.without_discourse(),
                ..*base
            },
            Self::NoCoref => RetrievalConfig {
                entity_mode: EntityMatchMode::NameOnly,
                ..*base
            },
            Self::DenseOnly => base.dense_only(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub fr: f64,
    pub dc: Option<f64>,
    /// Relative to the full model.
    pub fr_delta: f64,
    pub dc_delta: Option<f64>,
    pub per_query_hits: Vec<Option<usize>>,
}

pub fn run_ablation(store: &MemoryStore, queries: &[Query], base: &RetrievalConfig) -> Result<Vec<AblationRow>, EvalError> {
    let no_dep_store = store.without_dep_postings();
    let mut rows: Vec<AblationRow> = Vec::new();
    for variant in AblationVariant::ALL {
        let cfg = variant.config(base);
        let target = if variant == AblationVariant::NoDep { &no_dep_store } else { store };
        let report = evaluate(queries, target, &cfg, 1)?;
        rows.push(AblationRow {
            variant,
            fr: report.fr,
            dc: report.dc,
            fr_delta: 0.0,
            dc_delta: None,
            per_query_hits: report.per_query.iter().map(|o| o.hit_rank).collect(),
        });
    }
    let (full_fr, full_dc) = (rows[0].fr, rows[0].dc);
    for row in &mut rows {
        row.fr_delta = row.fr - full_fr;
        row.dc_delta = match (row.dc, full_dc) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        };
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::toy_embed;
    use crate::dense::HnswParams;
    use crate::model::{EntityMention, MemoryEntry};
    use alloc::collections::BTreeMap;
    use alloc::format;
    use alloc::vec;

    fn store(texts: &[&str]) -> MemoryStore {
        let mut s = MemoryStore::new(64, HnswParams::default()).unwrap();
        for (i, t) in texts.iter().enumerate() {
            s.insert(MemoryEntry {
                id: EntryId(i as u64),
                utterance: (*t).into(),
                speaker: "u".into(),
                timestamp: format!("2024-01-01T00:{i:02}:00"),
                dialogue_id: "d".into(),
                session_id: 0,
                turn_id: i as u32,
                entities: vec![EntityMention::new("Ann", if i == 0 { "E1" } else { "E2" }, "PERSON")],
                dep_triples: vec![],
                discourse: vec![],
                embedding: toy_embed(t, 64).unwrap(),
            })
            .unwrap();
        }
        s
    }

    fn query(text: &str, gold: GoldInfo) -> Query {
        Query {
            text: text.into(),
            embedding: toy_embed(text, 64).unwrap(),
            entities: vec![],
            discourse: vec![],
            gold: Some(gold),
        }
    }

    #[test]
    fn span_normalization() {
        assert_eq!(normalize_span("  Nine\tAM \n sharp "), "nine am sharp");
    }

    #[test]
    fn fr_all_and_none() {
        let s = store(&["taxi at nine", "hotel booked", "table for two"]);
        let cfg = RetrievalConfig { k: 3, dense_mode: crate::engine::DenseMode::Exact, ..Default::default() };
        let qs: Vec<Query> = (0..3)
            .map(|i| query("anything", GoldInfo { supporting_entry_ids: vec![EntryId(i)], ..Default::default() }))
            .collect();
        assert_eq!(eval_fr(&qs, &s, &cfg).unwrap().fr, 1.0);
        let missing = vec![query("taxi", GoldInfo { supporting_entry_ids: vec![EntryId(99)], answer_span: "absent words".into(), ..Default::default() })];
        assert_eq!(eval_fr(&missing, &s, &cfg).unwrap().fr, 0.0);
        let by_span = vec![query("taxi", GoldInfo { supporting_entry_ids: vec![EntryId(99)], answer_span: " TAXI  at ".into(), ..Default::default() })];
        assert_eq!(eval_fr(&by_span, &s, &cfg).unwrap().fr, 1.0);
    }

    #[test]
    fn fr_errors() {
        let s = store(&["a b c"]);
        let mut q = query("a", GoldInfo::default());
        q.gold = None;
        assert_eq!(eval_fr(&[q], &s, &RetrievalConfig::default()), Err(EvalError::MissingGold(0)));
        assert_eq!(eval_fr(&[], &s, &RetrievalConfig::default()), Err(EvalError::NoQueries));
    }

    #[test]
    fn dc_means_over_comparable_queries() {
        let s = store(&["ann said hi", "ann said bye"]);
        let cfg = RetrievalConfig { k: 2, dense_mode: crate::engine::DenseMode::Exact, ..Default::default() };
        let agree = GoldInfo {
            supporting_entry_ids: vec![EntryId(0)],
            coref_assignments: Some(BTreeMap::from([("Ann".into(), "E1".into())])),
            ..Default::default()
        };
        // both entries mention Ann: one agrees with E1, one does not
        let half = eval_dc(&[query("ann", agree.clone())], &s, &cfg).unwrap();
        assert_eq!(half.dc, 0.5);
        let none = GoldInfo {
            coref_assignments: Some(BTreeMap::from([("Bob".into(), "E9".into())])),
            ..agree.clone()
        };
        let one_k = RetrievalConfig { k: 1, ..cfg };
        let mut all = agree.clone();
        all.coref_assignments = Some(BTreeMap::from([("Ann".into(), "E2".into())]));
        let q1 = query("ann said bye", all);
        let r = eval_dc(&[q1.clone(), query("zzz", none.clone())], &s, &one_k).unwrap();
        assert_eq!(r.dc, 1.0);
        assert_eq!(r.excluded, 1);
        assert_eq!(eval_dc(&[query("zzz", none)], &s, &cfg).err(), Some(EvalError::NoComparableEntities));
        let mut no_map = q1;
        no_map.gold.as_mut().unwrap().coref_assignments = None;
        assert_eq!(eval_dc(&[no_map], &s, &cfg), Err(EvalError::MissingCorefGold(0)));
    }

    #[test]
    fn repeated_runs_have_zero_std() {
        let s = store(&["taxi at nine", "hotel booked"]);
        let q = query("taxi", GoldInfo { supporting_entry_ids: vec![EntryId(0)], ..Default::default() });
        let one = evaluate(core::slice::from_ref(&q), &s, &RetrievalConfig::default(), 1).unwrap();
        assert_eq!(one.fr_std, None);
        let three = evaluate(&[q], &s, &RetrievalConfig::default(), 3).unwrap();
        assert_eq!(three.fr_std, Some(0.0));
        assert_eq!(three.runs, 3);
    }
}
