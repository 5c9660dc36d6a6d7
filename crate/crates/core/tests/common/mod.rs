#![allow(dead_code)]

use std::collections::BTreeMap;

use anchormem_core::{
    toy_embed, DiscourseLabel, Embedding, EntityMention, EntryId, GoldInfo, HnswParams, MemoryEntry, MemoryStore,
    Query,
};

pub const DIM: usize = 64;

pub fn entry(id: u64, text: &str, entities: Vec<EntityMention>, discourse: Vec<DiscourseLabel>) -> MemoryEntry {
    MemoryEntry {
        id: EntryId(id),
        utterance: text.into(),
        speaker: "user".into(),
        timestamp: format!("2024-01-01T00:{:02}:00", id % 60),
        dialogue_id: "d0".into(),
        session_id: 0,
        turn_id: id as u32,
        entities,
        dep_triples: Vec::new(),
        discourse,
        embedding: toy_embed(text, DIM).unwrap(),
    }
}

pub fn query(text: &str, entities: Vec<EntityMention>, discourse: Vec<DiscourseLabel>) -> Query {
    Query {
        text: text.into(),
        embedding: toy_embed(text, DIM).unwrap(),
        entities,
        discourse,
        gold: None,
    }
}

pub fn store_of(entries: Vec<MemoryEntry>, dim: usize) -> MemoryStore {
    let mut store = MemoryStore::new(dim, HnswParams::default()).unwrap();
    for e in entries {
        store.insert(e).unwrap();
    }
    store
}

pub fn person(name: &str, coref: &str) -> EntityMention {
    EntityMention::new(name, coref, "PERSON")
}

pub fn gold(ids: &[u64], span: &str) -> GoldInfo {
    GoldInfo {
        supporting_entry_ids: ids.iter().map(|&i| EntryId(i)).collect(),
        answer_span: span.into(),
        coref_assignments: None,
    }
}

pub fn raw_dot(a: &Embedding, b: &Embedding) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// Mentions per coreference id, recounted from the entries.
pub fn recount(entries: &[MemoryEntry]) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    for e in entries {
        for x in &e.entities {
            *m.entry(x.coref_id.clone()).or_insert(0) += 1;
        }
    }
    m
}

/// Reference scorer: `ws * cos + we * em + wc * jaccard`, entity weights
/// `ln(1 + size)` (ln 2 when unseen), match by coref id or lowercased name.
pub fn oracle_score(e: &MemoryEntry, q: &Query, sizes: &BTreeMap<String, u64>, w: (f64, f64, f64)) -> f64 {
    let cos = raw_dot(&e.embedding, &q.embedding).clamp(-1.0, 1.0);
    let mut num = 0.0;
    let mut den = 0.0;
    for qe in &q.entities {
        let size = sizes.get(&qe.coref_id).copied().unwrap_or(0).max(1) as f64;
        let weight = (1.0 + size).ln();
        den += weight;
        if e.entities.iter().any(|s| {
            s.coref_id == qe.coref_id || s.name.to_lowercase() == qe.name.to_lowercase()
        }) {
            num += weight;
        }
    }
    let em = if den == 0.0 { 0.0 } else { num / den };
    let inter = e.discourse.iter().filter(|l| q.discourse.contains(l)).count();
    let mut union: Vec<&DiscourseLabel> = e.discourse.iter().chain(q.discourse.iter()).collect();
    union.sort();
    union.dedup();
    let dm = if union.is_empty() { 0.0 } else { inter as f64 / union.len() as f64 };
    w.0 * cos + w.1 * em + w.2 * dm
}

/// Brute-force top-`k` over every entry with the documented tie-break.
pub fn oracle_rank(entries: &[MemoryEntry], q: &Query, w: (f64, f64, f64), k: usize) -> Vec<(EntryId, f64)> {
    let sizes = recount(entries);
    let mut scored: Vec<(f64, &MemoryEntry)> = entries.iter().map(|e| (oracle_score(e, q, &sizes, w), e)).collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| b.1.timestamp.cmp(&a.1.timestamp))
            .then(a.1.id.cmp(&b.1.id))
    });
    scored.into_iter().take(k).map(|(s, e)| (e.id, s)).collect()
}

pub fn synthetic(
    spec: &anchormem_core::corpus::SynthSpec,
) -> (MemoryStore, Vec<anchormem_core::ingest::CorpusQuery>) {
    let corpus = anchormem_core::corpus::make_synthetic(spec).unwrap();
    let mut store = MemoryStore::new(spec.dim, HnswParams::default()).unwrap();
    let policy = anchormem_core::EmbeddingPolicy { dim: spec.dim, toy_embed: false };
    let queries = anchormem_core::ingest::ingest_corpus(&mut store, &corpus, policy).unwrap();
    (store, queries)
}

/// Gold id in the results, or the normalized answer span inside a result.
pub fn oracle_hit(store: &MemoryStore, results: &[anchormem_core::RankedResult], gold: &GoldInfo) -> bool {
    let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let span = norm(&gold.answer_span);
    results.iter().any(|r| {
        gold.supporting_entry_ids.contains(&r.entry_id)
            || (!span.is_empty() && norm(&store.get(r.entry_id).unwrap().utterance).contains(&span))
    })
}
