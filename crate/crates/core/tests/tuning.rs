mod common;

use anchormem_core::corpus::{QueryKind, SynthSpec};
use anchormem_core::tune::{simplex_grid, DEFAULT_GRID_STEP};
use anchormem_core::{retrieve, tune_weights, FusionWeights, Query, RetrievalConfig};
use common::*;

/// `(semantic, entity, recalled)` in twentieths.
type Grid = Vec<(u32, u32, usize)>;

/// Every grid point by direct retrieval; best by recall, then larger
/// semantic weight, then larger entity weight.
fn exhaustive(queries: &[Query], store: &anchormem_core::MemoryStore) -> (Grid, (u32, u32)) {
    let mut rows = Vec::new();
    for s in 8..=18u32 {
        for e in 0..=(20 - s) {
            let (ws, we) = (s as f64 / 20.0, e as f64 / 20.0);
            let cfg = RetrievalConfig {
                weights: FusionWeights::new(ws, we, (1.0 - ws - we).max(0.0)).unwrap(),
                ..Default::default()
            };
            let recalled = queries
                .iter()
                .filter(|q| oracle_hit(store, &retrieve(store, q, &cfg).unwrap(), q.gold.as_ref().unwrap()))
                .count();
            rows.push((s, e, recalled));
        }
    }
    let &(s, e, _) = rows.iter().max_by_key(|&&(s, e, r)| (r, s, e)).unwrap();
    (rows, (s, e))
}

fn grid_units(w: &FusionWeights) -> (u32, u32) {
    ((w.semantic() * 20.0).round() as u32, (w.entity() * 20.0).round() as u32)
}

#[test]
fn tuner_agrees_with_exhaustive_retrieval() {
    let spec = SynthSpec { dialogues: 8, session_distance: 1, ..Default::default() };
    let (store, qs) = synthetic(&spec);
    let queries: Vec<Query> = qs.into_iter().map(|q| q.query).collect();
    let tuned = tune_weights(&queries, &store, &RetrievalConfig::default(), DEFAULT_GRID_STEP).unwrap();
    let (rows, best) = exhaustive(&queries, &store);
    assert_eq!(tuned.table.len(), rows.len());
    for (p, &(s, e, r)) in tuned.table.iter().zip(&rows) {
        assert_eq!(grid_units(&p.weights), (s, e));
        assert_eq!(p.recalled, r);
    }
    assert_eq!(grid_units(&tuned.best), best);
}

#[test]
fn entity_only_corpus_pushes_entity_weight_to_its_maximum() {
    let spec = SynthSpec { dialogues: 12, kinds: vec![QueryKind::Dominance], ..Default::default() };
    let (store, qs) = synthetic(&spec);
    let queries: Vec<Query> = qs.into_iter().map(|q| q.query).collect();
    let tuned = tune_weights(&queries, &store, &RetrievalConfig::default(), DEFAULT_GRID_STEP).unwrap();
    let max_entity = simplex_grid(DEFAULT_GRID_STEP)
        .unwrap()
        .iter()
        .map(|w| w.entity())
        .fold(0.0, f64::max);
    assert!((tuned.best.entity() - max_entity).abs() < 1e-9, "best {}", tuned.best);
    let (_, best) = exhaustive(&queries, &store);
    assert_eq!(grid_units(&tuned.best), best);
}

#[test]
fn cosine_solvable_corpus_is_flat_and_prefers_semantic() {
    let texts = [
        "the blue bicycle is in the garage",
        "dinner reservations moved to friday",
        "my sister lives near the harbor",
        "the printer on floor three is broken",
        "we should water the plants tonight",
    ];
    let entries: Vec<_> = texts.iter().enumerate().map(|(i, t)| entry(i as u64, t, vec![], vec![])).collect();
    let store = store_of(entries, DIM);
    let queries: Vec<Query> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Query { gold: Some(gold(&[i as u64], "")), ..query(t, vec![], vec![]) })
        .collect();
    let tuned = tune_weights(&queries, &store, &RetrievalConfig { k: 1, ..Default::default() }, DEFAULT_GRID_STEP)
        .unwrap();
    assert!(tuned.table.iter().all(|p| p.fr() == 1.0));
    assert!((tuned.best.semantic() - 0.90).abs() < 1e-9);
}

#[test]
fn coarse_step_leaves_a_single_point() {
    let store = store_of(vec![entry(0, "hello there", vec![], vec![])], DIM);
    let q = Query { gold: Some(gold(&[0], "")), ..query("hello there", vec![], vec![]) };
    let tuned = tune_weights(&[q], &store, &RetrievalConfig::default(), 0.9).unwrap();
    assert_eq!(tuned.table.len(), 1);
    assert_eq!(tuned.best, tuned.table[0].weights);
    assert_eq!(tuned.best_fr, 1.0);
}
