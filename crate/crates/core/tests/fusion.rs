mod common;

use anchormem_core::engine::{retrieve_exhaustive, DenseMode};
use anchormem_core::{
    normalize_embedding, retrieve, DiscourseLabel, EntityMention, FusionWeights, MemoryEntry, Query, RetrievalConfig,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LABELS: [DiscourseLabel; 4] = [
    DiscourseLabel::Elaboration,
    DiscourseLabel::Contrast,
    DiscourseLabel::Cause,
    DiscourseLabel::Expansion,
];

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

fn random_entities(rng: &mut ChaCha8Rng, clusters: usize) -> Vec<EntityMention> {
    (0..rng.gen_range(0..3))
        .map(|_| {
            let c = rng.gen_range(0..clusters);
            // a few clusters share a surface name so name matching is exercised
            EntityMention::new(format!("Name{}", c % (clusters - 5)), format!("E{c}"), "PERSON")
        })
        .collect()
}

fn random_labels(rng: &mut ChaCha8Rng) -> Vec<DiscourseLabel> {
    LABELS.iter().filter(|_| rng.gen_bool(0.3)).cloned().collect()
}

fn random_corpus(seed: u64, n: usize, dim: usize) -> Vec<MemoryEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|id| MemoryEntry {
            id: id.into(),
            utterance: format!("utterance {id}"),
            speaker: "user".into(),
            timestamp: format!("2024-01-{:02}T10:00:00", rng.gen_range(1..29)),
            dialogue_id: format!("d{}", id / 50),
            session_id: 0,
            turn_id: (id % 50) as u32,
            entities: random_entities(&mut rng, 40),
            dep_triples: Vec::new(),
            discourse: random_labels(&mut rng),
            embedding: normalize_embedding(&random_vec(&mut rng, dim), dim).unwrap(),
        })
        .collect()
}

fn random_query(rng: &mut ChaCha8Rng, dim: usize) -> Query {
    Query {
        text: String::new(),
        embedding: normalize_embedding(&random_vec(rng, dim), dim).unwrap(),
        entities: random_entities(rng, 40),
        discourse: random_labels(rng),
        gold: None,
    }
}

#[test]
fn pooled_retrieval_matches_brute_force() {
    let dim = 16;
    let entries = random_corpus(1, 400, dim);
    let store = store_of(entries.clone(), dim);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (s, e) in [(0.5, 0.3), (0.4, 0.6), (0.9, 0.0), (1.0, 0.0)] {
        let c = (1.0f64 - s - e).max(0.0);
        let cfg = RetrievalConfig {
            weights: FusionWeights::new(s, e, c).unwrap(),
            dense_mode: DenseMode::Exact,
            dense_n: entries.len(),
            k: 10,
            ..Default::default()
        };
        for _ in 0..25 {
            let q = random_query(&mut rng, dim);
            let got = retrieve(&store, &q, &cfg).unwrap();
            let want = oracle_rank(&entries, &q, (s, e, c), 10);
            let got_ids: Vec<_> = got.iter().map(|r| r.entry_id).collect();
            let want_ids: Vec<_> = want.iter().map(|w| w.0).collect();
            assert_eq!(got_ids, want_ids);
            for (r, w) in got.iter().zip(&want) {
                assert!((r.score - w.1).abs() < 1e-9);
            }
            assert_eq!(got, retrieve_exhaustive(&store, &q, &cfg).unwrap());
        }
    }
}

#[test]
fn score_breakdown_identity_and_bounds() {
    let dim = 16;
    let store = store_of(random_corpus(3, 300, dim), dim);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = RetrievalConfig { k: 20, ..Default::default() };
    let w = cfg.weights;
    for _ in 0..30 {
        let q = random_query(&mut rng, dim);
        for r in retrieve(&store, &q, &cfg).unwrap() {
            let sum = w.semantic() * r.sim_term + w.entity() * r.entity_term + w.discourse() * r.discourse_term;
            assert!((r.score - sum).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&r.entity_term));
            assert!((0.0..=1.0).contains(&r.discourse_term));
            assert!((-1.0..=1.0).contains(&r.sim_term));
        }
    }
}

#[test]
fn toy_embeddings_keep_similarity_non_negative() {
    let texts = ["book a taxi", "the weather is nice", "taxi to the airport please", "lunch at noon"];
    let entries: Vec<_> = texts.iter().enumerate().map(|(i, t)| entry(i as u64, t, vec![], vec![])).collect();
    let store = store_of(entries, DIM);
    let cfg = RetrievalConfig { k: 4, ..Default::default() };
    for r in retrieve(&store, &query("rain tomorrow", vec![], vec![]), &cfg).unwrap() {
        assert!((0.0..=1.0).contains(&r.sim_term));
    }
}

#[test]
fn pronoun_query_prefers_coreferent_confirmation() {
    let john = || person("John", "E1");
    let mut entries = vec![
        entry(0, "John booked a cab to the airport.", vec![john()], vec![]),
        entry(1, "He confirmed the time for the pickup at 5 pm.", vec![person("He", "E1")], vec![]),
    ];
    let decoys = [
        "Did the taxi confirm the time for the taxi?",
        "Can you confirm the time for the taxi to the station?",
        "The taxi time for the hotel is not confirmed yet.",
        "Did Mary confirm the taxi time?",
        "Confirm the time for the taxi please.",
        "The taxi will confirm the time later.",
    ];
    for (i, text) in decoys.iter().enumerate() {
        let ents = if text.contains("Mary") { vec![person("Mary", "E2")] } else { vec![] };
        entries.push(entry(2 + i as u64, text, ents, vec![]));
    }
    let store = store_of(entries, DIM);
    let q = query("Did he confirm the time for the taxi?", vec![person("he", "E1")], vec![]);

    let dense = retrieve(&store, &q, &RetrievalConfig::default().dense_only()).unwrap();
    assert_ne!(dense[0].entry_id.0, 1, "fixture should fool cosine ranking");
    let full = retrieve(&store, &q, &RetrievalConfig::default()).unwrap();
    assert_eq!(full[0].entry_id.0, 1);
    assert_eq!(full[0].entity_term, 1.0);
}

#[test]
fn raising_entity_weight_never_demotes_the_entity_match() {
    // A matches the query entity, B is closer in embedding space.
    let a = entry(0, "we talked about the garden party", vec![person("Lena", "E5")], vec![DiscourseLabel::Cause]);
    let b = entry(1, "the party plans for the garden", vec![], vec![DiscourseLabel::Cause]);
    let store = store_of(vec![a, b], DIM);
    let q = query("what about the garden party plans", vec![person("Lena", "E5")], vec![DiscourseLabel::Cause]);
    let ratio = 0.2 / 0.8;
    let mut a_ahead = false;
    for step in 0..=100 {
        let e = step as f64 / 100.0;
        let s = (1.0 - e) / (1.0 + ratio);
        let c = (1.0 - e - s).max(0.0);
        let cfg = RetrievalConfig {
            weights: FusionWeights::new(s, e, c).unwrap(),
            k: 2,
            ..Default::default()
        };
        let top = retrieve(&store, &q, &cfg).unwrap()[0].entry_id.0;
        if a_ahead {
            assert_eq!(top, 0, "A demoted at lambda_e = {e}");
        }
        a_ahead |= top == 0;
    }
    assert!(a_ahead);
}

#[test]
fn repeated_runs_are_identical() {
    let dim = 16;
    let store = store_of(random_corpus(5, 200, dim), dim);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = RetrievalConfig::default();
    for _ in 0..10 {
        let q = random_query(&mut rng, dim);
        let a = retrieve(&store, &q, &cfg).unwrap();
        let b = retrieve(&store, &q, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            anchormem_core::serialize_context(&a, &store, 2).unwrap(),
            anchormem_core::serialize_context(&b, &store, 2).unwrap()
        );
    }
}
