#![allow(dead_code)]

use std::path::{Path, PathBuf};

use anchormem_core::corpus::{make_synthetic, SynthSpec};
use anchormem_core::ingest::{ingest_corpus, CorpusQuery};
use anchormem_core::{EmbeddingPolicy, HnswParams, MemoryStore, Query};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn synthetic(dialogues: usize, seed: u64) -> (MemoryStore, Vec<CorpusQuery>) {
    let spec = SynthSpec {
        dialogues,
        seed,
        ..SynthSpec::default()
    };
    let corpus = make_synthetic(&spec).unwrap();
    let mut store = MemoryStore::new(spec.dim, HnswParams::default()).unwrap();
    let policy = EmbeddingPolicy {
        dim: spec.dim,
        toy_embed: false,
    };
    let queries = ingest_corpus(&mut store, &corpus, policy).unwrap();
    (store, queries)
}

pub fn plain(queries: &[CorpusQuery]) -> Vec<Query> {
    queries.iter().map(|q| q.query.clone()).collect()
}
