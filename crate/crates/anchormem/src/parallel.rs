//! Retrieval with the dense and symbolic stages on two threads, and a
//! shared store with a single writer and many readers.

use std::sync::Arc;
use std::time::{Duration, Instant};

use anchormem_core::engine::{dense_candidates, fuse, symbolic_candidates, RetrievalError};
use anchormem_core::store::StoreError;
use anchormem_core::{EntryId, MemoryEntry, MemoryStore, Query, RankedResult, RetrievalConfig};
use parking_lot::RwLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageTimings {
    pub dense: Duration,
    pub symbolic: Duration,
    pub fusion: Duration,
    pub total: Duration,
}

/// Same output as [`anchormem_core::retrieve`]; the symbolic lookup runs on
/// a scoped thread while the dense search runs on the caller's.
pub fn retrieve_parallel(
    store: &MemoryStore,
    query: &Query,
    cfg: &RetrievalConfig,
) -> Result<(Vec<RankedResult>, StageTimings), RetrievalError> {
    let start = Instant::now();
    let (dense, symbolic) = std::thread::scope(|s| {
        let sym = s.spawn(|| {
            let t = Instant::now();
            let ids = symbolic_candidates(store, query, cfg);
            (ids, t.elapsed())
        });
        let t = Instant::now();
        let hits = dense_candidates(store, query, cfg);
        let dense_time = t.elapsed();
        (hits.map(|h| (h, dense_time)), sym.join().expect("symbolic stage panicked"))
    });
    let (hits, dense_time) = dense?;
    let (ids, symbolic_time) = symbolic;
    let t = Instant::now();
    let ranked = fuse(store, query, cfg, &hits, &ids)?;
    let fusion = t.elapsed();
    Ok((
        ranked,
        StageTimings {
            dense: dense_time,
            symbolic: symbolic_time,
            fusion,
            total: start.elapsed(),
        },
    ))
}

/// Readers see a consistent snapshot: an insert holds the write lock across
/// both indexes.
#[derive(Debug, Clone)]
pub struct SharedStore {
    inner: Arc<RwLock<MemoryStore>>,
}

impl SharedStore {
    pub fn new(store: MemoryStore) -> Self {
        Self {
            inner: Arc::new(RwLock::new(store)),
        }
    }

    pub fn insert(&self, entry: MemoryEntry) -> Result<EntryId, StoreError> {
        self.inner.write().insert(entry)
    }

    pub fn retrieve(&self, query: &Query, cfg: &RetrievalConfig) -> Result<Vec<RankedResult>, RetrievalError> {
        anchormem_core::retrieve(&self.inner.read(), query, cfg)
    }

    pub fn read<R>(&self, f: impl FnOnce(&MemoryStore) -> R) -> R {
        f(&self.inner.read())
    }

    pub fn into_inner(self) -> Result<MemoryStore, Self> {
        Arc::try_unwrap(self.inner)
            .map(RwLock::into_inner)
            .map_err(|inner| Self { inner })
    }
}
