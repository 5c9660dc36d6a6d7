//! Inverted index over coreference ids, surface names, dependency triples and
//! discourse labels, with per-cluster mention counts.
//!
//! Keys are `coref:<id>`, `name:<lowercased name>`, `dep:<head>:<label>:<child>`
//! and `disc:<LABEL>`. Posting lists are sorted, duplicate-free id lists.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::{EntryId, MemoryEntry, Query};

pub const COREF_PREFIX: &str = "coref:";
pub const NAME_PREFIX: &str = "name:";
pub const DEP_PREFIX: &str = "dep:";
pub const DISC_PREFIX: &str = "disc:";

/// Default bound on the symbolic candidate pool.
pub const DEFAULT_CANDIDATE_CAP: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SymbolicError {
    #[error("entry {0} already indexed")]
    DuplicateId(EntryId),
    #[error("posting list {0:?} is not sorted and unique")]
    UnsortedPosting(String),
    #[error("cluster {0:?} has a zero mention count")]
    EmptyCluster(String),
}

/// Which key families a query may draw candidates from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyFamilies {
    pub coref: bool,
    pub name: bool,
    pub discourse: bool,
}

impl Default for KeyFamilies {
    fn default() -> Self {
        Self {
            coref: true,
            name: true,
            discourse: true,
        }
    }
}

/// Every posting key an entry contributes, deduplicated and sorted.
pub fn entry_keys(entry: &MemoryEntry, index_deps: bool) -> BTreeSet<String> {
    let mut keys = BTreeSet::new();
    for e in &entry.entities {
        keys.insert(format!("{COREF_PREFIX}{}", e.coref_id));
        keys.insert(format!("{NAME_PREFIX}{}", e.name_key()));
    }
    if index_deps {
        for t in &entry.dep_triples {
            keys.insert(format!("{DEP_PREFIX}{}", t.key()));
        }
    }
    for d in &entry.discourse {
        keys.insert(format!("{DISC_PREFIX}{}", d.as_str()));
    }
    keys
}

/// Posting keys a query can match.
pub fn query_keys(query: &Query, families: KeyFamilies) -> BTreeSet<String> {
    let mut keys = BTreeSet::new();
    for e in &query.entities {
        if families.coref {
            keys.insert(format!("{COREF_PREFIX}{}", e.coref_id));
        }
        if families.name {
            keys.insert(format!("{NAME_PREFIX}{}", e.name_key()));
        }
    }
    if families.discourse {
        for d in &query.discourse {
            keys.insert(format!("{DISC_PREFIX}{}", d.as_str()));
        }
    }
    keys
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolicIndex {
    postings: BTreeMap<String, Vec<EntryId>>,
    clusters: BTreeMap<String, u64>,
    registry: BTreeSet<EntryId>,
    /// Dependency keys are indexed only when enabled.
    index_deps: bool,
}

impl SymbolicIndex {
    pub fn new() -> Self {
        Self {
            index_deps: true,
            ..Default::default()
        }
    }

    /// An index that ignores dependency triples.
    pub fn without_deps() -> Self {
        Self::default()
    }

    pub fn indexes_deps(&self) -> bool {
        self.index_deps
    }

    pub fn len(&self) -> usize {
        self.registry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registry.is_empty()
    }

    pub fn contains(&self, id: EntryId) -> bool {
        self.registry.contains(&id)
    }

    pub fn insert(&mut self, entry: &MemoryEntry) -> Result<(), SymbolicError> {
        if !self.registry.insert(entry.id) {
            return Err(SymbolicError::DuplicateId(entry.id));
        }
        for key in entry_keys(entry, self.index_deps) {
            let list = self.postings.entry(key).or_default();
            match list.last() {
                Some(&last) if last > entry.id => {
                    let pos = list.partition_point(|&x| x < entry.id);
                    list.insert(pos, entry.id);
                }
                _ => list.push(entry.id),
            }
        }
        for e in &entry.entities {
            *self.clusters.entry(e.coref_id.clone()).or_insert(0) += 1;
        }
        Ok(())
    }

    pub fn posting(&self, key: &str) -> &[EntryId] {
        self.postings.get(key).map_or(&[], Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn postings(&self) -> impl Iterator<Item = (&str, &[EntryId])> {
        self.postings.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn clusters(&self) -> &BTreeMap<String, u64> {
        &self.clusters
    }

    pub fn registry(&self) -> &BTreeSet<EntryId> {
        &self.registry
    }

    /// Number of stored mentions carrying `coref_id`, or 0 if unseen.
    pub fn cluster_size(&self, coref_id: &str) -> u64 {
        self.clusters.get(coref_id).copied().unwrap_or(0)
    }

    /// Union of the query's posting lists, rarest key first, cut at `cap`
    /// ids. Within a key ids are taken in ascending order.
    pub fn candidates(&self, query: &Query, cap: usize, families: KeyFamilies) -> BTreeSet<EntryId> {
        let mut lists: Vec<(&str, &[EntryId])> = query_keys(query, families)
            .into_iter()
            .filter_map(|k| self.postings.get_key_value(&k))
            .map(|(k, v)| (k.as_str(), v.as_slice()))
            .collect();
        lists.sort_by(|a, b| a.1.len().cmp(&b.1.len()).then(a.0.cmp(b.0)));
        let mut out = BTreeSet::new();
        'keys: for (_, ids) in lists {
            for &id in ids {
                if out.len() >= cap {
                    break 'keys;
                }
                out.insert(id);
            }
        }
        out
    }

    /// Restores an index from persisted parts after checking its invariants.
    pub fn from_parts(
        postings: BTreeMap<String, Vec<EntryId>>,
        clusters: BTreeMap<String, u64>,
        registry: BTreeSet<EntryId>,
        index_deps: bool,
    ) -> Result<Self, SymbolicError> {
        for (k, ids) in &postings {
            if ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SymbolicError::UnsortedPosting(k.clone()));
            }
        }
        if let Some((k, _)) = clusters.iter().find(|(_, &c)| c == 0) {
            return Err(SymbolicError::EmptyCluster(k.clone()));
        }
        Ok(Self {
            postings,
            clusters,
            registry,
            index_deps,
        })
    }
}
