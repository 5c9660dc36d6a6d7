//! The hybrid memory store: entries plus the dense and symbolic indexes built
//! over the same id set.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

use crate::dense::{DenseError, HnswIndex, HnswParams};
use crate::model::{validate_entry, EntryId, MemoryEntry, TurnKey, Violation};
use crate::symbolic::{SymbolicError, SymbolicIndex};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("entry {id} is invalid: {violations:?}")]
    Invalid { id: EntryId, violations: Vec<Violation> },
    #[error("entry id {0} already stored")]
    DuplicateId(EntryId),
    #[error("turn {0} already stored")]
    DuplicateTurn(TurnKey),
    #[error("entry id {id} is below the next assignable id {next}")]
    NonMonotonicId { id: EntryId, next: u64 },
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error("indexes disagree on the stored id set")]
    IndexMismatch,
}

#[derive(Debug, Clone)]
pub struct MemoryStore {
    dim: usize,
    entries: BTreeMap<EntryId, MemoryEntry>,
    turns: BTreeMap<TurnKey, EntryId>,
    dense: HnswIndex,
    symbolic: SymbolicIndex,
    next_id: u64,
}

impl MemoryStore {
    pub fn new(dim: usize, params: HnswParams) -> Result<Self, StoreError> {
        Ok(Self {
            dim,
            entries: BTreeMap::new(),
            turns: BTreeMap::new(),
            dense: HnswIndex::new(dim, params)?,
            symbolic: SymbolicIndex::new(),
            next_id: 0,
        })
    }

    /// Reassembles a store from persisted parts, checking that the entries and
    /// both indexes cover the same ids.
    pub fn from_parts(
        entries: Vec<MemoryEntry>,
        dense: HnswIndex,
        symbolic: SymbolicIndex,
    ) -> Result<Self, StoreError> {
        let dim = dense.dim();
        let mut map = BTreeMap::new();
        let mut turns = BTreeMap::new();
        for e in entries {
            if !dense.contains(e.id) || !symbolic.contains(e.id) {
                return Err(StoreError::IndexMismatch);
            }
            if turns.insert(e.turn_key(), e.id).is_some() {
                return Err(StoreError::DuplicateTurn(e.turn_key()));
            }
            if let Some(prev) = map.insert(e.id, e) {
                return Err(StoreError::DuplicateId(prev.id));
            }
        }
        if map.len() != dense.len() || map.len() != symbolic.len() {
            return Err(StoreError::IndexMismatch);
        }
        let next_id = map.keys().next_back().map_or(0, |id| id.0 + 1);
        Ok(Self {
            dim,
            entries: map,
            turns,
            dense,
            symbolic,
            next_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_id(&self) -> EntryId {
        EntryId(self.next_id)
    }

    pub fn get(&self, id: EntryId) -> Option<&MemoryEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.values()
    }

    pub fn dense(&self) -> &HnswIndex {
        &self.dense
    }

    pub fn dense_mut(&mut self) -> &mut HnswIndex {
        &mut self.dense
    }

    pub fn symbolic(&self) -> &SymbolicIndex {
        &self.symbolic
    }

    pub fn lookup_turn(&self, key: &TurnKey) -> Option<EntryId> {
        self.turns.get(key).copied()
    }

    /// Checks that `entry` could be inserted, without inserting it.
    pub fn check_insert(&self, entry: &MemoryEntry) -> Result<(), StoreError> {
        let report = validate_entry(entry, self.dim);
        if !report.is_ok() {
            return Err(StoreError::Invalid {
                id: entry.id,
                violations: report.violations,
            });
        }
        if self.entries.contains_key(&entry.id) {
            return Err(StoreError::DuplicateId(entry.id));
        }
        if entry.id.0 < self.next_id {
            return Err(StoreError::NonMonotonicId {
                id: entry.id,
                next: self.next_id,
            });
        }
        if self.turns.contains_key(&entry.turn_key()) {
            return Err(StoreError::DuplicateTurn(entry.turn_key()));
        }
        Ok(())
    }

    /// Inserts into both indexes. Ids must increase monotonically.
    pub fn insert(&mut self, entry: MemoryEntry) -> Result<EntryId, StoreError> {
        self.check_insert(&entry)?;
        let id = entry.id;
        self.dense.insert(id, &entry.embedding)?;
        self.symbolic.insert(&entry)?;
        self.turns.insert(entry.turn_key(), id);
        self.entries.insert(id, entry);
        self.next_id = id.0 + 1;
        Ok(id)
    }

    /// Copy of this store whose symbolic index carries no dependency postings.
    pub fn without_dep_postings(&self) -> Self {
        let mut symbolic = SymbolicIndex::without_deps();
        for e in self.entries.values() {
            symbolic
                .insert(e)
                .expect("ids are unique within a store");
        }
        Self {
            symbolic,
            ..self.clone()
        }
    }
}
