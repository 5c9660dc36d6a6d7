//! Loading annotated dialogues into a store: stored turns become entries,
//! turns with gold information become evaluation queries.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::dialogue::{AnnotatedDialogue, EmbeddingPolicy, TurnError, META_PRONOUN_ONLY, META_QUERY_CLASS};
use crate::model::Query;
use crate::store::{MemoryStore, StoreError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("dialogue {dialogue} session {session} turn {turn}: {source}")]
    Turn {
        dialogue: String,
        session: u32,
        turn: u32,
        source: TurnError,
    },
    #[error("dialogue {dialogue} turn {turn}: {source}")]
    Store {
        dialogue: String,
        turn: u32,
        source: StoreError,
    },
}

/// A query turn with its provenance in the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusQuery {
    pub query: Query,
    pub dialogue_id: String,
    pub session_id: u32,
    pub turn_id: u32,
    pub class: Option<String>,
    pub pronoun_only: bool,
}

/// Inserts every stored turn, ids continuing from the store's next id, and
/// returns the query turns in corpus order. Stops at the first bad turn;
/// entries inserted before it stay in the store.
pub fn ingest_corpus(
    store: &mut MemoryStore,
    corpus: &[AnnotatedDialogue],
    policy: EmbeddingPolicy,
) -> Result<Vec<CorpusQuery>, IngestError> {
    let mut queries = Vec::new();
    for d in corpus {
        for (session, turn) in d.turns_with_session() {
            let turn_err = |source| IngestError::Turn {
                dialogue: d.dialogue_id.clone(),
                session,
                turn: turn.turn_id,
                source,
            };
            if turn.is_query() {
                queries.push(CorpusQuery {
                    query: turn.to_query(policy).map_err(turn_err)?,
                    dialogue_id: d.dialogue_id.clone(),
                    session_id: session,
                    turn_id: turn.turn_id,
                    class: turn.meta.get(META_QUERY_CLASS).cloned(),
                    pronoun_only: turn.flag(META_PRONOUN_ONLY),
                });
                continue;
            }
            let entry = turn
                .to_entry(store.next_id(), &d.dialogue_id, session, policy)
                .map_err(turn_err)?;
            store.insert(entry).map_err(|source| IngestError::Store {
                dialogue: d.dialogue_id.clone(),
                turn: turn.turn_id,
                source,
            })?;
        }
    }
    Ok(queries)
}
