//! Annotated dialogues: the in-memory form of the annotated-utterance file
//! contract, shared by ingestion, the corpus builder and evaluation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::annotate::{toy_embed, ToyEmbedError};
use crate::model::{
    check_discourse, check_entities, check_triples, normalize_embedding, DependencyTriple, DiscourseLabel,
    EmbeddingError, EntityMention, EntryId, GoldInfo, MemoryEntry, Query, Violation,
};

/// Per-turn flag marking that the turn closes a booking or goal.
pub const META_GOAL_CLOSED: &str = "goal_closed";
/// Per-turn flag marking a turn as evidence for a gold relation.
pub const META_RELATION_EVIDENCE: &str = "relation_evidence";
/// Difficulty class of a query turn: `lexical`, `entity` or `discourse`.
pub const META_QUERY_CLASS: &str = "query_class";
/// Set on query turns that refer to their target only through a pronoun.
pub const META_PRONOUN_ONLY: &str = "pronoun_only";

/// One annotated utterance record. Turns carrying `gold` are evaluation
/// queries and are not stored as memory entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Turn {
    pub turn_id: u32,
    pub speaker: String,
    pub timestamp: String,
    pub text: String,
    pub entities: Vec<EntityMention>,
    pub dep_triples: Vec<DependencyTriple>,
    pub discourse: Vec<DiscourseLabel>,
    /// Raw (not necessarily normalized) embedding as carried by the record.
    pub embedding: Option<Vec<f32>>,
    pub gold: Option<GoldInfo>,
    pub meta: BTreeMap<String, String>,
}

impl Turn {
    pub fn is_query(&self) -> bool {
        self.gold.is_some()
    }

    pub fn flag(&self, key: &str) -> bool {
        self.meta.get(key).is_some_and(|v| v == "true")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Session {
    pub session_id: u32,
    /// `<GAP=hours:H>` on every session after a synthetic boundary.
    pub gap_tag: Option<String>,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotatedDialogue {
    pub dialogue_id: String,
    pub sessions: Vec<Session>,
    pub metadata: BTreeMap<String, String>,
}

impl AnnotatedDialogue {
    pub fn turns(&self) -> impl Iterator<Item = &Turn> {
        self.sessions.iter().flat_map(|s| s.turns.iter())
    }

    /// `(session_id, turn)` pairs in dialogue order.
    pub fn turns_with_session(&self) -> impl Iterator<Item = (u32, &Turn)> {
        self.sessions
            .iter()
            .flat_map(|s| s.turns.iter().map(move |t| (s.session_id, t)))
    }

    pub fn turn_count(&self) -> usize {
        self.sessions.iter().map(|s| s.turns.len()).sum()
    }

    /// Stored (non-query) turns.
    pub fn memory_turn_count(&self) -> usize {
        self.turns().filter(|t| !t.is_query()).count()
    }
}

pub fn format_gap_tag(hours: u32) -> String {
    format!("<GAP=hours:{hours}>")
}

/// Parses `<GAP=hours:INT>`, returning the hour count.
pub fn parse_gap_tag(tag: &str) -> Option<u32> {
    let digits = tag.strip_prefix("<GAP=hours:")?.strip_suffix('>')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StructureError {
    #[error("dialogue {dialogue}: session ids not strictly increasing at session {session}")]
    SessionOrder { dialogue: String, session: u32 },
    #[error("dialogue {dialogue}: turn ids not strictly increasing at session {session} turn {turn}")]
    TurnOrder { dialogue: String, session: u32, turn: u32 },
    #[error("dialogue {dialogue}: malformed gap tag {tag:?}")]
    GapTag { dialogue: String, tag: String },
}

/// Checks session/turn ordering and gap-tag syntax.
pub fn check_structure(d: &AnnotatedDialogue) -> Result<(), StructureError> {
    let mut prev_session: Option<u32> = None;
    for s in &d.sessions {
        if prev_session.is_some_and(|p| p >= s.session_id) {
            return Err(StructureError::SessionOrder {
                dialogue: d.dialogue_id.clone(),
                session: s.session_id,
            });
        }
        prev_session = Some(s.session_id);
        if let Some(tag) = &s.gap_tag {
            if parse_gap_tag(tag).is_none() {
                return Err(StructureError::GapTag {
                    dialogue: d.dialogue_id.clone(),
                    tag: tag.clone(),
                });
            }
        }
        let mut prev_turn: Option<u32> = None;
        for t in &s.turns {
            if prev_turn.is_some_and(|p| p >= t.turn_id) {
                return Err(StructureError::TurnOrder {
                    dialogue: d.dialogue_id.clone(),
                    session: s.session_id,
                    turn: t.turn_id,
                });
            }
            prev_turn = Some(t.turn_id);
        }
    }
    Ok(())
}

/// How a missing embedding is handled when a turn is converted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingPolicy {
    pub dim: usize,
    /// Synthesize missing embeddings with the toy embedder.
    pub toy_embed: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TurnError {
    #[error("missing embedding (toy embedder disabled)")]
    MissingEmbedding,
    #[error("toy embedder: {0}")]
    ToyEmbed(#[from] ToyEmbedError),
    #[error("{}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join("; ")
}

fn embedding_violation(e: EmbeddingError) -> Violation {
    match e {
        EmbeddingError::ZeroNorm => Violation::ZeroNormEmbedding,
        EmbeddingError::DimensionMismatch { expected, found } => Violation::DimensionMismatch { expected, found },
        EmbeddingError::NonFinite { index } => Violation::NonFiniteEmbedding { index },
    }
}

fn turn_features(
    text: &str,
    entities: &[EntityMention],
    triples: &[DependencyTriple],
    discourse: &[DiscourseLabel],
    raw: Option<&[f32]>,
    policy: EmbeddingPolicy,
) -> Result<crate::model::Embedding, TurnError> {
    let mut violations = Vec::new();
    check_entities(entities, text.chars().count(), &mut violations);
    check_triples(triples, &mut violations);
    check_discourse(discourse, &mut violations);
    let embedding = match raw {
        Some(values) => match normalize_embedding(values, policy.dim) {
            Ok(e) => Some(e),
            Err(e) => {
                violations.push(embedding_violation(e));
                None
            }
        },
        None if policy.toy_embed => Some(toy_embed(text, policy.dim)?),
        None => return Err(TurnError::MissingEmbedding),
    };
    match embedding {
        Some(e) if violations.is_empty() => Ok(e),
        _ => Err(TurnError::Invalid(violations)),
    }
}

impl Turn {
    /// Converts a stored turn into a memory entry with a normalized embedding.
    pub fn to_entry(
        &self,
        id: EntryId,
        dialogue_id: &str,
        session_id: u32,
        policy: EmbeddingPolicy,
    ) -> Result<MemoryEntry, TurnError> {
        let embedding = turn_features(
            &self.text,
            &self.entities,
            &self.dep_triples,
            &self.discourse,
            self.embedding.as_deref(),
            policy,
        )?;
        Ok(MemoryEntry {
            id,
            utterance: self.text.clone(),
            speaker: self.speaker.clone(),
            timestamp: self.timestamp.clone(),
            dialogue_id: dialogue_id.into(),
            session_id,
            turn_id: self.turn_id,
            entities: self.entities.clone(),
            dep_triples: self.dep_triples.clone(),
            discourse: self.discourse.clone(),
            embedding,
        })
    }

    /// Converts a turn into a retrieval query.
    pub fn to_query(&self, policy: EmbeddingPolicy) -> Result<Query, TurnError> {
        let embedding = turn_features(
            &self.text,
            &self.entities,
            &self.dep_triples,
            &self.discourse,
            self.embedding.as_deref(),
            policy,
        )?;
        Ok(Query {
            text: self.text.clone(),
            embedding,
            entities: self.entities.clone(),
            discourse: self.discourse.clone(),
            gold: self.gold.clone(),
        })
    }
}

/// Where each memory entry of a corpus lands when the corpus is ingested into
/// an empty store: ids are assigned in file order, skipping query turns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryLocation {
    pub id: EntryId,
    pub dialogue_index: usize,
    pub session_id: u32,
    pub turn_id: u32,
}

pub fn assign_entry_ids(corpus: &[AnnotatedDialogue], first_id: u64) -> Vec<EntryLocation> {
    let mut next = first_id;
    let mut out = Vec::new();
    for (dialogue_index, d) in corpus.iter().enumerate() {
        for (session_id, t) in d.turns_with_session() {
            if t.is_query() {
                continue;
            }
            out.push(EntryLocation {
                id: EntryId(next),
                dialogue_index,
                session_id,
                turn_id: t.turn_id,
            });
            next += 1;
        }
    }
    out
}
