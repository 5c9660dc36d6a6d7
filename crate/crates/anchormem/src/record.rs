//! Line-delimited annotated-utterance records.
//!
//! Every line is one JSON object describing one turn. Records are written in
//! canonical form: keys sorted, floats in their shortest round-trip `f32`
//! form (at most 9 significant digits), UTF-8, one trailing newline per line.
//! Struct fields below are declared in key order so that serde emits sorted
//! keys directly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anchormem_core::dialogue::{check_structure, META_PRONOUN_ONLY, META_QUERY_CLASS};
use anchormem_core::ingest::CorpusQuery;
use anchormem_core::model::DEFAULT_DIM;
use anchormem_core::{
    toy_embed, AnnotatedDialogue, DependencyTriple, DiscourseLabel, EmbeddingPolicy, EntityMention, EntryId, GoldInfo,
    Session, Turn,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub coref_id: String,
    pub name: String,
    pub ner_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub child: String,
    pub head: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub answer_span: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coref_assignments: Option<BTreeMap<String, String>>,
    pub supporting_entry_ids: Vec<u64>,
}

/// One turn. `meta` holds per-turn flags; `dialogue_meta` carries the
/// dialogue's metadata and is written on its first record only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    #[serde(default)]
    pub dep_triples: Vec<TripleRecord>,
    pub dialogue_id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dialogue_meta: BTreeMap<String, String>,
    #[serde(default)]
    pub discourse: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    #[serde(default)]
    pub entities: Vec<EntityRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
    pub session_id: u32,
    pub speaker: String,
    pub text: String,
    pub timestamp: String,
    pub turn_id: u32,
}

impl Record {
    /// The turn this record describes. Triples are taken verbatim so that
    /// validation can report unnormalized lemmas.
    pub fn to_turn(&self) -> Turn {
        Turn {
            turn_id: self.turn_id,
            speaker: self.speaker.clone(),
            timestamp: self.timestamp.clone(),
            text: self.text.clone(),
            entities: self
                .entities
                .iter()
                .map(|e| EntityMention {
                    name: e.name.clone(),
                    coref_id: e.coref_id.clone(),
                    ner_type: e.ner_type.clone(),
                    span: e.span.map(|[s, t]| (s, t)),
                })
                .collect(),
            dep_triples: self
                .dep_triples
                .iter()
                .map(|t| DependencyTriple {
                    head: t.head.clone(),
                    label: t.label.clone(),
                    child: t.child.clone(),
                })
                .collect(),
            discourse: self.discourse.iter().map(|d| DiscourseLabel::parse(d)).collect(),
            embedding: self.embedding.clone(),
            gold: self.gold.as_ref().map(|g| GoldInfo {
                supporting_entry_ids: g.supporting_entry_ids.iter().map(|&i| EntryId(i)).collect(),
                answer_span: g.answer_span.clone(),
                coref_assignments: g.coref_assignments.clone(),
            }),
            meta: self.meta.clone(),
        }
    }

    pub fn from_turn(dialogue_id: &str, session_id: u32, gap_tag: Option<&str>, t: &Turn) -> Self {
        Record {
            dep_triples: t
                .dep_triples
                .iter()
                .map(|d| TripleRecord {
                    child: d.child.clone(),
                    head: d.head.clone(),
                    label: d.label.clone(),
                })
                .collect(),
            dialogue_id: dialogue_id.into(),
            dialogue_meta: BTreeMap::new(),
            discourse: t.discourse.iter().map(|d| d.as_str().to_string()).collect(),
            embedding: t.embedding.clone(),
            entities: t
                .entities
                .iter()
                .map(|e| EntityRecord {
                    coref_id: e.coref_id.clone(),
                    name: e.name.clone(),
                    ner_type: e.ner_type.clone(),
                    span: e.span.map(|(s, t)| [s, t]),
                })
                .collect(),
            gap_tag: gap_tag.map(String::from),
            gold: t.gold.as_ref().map(|g| GoldRecord {
                answer_span: g.answer_span.clone(),
                coref_assignments: g.coref_assignments.clone(),
                supporting_entry_ids: g.supporting_entry_ids.iter().map(|i| i.0).collect(),
            }),
            meta: t.meta.clone(),
            session_id,
            speaker: t.speaker.clone(),
            text: t.text.clone(),
            timestamp: t.timestamp.clone(),
            turn_id: t.turn_id,
        }
    }

    /// Canonical single-line form, without the newline.
    pub fn to_canonical(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineViolation {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate turn ({dialogue_id}, {session_id}, {turn_id})")]
    Duplicate {
        line: usize,
        dialogue_id: String,
        session_id: u32,
        turn_id: u32,
    },
    #[error("{} invalid record(s), first at line {}: {}", .0.len(), .0[0].line, .0[0].message)]
    Invalid(Vec<LineViolation>),
    #[error("dialogue structure: {0}")]
    Structure(#[from] anchormem_core::dialogue::StructureError),
    #[error("dialogue {dialogue_id} turn {turn_id}: {message}")]
    Query {
        dialogue_id: String,
        turn_id: u32,
        message: String,
    },
}

impl RecordError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReadOptions {
    /// Expected embedding dimension; inferred from the first embedding when
    /// unset, falling back to the default dimension.
    pub dim: Option<usize>,
    /// Synthesize missing embeddings with the toy embedder.
    pub toy_embed: bool,
}

fn validate(record: &Record, turn: &Turn, policy: EmbeddingPolicy) -> Result<(), String> {
    if let Some(g) = &record.gold {
        if g.supporting_entry_ids.is_empty() {
            return Err("gold.supporting_entry_ids is empty".into());
        }
    }
    let checked = if turn.is_query() {
        turn.to_query(policy).map(|_| ())
    } else {
        turn.to_entry(EntryId(0), &record.dialogue_id, record.session_id, policy).map(|_| ())
    };
    checked.map_err(|e| e.to_string())
}

/// Parses records from `reader`, failing fast on malformed lines.
pub fn parse_records(reader: impl BufRead) -> Result<Vec<(usize, Record)>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| RecordError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| RecordError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

/// Validates parsed records and groups them into dialogues, in order of
/// first appearance.
pub fn assemble(records: Vec<(usize, Record)>, opts: ReadOptions) -> Result<Vec<AnnotatedDialogue>, RecordError> {
    let dim = opts
        .dim
        .or_else(|| records.iter().find_map(|(_, r)| r.embedding.as_ref().map(Vec::len)))
        .unwrap_or(DEFAULT_DIM);
    let policy = EmbeddingPolicy {
        dim,
        toy_embed: opts.toy_embed,
    };

    let mut seen = BTreeSet::new();
    let mut violations = Vec::new();
    let mut dialogues: Vec<AnnotatedDialogue> = Vec::new();
    let mut index_of: BTreeMap<String, usize> = BTreeMap::new();
    for (line, record) in records {
        let key = (record.dialogue_id.clone(), record.session_id, record.turn_id);
        if !seen.insert(key) {
            return Err(RecordError::Duplicate {
                line,
                dialogue_id: record.dialogue_id,
                session_id: record.session_id,
                turn_id: record.turn_id,
            });
        }
        let mut turn = record.to_turn();
        if let Err(message) = validate(&record, &turn, policy) {
            violations.push(LineViolation { line, message });
            continue;
        }
        if turn.embedding.is_none() {
            let e = toy_embed(&turn.text, dim).expect("validated above");
            turn.embedding = Some(e.into_inner());
        }

        let di = *index_of.entry(record.dialogue_id.clone()).or_insert_with(|| {
            dialogues.push(AnnotatedDialogue {
                dialogue_id: record.dialogue_id.clone(),
                ..Default::default()
            });
            dialogues.len() - 1
        });
        let d = &mut dialogues[di];
        d.metadata.extend(record.dialogue_meta.clone());
        let si = match d.sessions.iter().position(|s| s.session_id == record.session_id) {
            Some(i) => i,
            None => {
                d.sessions.push(Session {
                    session_id: record.session_id,
                    gap_tag: None,
                    turns: Vec::new(),
                });
                d.sessions.len() - 1
            }
        };
        let session = &mut d.sessions[si];
        match (&session.gap_tag, &record.gap_tag) {
            (Some(a), Some(b)) if a != b => violations.push(LineViolation {
                line,
                message: format!("gap tag {b:?} conflicts with {a:?} earlier in the session"),
            }),
            (None, Some(b)) => session.gap_tag = Some(b.clone()),
            _ => {}
        }
        session.turns.push(turn);
    }
    if !violations.is_empty() {
        return Err(RecordError::Invalid(violations));
    }
    for d in &dialogues {
        check_structure(d)?;
    }
    Ok(dialogues)
}

pub fn read_annotated(path: &Path, opts: ReadOptions) -> Result<Vec<AnnotatedDialogue>, RecordError> {
    let file = fs::File::open(path).map_err(|e| RecordError::io(path, e))?;
    assemble(parse_records(BufReader::new(file))?, opts)
}

/// The query turns of `dialogues` in file order, checked against `dim`.
pub fn corpus_queries(dialogues: &[AnnotatedDialogue], dim: usize) -> Result<Vec<CorpusQuery>, RecordError> {
    let policy = EmbeddingPolicy { dim, toy_embed: true };
    let mut out = Vec::new();
    for d in dialogues {
        for (session_id, t) in d.turns_with_session().filter(|(_, t)| t.is_query()) {
            let query = t.to_query(policy).map_err(|e| RecordError::Query {
                dialogue_id: d.dialogue_id.clone(),
                turn_id: t.turn_id,
                message: e.to_string(),
            })?;
            out.push(CorpusQuery {
                query,
                dialogue_id: d.dialogue_id.clone(),
                session_id,
                turn_id: t.turn_id,
                class: t.meta.get(META_QUERY_CLASS).cloned(),
                pronoun_only: t.flag(META_PRONOUN_ONLY),
            });
        }
    }
    Ok(out)
}

/// Records for `dialogues` in file order. The gap tag is written on every
/// turn of its session.
pub fn to_records(dialogues: &[AnnotatedDialogue]) -> Vec<Record> {
    let mut out = Vec::new();
    for d in dialogues {
        let first = out.len();
        for s in &d.sessions {
            for t in &s.turns {
                out.push(Record::from_turn(&d.dialogue_id, s.session_id, s.gap_tag.as_deref(), t));
            }
        }
        if let Some(r) = out.get_mut(first) {
            r.dialogue_meta = d.metadata.clone();
        }
    }
    out
}

pub fn to_canonical_string(dialogues: &[AnnotatedDialogue]) -> String {
    let mut s = String::new();
    for r in to_records(dialogues) {
        s.push_str(&r.to_canonical());
        s.push('\n');
    }
    s
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn write_annotated(path: &Path, dialogues: &[AnnotatedDialogue]) -> Result<(), RecordError> {
    write_atomic(path, to_canonical_string(dialogues).as_bytes()).map_err(|e| RecordError::io(path, e))
}
