//! Domain types shared by every part of the engine, plus their validation
//! rules.
//!
//! A memory entry is the unit of storage and retrieval: the utterance with its
//! speaker/time metadata, the entity mentions linked to coreference clusters,
//! dependency triples, discourse labels, and a unit-norm dense embedding.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

/// Default embedding dimensionality (sentence encoder output size).
pub const DEFAULT_DIM: usize = 768;

/// Tolerance used when checking that a stored embedding is unit length.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

/// Identifier assigned to an entry when it enters a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for EntryId {
    fn from(v: u64) -> Self {
        EntryId(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityMention {
    pub name: String,
    pub coref_id: String,
    pub ner_type: String,
    /// Character offsets `[start, end)` into the utterance text.
    pub span: Option<(usize, usize)>,
}

impl EntityMention {
    pub fn new(name: impl Into<String>, coref_id: impl Into<String>, ner_type: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            coref_id: coref_id.into(),
            ner_type: ner_type.into(),
            span: None,
        }
    }

    pub fn with_span(mut self, start: usize, end: usize) -> Self {
        self.span = Some((start, end));
        self
    }

    /// Key used for surface-name matching.
    pub fn name_key(&self) -> String {
        self.name.trim().to_lowercase()
    }
}

/// `(head_lemma, dep_label, child_lemma)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DependencyTriple {
    pub head: String,
    pub label: String,
    pub child: String,
}

/// Lowercase, trim and replace the key separator `:` with `_`.
pub fn normalize_lemma(raw: &str) -> String {
    raw.trim().to_lowercase().replace(':', "_")
}

impl DependencyTriple {
    /// Builds a triple with normalized lemmas and label.
    pub fn new(head: &str, label: &str, child: &str) -> Self {
        Self {
            head: normalize_lemma(head),
            label: normalize_lemma(label),
            child: normalize_lemma(child),
        }
    }

    /// `head:label:child`, the inverted-index key body.
    pub fn key(&self) -> String {
        let mut s = String::with_capacity(self.head.len() + self.label.len() + self.child.len() + 2);
        s.push_str(&self.head);
        s.push(':');
        s.push_str(&self.label);
        s.push(':');
        s.push_str(&self.child);
        s
    }
}

/// Coarse discourse relation label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DiscourseLabel {
    Elaboration,
    Contrast,
    Cause,
    Condition,
    Temporal,
    Expansion,
    /// Any tag outside the coarse set, kept as received (trimmed).
    Other(String),
}

impl DiscourseLabel {
    pub fn parse(raw: &str) -> Self {
        let trimmed = raw.trim();
        match trimmed.to_uppercase().as_str() {
            "ELABORATION" => Self::Elaboration,
            "CONTRAST" => Self::Contrast,
            "CAUSE" => Self::Cause,
            "CONDITION" => Self::Condition,
            "TEMPORAL" => Self::Temporal,
            "EXPANSION" => Self::Expansion,
            _ => Self::Other(trimmed.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Self::Elaboration => "ELABORATION",
            Self::Contrast => "CONTRAST",
            Self::Cause => "CAUSE",
            Self::Condition => "CONDITION",
            Self::Temporal => "TEMPORAL",
            Self::Expansion => "EXPANSION",
            Self::Other(tag) => tag,
        }
    }
}

impl fmt::Display for DiscourseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EmbeddingError {
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("embedding has {found} values, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite embedding value at index {index}")]
    NonFinite { index: usize },
}

/// Dense vector. Values built through [`normalize_embedding`] have unit norm;
/// [`Embedding::raw`] wraps values unchecked so validation can inspect them.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn raw(values: Vec<f32>) -> Self {
        Embedding(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

pub(crate) fn l2_norm(values: &[f32]) -> f64 {
    let sq: f64 = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
    libm::sqrt(sq)
}

/// Dot product accumulated in `f64`. On unit vectors this is the cosine.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

/// Cosine between two unit vectors, clamped into `[-1, 1]`.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    dot(a.values(), b.values()).clamp(-1.0, 1.0)
}

/// Scales `values` to unit Euclidean norm.
pub fn normalize_embedding(values: &[f32], dim: usize) -> Result<Embedding, EmbeddingError> {
    if values.len() != dim {
        return Err(EmbeddingError::DimensionMismatch {
            expected: dim,
            found: values.len(),
        });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(EmbeddingError::NonFinite { index });
    }
    let norm = l2_norm(values);
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok(Embedding(
        values.iter().map(|&v| (f64::from(v) / norm) as f32).collect(),
    ))
}

/// Stored memory entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub id: EntryId,
    pub utterance: String,
    pub speaker: String,
    /// ISO-8601, compared lexicographically.
    pub timestamp: String,
    pub dialogue_id: String,
    pub session_id: u32,
    pub turn_id: u32,
    pub entities: Vec<EntityMention>,
    pub dep_triples: Vec<DependencyTriple>,
    pub discourse: Vec<DiscourseLabel>,
    pub embedding: Embedding,
}

impl MemoryEntry {
    pub fn turn_key(&self) -> TurnKey {
        TurnKey {
            dialogue_id: self.dialogue_id.clone(),
            session_id: self.session_id,
            turn_id: self.turn_id,
        }
    }
}

/// `(dialogue_id, session_id, turn_id)`, unique within a store.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TurnKey {
    pub dialogue_id: String,
    pub session_id: u32,
    pub turn_id: u32,
}

impl fmt::Display for TurnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.dialogue_id, self.session_id, self.turn_id)
    }
}

/// Gold evaluation data attached to a query turn.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldInfo {
    pub supporting_entry_ids: Vec<EntryId>,
    pub answer_span: String,
    /// Entity name to gold coreference cluster.
    pub coref_assignments: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub text: String,
    pub embedding: Embedding,
    pub entities: Vec<EntityMention>,
    pub discourse: Vec<DiscourseLabel>,
    pub gold: Option<GoldInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("fusion weights ({lambda_s}, {lambda_e}, {lambda_c}) are not on the probability simplex")]
pub struct WeightsError {
    pub lambda_s: f64,
    pub lambda_e: f64,
    pub lambda_c: f64,
}

/// `(λ_s, λ_e, λ_c)`: semantic, entity and discourse weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    lambda_s: f64,
    lambda_e: f64,
    lambda_c: f64,
}

impl FusionWeights {
    pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

    pub fn new(lambda_s: f64, lambda_e: f64, lambda_c: f64) -> Result<Self, WeightsError> {
        let err = WeightsError {
            lambda_s,
            lambda_e,
            lambda_c,
        };
        let all = [lambda_s, lambda_e, lambda_c];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(err);
        }
        if (lambda_s + lambda_e + lambda_c - 1.0).abs() > Self::SIMPLEX_TOLERANCE {
            return Err(err);
        }
        Ok(Self {
            lambda_s,
            lambda_e,
            lambda_c,
        })
    }

    /// Pure cosine ranking.
    pub const fn dense_only() -> Self {
        Self {
            lambda_s: 1.0,
            lambda_e: 0.0,
            lambda_c: 0.0,
        }
    }

    pub fn semantic(&self) -> f64 {
        self.lambda_s
    }

    pub fn entity(&self) -> f64 {
        self.lambda_e
    }

    pub fn discourse(&self) -> f64 {
        self.lambda_c
    }

    /// Drops the discourse weight and moves its mass onto the semantic term.
    pub fn without_discourse(&self) -> Self {
        Self {
            lambda_s: self.lambda_s + self.lambda_c,
            lambda_e: self.lambda_e,
            lambda_c: 0.0,
        }
    }

    pub fn combine(&self, sim: f64, entity: f64, discourse: f64) -> f64 {
        self.lambda_s * sim + self.lambda_e * entity + self.lambda_c * discourse
    }
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            lambda_s: 0.5,
            lambda_e: 0.3,
            lambda_c: 0.2,
        }
    }
}

impl fmt::Display for FusionWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2},{:.2},{:.2}", self.lambda_s, self.lambda_e, self.lambda_c)
    }
}

/// One scored retrieval result with its per-term breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedResult {
    pub entry_id: EntryId,
    pub score: f64,
    pub sim_term: f64,
    pub entity_term: f64,
    pub discourse_term: f64,
}

/// A single broken invariant found by [`validate_entry`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyEntityName { index: usize },
    EmptyCorefId { index: usize },
    SpanOutOfBounds { index: usize, start: usize, end: usize, text_len: usize },
    EmptyLemma { index: usize },
    SeparatorInLemma { index: usize, lemma: String },
    EmptyDiscourseLabel { index: usize },
    UnnormalizedDiscourseLabel { index: usize },
    DimensionMismatch { expected: usize, found: usize },
    NonFiniteEmbedding { index: usize },
    ZeroNormEmbedding,
    NotUnitNorm { norm: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyEntityName { index } => write!(f, "entity {index}: empty name"),
            Self::EmptyCorefId { index } => write!(f, "entity {index}: empty coref id"),
            Self::SpanOutOfBounds {
                index,
                start,
                end,
                text_len,
            } => write!(
                f,
                "entity {index}: span ({start}, {end}) outside utterance of {text_len} chars"
            ),
            Self::EmptyLemma { index } => write!(f, "dep triple {index}: empty field"),
            Self::SeparatorInLemma { index, lemma } => {
                write!(f, "dep triple {index}: separator in lemma {lemma:?}")
            }
            Self::EmptyDiscourseLabel { index } => write!(f, "discourse label {index}: empty"),
            Self::UnnormalizedDiscourseLabel { index } => {
                write!(f, "discourse label {index}: not trimmed")
            }
            Self::DimensionMismatch { expected, found } => {
                write!(f, "embedding has {found} values, expected {expected}")
            }
            Self::NonFiniteEmbedding { index } => {
                write!(f, "non-finite embedding value at index {index}")
            }
            Self::ZeroNormEmbedding => f.write_str("zero-norm embedding"),
            Self::NotUnitNorm { norm } => write!(f, "embedding norm {norm} is not 1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub(crate) fn check_entities(entities: &[EntityMention], text_len: usize, out: &mut Vec<Violation>) {
    for (index, e) in entities.iter().enumerate() {
        if e.name.is_empty() {
            out.push(Violation::EmptyEntityName { index });
        }
        if e.coref_id.is_empty() {
            out.push(Violation::EmptyCorefId { index });
        }
        if let Some((start, end)) = e.span {
            if start >= end || end > text_len {
                out.push(Violation::SpanOutOfBounds {
                    index,
                    start,
                    end,
                    text_len,
                });
            }
        }
    }
}

pub(crate) fn check_triples(triples: &[DependencyTriple], out: &mut Vec<Violation>) {
    for (index, t) in triples.iter().enumerate() {
        for field in [&t.head, &t.label, &t.child] {
            if field.is_empty() {
                out.push(Violation::EmptyLemma { index });
            } else if field.contains(':') {
                out.push(Violation::SeparatorInLemma {
                    index,
                    lemma: field.clone(),
                });
            }
        }
    }
}

pub(crate) fn check_discourse(labels: &[DiscourseLabel], out: &mut Vec<Violation>) {
    for (index, label) in labels.iter().enumerate() {
        if let DiscourseLabel::Other(tag) = label {
            if tag.is_empty() {
                out.push(Violation::EmptyDiscourseLabel { index });
            } else if tag.trim() != tag {
                out.push(Violation::UnnormalizedDiscourseLabel { index });
            }
        }
    }
}

pub(crate) fn check_embedding(embedding: &Embedding, dim: usize, out: &mut Vec<Violation>) {
    let values = embedding.values();
    if values.len() != dim {
        out.push(Violation::DimensionMismatch {
            expected: dim,
            found: values.len(),
        });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        out.push(Violation::NonFiniteEmbedding { index });
        return;
    }
    let norm = l2_norm(values);
    if norm == 0.0 {
        out.push(Violation::ZeroNormEmbedding);
    } else if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        out.push(Violation::NotUnitNorm { norm });
    }
}

/// Reports every broken per-entry invariant. Store-level uniqueness of ids
/// and turn keys is enforced on insertion instead.
pub fn validate_entry(entry: &MemoryEntry, dim: usize) -> ValidationReport {
    let mut violations = Vec::new();
    check_entities(&entry.entities, entry.utterance.chars().count(), &mut violations);
    check_triples(&entry.dep_triples, &mut violations);
    check_discourse(&entry.discourse, &mut violations);
    check_embedding(&entry.embedding, dim, &mut violations);
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn unit(dim: usize, axis: usize) -> Embedding {
        let mut v = vec![0.0f32; dim];
        v[axis] = 1.0;
        normalize_embedding(&v, dim).unwrap()
    }

    pub(crate) fn sample_entry() -> MemoryEntry {
        MemoryEntry {
            id: EntryId(0),
            utterance: "John booked a taxi.".into(),
            speaker: "user".into(),
            timestamp: "2024-03-14T09:10:00".into(),
            dialogue_id: "d1".into(),
            session_id: 0,
            turn_id: 0,
            entities: vec![EntityMention::new("John", "E1", "PERSON").with_span(0, 4)],
            dep_triples: vec![DependencyTriple::new("book", "nsubj", "john")],
            discourse: vec![DiscourseLabel::Expansion],
            embedding: unit(768, 3),
        }
    }

    #[test]
    fn valid_entry_passes() {
        assert!(validate_entry(&sample_entry(), 768).is_ok());
    }

    #[test]
    fn zero_vector_reported() {
        let mut e = sample_entry();
        e.embedding = Embedding::raw(vec![0.0; 768]);
        let report = validate_entry(&e, 768);
        assert_eq!(report.violations, vec![Violation::ZeroNormEmbedding]);
        assert_eq!(report.violations[0].to_string(), "zero-norm embedding");
    }

    #[test]
    fn separator_in_lemma_reported() {
        let mut e = sample_entry();
        e.dep_triples[0].head = "a:b".into();
        let report = validate_entry(&e, 768);
        assert!(matches!(
            report.violations.as_slice(),
            [Violation::SeparatorInLemma { index: 0, .. }]
        ));
        assert!(report.violations[0].to_string().contains("separator in lemma"));
    }

    #[test]
    fn triple_constructor_normalizes() {
        let t = DependencyTriple::new(" Confirm ", "nsubj", "John:Smith");
        assert_eq!(t.key(), "confirm:nsubj:john_smith");
    }

    #[test]
    fn discourse_labels_parse() {
        assert_eq!(DiscourseLabel::parse(" elaboration "), DiscourseLabel::Elaboration);
        assert_eq!(
            DiscourseLabel::parse(" Alt-Lex "),
            DiscourseLabel::Other("Alt-Lex".into())
        );
        assert_eq!(DiscourseLabel::parse("Alt-Lex").as_str(), "Alt-Lex");
    }

    #[test]
    fn normalize_examples() {
        let e = normalize_embedding(&[3.0, 4.0], 2).unwrap();
        assert!((f64::from(e.values()[0]) - 0.6).abs() < 1e-7);
        assert!((f64::from(e.values()[1]) - 0.8).abs() < 1e-7);
        let e1 = normalize_embedding(&[1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(e1.values(), &[1.0, 0.0, 0.0]);
        assert_eq!(normalize_embedding(&[0.0, 0.0], 2), Err(EmbeddingError::ZeroNorm));
        assert_eq!(
            normalize_embedding(&[1.0], 2),
            Err(EmbeddingError::DimensionMismatch { expected: 2, found: 1 })
        );
        assert_eq!(
            normalize_embedding(&[1.0, f32::NAN], 2),
            Err(EmbeddingError::NonFinite { index: 1 })
        );
    }

    #[test]
    fn weights_must_be_on_simplex() {
        assert!(FusionWeights::new(0.5, 0.3, 0.2).is_ok());
        assert!(FusionWeights::new(0.5, 0.5, 0.2).is_err());
        assert!(FusionWeights::new(1.2, -0.2, 0.0).is_err());
        let w = FusionWeights::new(0.5, 0.3, 0.2).unwrap().without_discourse();
        assert!((w.semantic() - 0.7).abs() < 1e-12);
        assert_eq!(w.discourse(), 0.0);
    }

    proptest! {
        #[test]
        fn normalize_is_unit_and_idempotent(values in prop::collection::vec(-100.0f32..100.0, 1..64)) {
            let dim = values.len();
            prop_assume!(values.iter().any(|v| v.abs() > 1e-3));
            let once = normalize_embedding(&values, dim).unwrap();
            prop_assert!((once.norm() - 1.0).abs() < 1e-6);
            let twice = normalize_embedding(once.values(), dim).unwrap();
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn single_mutation_is_reported(which in 0usize..8) {
            let mut e = sample_entry();
            match which {
                0 => e.entities[0].name.clear(),
                1 => e.entities[0].coref_id.clear(),
                2 => e.entities[0].span = Some((3, 99)),
                3 => e.dep_triples[0].child.clear(),
                4 => e.dep_triples[0].label = "x:y".into(),
                5 => e.embedding = Embedding::raw(vec![0.5; 768]),
                6 => e.embedding = Embedding::raw(vec![1.0; 10]),
                _ => e.discourse.push(DiscourseLabel::Other(" pad ".into())),
            }
            prop_assert!(!validate_entry(&e, 768).is_ok());
        }
    }
}
