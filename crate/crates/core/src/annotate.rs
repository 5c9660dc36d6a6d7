//! Deterministic stand-ins for the annotation pipeline.
//!
//! The toy annotator finds capitalized spans, links pronouns by recency,
//! emits adjacency "triples" over content lemmas and tags discourse from the
//! first word. The toy embedder hashes word unigrams and bigrams into buckets.
//! Both are crude on purpose: their contract is determinism.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use thiserror::Error;

use crate::model::{
    normalize_embedding, normalize_lemma, DependencyTriple, DiscourseLabel, Embedding, EntityMention,
};

pub const MIN_TOY_DIM: usize = 8;

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "but", "by", "can", "could", "did", "do", "does", "for", "from",
    "had", "has", "have", "he", "her", "here", "him", "his", "how", "however", "i", "if", "in",
    "is", "it", "its", "just", "me", "my", "no", "not", "now", "of", "ok", "okay", "on", "or",
    "our", "please", "she", "should", "so", "than", "thanks", "that", "the", "their", "them",
    "then", "there", "these", "they", "this", "those", "to", "too", "us", "was", "we", "were",
    "what", "when", "where", "which", "who", "why", "will", "with", "would", "yes", "you", "your",
];

const HONORIFICS: &[&str] = &["dr", "mr", "mrs", "ms", "prof", "st"];

const PLACE_SUFFIXES: &[&str] = &[
    "airport", "bar", "cafe", "center", "centre", "clinic", "college", "deli", "guesthouse",
    "hospital", "hotel", "house", "inn", "lodge", "museum", "park", "restaurant", "road",
    "station", "street", "theatre",
];

const CALENDAR: &[&str] = &[
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday", "january",
    "february", "march", "april", "may", "june", "july", "august", "september", "october",
    "november", "december",
];

pub fn is_stopword(lower: &str) -> bool {
    STOPWORDS.binary_search(&lower).is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PronounClass {
    Person,
    Thing,
    Any,
}

fn pronoun_class(lower: &str) -> Option<PronounClass> {
    match lower {
        "he" | "him" | "his" | "she" | "her" | "hers" => Some(PronounClass::Person),
        "it" | "its" => Some(PronounClass::Thing),
        "they" | "them" | "their" => Some(PronounClass::Any),
        _ => None,
    }
}

fn compatible(class: PronounClass, ner_type: &str) -> bool {
    match class {
        PronounClass::Person => ner_type == "PERSON",
        PronounClass::Thing => ner_type != "PERSON",
        PronounClass::Any => true,
    }
}

/// Whitespace token with its trimmed core, in character offsets.
#[derive(Debug, Clone)]
struct Token<'a> {
    core: &'a str,
    start: usize,
    end: usize,
    /// Punctuation was trimmed off the end of the raw token.
    trailing_punct: bool,
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut char_pos = 0usize;
    let mut iter = text.char_indices().peekable();
    while let Some(&(byte_start, c)) = iter.peek() {
        if c.is_whitespace() {
            iter.next();
            char_pos += 1;
            continue;
        }
        let tok_char_start = char_pos;
        let mut byte_end = byte_start;
        while let Some(&(b, c)) = iter.peek() {
            if c.is_whitespace() {
                break;
            }
            byte_end = b + c.len_utf8();
            char_pos += 1;
            iter.next();
        }
        let raw = &text[byte_start..byte_end];
        let lead = raw.chars().take_while(|c| !c.is_alphanumeric()).count();
        let trail = raw.chars().rev().take_while(|c| !c.is_alphanumeric()).count();
        let raw_chars = raw.chars().count();
        if lead + trail >= raw_chars {
            continue;
        }
        let lead_bytes: usize = raw.chars().take(lead).map(char::len_utf8).sum();
        let trail_bytes: usize = raw.chars().rev().take(trail).map(char::len_utf8).sum();
        out.push(Token {
            core: &raw[lead_bytes..raw.len() - trail_bytes],
            start: tok_char_start + lead,
            end: tok_char_start + raw_chars - trail,
            trailing_punct: trail > 0,
        });
    }
    out
}

/// Lowercased word tokens used by the embedder.
pub fn words(text: &str) -> Vec<String> {
    tokenize(text).iter().map(|t| t.core.to_lowercase()).collect()
}

fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end - start).collect()
}

fn classify(name_tokens: &[&str]) -> &'static str {
    let first = name_tokens[0].to_lowercase();
    let last = name_tokens[name_tokens.len() - 1].to_lowercase();
    if HONORIFICS.contains(&first.as_str()) && first != "st" {
        "PERSON"
    } else if PLACE_SUFFIXES.contains(&last.as_str()) || first == "st" {
        "LOC"
    } else if name_tokens.len() == 1 && CALENDAR.contains(&last.as_str()) {
        "MISC"
    } else {
        "PERSON"
    }
}

fn is_capitalized(core: &str) -> bool {
    core.chars().next().is_some_and(char::is_uppercase)
}

/// Output of [`ToyAnnotator::annotate`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Annotation {
    pub entities: Vec<EntityMention>,
    pub dep_triples: Vec<DependencyTriple>,
    pub discourse: Vec<DiscourseLabel>,
}

/// Heuristic annotator. Coreference ids are `<namespace>E<n>`.
#[derive(Debug, Clone, Default)]
pub struct ToyAnnotator {
    namespace: String,
}

impl ToyAnnotator {
    pub fn new(namespace: impl Into<String>) -> Self {
        Self {
            namespace: namespace.into(),
        }
    }

    /// `history` is every prior entity mention of the dialogue, oldest first.
    pub fn annotate(&self, text: &str, history: &[EntityMention]) -> Annotation {
        let tokens = tokenize(text);
        Annotation {
            entities: self.entities(text, &tokens, history),
            dep_triples: adjacency_triples(&tokens),
            discourse: vec![leading_discourse(&tokens)],
        }
    }

    fn entities(&self, text: &str, tokens: &[Token<'_>], history: &[EntityMention]) -> Vec<EntityMention> {
        let mut found: Vec<EntityMention> = Vec::new();
        let mut next_cluster = {
            let mut ids: Vec<&str> = history
                .iter()
                .map(|m| m.coref_id.as_str())
                .filter(|id| id.starts_with(self.namespace.as_str()))
                .collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len() + 1
        };

        let mut i = 0;
        while i < tokens.len() {
            let lower = tokens[i].core.to_lowercase();
            if let Some(class) = pronoun_class(&lower) {
                let antecedent = found
                    .iter()
                    .rev()
                    .chain(history.iter().rev())
                    .find(|m| pronoun_class(&m.name_key()).is_none() && compatible(class, &m.ner_type));
                if let Some(ante) = antecedent {
                    found.push(
                        EntityMention::new(tokens[i].core, ante.coref_id.clone(), ante.ner_type.clone())
                            .with_span(tokens[i].start, tokens[i].end),
                    );
                }
                i += 1;
                continue;
            }
            if !is_capitalized(tokens[i].core) || is_stopword(&lower) {
                i += 1;
                continue;
            }
            let run_start = i;
            let mut j = i;
            loop {
                let lower_j = tokens[j].core.to_lowercase();
                let honorific = HONORIFICS.contains(&lower_j.as_str());
                let breaks = tokens[j].trailing_punct && !honorific;
                if breaks || j + 1 >= tokens.len() {
                    break;
                }
                let next = &tokens[j + 1];
                let next_lower = next.core.to_lowercase();
                if !is_capitalized(next.core) || is_stopword(&next_lower) || pronoun_class(&next_lower).is_some() {
                    break;
                }
                j += 1;
            }
            let start = tokens[run_start].start;
            let end = tokens[j].end;
            let name = char_slice(text, start, end);
            let parts: Vec<&str> = tokens[run_start..=j].iter().map(|t| t.core).collect();
            let ner = classify(&parts);
            let coref_id = match self.resolve_name(&name, ner, &found, history) {
                Some(id) => id,
                None => {
                    let id = format!("{}E{}", self.namespace, next_cluster);
                    next_cluster += 1;
                    id
                }
            };
            found.push(EntityMention::new(name, coref_id, ner).with_span(start, end));
            i = j + 1;
        }
        found
    }

    /// Reuses a cluster for an exact name repeat, or for a single token that
    /// matches the first or last token of an earlier multi-token person name.
    fn resolve_name(
        &self,
        name: &str,
        ner: &str,
        found: &[EntityMention],
        history: &[EntityMention],
    ) -> Option<String> {
        let key = name.to_lowercase();
        let single = !key.contains(' ');
        found
            .iter()
            .rev()
            .chain(history.iter().rev())
            .find(|m| {
                let mk = m.name_key();
                if mk == key {
                    return true;
                }
                if single && ner == "PERSON" && m.ner_type == "PERSON" {
                    let mut parts = mk.split_whitespace();
                    let first = parts.next();
                    let last = parts.next_back();
                    return first == Some(key.as_str()) || last == Some(key.as_str());
                }
                false
            })
            .map(|m| m.coref_id.clone())
    }
}

fn adjacency_triples(tokens: &[Token<'_>]) -> Vec<DependencyTriple> {
    let lemmas: Vec<String> = tokens
        .iter()
        .map(|t| normalize_lemma(t.core))
        .filter(|l| !l.is_empty() && !is_stopword(l))
        .collect();
    lemmas
        .windows(2)
        .map(|w| DependencyTriple {
            head: w[0].clone(),
            label: String::from("next"),
            child: w[1].clone(),
        })
        .collect()
}

fn leading_discourse(tokens: &[Token<'_>]) -> DiscourseLabel {
    let first = tokens.first().map(|t| t.core.to_lowercase());
    match first.as_deref() {
        Some("and") | Some("also") => DiscourseLabel::Elaboration,
        Some("but") | Some("however") => DiscourseLabel::Contrast,
        Some("because") | Some("so") => DiscourseLabel::Cause,
        _ => DiscourseLabel::Expansion,
    }
}

/// Convenience wrapper over [`ToyAnnotator::annotate`] with no namespace.
pub fn toy_annotate(text: &str, history: &[EntityMention]) -> Annotation {
    ToyAnnotator::default().annotate(text, history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ToyEmbedError {
    #[error("toy embedder needs dim >= {MIN_TOY_DIM}, got {0}")]
    DimTooSmall(usize),
    #[error("text has no word tokens")]
    EmptyText,
}

fn bucket(kind: u8, gram: &str, dim: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write_u8(kind);
    h.write(gram.as_bytes());
    (h.finish() % dim as u64) as usize
}

/// Hashed unigram + bigram counts, normalized to unit length.
pub fn toy_embed(text: &str, dim: usize) -> Result<Embedding, ToyEmbedError> {
    if dim < MIN_TOY_DIM {
        return Err(ToyEmbedError::DimTooSmall(dim));
    }
    let words = words(text);
    if words.is_empty() {
        return Err(ToyEmbedError::EmptyText);
    }
    let mut counts = vec![0.0f32; dim];
    for w in &words {
        counts[bucket(b'u', w, dim)] += 1.0;
    }
    for pair in words.windows(2) {
        let gram = format!("{} {}", pair[0], pair[1]);
        counts[bucket(b'b', &gram, dim)] += 1.0;
    }
    // Counts are non-negative with at least one positive bucket.
    Ok(normalize_embedding(&counts, dim).expect("non-empty count vector"))
}
