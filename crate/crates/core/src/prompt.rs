//! Serialization of retrieved entries into a linguistically annotated context
//! block.
//!
//! ```text
//! [ENTITY: Dr. Morales | CorefID=E42 | NER=PERSON]
//! [DISCOURSE: ELABORATION]
//! [UTTERANCE @ 2024-03-14 09:10] "MRI results show early-stage glioma."
//! [DEPS: (show-nsubj-results), (show-dobj-glioma)]
//! ```
//!
//! Entity and discourse lines share a per-entry budget of metadata lines. When
//! they do not fit, the last emitted metadata line carries ` (+N more)` and the
//! DEPS line is dropped.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use thiserror::Error;

use crate::model::{EntryId, MemoryEntry, RankedResult};
use crate::store::MemoryStore;

pub const DEFAULT_METADATA_BUDGET: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SerializeError {
    #[error("result references unknown entry {0}")]
    UnknownEntry(EntryId),
}

/// `YYYY-MM-DD HH:MM` from an ISO-8601 timestamp; unparseable values pass
/// through unchanged.
pub fn render_timestamp(ts: &str) -> String {
    const FORMAT: &str = "%Y-%m-%d %H:%M";
    if let Ok(dt) = DateTime::parse_from_rfc3339(ts) {
        return dt.naive_local().format(FORMAT).to_string();
    }
    for pattern in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(ts, pattern) {
            return dt.format(FORMAT).to_string();
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(ts, "%Y-%m-%d") {
        return d.format("%Y-%m-%d 00:00").to_string();
    }
    ts.to_string()
}

/// Lines for one entry, without a trailing newline.
pub fn serialize_entry(entry: &MemoryEntry, budget: usize) -> Vec<String> {
    let mut meta: Vec<String> = entry
        .entities
        .iter()
        .map(|e| alloc::format!("[ENTITY: {} | CorefID={} | NER={}]", e.name, e.coref_id, e.ner_type))
        .collect();
    let discourse = (!entry.discourse.is_empty()).then(|| {
        let labels: Vec<&str> = entry.discourse.iter().map(|d| d.as_str()).collect();
        alloc::format!("[DISCOURSE: {}]", labels.join(", "))
    });

    let wanted = meta.len() + usize::from(discourse.is_some());
    let elided = wanted.saturating_sub(budget);
    if elided > 0 {
        // the discourse line keeps its slot; entities give way first
        let entity_slots = budget.saturating_sub(usize::from(discourse.is_some()));
        meta.truncate(entity_slots);
    }
    meta.extend(discourse.filter(|_| budget > 0));
    if elided > 0 {
        if let Some(last) = meta.last_mut() {
            let _ = write!(last, " (+{elided} more)");
        }
    }

    let mut lines = meta;
    lines.push(alloc::format!(
        "[UTTERANCE @ {}] \"{}\"",
        render_timestamp(&entry.timestamp),
        entry.utterance
    ));
    if elided == 0 && !entry.dep_triples.is_empty() {
        let deps: Vec<String> = entry
            .dep_triples
            .iter()
            .map(|t| alloc::format!("({}-{}-{})", t.head, t.label, t.child))
            .collect();
        lines.push(alloc::format!("[DEPS: {}]", deps.join(", ")));
    }
    lines
}

/// Serializes results in rank order, entries separated by a blank line.
pub fn serialize_context(results: &[RankedResult], store: &MemoryStore, budget: usize) -> Result<String, SerializeError> {
    let mut blocks = Vec::with_capacity(results.len());
    for r in results {
        let entry = store.get(r.entry_id).ok_or(SerializeError::UnknownEntry(r.entry_id))?;
        blocks.push(serialize_entry(entry, budget).join("\n"));
    }
    let mut out = blocks.join("\n\n");
    if !out.is_empty() {
        out.push('\n');
    }
    Ok(out)
}
