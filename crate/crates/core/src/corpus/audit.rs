//! Random audit of cross-session recall: a sampled dialogue passes when some
//! gold query is supported by an entry from an earlier session.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;

use super::{dialogue_rng, SessionizerConfig};
use crate::dialogue::assign_entry_ids;
use crate::dialogue::AnnotatedDialogue;
use crate::model::EntryId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub dialogue_id: String,
    pub pass: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub records: Vec<AuditRecord>,
}

impl AuditReport {
    pub fn passed(&self) -> usize {
        self.records.iter().filter(|r| r.pass).count()
    }

    /// Fraction of audited dialogues that pass; 1 when nothing was sampled.
    pub fn pass_fraction(&self) -> f64 {
        if self.records.is_empty() {
            1.0
        } else {
            self.passed() as f64 / self.records.len() as f64
        }
    }
}

/// Number of dialogues sampled out of `n`.
pub fn audit_size(n: usize, fraction: f64) -> usize {
    // the epsilon keeps 0.05 * 40 from rounding up to 3
    (libm::ceil(fraction * n as f64 - 1e-9).max(0.0) as usize).min(n)
}

fn audit_one(d: &AnnotatedDialogue, index: usize, sessions_of: &BTreeMap<EntryId, (usize, u32)>) -> AuditRecord {
    let mut queries = 0;
    for (session, turn) in d.turns_with_session() {
        let Some(gold) = &turn.gold else { continue };
        queries += 1;
        let earlier = gold
            .supporting_entry_ids
            .iter()
            .filter_map(|id| sessions_of.get(id))
            .any(|&(di, s)| di == index && s < session);
        if earlier {
            return AuditRecord {
                dialogue_id: d.dialogue_id.clone(),
                pass: true,
                reason: format!("turn {} recalls an earlier session", turn.turn_id),
            };
        }
    }
    AuditRecord {
        dialogue_id: d.dialogue_id.clone(),
        pass: false,
        reason: if queries == 0 {
            "no gold queries".into()
        } else {
            "all gold evidence in the query session or later".into()
        },
    }
}

/// Samples `ceil(audit_fraction * N)` dialogues. Entry ids are resolved as
/// if the whole corpus were ingested into an empty store.
pub fn audit(corpus: &[AnnotatedDialogue], cfg: &SessionizerConfig) -> AuditReport {
    let sessions_of: BTreeMap<EntryId, (usize, u32)> = assign_entry_ids(corpus, 0)
        .into_iter()
        .map(|l| (l.id, (l.dialogue_index, l.session_id)))
        .collect();
    let amount = audit_size(corpus.len(), cfg.audit_fraction);
    let mut rng = dialogue_rng(cfg.rng_seed, "audit");
    let mut picked = sample(&mut rng, corpus.len(), amount).into_vec();
    picked.sort_unstable();
    AuditReport {
        records: picked
            .into_iter()
            .map(|i| audit_one(&corpus[i], i, &sessions_of))
            .collect(),
    }
}
