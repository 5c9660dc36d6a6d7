//! Corpus construction: multi-session splitting, long-range coreference
//! extension, cross-session audits and a synthetic dialogue generator.
//!
//! Randomness is drawn from one ChaCha stream per `(seed, dialogue_id)`, so
//! dialogues can be processed in any order or in parallel.

mod audit;
mod longrange;
mod sessionize;
mod synth;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dialogue::{AnnotatedDialogue, Session, Turn};

pub use audit::{audit, audit_size, AuditRecord, AuditReport};
pub use longrange::{extend_long_range, LongRangeConfig, LongRangeOutcome, LongRangeWarning, Rewrite, MAX_REDRAWS};
pub use sessionize::{sessionize, Boundary, BoundaryReason, SessionizeOutcome, SessionizeWarning, SessionizerConfig};
pub use synth::{make_synthetic, QueryKind, SynthSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("bounds must satisfy 1 <= min <= max, got {min}..={max}")]
    Bounds { min: usize, max: usize },
    #[error("gap hour choices must be non-empty")]
    NoGapChoices,
    #[error("audit fraction {0} outside [0, 1]")]
    AuditFraction(f64),
}

pub(crate) fn check_bounds(min: usize, max: usize) -> Result<(), ConfigError> {
    if min == 0 || min > max {
        return Err(ConfigError::Bounds { min, max });
    }
    Ok(())
}

/// RNG stream for one dialogue.
pub fn dialogue_rng(seed: u64, dialogue_id: &str) -> ChaCha8Rng {
    let mut h = FnvHasher::default();
    h.write(dialogue_id.as_bytes());
    ChaCha8Rng::seed_from_u64(seed ^ h.finish())
}

/// All turns in dialogue order, dropping the session structure.
pub(crate) fn flat_turns(d: &AnnotatedDialogue) -> Vec<Turn> {
    d.turns().cloned().collect()
}

/// Splits `turns` after each index in `cuts` (ascending). The session after a
/// cut takes the matching entry of `gap_tags`.
pub(crate) fn split_sessions(turns: Vec<Turn>, cuts: &[usize], gap_tags: &[Option<String>]) -> Vec<Session> {
    let mut sessions = Vec::with_capacity(cuts.len() + 1);
    let mut current = Session::default();
    let mut cut_iter = cuts.iter().zip(gap_tags).peekable();
    for (i, t) in turns.into_iter().enumerate() {
        current.turns.push(t);
        if let Some((&cut, tag)) = cut_iter.peek() {
            if cut == i {
                let next = Session {
                    session_id: current.session_id + 1,
                    gap_tag: (*tag).clone(),
                    turns: Vec::new(),
                };
                sessions.push(core::mem::replace(&mut current, next));
                cut_iter.next();
            }
        }
    }
    if !current.turns.is_empty() || sessions.is_empty() {
        sessions.push(current);
    }
    sessions
}

/// Coreference ids mentioned in `turns`.
pub(crate) fn clusters(turns: &[Turn]) -> BTreeSet<&str> {
    turns
        .iter()
        .flat_map(|t| t.entities.iter().map(|e| e.coref_id.as_str()))
        .collect()
}
