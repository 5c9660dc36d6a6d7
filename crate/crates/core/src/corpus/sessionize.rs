//! Splits a dialogue into sessions separated by synthetic time gaps.
//!
//! A boundary is proposed after a goal-closing turn, or once the current
//! segment reaches a seeded turn budget. It is committed only if some entity
//! of the closing segment is mentioned again later; otherwise the segment
//! keeps growing and every following turn is a new proposal.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{check_bounds, clusters, dialogue_rng, flat_turns, split_sessions, ConfigError};
use crate::dialogue::{format_gap_tag, AnnotatedDialogue, Turn, META_GOAL_CLOSED};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionizerConfig {
    pub turn_budget_min: usize,
    pub turn_budget_max: usize,
    pub gap_hours_choices: Vec<u32>,
    pub rng_seed: u64,
    pub audit_fraction: f64,
}

impl Default for SessionizerConfig {
    fn default() -> Self {
        Self {
            turn_budget_min: 8,
            turn_budget_max: 12,
            gap_hours_choices: vec![12, 36, 72],
            rng_seed: 0,
            audit_fraction: 0.05,
        }
    }
}

impl SessionizerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_bounds(self.turn_budget_min, self.turn_budget_max)?;
        if self.gap_hours_choices.is_empty() {
            return Err(ConfigError::NoGapChoices);
        }
        if !(0.0..=1.0).contains(&self.audit_fraction) {
            return Err(ConfigError::AuditFraction(self.audit_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryReason {
    GoalClosed,
    TurnBudget,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Boundary {
    /// 0-based position, in dialogue order, of the last turn before the gap.
    pub after_index: usize,
    pub reason: BoundaryReason,
    pub gap_hours: u32,
    /// A coreference id mentioned on both sides.
    pub recurring: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionizeWarning {
    TooShort,
    NoRecurringEntity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionizeOutcome {
    pub dialogue: AnnotatedDialogue,
    pub boundaries: Vec<Boundary>,
    pub warning: Option<SessionizeWarning>,
}

/// Renumbers turns when their ids are not increasing across the whole
/// dialogue, which happens when the input already restarts ids per session.
pub(crate) fn ensure_increasing(turns: &mut [Turn]) {
    if turns.windows(2).any(|w| w[0].turn_id >= w[1].turn_id) {
        for (i, t) in turns.iter_mut().enumerate() {
            t.turn_id = i as u32;
        }
    }
}

pub fn sessionize(d: &AnnotatedDialogue, cfg: &SessionizerConfig) -> Result<SessionizeOutcome, ConfigError> {
    cfg.validate()?;
    let mut turns = flat_turns(d);
    if turns.len() < 2 {
        return Ok(SessionizeOutcome {
            dialogue: d.clone(),
            boundaries: Vec::new(),
            warning: Some(SessionizeWarning::TooShort),
        });
    }
    ensure_increasing(&mut turns);
    let mut rng = dialogue_rng(cfg.rng_seed, &d.dialogue_id);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| rng.gen_range(cfg.turn_budget_min..=cfg.turn_budget_max);

    let mut boundaries = Vec::new();
    let mut start = 0;
    let mut budget = draw(&mut rng);
    for i in 0..turns.len() - 1 {
        let goal = turns[i].flag(META_GOAL_CLOSED);
        if !goal && i - start + 1 < budget {
            continue;
        }
        let closing = clusters(&turns[start..=i]);
        let later = clusters(&turns[i + 1..]);
        let Some(recurring) = closing.intersection(&later).next() else {
            continue;
        };
        let gap_hours = cfg.gap_hours_choices[rng.gen_range(0..cfg.gap_hours_choices.len())];
        boundaries.push(Boundary {
            after_index: i,
            reason: if goal { BoundaryReason::GoalClosed } else { BoundaryReason::TurnBudget },
            gap_hours,
            recurring: recurring.to_string(),
        });
        start = i + 1;
        budget = draw(&mut rng);
    }

    let cuts: Vec<usize> = boundaries.iter().map(|b| b.after_index).collect();
    let tags: Vec<Option<String>> = boundaries.iter().map(|b| Some(format_gap_tag(b.gap_hours))).collect();
    let warning = boundaries.is_empty().then_some(SessionizeWarning::NoRecurringEntity);
    Ok(SessionizeOutcome {
        dialogue: AnnotatedDialogue {
            dialogue_id: d.dialogue_id.clone(),
            sessions: split_sessions(turns, &cuts, &tags),
            metadata: d.metadata.clone(),
        },
        boundaries,
        warning,
    })
}
