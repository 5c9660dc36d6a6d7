//! Long-range extension: re-splits a dialogue every 6 to 10 turns and turns
//! repeated proper names in later sessions into pronouns, so that resolving
//! them needs the coreference chain from an earlier session.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::sessionize::ensure_increasing;
use super::{check_bounds, dialogue_rng, flat_turns, split_sessions, ConfigError};
use crate::dialogue::{AnnotatedDialogue, Turn, META_RELATION_EVIDENCE};

/// Attempts at drawing boundaries before giving up on a dialogue.
pub const MAX_REDRAWS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct LongRangeConfig {
    pub boundary_min: usize,
    pub boundary_max: usize,
    /// Candidate pronouns per NER type. Mentions of other types are never
    /// rewritten. One pronoun is drawn per coreference cluster.
    pub pronoun_map: BTreeMap<String, Vec<String>>,
    pub rng_seed: u64,
}

impl Default for LongRangeConfig {
    fn default() -> Self {
        let map = [
            ("PERSON", vec!["he", "she"]),
            ("ORG", vec!["it"]),
            ("LOC", vec!["it"]),
            ("MISC", vec!["it"]),
        ];
        Self {
            boundary_min: 6,
            boundary_max: 10,
            pronoun_map: map
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.into_iter().map(String::from).collect()))
                .collect(),
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewrite {
    pub session_id: u32,
    pub turn_id: u32,
    pub coref_id: String,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LongRangeWarning {
    /// No boundary draw put relation evidence before a later session.
    RetryLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongRangeOutcome {
    pub dialogue: AnnotatedDialogue,
    /// 0-based positions of the last turn before each boundary.
    pub boundaries: Vec<usize>,
    pub rewrites: Vec<Rewrite>,
    pub attempts: usize,
    pub warning: Option<LongRangeWarning>,
}

fn draw_boundaries(turns: &[Turn], cfg: &LongRangeConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = turns.len();
    let evidence = |i: usize| turns[i].flag(META_RELATION_EVIDENCE);
    let mut cuts = Vec::new();
    let mut prev = 0usize;
    loop {
        let drawn = rng.gen_range(cfg.boundary_min..=cfg.boundary_max);
        if prev + drawn >= n {
            break;
        }
        // nearest gap in range whose closing turn is not relation evidence
        let mut gap = drawn;
        for delta in 0..=(cfg.boundary_max - cfg.boundary_min) {
            let below = drawn.checked_sub(delta).filter(|g| *g >= cfg.boundary_min);
            let above = Some(drawn + delta).filter(|g| *g <= cfg.boundary_max);
            let pick = [below, above]
                .into_iter()
                .flatten()
                .find(|g| prev + g < n && !evidence(prev + g - 1));
            if let Some(g) = pick {
                gap = g;
                break;
            }
        }
        prev += gap;
        cuts.push(prev - 1);
    }
    cuts
}

fn session_of(cuts: &[usize], index: usize) -> usize {
    cuts.iter().filter(|&&c| c < index).count()
}

/// Some relation evidence precedes a query in a later session, or, without
/// queries, the evidence spans two sessions. Vacuous without evidence.
fn relation_spans(turns: &[Turn], cuts: &[usize]) -> bool {
    let evidence: Vec<usize> = (0..turns.len())
        .filter(|&i| turns[i].flag(META_RELATION_EVIDENCE))
        .map(|i| session_of(cuts, i))
        .collect();
    if evidence.is_empty() {
        return true;
    }
    let queries: Vec<usize> = (0..turns.len())
        .filter(|&i| turns[i].is_query())
        .map(|i| session_of(cuts, i))
        .collect();
    if queries.is_empty() {
        return evidence.iter().any(|&s| s != evidence[0]);
    }
    queries.iter().any(|&q| evidence.iter().any(|&e| e < q))
}

fn char_find_word(text: &str, word: &str) -> Option<usize> {
    let chars: Vec<char> = text.chars().collect();
    let needle: Vec<char> = word.chars().collect();
    if needle.is_empty() || needle.len() > chars.len() {
        return None;
    }
    (0..=chars.len() - needle.len()).find(|&i| {
        chars[i..i + needle.len()] == needle[..]
            && (i == 0 || !chars[i - 1].is_alphanumeric())
            && chars.get(i + needle.len()).is_none_or(|c| !c.is_alphanumeric())
    })
}

fn sentence_initial(text: &str, at: usize) -> bool {
    text.chars()
        .take(at)
        .filter(|c| !c.is_whitespace() && *c != '"' && *c != '\'')
        .last()
        .is_none_or(|c| matches!(c, '.' | '!' | '?'))
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Replaces entity `idx` of `turn` by `pronoun`, shifting later spans.
fn rewrite_mention(turn: &mut Turn, idx: usize, pronoun: &str) -> Option<(String, String)> {
    let mention = &turn.entities[idx];
    let (start, end) = match mention.span {
        Some(s) => s,
        None => {
            let s = char_find_word(&turn.text, &mention.name)?;
            (s, s + mention.name.chars().count())
        }
    };
    let surface = if sentence_initial(&turn.text, start) { capitalize(pronoun) } else { pronoun.to_string() };
    let from: String = turn.text.chars().skip(start).take(end - start).collect();
    let mut text: String = turn.text.chars().take(start).collect();
    text.push_str(&surface);
    text.extend(turn.text.chars().skip(end));
    turn.text = text;

    let new_len = surface.chars().count();
    for (j, e) in turn.entities.iter_mut().enumerate() {
        if j == idx {
            e.name = surface.clone();
            e.span = Some((start, start + new_len));
        } else if let Some((s, t)) = e.span {
            if s >= end {
                e.span = Some((s - (end - start) + new_len, t - (end - start) + new_len));
            }
        }
    }
    Some((from, surface))
}

fn is_proper(name: &str) -> bool {
    name.chars().next().is_some_and(char::is_uppercase)
}

fn rewrite_repeats(
    sessions: &mut [crate::dialogue::Session],
    cfg: &LongRangeConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Rewrite> {
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut pronoun_of: BTreeMap<String, String> = BTreeMap::new();
    let mut rewrites = Vec::new();
    for session in sessions.iter_mut() {
        let earlier = seen.clone();
        let mut done_here: BTreeSet<String> = BTreeSet::new();
        for turn in session.turns.iter_mut() {
            let mut idx = 0;
            while idx < turn.entities.len() {
                let e = &turn.entities[idx];
                let key = (e.coref_id.clone(), e.name.to_lowercase());
                let candidates = cfg.pronoun_map.get(&e.ner_type).filter(|p| !p.is_empty());
                let repeat = is_proper(&e.name) && earlier.contains(&key) && !done_here.contains(&e.coref_id);
                seen.insert(key);
                if let (true, Some(candidates)) = (repeat, candidates) {
                    let coref = e.coref_id.clone();
                    let pronoun = pronoun_of
                        .entry(coref.clone())
                        .or_insert_with(|| candidates[rng.gen_range(0..candidates.len())].clone())
                        .clone();
                    if let Some((from, to)) = rewrite_mention(turn, idx, &pronoun) {
                        done_here.insert(coref.clone());
                        rewrites.push(Rewrite {
                            session_id: session.session_id,
                            turn_id: turn.turn_id,
                            coref_id: coref,
                            from,
                            to,
                        });
                    }
                }
                idx += 1;
            }
        }
    }
    rewrites
}

pub fn extend_long_range(d: &AnnotatedDialogue, cfg: &LongRangeConfig) -> Result<LongRangeOutcome, ConfigError> {
    check_bounds(cfg.boundary_min, cfg.boundary_max)?;
    let mut turns = flat_turns(d);
    ensure_increasing(&mut turns);
    let mut rng = dialogue_rng(cfg.rng_seed, &d.dialogue_id);
    for attempt in 1..=MAX_REDRAWS {
        let cuts = draw_boundaries(&turns, cfg, &mut rng);
        if !relation_spans(&turns, &cuts) {
            continue;
        }
        let tags = vec![None; cuts.len()];
        let mut sessions = split_sessions(turns, &cuts, &tags);
        let rewrites = rewrite_repeats(&mut sessions, cfg, &mut rng);
        return Ok(LongRangeOutcome {
            dialogue: AnnotatedDialogue {
                dialogue_id: d.dialogue_id.clone(),
                sessions,
                metadata: d.metadata.clone(),
            },
            boundaries: cuts,
            rewrites,
            attempts: attempt,
            warning: None,
        });
    }
    Ok(LongRangeOutcome {
        dialogue: d.clone(),
        boundaries: Vec::new(),
        rewrites: Vec::new(),
        attempts: MAX_REDRAWS,
        warning: Some(LongRangeWarning::RetryLimit),
    })
}
