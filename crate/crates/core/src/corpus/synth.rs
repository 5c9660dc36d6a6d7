//! Synthetic multi-session dialogues with planted cross-session facts.
//!
//! Every dialogue introduces one target person per query in its first
//! session, states a fact about them there, and asks about it in the last
//! session. Distractors are planted so that each query kind needs a specific
//! scoring term:
//!
//! * `Lexical`: the gold fact shares wording with the query; cosine suffices.
//! * `Entity`: lexical paraphrases without the target outscore the gold on
//!   cosine; only the entity term recovers it.
//! * `Pronoun`: as `Entity`, but the query names the target only through a
//!   pronoun, so only the coreference id links query and gold.
//! * `Discourse`: entries about the target with higher cosine compete with a
//!   gold that shares the query's CONTRAST label.
//! * `Dominance`: the query names two people, the gold both, and copies of a
//!   distractor only one of them. Distractor wording is chosen so the gold
//!   wins only when `λ_e / λ_s` is at least 1.375 and at most 1.5, i.e. only at
//!   the largest entity weight of the tuning grid.
//!
//! Sessions between fact and query may also carry "hard" distractors that
//! mention the target with higher cosine, which is what makes recall decay
//! with session distance.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{check_bounds, dialogue_rng, ConfigError};
use crate::annotate::{toy_embed, ToyAnnotator, ToyEmbedError, MIN_TOY_DIM};
use crate::dialogue::{
    assign_entry_ids, format_gap_tag, AnnotatedDialogue, Session, Turn, META_GOAL_CLOSED, META_PRONOUN_ONLY,
    META_QUERY_CLASS, META_RELATION_EVIDENCE,
};
use crate::model::{cosine, EntityMention, EntryId, GoldInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum QueryKind {
    Lexical,
    Entity,
    Pronoun,
    Discourse,
    Dominance,
}

impl QueryKind {
    /// Difficulty class recorded on the query turn.
    pub fn class(&self) -> &'static str {
        match self {
            Self::Lexical => "lexical",
            Self::Entity | Self::Pronoun | Self::Dominance => "entity",
            Self::Discourse => "discourse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub dialogues: usize,
    pub seed: u64,
    pub dim: usize,
    /// Sessions between the fact and the query about it.
    pub session_distance: u32,
    /// One query of each listed kind per dialogue.
    pub kinds: Vec<QueryKind>,
    /// Paraphrase distractors per query.
    pub distractors: usize,
    /// Chance that an intervening session carries a hard distractor.
    pub hard_distractor_rate: f64,
    pub session_turns_min: usize,
    pub session_turns_max: usize,
    pub gap_hours_choices: Vec<u32>,
    /// Write embeddings into the records; otherwise they are left for the
    /// toy embedder at ingest.
    pub embed: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dialogues: 10,
            seed: 7,
            dim: 128,
            session_distance: 2,
            kinds: vec![QueryKind::Lexical, QueryKind::Entity, QueryKind::Pronoun, QueryKind::Discourse],
            distractors: 6,
            hard_distractor_rate: 0.5,
            session_turns_min: 8,
            session_turns_max: 12,
            gap_hours_choices: vec![12, 36, 72],
            embed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Embed(#[from] ToyEmbedError),
    #[error("at most {max} dialogues can get distinct names, asked for {asked}")]
    TooManyDialogues { max: usize, asked: usize },
    #[error("session distance must be at least 1")]
    ZeroDistance,
    #[error("hard distractor rate {0} outside [0, 1]")]
    Rate(f64),
}

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "be", "da", "fe", "gi", "ho", "ja", "ku", "le", "mo", "ni",
    "pa", "ro",
];
const NAME_SPACE: u64 = 20 * 20 * 20 * 20;
const NAMES_PER_DIALOGUE: u64 = 16;

const TOPICS: &[(&str, &str)] = &[
    ("taxi", "pickup"),
    ("dinner", "table"),
    ("train", "departure"),
    ("hotel", "checkin"),
    ("museum", "tour"),
    ("boat", "ride"),
    ("concert", "entry"),
    ("airport", "shuttle"),
    ("spa", "session"),
    ("cooking", "class"),
    ("bike", "rental"),
    ("wine", "tasting"),
];
const ANSWERS: &[&str] = &[
    "nine fifteen",
    "half past seven",
    "ten thirty",
    "quarter to six",
    "eleven sharp",
    "noon",
    "four forty",
    "eight ten",
];
const COLORS: &[&str] = &["blue", "green", "red", "yellow", "grey", "black", "white", "orange", "purple", "brown"];
const ITEMS: &[&str] = &[
    "umbrella", "scarf", "notebook", "charger", "jacket", "wallet", "camera", "thermos", "backpack", "hat",
    "sunglasses", "guidebook",
];
const REASONS: &[&str] = &["storm", "strike", "flood", "holiday", "roadworks", "outage"];
const GROUPS: &[&str] = &[
    "airport run", "hotel guests", "museum trip", "late train", "office party", "school group", "night shift",
    "morning crew",
];
const PARAPHRASES: &[&str] = &[
    "the {T} for the {G} is sorted.",
    "is the {T} for the {G} confirmed?",
    "we still need the {T} time for the {G}.",
    "the {T} for the {G} moved to later.",
    "please book the {T} for the {G}.",
    "the {G} asked about the {T} yesterday.",
];
const TARGET_DISTRACTORS: &[&str] = &[
    "{X} asked about the {T} schedule.",
    "{X} likes the {T} a lot.",
    "{X} booked the {T} last month.",
    "{X} paid for the {T} already.",
    "{X} wanted a good seat for the {T}.",
    "{X} talked about the {T} with friends.",
];
const FILLERS: &[&str] = &[
    "the weather looks fine for the weekend.",
    "please send the receipt to my email.",
    "thanks, that works for me.",
    "could you repeat the last part?",
    "we might need an extra bag.",
    "the kids are excited about the holiday.",
    "let me check my calendar first.",
    "that sounds like a good plan.",
    "is breakfast included in the price?",
    "we prefer a quiet room if possible.",
    "the budget is a bit tight this month.",
    "i will call back after lunch.",
    "sure, no rush on that.",
    "do you accept card payments?",
    "the parking situation was confusing last time.",
    "we can meet in the lobby.",
    "my phone battery is almost dead.",
    "good idea, let us do that.",
    "the map you sent was very helpful.",
    "can we keep the same arrangement?",
];
const PADDING: &[&str] = &["again", "today", "later", "maybe", "now", "too"];
const PRONOUNS: &[&str] = &["he", "she", "him", "her", "his", "hers", "it", "its", "they", "them", "their"];

/// Distinct capitalized names: `n` is scrambled by an affine bijection of the
/// name space and spelled in base-20 syllables.
fn name(n: u64, seed: u64) -> String {
    const MULTIPLIER: u64 = 104_729;
    let mut m = (n % NAME_SPACE * MULTIPLIER + seed % NAME_SPACE) % NAME_SPACE;
    let mut out = String::new();
    for _ in 0..4 {
        out.push_str(SYLLABLES[(m % 20) as usize]);
        m /= 20;
    }
    let mut chars = out.chars();
    let first = chars.next().expect("four syllables").to_ascii_uppercase();
    core::iter::once(first).chain(chars).collect()
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut s = template.to_string();
    for (k, v) in vars {
        s = s.replace(k, v);
    }
    s
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

#[derive(Debug, Clone)]
struct QueryDraft {
    kind: QueryKind,
    gold_tag: usize,
    answer: String,
}

#[derive(Debug, Clone)]
struct Draft {
    tag: usize,
    text: String,
    evidence: bool,
    query: Option<QueryDraft>,
}

#[derive(Default)]
struct Layout {
    next_tag: usize,
    /// Per session: turns kept at the front, then turns shuffled with filler.
    front: Vec<Vec<Draft>>,
    rest: Vec<Vec<Draft>>,
    tail: Vec<Draft>,
}

impl Layout {
    fn draft(&mut self, text: String) -> Draft {
        self.next_tag += 1;
        Draft {
            tag: self.next_tag,
            text,
            evidence: false,
            query: None,
        }
    }
}

/// Distractor wording for a dominance query: starts with the second person
/// and borrows a window of the query's wording, padded, so that
/// `(cos_distractor - cos_gold) / b` lands as close as possible to 1.4375.
fn dominance_distractor(
    query: &str,
    gold: &str,
    y: &str,
    tail_words: &[&str],
    b: f64,
    dim: usize,
) -> Result<String, ToyEmbedError> {
    let q = toy_embed(query, dim)?;
    let cg = cosine(&q, &toy_embed(gold, dim)?);
    let target = 1.4375;
    let mut best: Option<(f64, String)> = None;
    for start in 0..tail_words.len() {
        for end in start + 1..=tail_words.len() {
            for pads in 0..=PADDING.len() {
                let mut words: Vec<&str> = vec![y];
                words.extend_from_slice(&tail_words[start..end]);
                words.extend_from_slice(&PADDING[..pads]);
                let text = format!("{}.", words.join(" "));
                let cd = cosine(&q, &toy_embed(&text, dim)?);
                let miss = ((cd - cg) / b - target).abs();
                if best.as_ref().is_none_or(|(m, _)| miss < *m) {
                    best = Some((miss, text));
                }
            }
        }
    }
    Ok(best.expect("non-empty candidate set").1)
}

fn plan_query(
    kind: QueryKind,
    qi: usize,
    spec: &SynthSpec,
    dialogue_index: usize,
    rng: &mut ChaCha8Rng,
    layout: &mut Layout,
) -> Result<(), SynthError> {
    let d = spec.session_distance as usize;
    let person = |slot: u64| name(dialogue_index as u64 * NAMES_PER_DIALOGUE + slot, spec.seed);
    let x = person(1 + 2 * qi as u64);
    let y = person(2 + 2 * qi as u64);
    let (w1, w2) = TOPICS[rng.gen_range(0..TOPICS.len())];
    let topic = format!("{w1} {w2}");
    let answer = pick(rng, ANSWERS);
    let vars = [("{X}", x.as_str()), ("{T}", topic.as_str())];
    let random_session = |rng: &mut ChaCha8Rng| rng.gen_range(0..=d);

    let intro_of = |who: &str| format!("{who} joined the group chat today.");
    let (gold_text, query_text) = match kind {
        QueryKind::Lexical => {
            let color = pick(rng, COLORS);
            let item = pick(rng, ITEMS);
            (
                format!("{x} left the {color} {item} at the front desk."),
                format!("where did {x} leave the {color} {item}?"),
            )
        }
        QueryKind::Entity | QueryKind::Pronoun => {
            let query = if kind == QueryKind::Entity {
                format!("what time is the {topic} for {x}?")
            } else {
                let pronoun = if rng.gen_bool(0.5) { "he" } else { "she" };
                format!("what time is the {topic} {pronoun} asked for?")
            };
            (format!("{x} settled the {w2} at {answer} with the staff."), query)
        }
        QueryKind::Discourse => (
            format!("but the plan with {x} was called off due to the {}.", pick(rng, REASONS)),
            format!("but why did {x} cancel the {topic}?"),
        ),
        QueryKind::Dominance => (
            format!("{x} and {y} settled it at {answer}."),
            format!("did {x} and {y} agree on the {topic} price?"),
        ),
    };

    // first session: introduction, then the fact somewhere after it
    let intro_name = if kind == QueryKind::Dominance { &y } else { &x };
    let intro = layout.draft(intro_of(intro_name));
    layout.front[0].push(intro);
    let mut gold = layout.draft(gold_text.clone());
    gold.evidence = true;
    let gold_tag = gold.tag;
    layout.rest[0].push(gold);

    match kind {
        QueryKind::Lexical => {}
        QueryKind::Entity | QueryKind::Pronoun => {
            let mut groups = GROUPS.to_vec();
            groups.shuffle(rng);
            for j in 0..spec.distractors {
                let text = fill(PARAPHRASES[j % PARAPHRASES.len()], &[("{T}", &topic), ("{G}", groups[j % groups.len()])]);
                let s = random_session(rng);
                let dr = layout.draft(text);
                layout.rest[s].push(dr);
            }
            for s in 1..d {
                if rng.gen_bool(spec.hard_distractor_rate) {
                    let dr = layout.draft(fill("{X} mentioned the {T} again.", &vars));
                    layout.rest[s].push(dr);
                }
            }
        }
        QueryKind::Discourse => {
            for j in 0..spec.distractors {
                let text = fill(TARGET_DISTRACTORS[j % TARGET_DISTRACTORS.len()], &vars);
                let s = random_session(rng);
                let dr = layout.draft(text);
                layout.rest[s].push(dr);
            }
        }
        QueryKind::Dominance => {
            // x: gold only; y: intro, gold and every copy
            let wx = libm::log(2.0);
            let wy = libm::log(1.0 + 2.0 + spec.distractors as f64);
            let b = wx / (wx + wy);
            let tail = ["agree", "on", "the", w1, w2, "price"];
            let text = dominance_distractor(&query_text, &gold_text, &y, &tail, b, spec.dim)?;
            for _ in 0..spec.distractors {
                let s = random_session(rng);
                let dr = layout.draft(text.clone());
                layout.rest[s].push(dr);
            }
        }
    }

    if kind == QueryKind::Pronoun {
        let cue = layout.draft(format!("i also want to check something for {x}."));
        layout.tail.push(cue);
    }
    let mut q = layout.draft(query_text);
    q.query = Some(QueryDraft {
        kind,
        gold_tag,
        answer: gold_text.trim_end_matches('.').to_string(),
    });
    layout.tail.push(q);
    Ok(())
}

fn base_time(dialogue_index: usize) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(9, 0, 0))
        .expect("valid date")
        + TimeDelta::days(dialogue_index as i64)
}

fn is_pronoun(name: &str) -> bool {
    PRONOUNS.contains(&name.to_lowercase().as_str())
}

/// Builds one dialogue. Returns it with `(query turn id, gold turn id)`
/// pairs; supporting entry ids are filled in once the corpus is complete.
fn gen_dialogue(spec: &SynthSpec, index: usize) -> Result<(AnnotatedDialogue, Vec<(u32, u32)>), SynthError> {
    let dialogue_id = format!("d{index:04}");
    let mut rng = dialogue_rng(spec.seed, &dialogue_id);
    let d = spec.session_distance as usize;
    let mut layout = Layout {
        front: vec![Vec::new(); d + 1],
        rest: vec![Vec::new(); d + 1],
        ..Default::default()
    };
    let anchor = name(index as u64 * NAMES_PER_DIALOGUE, spec.seed);
    for s in 0..=d {
        let text = if s == 0 {
            format!("{anchor} is planning the trip with us.")
        } else {
            format!("{anchor} is back to continue the plans.")
        };
        let dr = layout.draft(text);
        layout.front[s].push(dr);
    }
    for (qi, kind) in spec.kinds.iter().enumerate() {
        plan_query(*kind, qi, spec, index, &mut rng, &mut layout)?;
    }

    let mut sessions_drafts: Vec<Vec<Draft>> = Vec::with_capacity(d + 1);
    for s in 0..=d {
        let front = core::mem::take(&mut layout.front[s]);
        let mut rest = core::mem::take(&mut layout.rest[s]);
        let target = rng.gen_range(spec.session_turns_min..=spec.session_turns_max);
        while front.len() + rest.len() < target {
            let dr = layout.draft(pick(&mut rng, FILLERS).to_string());
            rest.push(dr);
        }
        rest.shuffle(&mut rng);
        let mut all = front;
        all.extend(rest);
        if s == d {
            all.extend(core::mem::take(&mut layout.tail));
        }
        sessions_drafts.push(all);
    }

    let annotator = ToyAnnotator::new(format!("{dialogue_id}:"));
    let mut history: Vec<EntityMention> = Vec::new();
    let mut clock = base_time(index);
    let mut turn_id = 0u32;
    let mut tag_turn: BTreeMap<usize, u32> = BTreeMap::new();
    let mut pending: Vec<(u32, QueryDraft)> = Vec::new();
    let mut sessions = Vec::with_capacity(d + 1);
    for (s, drafts) in sessions_drafts.into_iter().enumerate() {
        let mut gap_tag = None;
        if s > 0 {
            let hours = spec.gap_hours_choices[rng.gen_range(0..spec.gap_hours_choices.len())];
            clock += TimeDelta::hours(i64::from(hours));
            gap_tag = Some(format_gap_tag(hours));
        }
        let last_stored = drafts.iter().rposition(|dr| dr.query.is_none());
        let mut turns = Vec::with_capacity(drafts.len());
        for (pos, dr) in drafts.into_iter().enumerate() {
            let ann = annotator.annotate(&dr.text, &history);
            history.extend(ann.entities.iter().cloned());
            let mut meta = BTreeMap::new();
            if dr.evidence {
                meta.insert(META_RELATION_EVIDENCE.to_string(), "true".to_string());
            }
            if s < d && Some(pos) == last_stored {
                meta.insert(META_GOAL_CLOSED.to_string(), "true".to_string());
            }
            let mut gold = None;
            if let Some(q) = &dr.query {
                meta.insert(META_QUERY_CLASS.to_string(), q.kind.class().to_string());
                if q.kind == QueryKind::Pronoun {
                    meta.insert(META_PRONOUN_ONLY.to_string(), "true".to_string());
                }
                gold = Some(GoldInfo::default());
                pending.push((turn_id, q.clone()));
            }
            let embedding = if spec.embed {
                Some(toy_embed(&dr.text, spec.dim)?.into_inner())
            } else {
                None
            };
            tag_turn.insert(dr.tag, turn_id);
            turns.push(Turn {
                turn_id,
                speaker: if turn_id.is_multiple_of(2) { "user" } else { "assistant" }.to_string(),
                timestamp: clock.format("%Y-%m-%dT%H:%M:%S").to_string(),
                text: dr.text,
                entities: ann.entities,
                dep_triples: ann.dep_triples,
                discourse: ann.discourse,
                embedding,
                gold,
                meta,
            });
            turn_id += 1;
            clock += TimeDelta::minutes(2);
        }
        sessions.push(Session {
            session_id: s as u32,
            gap_tag,
            turns,
        });
    }

    // gold cluster of every proper name, as assigned at its first mention
    let mut assignments: BTreeMap<String, String> = BTreeMap::new();
    for m in &history {
        if !is_pronoun(&m.name) {
            assignments.entry(m.name.clone()).or_insert_with(|| m.coref_id.clone());
        }
    }
    let mut links = Vec::with_capacity(pending.len());
    for (qid, q) in pending {
        let gold_turn = tag_turn[&q.gold_tag];
        links.push((qid, gold_turn));
        let turn = sessions
            .iter_mut()
            .flat_map(|s| s.turns.iter_mut())
            .find(|t| t.turn_id == qid)
            .expect("query turn exists");
        turn.gold = Some(GoldInfo {
            supporting_entry_ids: Vec::new(),
            answer_span: q.answer,
            coref_assignments: Some(assignments.clone()),
        });
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("generator".to_string(), "synthetic".to_string());
    metadata.insert("seed".to_string(), spec.seed.to_string());
    metadata.insert("session_distance".to_string(), spec.session_distance.to_string());
    Ok((
        AnnotatedDialogue {
            dialogue_id,
            sessions,
            metadata,
        },
        links,
    ))
}

/// Generates the corpus. Gold supporting ids are the ids the entries get when
/// the corpus is ingested, in order, into an empty store.
pub fn make_synthetic(spec: &SynthSpec) -> Result<Vec<AnnotatedDialogue>, SynthError> {
    check_bounds(spec.session_turns_min, spec.session_turns_max)?;
    if spec.gap_hours_choices.is_empty() {
        return Err(ConfigError::NoGapChoices.into());
    }
    if spec.dim < MIN_TOY_DIM {
        return Err(ToyEmbedError::DimTooSmall(spec.dim).into());
    }
    if spec.session_distance == 0 {
        return Err(SynthError::ZeroDistance);
    }
    if !(0.0..=1.0).contains(&spec.hard_distractor_rate) {
        return Err(SynthError::Rate(spec.hard_distractor_rate));
    }
    let max = (NAME_SPACE / NAMES_PER_DIALOGUE) as usize;
    if spec.dialogues > max || 2 * spec.kinds.len() as u64 + 1 > NAMES_PER_DIALOGUE {
        return Err(SynthError::TooManyDialogues {
            max,
            asked: spec.dialogues,
        });
    }

    let mut corpus = Vec::with_capacity(spec.dialogues);
    let mut links = Vec::with_capacity(spec.dialogues);
    for i in 0..spec.dialogues {
        let (d, l) = gen_dialogue(spec, i)?;
        corpus.push(d);
        links.push(l);
    }
    let ids: BTreeMap<(usize, u32), EntryId> = assign_entry_ids(&corpus, 0)
        .into_iter()
        .map(|loc| ((loc.dialogue_index, loc.turn_id), loc.id))
        .collect();
    for (i, (d, l)) in corpus.iter_mut().zip(links).enumerate() {
        for (qid, gold_turn) in l {
            let turn = d
                .sessions
                .iter_mut()
                .flat_map(|s| s.turns.iter_mut())
                .find(|t| t.turn_id == qid)
                .expect("query turn exists");
            if let Some(g) = turn.gold.as_mut() {
                g.supporting_entry_ids = vec![ids[&(i, gold_turn)]];
            }
        }
    }
    Ok(corpus)
}
