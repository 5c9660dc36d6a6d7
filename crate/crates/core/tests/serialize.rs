mod common;

use anchormem_core::prompt::{serialize_entry, DEFAULT_METADATA_BUDGET};
use anchormem_core::{serialize_context, DependencyTriple, DiscourseLabel, EntityMention, EntryId, RankedResult};
use common::*;

fn result(id: u64) -> RankedResult {
    RankedResult {
        entry_id: EntryId(id),
        score: 1.0,
        sim_term: 1.0,
        entity_term: 0.0,
        discourse_term: 0.0,
    }
}

#[test]
fn glioma_entry_renders_exactly() {
    let mut e = entry(
        0,
        "MRI results show early-stage glioma.",
        vec![EntityMention::new("Dr. Morales", "E42", "PERSON")],
        vec![DiscourseLabel::Elaboration],
    );
    e.timestamp = "2024-03-14T09:10".into();
    e.dep_triples = vec![
        DependencyTriple::new("show", "nsubj", "results"),
        DependencyTriple::new("show", "dobj", "glioma"),
    ];
    let store = store_of(vec![e], DIM);
    let out = serialize_context(&[result(0)], &store, DEFAULT_METADATA_BUDGET).unwrap();
    let expected = "[ENTITY: Dr. Morales | CorefID=E42 | NER=PERSON]\n\
                    [DISCOURSE: ELABORATION]\n\
                    [UTTERANCE @ 2024-03-14 09:10] \"MRI results show early-stage glioma.\"\n\
                    [DEPS: (show-nsubj-results), (show-dobj-glioma)]\n";
    assert_eq!(out, expected);
}

#[test]
fn bare_entry_is_one_line() {
    let mut e = entry(3, "see you soon", vec![], vec![]);
    e.timestamp = "2024-05-01T18:30:00".into();
    assert_eq!(
        serialize_entry(&e, DEFAULT_METADATA_BUDGET),
        vec!["[UTTERANCE @ 2024-05-01 18:30] \"see you soon\"".to_string()]
    );
}

#[test]
fn overflow_keeps_budget_and_drops_deps() {
    let names = ["Ana", "Ben", "Cleo", "Dev", "Eli"];
    let entities = names.iter().enumerate().map(|(i, n)| person(n, &format!("E{i}"))).collect();
    let mut e = entry(1, "everyone met at the cafe", entities, vec![]);
    e.dep_triples = vec![DependencyTriple::new("meet", "nsubj", "everyone")];
    let lines = serialize_entry(&e, 2);
    let meta: Vec<&String> = lines.iter().filter(|l| l.starts_with("[ENTITY") || l.starts_with("[DISCOURSE")).collect();
    assert_eq!(meta.len(), 2);
    assert!(meta[1].ends_with(" (+3 more)"), "{}", meta[1]);
    assert!(lines.iter().all(|l| !l.starts_with("[DEPS")));
    assert_eq!(lines.len(), 3);
}

#[test]
fn blocks_are_separated_by_blank_lines_in_rank_order() {
    let store = store_of(vec![entry(0, "first", vec![], vec![]), entry(1, "second", vec![], vec![])], DIM);
    let out = serialize_context(&[result(1), result(0)], &store, 2).unwrap();
    let blocks: Vec<&str> = out.trim_end().split("\n\n").collect();
    assert_eq!(blocks.len(), 2);
    assert!(blocks[0].contains("\"second\""));
    assert!(serialize_context(&[result(9)], &store, 2).is_err());
}
