//! Corpus interchange: the bundled files load, and writer output reads back
//! unchanged.

use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;

use hybrid_confidence::corpus::{self, CorpusEntry, Label, RawModelOutputs, ResponseRecord};

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn two_line_fixture_loads_as_paired_records() {
    let entries = corpus::load_corpus(&fixture("two_records.jsonl")).unwrap();
    assert_eq!(entries.len(), 2);
    let [a, b] = [&entries[0], &entries[1]];
    assert_eq!(a.record.id, a.raw.record_id);
    assert_eq!(b.record.id, b.raw.record_id);
    assert_eq!(a.record.embedding.len(), 4);
    assert_eq!(a.record.token_len, 5);
    assert_eq!(b.raw.verbalized, None);
    assert_eq!(b.raw.sampled_labels.len(), 3);
}

#[test]
fn synthetic_fixture_loads() {
    let entries = corpus::load_corpus(&fixture("synthetic_300.jsonl")).unwrap();
    assert_eq!(entries.len(), 300);
    assert!(entries.iter().all(|e| e.record.embedding.len() == 8));
}

fn label() -> impl Strategy<Value = Label> {
    any::<bool>().prop_map(Label::from)
}

fn entry(dim: usize) -> impl Strategy<Value = CorpusEntry> {
    (
        "[a-z]{1,6}",
        "[a-z ]{0,40}",
        label(),
        label(),
        prop::collection::vec(-1e6f64..1e6, dim),
        prop::option::of(0.0f64..=1.0),
        (-80.0f64..0.0, -80.0f64..0.0),
        prop::collection::vec(label(), 1..12),
    )
        .prop_map(|(q, text, gold, pred, embedding, verbalized, (l0, l1), sampled_labels)| CorpusEntry {
            record: ResponseRecord {
                id: String::new(),
                question_id: q,
                token_len: corpus::token_length(&text),
                text,
                gold_label: gold,
                embedding,
            },
            raw: RawModelOutputs {
                record_id: String::new(),
                pred_label: pred,
                verbalized,
                label_logliks: BTreeMap::from([(Label::Incorrect, l0), (Label::Correct, l1)]),
                sampled_labels,
            },
        })
}

proptest! {
    #[test]
    fn writer_output_reads_back_identically(
        mut entries in (1usize..6).prop_flat_map(|d| prop::collection::vec(entry(d), 1..8))
    ) {
        for (i, e) in entries.iter_mut().enumerate() {
            e.record.id = format!("r{i}");
            e.raw.record_id = e.record.id.clone();
        }
        let text = corpus::to_jsonl(&entries).unwrap();
        prop_assert_eq!(corpus::parse_corpus(&text).unwrap(), entries.clone());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        corpus::write_corpus(&path, &entries).unwrap();
        prop_assert_eq!(corpus::load_corpus(&path).unwrap(), entries);
    }
}
