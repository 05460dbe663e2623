//! Data model, the JSON Lines interchange format and the stratified
//! calibration/test split.
//!
//! Each interchange line carries one student response together with the
//! grading model's raw evidence for it:
//!
//! ```json
//! {"id": "r1", "question_id": "q1", "text": "the moon orbits earth",
//!  "gold_label": 1, "token_len": 4, "embedding": [0.1, 0.2],
//!  "pred_label": 1, "verbalized": 0.9,
//!  "label_logliks": {"0": -2.4, "1": -0.1}, "sampled_labels": [1, 1, 0, 1, 1]}
//! ```
//!
//! `token_len` and `verbalized` are optional. A missing `token_len` is filled
//! in with [`token_length`] of the text.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals;

/// Binary grading label. `Correct` is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Incorrect = 0,
    Correct = 1,
}

impl Label {
    /// Both candidate labels, in index order.
    pub const ALL: [Label; 2] = [Label::Incorrect, Label::Correct];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Incorrect => Label::Correct,
            Label::Correct => Label::Incorrect,
        }
    }

    pub fn is_correct(self) -> bool {
        self == Label::Correct
    }

    pub fn as_f64(self) -> f64 {
        self.index() as f64
    }
}

impl From<bool> for Label {
    fn from(correct: bool) -> Self {
        if correct {
            Label::Correct
        } else {
            Label::Incorrect
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Incorrect),
            1 => Ok(Label::Correct),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

/// One student answer.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseRecord {
    pub id: String,
    pub question_id: String,
    pub text: String,
    pub gold_label: Label,
    pub token_len: usize,
    pub embedding: Vec<f64>,
}

/// The grading model's raw evidence for one response.
#[derive(Clone, Debug, PartialEq)]
pub struct RawModelOutputs {
    pub record_id: String,
    /// Greedy grading decision.
    pub pred_label: Label,
    /// Self-reported confidence in `pred_label`, when the model produced one.
    pub verbalized: Option<f64>,
    pub label_logliks: BTreeMap<Label, f64>,
    pub sampled_labels: Vec<Label>,
}

/// A response paired with the model outputs for it.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub record: ResponseRecord,
    pub raw: RawModelOutputs,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    question_id: String,
    text: String,
    gold_label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token_len: Option<usize>,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
    pred_label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    verbalized: Option<f64>,
    label_logliks: BTreeMap<Label, f64>,
    sampled_labels: Vec<Label>,
}

/// Number of maximal whitespace-delimited substrings of `text`.
pub fn token_length(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Parses interchange JSONL text. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_corpus(text: &str) -> Result<Vec<CorpusEntry>> {
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    let mut dim: Option<usize> = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let line: Line =
            serde_json::from_str(raw_line).map_err(|source| Error::Parse { line: line_no, source })?;
        let entry = validate_line(line, line_no)?;

        let d = entry.record.embedding.len();
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::schema(
                    Some(line_no),
                    format!("embedding dimension {d} differs from corpus dimension {expected}"),
                ))
            }
            Some(_) => {}
        }
        if !seen.insert(entry.record.id.clone()) {
            return Err(Error::schema(
                Some(line_no),
                format!("duplicate id {:?}", entry.record.id),
            ));
        }
        entries.push(entry);
    }
    Ok(entries)
}

fn validate_line(line: Line, line_no: usize) -> Result<CorpusEntry> {
    let schema = |msg: String| Error::schema(Some(line_no), msg);

    let embedding = line
        .embedding
        .ok_or_else(|| schema("missing embedding".into()))?;
    if embedding.is_empty() {
        return Err(schema("embedding is empty".into()));
    }
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(schema("embedding contains a non-finite value".into()));
    }
    for label in Label::ALL {
        match line.label_logliks.get(&label) {
            None => return Err(schema(format!("label_logliks has no entry for label {label}"))),
            Some(v) if !v.is_finite() => {
                return Err(schema(format!("label_logliks[{label}] is not finite")))
            }
            Some(_) => {}
        }
    }
    if line.sampled_labels.is_empty() {
        return Err(schema("sampled_labels is empty".into()));
    }
    let verbalized = line
        .verbalized
        .map(signals::clamp_verbalized)
        .transpose()
        .map_err(|e| schema(e.to_string()))?;
    let token_len = line.token_len.unwrap_or_else(|| token_length(&line.text));

    Ok(CorpusEntry {
        record: ResponseRecord {
            id: line.id.clone(),
            question_id: line.question_id,
            text: line.text,
            gold_label: line.gold_label,
            token_len,
            embedding,
        },
        raw: RawModelOutputs {
            record_id: line.id,
            pred_label: line.pred_label,
            verbalized,
            label_logliks: line.label_logliks,
            sampled_labels: line.sampled_labels,
        },
    })
}

/// Reads an interchange JSONL file.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusEntry>> {
    parse_corpus(&crate::io::read_input(path)?)
}

/// Renders entries as interchange JSONL, one line per entry. `token_len` is
/// always written.
pub fn to_jsonl(entries: &[CorpusEntry]) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        if e.record.id != e.raw.record_id {
            return Err(Error::schema(
                None,
                format!("record {:?} paired with outputs for {:?}", e.record.id, e.raw.record_id),
            ));
        }
        let line = Line {
            id: e.record.id.clone(),
            question_id: e.record.question_id.clone(),
            text: e.record.text.clone(),
            gold_label: e.record.gold_label,
            token_len: Some(e.record.token_len),
            embedding: Some(e.record.embedding.clone()),
            pred_label: e.raw.pred_label,
            verbalized: e.raw.verbalized,
            label_logliks: e.raw.label_logliks.clone(),
            sampled_labels: e.raw.sampled_labels.clone(),
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| Error::schema(None, e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, entries: &[CorpusEntry]) -> Result<()> {
    crate::io::write_atomic(path, to_jsonl(entries)?.as_bytes())
}

/// Calibration/test partition of a corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub calibration_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

impl SplitAssignment {
    /// Checks that the split is a disjoint cover of exactly the given ids.
    pub fn validate_against<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        if let Some(id) = self.calibration_ids.intersection(&self.test_ids).next() {
            return Err(Error::schema(None, format!("id {id:?} is in both split subsets")));
        }
        let mut covered = 0usize;
        for id in ids {
            if !self.calibration_ids.contains(id) && !self.test_ids.contains(id) {
                return Err(Error::schema(None, format!("corpus id {id:?} is missing from the split")));
            }
            covered += 1;
        }
        let total = self.calibration_ids.len() + self.test_ids.len();
        if covered != total {
            return Err(Error::schema(
                None,
                format!("split names {total} ids but the corpus has {covered}"),
            ));
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> usize {
    // the epsilon absorbs representation error such as 0.1 * 45 = 4.4999...
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Per-class calibration counts: round half up per class, then move the
/// majority class by the drift between the per-class total and the rounded
/// overall total. Index 0 is `Incorrect`, index 1 is `Correct`.
pub fn stratified_counts(class_sizes: [usize; 2], fraction: f64) -> [usize; 2] {
    let mut counts = class_sizes.map(|n| round_half_up(fraction * n as f64));
    let target = round_half_up(fraction * (class_sizes[0] + class_sizes[1]) as f64);
    let majority = if class_sizes[1] > class_sizes[0] { 1 } else { 0 };
    let sum = counts[0] + counts[1];
    if sum > target {
        counts[majority] = counts[majority].saturating_sub(sum - target);
    } else if sum < target {
        counts[majority] = (counts[majority] + (target - sum)).min(class_sizes[majority]);
    }
    counts
}

/// Label-stratified split of `records` into a calibration subset holding
/// `calibration_fraction` of each class and a test subset with the rest.
/// Within a class the order is a seeded shuffle of input order.
pub fn stratified_split(
    records: &[ResponseRecord],
    calibration_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "calibration fraction must lie in (0, 1), got {calibration_fraction}"
        )));
    }
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for r in records {
        by_class[r.gold_label.index()].push(&r.id);
    }
    let sizes = [by_class[0].len(), by_class[1].len()];
    let counts = stratified_counts(sizes, calibration_fraction);
    for label in Label::ALL {
        if counts[label.index()] == 0 {
            return Err(Error::Stratification(format!(
                "class {label} ({} records) would receive no calibration records at fraction {calibration_fraction}",
                sizes[label.index()]
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut calibration_ids = BTreeSet::new();
    let mut test_ids = BTreeSet::new();
    for (class, ids) in by_class.iter_mut().enumerate() {
        ids.shuffle(&mut rng);
        for (i, id) in ids.iter().enumerate() {
            if i < counts[class] {
                calibration_ids.insert(id.to_string());
            } else {
                test_ids.insert(id.to_string());
            }
        }
    }
    Ok(SplitAssignment {
        seed,
        calibration_ids,
        test_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, label: Label, embedding: Vec<f64>) -> ResponseRecord {
        ResponseRecord {
            id: id.into(),
            question_id: "q".into(),
            text: "some answer".into(),
            gold_label: label,
            token_len: 2,
            embedding,
        }
    }

    fn entry(id: &str, label: Label, embedding: Vec<f64>) -> CorpusEntry {
        CorpusEntry {
            record: record(id, label, embedding),
            raw: RawModelOutputs {
                record_id: id.into(),
                pred_label: Label::Correct,
                verbalized: Some(0.9),
                label_logliks: [(Label::Incorrect, -2.4), (Label::Correct, -0.1)].into(),
                sampled_labels: vec![Label::Correct, Label::Incorrect, Label::Correct],
            },
        }
    }

    fn labelled(n: usize, positives: usize) -> Vec<ResponseRecord> {
        (0..n)
            .map(|i| record(&format!("r{i:05}"), Label::from(i < positives), vec![0.0]))
            .collect()
    }

    #[test]
    fn token_length_examples() {
        assert_eq!(token_length("the moon orbits earth"), 4);
        assert_eq!(token_length(""), 0);
        assert_eq!(token_length("  a   b "), 2);
    }

    #[test]
    fn two_line_round_trip() {
        let entries = vec![
            entry("a", Label::Correct, vec![0.1, 0.2, 0.3, 0.4]),
            entry("b", Label::Incorrect, vec![1.0, -2.5, 1e-17, 3.25]),
        ];
        let text = to_jsonl(&entries).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(parse_corpus(&text).unwrap(), entries);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(parse_corpus("").unwrap().is_empty());
        assert!(parse_corpus("\n\n").unwrap().is_empty());
    }

    #[test]
    fn dimension_mismatch_is_schema_error() {
        let entries = vec![
            entry("a", Label::Correct, vec![0.1, 0.2, 0.3, 0.4]),
            entry("b", Label::Incorrect, vec![1.0, 2.0, 3.0]),
        ];
        let err = parse_corpus(&to_jsonl(&entries).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Schema { line: Some(2), .. }), "{err}");
    }

    #[test]
    fn duplicate_id_is_schema_error() {
        let entries = vec![
            entry("a", Label::Correct, vec![0.1]),
            entry("a", Label::Incorrect, vec![0.2]),
        ];
        let err = parse_corpus(&to_jsonl(&entries).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Schema { line: Some(2), .. }), "{err}");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let good = to_jsonl(&[entry("a", Label::Correct, vec![0.1])]).unwrap();
        let text = format!("{good}{{not json\n");
        match parse_corpus(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_embedding_is_schema_error() {
        let text = r#"{"id":"a","question_id":"q","text":"x","gold_label":1,"pred_label":1,"label_logliks":{"0":-1.0,"1":-0.5},"sampled_labels":[1]}"#;
        assert!(matches!(parse_corpus(text).unwrap_err(), Error::Schema { line: Some(1), .. }));
    }

    #[test]
    fn missing_loglik_label_is_schema_error() {
        let text = r#"{"id":"a","question_id":"q","text":"x","gold_label":1,"embedding":[0.0],"pred_label":1,"label_logliks":{"1":-0.5},"sampled_labels":[1]}"#;
        assert!(matches!(parse_corpus(text).unwrap_err(), Error::Schema { .. }));
    }

    #[test]
    fn token_len_defaults_to_whitespace_count() {
        let text = r#"{"id":"a","question_id":"q","text":"  three  little words ","gold_label":0,"embedding":[0.0],"pred_label":1,"label_logliks":{"0":-1.0,"1":-0.5},"sampled_labels":[1,0]}"#;
        let entries = parse_corpus(text).unwrap();
        assert_eq!(entries[0].record.token_len, 3);
        assert_eq!(entries[0].raw.verbalized, None);

        let explicit = text.replace(r#""gold_label":0"#, r#""gold_label":0,"token_len":11"#);
        assert_eq!(parse_corpus(&explicit).unwrap()[0].record.token_len, 11);
    }

    #[test]
    fn verbalized_is_clamped_or_rejected() {
        let base = r#"{"id":"a","question_id":"q","text":"x","gold_label":0,"embedding":[0.0],"pred_label":1,"verbalized":V,"label_logliks":{"0":-1.0,"1":-0.5},"sampled_labels":[1]}"#;
        let v = |s: &str| parse_corpus(&base.replace('V', s));
        assert_eq!(v("1.005").unwrap()[0].raw.verbalized, Some(1.0));
        assert_eq!(v("-0.004").unwrap()[0].raw.verbalized, Some(0.0));
        assert!(v("95").is_err());
    }

    #[test]
    fn split_exact_proportions() {
        let records = labelled(100, 40);
        for seed in [0, 1, 99] {
            let split = stratified_split(&records, 0.10, seed).unwrap();
            assert_eq!(split.calibration_ids.len(), 10);
            let pos = records
                .iter()
                .filter(|r| r.gold_label.is_correct() && split.calibration_ids.contains(&r.id))
                .count();
            assert_eq!(pos, 4);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let records = labelled(100, 40);
        assert_eq!(
            stratified_split(&records, 0.1, 7).unwrap(),
            stratified_split(&records, 0.1, 7).unwrap()
        );
        assert_ne!(
            stratified_split(&records, 0.1, 7).unwrap(),
            stratified_split(&records, 0.1, 8).unwrap()
        );
    }

    #[test]
    fn split_counts_for_full_benchmark_size() {
        // 2,645 incorrect, 1,917 correct: 264.5 -> 265 and 191.7 -> 192 sum
        // to 457 while 456.2 -> 456, so the majority (incorrect) class drops to 264.
        assert_eq!(stratified_counts([2645, 1917], 0.10), [264, 192]);
        let records = labelled(4562, 1917);
        let split = stratified_split(&records, 0.10, 3).unwrap();
        assert_eq!(split.calibration_ids.len(), 456);
        assert_eq!(split.test_ids.len(), 4106);
    }

    #[test]
    fn split_argument_errors() {
        let records = labelled(100, 40);
        assert!(matches!(stratified_split(&records, 0.0, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(stratified_split(&records, 1.0, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(stratified_split(&records, f64::NAN, 0), Err(Error::InvalidArgument(_))));
        // 4 positives at 10% -> 0.4 rounds to zero calibration positives
        let few = labelled(100, 4);
        assert!(matches!(stratified_split(&few, 0.1, 0), Err(Error::Stratification(_))));
    }

    #[test]
    fn split_validation_detects_missing_ids() {
        let records = labelled(20, 10);
        let split = stratified_split(&records, 0.5, 0).unwrap();
        assert!(split.validate_against(records.iter().map(|r| r.id.as_str())).is_ok());
        assert!(split
            .validate_against(records.iter().skip(1).map(|r| r.id.as_str()))
            .is_err());
    }

    proptest! {
        #[test]
        fn split_is_stratified_partition(
            n_neg in 1usize..300,
            n_pos in 1usize..300,
            fraction in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let records: Vec<_> = (0..n_neg + n_pos)
                .map(|i| record(&format!("r{i}"), Label::from(i >= n_neg), vec![0.0]))
                .collect();
            match stratified_split(&records, fraction, seed) {
                Ok(split) => {
                    prop_assert_eq!(split.calibration_ids.len() + split.test_ids.len(), records.len());
                    prop_assert!(split.validate_against(records.iter().map(|r| r.id.as_str())).is_ok());
                    for (label, size) in [(Label::Incorrect, n_neg), (Label::Correct, n_pos)] {
                        let got = records
                            .iter()
                            .filter(|r| r.gold_label == label && split.calibration_ids.contains(&r.id))
                            .count() as f64;
                        prop_assert!((got - fraction * size as f64).abs() <= 1.0 + 1e-9);
                    }
                }
                Err(Error::Stratification(_)) => {
                    let counts = stratified_counts([n_neg, n_pos], fraction);
                    prop_assert!(counts.contains(&0));
                }
                Err(e) => prop_assert!(false, "unexpected error {}", e),
            }
        }
    }
}
