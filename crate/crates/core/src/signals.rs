//! Model-based confidence signals.
//!
//! Three raw confidences in the greedy decision are derived from the grader's
//! outputs: the self-reported (verbalized) score, the softmax-normalized label
//! likelihood, and the agreement rate of temperature-sampled decisions. Each is
//! then oriented so that every value reads as "probability the response is
//! correct", independent of which label the grader picked.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, RawModelOutputs};
use crate::error::{Error, Result};

/// Verbalized scores within this distance outside `[0, 1]` are clamped.
pub const VERBALIZED_TOLERANCE: f64 = 0.01;

/// Score used for a missing verbalized confidence in lenient mode.
pub const MISSING_VERBALIZED_DEFAULT: f64 = 0.5;

/// Oriented confidences for one response.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSet {
    pub s_verb: f64,
    pub s_lat: f64,
    pub s_cons: f64,
    pub pred_label: Label,
}

/// What to do when the grader produced no verbalized score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerbalizedPolicy {
    Strict,
    #[default]
    Lenient,
}

/// Softmax of the label log-likelihoods, evaluated at `pred_label`.
pub fn latent_confidence(label_logliks: &BTreeMap<Label, f64>, pred_label: Label) -> Result<f64> {
    if let Some((label, v)) = label_logliks.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "log-likelihood for label {label} is not finite ({v})"
        )));
    }
    let target = *label_logliks.get(&pred_label).ok_or_else(|| {
        Error::InvalidArgument(format!("no log-likelihood for predicted label {pred_label}"))
    })?;
    let max = label_logliks.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = label_logliks.values().map(|v| (v - max).exp()).sum();
    Ok((target - max).exp() / denom)
}

/// Fraction of sampled decisions that agree with `pred_label`.
pub fn consistency_confidence(sampled_labels: &[Label], pred_label: Label) -> Result<f64> {
    if sampled_labels.is_empty() {
        return Err(Error::InvalidArgument("no sampled labels".into()));
    }
    let agree = sampled_labels.iter().filter(|&&l| l == pred_label).count();
    Ok(agree as f64 / sampled_labels.len() as f64)
}

/// Maps a confidence in `pred_label` to a confidence that the response is correct.
pub fn orient(raw_score: f64, pred_label: Label) -> Result<f64> {
    if !(0.0..=1.0).contains(&raw_score) {
        return Err(Error::InvalidArgument(format!(
            "confidence {raw_score} outside [0, 1]"
        )));
    }
    Ok(match pred_label {
        Label::Correct => raw_score,
        Label::Incorrect => 1.0 - raw_score,
    })
}

/// Clamps formatting noise just outside `[0, 1]`; rejects anything further out.
pub fn clamp_verbalized(v: f64) -> Result<f64> {
    if !(-VERBALIZED_TOLERANCE..=1.0 + VERBALIZED_TOLERANCE).contains(&v) {
        return Err(Error::InvalidArgument(format!(
            "verbalized confidence {v} outside [0, 1]"
        )));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Builds [`SignalSet`]s and counts how often the lenient default was used.
#[derive(Debug, Default)]
pub struct SignalBuilder {
    policy: VerbalizedPolicy,
    missing_verbalized: usize,
}

impl SignalBuilder {
    pub fn new(policy: VerbalizedPolicy) -> Self {
        Self {
            policy,
            missing_verbalized: 0,
        }
    }

    /// Number of records that fell back to the missing-verbalized default.
    pub fn missing_verbalized(&self) -> usize {
        self.missing_verbalized
    }

    pub fn build(&mut self, raw: &RawModelOutputs) -> Result<SignalSet> {
        let pred = raw.pred_label;
        let verbalized = match raw.verbalized {
            Some(v) => clamp_verbalized(v)?,
            None => match self.policy {
                VerbalizedPolicy::Strict => {
                    return Err(Error::InvalidArgument(format!(
                        "record {:?} has no verbalized confidence (strict mode)",
                        raw.record_id
                    )))
                }
                VerbalizedPolicy::Lenient => {
                    self.missing_verbalized += 1;
                    MISSING_VERBALIZED_DEFAULT
                }
            },
        };
        Ok(SignalSet {
            s_verb: orient(verbalized, pred)?,
            s_lat: orient(latent_confidence(&raw.label_logliks, pred)?, pred)?,
            s_cons: orient(consistency_confidence(&raw.sampled_labels, pred)?, pred)?,
            pred_label: pred,
        })
    }
}

/// One-shot [`SignalBuilder::build`].
pub fn build_signal_set(raw: &RawModelOutputs, policy: VerbalizedPolicy) -> Result<SignalSet> {
    SignalBuilder::new(policy).build(raw)
}
