//! Confidence fusion and calibration.
//!
//! The hybrid scorer maps a per-response feature vector
//! `[s_verb, s_lat, s_cons, (s_alea), token_len]` to a calibrated probability
//! that the response is correct. A random forest provides the raw score and
//! Platt scaling, fitted under stratified k-fold cross-validation, calibrates
//! it. Single-signal baselines go through the same calibration with the
//! forest replaced by the identity.

mod forest;
mod platt;
mod scorer;
mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::SignalSet;

pub use forest::{
    default_feature_subsample, ensemble_score, train_ensemble, DecisionTree, TreeEnsemble, DEFAULT_TREES,
};
pub use platt::{platt_fit, platt_nll, PlattTargets, Sigmoid};
pub use scorer::{
    calibrate_baseline, calibrate_cv, stratified_folds, CalibratedScorer, CalibrationConfig, CalibrationScheme,
    FoldModel, Stage, DEFAULT_FOLDS,
};
pub use tree::Node;

/// Feature names in vector order, with the aleatoric slot.
pub const FEATURES_WITH_ALEATORIC: [&str; 5] = ["s_verb", "s_lat", "s_cons", "s_alea", "token_len"];
/// Feature names in vector order, without the aleatoric slot.
pub const FEATURES_WITHOUT_ALEATORIC: [&str; 4] = ["s_verb", "s_lat", "s_cons", "token_len"];

/// The five confidence methods compared by the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Verbalized,
    Latent,
    Consistency,
    HybridWithoutAleatoric,
    HybridWithAleatoric,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Verbalized,
        Method::Latent,
        Method::Consistency,
        Method::HybridWithoutAleatoric,
        Method::HybridWithAleatoric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Verbalized => "verbalized",
            Method::Latent => "latent",
            Method::Consistency => "consistency",
            Method::HybridWithoutAleatoric => "hybrid_without_aleatoric",
            Method::HybridWithAleatoric => "hybrid_with_aleatoric",
        }
    }

    pub fn is_hybrid(self) -> bool {
        matches!(self, Method::HybridWithoutAleatoric | Method::HybridWithAleatoric)
    }

    /// Names of the inputs the method's scorer expects, in order.
    pub fn feature_names(self) -> Vec<&'static str> {
        match self {
            Method::Verbalized => vec!["s_verb"],
            Method::Latent => vec!["s_lat"],
            Method::Consistency => vec!["s_cons"],
            Method::HybridWithoutAleatoric => FEATURES_WITHOUT_ALEATORIC.to_vec(),
            Method::HybridWithAleatoric => FEATURES_WITH_ALEATORIC.to_vec(),
        }
    }

    /// Scorer input for this method.
    pub fn inputs(self, signals: &SignalSet, s_alea: f64, token_len: usize) -> Result<Vec<f64>> {
        Ok(match self {
            Method::Verbalized => vec![signals.s_verb],
            Method::Latent => vec![signals.s_lat],
            Method::Consistency => vec![signals.s_cons],
            Method::HybridWithoutAleatoric => build_features(signals, None, token_len, false)?.0,
            Method::HybridWithAleatoric => build_features(signals, Some(s_alea), token_len, true)?.0,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Ordered fusion input; see [`FEATURES_WITH_ALEATORIC`] and
/// [`FEATURES_WITHOUT_ALEATORIC`] for the layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Assembles `[s_verb, s_lat, s_cons, (s_alea), token_len]`.
pub fn build_features(
    signals: &SignalSet,
    s_alea: Option<f64>,
    token_len: usize,
    include_alea: bool,
) -> Result<FeatureVector> {
    let mut v = vec![signals.s_verb, signals.s_lat, signals.s_cons];
    if include_alea {
        let alea = s_alea.ok_or_else(|| {
            Error::InvalidArgument("aleatoric feature requested but no s_alea given".into())
        })?;
        v.push(alea);
    }
    v.push(token_len as f64);
    Ok(FeatureVector(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn set() -> SignalSet {
        SignalSet {
            s_verb: 0.9,
            s_lat: 0.91,
            s_cons: 0.8,
            pred_label: Label::Correct,
        }
    }

    #[test]
    fn feature_assembly() {
        assert_eq!(
            build_features(&set(), Some(0.3), 12, true).unwrap().0,
            vec![0.9, 0.91, 0.8, 0.3, 12.0]
        );
        assert_eq!(build_features(&set(), Some(0.3), 12, false).unwrap().0, vec![0.9, 0.91, 0.8, 12.0]);
        assert_eq!(build_features(&set(), None, 0, false).unwrap().0, vec![0.9, 0.91, 0.8, 0.0]);
        assert!(build_features(&set(), None, 3, true).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(m.inputs(&set(), 0.2, 4).unwrap().len(), m.feature_names().len());
        }
        assert!("nope".parse::<Method>().is_err());
    }
}
