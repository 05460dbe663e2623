//! Cross-validated calibration of forest (or identity) scores.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::{train_ensemble, TreeEnsemble, DEFAULT_TREES};
use super::platt::{platt_fit, PlattTargets, Sigmoid};
use super::Method;
use crate::corpus::Label;
use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;

/// How fold models are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationScheme {
    /// One sigmoid per fold, fitted on that fold's held-out scores;
    /// predictions average the calibrated fold models.
    #[default]
    FoldEnsemble,
    /// One sigmoid fitted on the pooled out-of-fold scores, applied to a
    /// scorer retrained on all calibration data.
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub folds: usize,
    pub n_trees: usize,
    pub seed: u64,
    pub scheme: CalibrationScheme,
    pub targets: PlattTargets,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            n_trees: DEFAULT_TREES,
            seed: 0,
            scheme: CalibrationScheme::default(),
            targets: PlattTargets::default(),
        }
    }
}

/// Uncalibrated scoring stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// The single input value is the raw score.
    Identity,
    Forest(TreeEnsemble),
}

impl Stage {
    fn raw(&self, x: &[f64]) -> Result<f64> {
        match self {
            Stage::Identity => match x {
                [v] => Ok(*v),
                _ => Err(Error::InvalidArgument(format!(
                    "identity stage takes one input, got {}",
                    x.len()
                ))),
            },
            Stage::Forest(f) => f.score(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldModel {
    pub stage: Stage,
    pub sigmoid: Sigmoid,
    /// Calibration-set indices whose scores fitted `sigmoid`.
    pub held_out: Vec<usize>,
}

/// Calibrated mapping from scorer inputs to P(correct).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedScorer {
    pub method: Method,
    pub feature_order: Vec<String>,
    pub config: CalibrationConfig,
    pub folds: Vec<FoldModel>,
}

impl CalibratedScorer {
    /// Mean of the calibrated fold-model outputs.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_order.len() {
            return Err(Error::InvalidArgument(format!(
                "{} scorer expects {} inputs, got {}",
                self.method,
                self.feature_order.len(),
                x.len()
            )));
        }
        let mut total = 0.0;
        for fold in &self.folds {
            total += fold.sigmoid.predict(fold.stage.raw(x)?);
        }
        Ok(total / self.folds.len() as f64)
    }
}

/// Assigns each example to one of `k` folds so every class is spread as
/// evenly as possible: per-fold class counts differ by at most one.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut next = 0;
    for class in Label::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = next % k;
            next += 1;
        }
    }
    fold_of
}

// distinct, well-mixed forest seed per fold
fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn check_folds(labels: &[Label], fold_of: &[usize], k: usize) -> Result<()> {
    for f in 0..k {
        for class in Label::ALL {
            if !fold_of.iter().zip(labels).any(|(&fo, &y)| fo == f && y == class) {
                return Err(Error::Calibration(format!(
                    "fold {f} has no examples of class {class}"
                )));
            }
        }
    }
    Ok(())
}

fn calibrate(
    method: Method,
    inputs: &[Vec<f64>],
    labels: &[Label],
    config: CalibrationConfig,
    train: impl Fn(&[Vec<f64>], &[Label], u64) -> Result<Stage>,
) -> Result<CalibratedScorer> {
    let n = inputs.len();
    if n != labels.len() {
        return Err(Error::Calibration(format!("{n} inputs but {} labels", labels.len())));
    }
    if config.folds < 2 {
        return Err(Error::Calibration("at least 2 folds required".into()));
    }
    if n < config.folds {
        return Err(Error::Calibration(format!(
            "{n} examples cannot fill {} folds",
            config.folds
        )));
    }
    let fold_of = stratified_folds(labels, config.folds, config.seed);
    check_folds(labels, &fold_of, config.folds)?;

    let mut folds = Vec::with_capacity(config.folds);
    let mut oof = vec![0.0; n];
    for f in 0..config.folds {
        let (mut tx, mut ty, mut held) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            if fold_of[i] == f {
                held.push(i);
            } else {
                tx.push(inputs[i].clone());
                ty.push(labels[i]);
            }
        }
        let stage = train(&tx, &ty, fold_seed(config.seed, f))?;
        let scores = held
            .iter()
            .map(|&i| stage.raw(&inputs[i]))
            .collect::<Result<Vec<_>>>()?;
        for (&i, &s) in held.iter().zip(&scores) {
            oof[i] = s;
        }
        if config.scheme == CalibrationScheme::FoldEnsemble {
            let hy: Vec<Label> = held.iter().map(|&i| labels[i]).collect();
            let sigmoid = platt_fit(&scores, &hy, config.targets)?;
            folds.push(FoldModel {
                stage,
                sigmoid,
                held_out: held,
            });
        }
    }
    if config.scheme == CalibrationScheme::Pooled {
        let sigmoid = platt_fit(&oof, labels, config.targets)?;
        let stage = train(inputs, labels, fold_seed(config.seed, config.folds))?;
        folds.push(FoldModel {
            stage,
            sigmoid,
            held_out: (0..n).collect(),
        });
    }
    Ok(CalibratedScorer {
        method,
        feature_order: method.feature_names().into_iter().map(String::from).collect(),
        config,
        folds,
    })
}

/// Forest + Platt calibration of a hybrid method under stratified k-fold CV.
pub fn calibrate_cv(
    method: Method,
    features: &[Vec<f64>],
    labels: &[Label],
    config: CalibrationConfig,
) -> Result<CalibratedScorer> {
    if !method.is_hybrid() {
        return Err(Error::InvalidArgument(format!(
            "{method} is a single-signal method; use calibrate_baseline"
        )));
    }
    let arity = method.feature_names().len();
    if let Some(bad) = features.iter().find(|f| f.len() != arity) {
        return Err(Error::InvalidArgument(format!(
            "{method} expects {arity} features, got {}",
            bad.len()
        )));
    }
    calibrate(method, features, labels, config, |x, y, seed| {
        Ok(Stage::Forest(train_ensemble(x, y, config.n_trees, seed)?))
    })
}

/// Platt calibration of one oriented signal under stratified k-fold CV.
pub fn calibrate_baseline(
    method: Method,
    values: &[f64],
    labels: &[Label],
    config: CalibrationConfig,
) -> Result<CalibratedScorer> {
    if method.is_hybrid() {
        return Err(Error::InvalidArgument(format!(
            "{method} is a hybrid method; use calibrate_cv"
        )));
    }
    let inputs: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
    calibrate(method, &inputs, labels, config, |_, _, _| Ok(Stage::Identity))
}
