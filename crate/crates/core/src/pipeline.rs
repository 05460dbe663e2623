//! Staged pipeline: `split`, `cluster`, `fuse`, `evaluate`.
//!
//! Each stage reads its declared input files and writes its outputs
//! atomically, so the slow extraction step and the local analysis stay
//! decoupled and every stage can be rerun alone.
//!
//! | stage      | reads                                   | writes                               |
//! |------------|-----------------------------------------|--------------------------------------|
//! | `split`    | corpus                                  | split file                           |
//! | `cluster`  | corpus, split                           | cluster model                        |
//! | `fuse`     | corpus, split, cluster model            | one scorer file per method           |
//! | `evaluate` | corpus, split, cluster model, scorers   | `report.json` and CSV curves         |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aleatoric::{self, ClusterModel};
use crate::corpus::{self, CorpusEntry, Label, SplitAssignment};
use crate::error::{Error, Result};
use crate::fusion::{self, CalibratedScorer, CalibrationConfig, CalibrationScheme, Method, PlattTargets};
use crate::io::{read_json, write_atomic, write_json};
use crate::metrics::{self, EvalItem, MethodReport};
use crate::signals::{SignalBuilder, SignalSet, VerbalizedPolicy};

/// Environment variable consulted for the seed when neither a flag nor the
/// config file sets one.
pub const SEED_ENV: &str = "HYCONF_SEED";

pub const DEFAULT_CALIBRATION_FRACTION: f64 = 0.10;

/// Settings that may come from flags, a config file or defaults. Every field
/// is optional so layers can be merged; see [`PartialConfig::resolve`].
///
/// The config file is TOML using these field names, for example
///
/// ```toml
/// corpus = "data/corpus.jsonl"
/// seed = 7
/// k_grid = [2, 4, 8]
/// verbalized_policy = "strict"
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub corpus: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub cluster_model: Option<PathBuf>,
    pub scorer_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub calibration_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub k_grid: Option<Vec<usize>>,
    pub n_trees: Option<usize>,
    pub folds: Option<usize>,
    pub n_bins: Option<usize>,
    pub verbalized_policy: Option<VerbalizedPolicy>,
    pub calibration_scheme: Option<CalibrationScheme>,
    pub platt_targets: Option<PlattTargets>,
    pub with_aleatoric: Option<bool>,
    pub without_aleatoric: Option<bool>,
}

macro_rules! merge_fields {
    ($hi:ident, $lo:ident, $($f:ident),*) => {
        PartialConfig { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl PartialConfig {
    /// Parses a TOML config file.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::io::read_input(path)?)
    }

    /// Fields set in `self` win over `lower`.
    pub fn over(self, lower: PartialConfig) -> PartialConfig {
        merge_fields!(
            self, lower, corpus, split, cluster_model, scorer_dir, report_dir, calibration_fraction, seed, k,
            k_grid, n_trees, folds, n_bins, verbalized_policy, calibration_scheme, platt_targets,
            with_aleatoric, without_aleatoric
        )
    }

    /// Fills defaults. `env_seed` is the value of [`SEED_ENV`], if any.
    pub fn resolve(self, env_seed: Option<&str>) -> Result<RunConfig> {
        let seed = match (self.seed, env_seed) {
            (Some(s), _) => s,
            (None, Some(v)) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
            (None, None) => 0,
        };
        let cfg = RunConfig {
            corpus: self.corpus.unwrap_or_else(|| PathBuf::from("corpus.jsonl")),
            split: self.split.unwrap_or_else(|| PathBuf::from("split.json")),
            cluster_model: self.cluster_model.unwrap_or_else(|| PathBuf::from("clusters.json")),
            scorer_dir: self.scorer_dir.unwrap_or_else(|| PathBuf::from("scorers")),
            report_dir: self.report_dir.unwrap_or_else(|| PathBuf::from("report")),
            calibration_fraction: self.calibration_fraction.unwrap_or(DEFAULT_CALIBRATION_FRACTION),
            seed,
            k: self.k,
            k_grid: self.k_grid,
            n_trees: self.n_trees.unwrap_or(fusion::DEFAULT_TREES),
            folds: self.folds.unwrap_or(fusion::DEFAULT_FOLDS),
            n_bins: self.n_bins.unwrap_or(metrics::DEFAULT_BINS),
            verbalized_policy: self.verbalized_policy.unwrap_or_default(),
            calibration_scheme: self.calibration_scheme.unwrap_or_default(),
            platt_targets: self.platt_targets.unwrap_or_default(),
            with_aleatoric: self.with_aleatoric.unwrap_or(true),
            without_aleatoric: self.without_aleatoric.unwrap_or(true),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fully resolved pipeline settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub split: PathBuf,
    pub cluster_model: PathBuf,
    pub scorer_dir: PathBuf,
    pub report_dir: PathBuf,
    pub calibration_fraction: f64,
    pub seed: u64,
    /// Fixed cluster count; when absent K is chosen by silhouette over `k_grid`.
    pub k: Option<usize>,
    pub k_grid: Option<Vec<usize>>,
    pub n_trees: usize,
    pub folds: usize,
    pub n_bins: usize,
    pub verbalized_policy: VerbalizedPolicy,
    pub calibration_scheme: CalibrationScheme,
    pub platt_targets: PlattTargets,
    pub with_aleatoric: bool,
    pub without_aleatoric: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        PartialConfig::default()
            .resolve(None)
            .expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return bad(format!("calibration_fraction {} outside (0, 1)", self.calibration_fraction));
        }
        if self.k == Some(0) {
            return bad("k must be positive".into());
        }
        if self.n_trees == 0 {
            return bad("n_trees must be positive".into());
        }
        if self.folds < 2 {
            return bad("folds must be at least 2".into());
        }
        if self.n_bins == 0 {
            return bad("n_bins must be positive".into());
        }
        Ok(())
    }

    /// Methods this configuration produces and evaluates, in report order.
    pub fn methods(&self) -> Vec<Method> {
        Method::ALL
            .into_iter()
            .filter(|m| match m {
                Method::HybridWithAleatoric => self.with_aleatoric,
                Method::HybridWithoutAleatoric => self.without_aleatoric,
                _ => true,
            })
            .collect()
    }

    pub fn scorer_path(&self, method: Method) -> PathBuf {
        self.scorer_dir.join(format!("{}.json", method.name()))
    }

    fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            folds: self.folds,
            n_trees: self.n_trees,
            seed: self.seed,
            scheme: self.calibration_scheme,
            targets: self.platt_targets,
        }
    }
}

/// What a stage did, for the run summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub seed: u64,
    pub counts: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
    pub outputs: Vec<PathBuf>,
    /// Silhouette scores behind the cluster count, when it was chosen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_selection: Option<aleatoric::KSelection>,
}

impl StageSummary {
    fn new(stage: &str, seed: u64) -> Self {
        Self {
            stage: stage.into(),
            seed,
            ..Default::default()
        }
    }

    fn count(&mut self, key: &str, v: usize) {
        self.counts.insert(key.into(), v);
    }

    /// Human-readable multi-line rendering.
    pub fn render(&self) -> String {
        let mut s = format!("[{}] seed={}\n", self.stage, self.seed);
        for (k, v) in &self.counts {
            let _ = writeln!(s, "  {k}: {v}");
        }
        if let Some(sel) = &self.k_selection {
            for (k, score) in &sel.scores {
                let shown = score.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
                let mark = if *k == sel.k { " (chosen)" } else { "" };
                let _ = writeln!(s, "  silhouette k={k}: {shown}{mark}");
            }
        }
        for w in &self.warnings {
            let _ = writeln!(s, "  warning: {w}");
        }
        for o in &self.outputs {
            let _ = writeln!(s, "  wrote {}", o.display());
        }
        s
    }
}

struct Loaded {
    entries: Vec<CorpusEntry>,
    split: SplitAssignment,
}

impl Loaded {
    fn read(cfg: &RunConfig) -> Result<Self> {
        let entries = corpus::load_corpus(&cfg.corpus)?;
        let split: SplitAssignment = read_json(&cfg.split)?;
        split.validate_against(entries.iter().map(|e| e.record.id.as_str()))?;
        Ok(Self { entries, split })
    }

    fn calibration(&self) -> Vec<&CorpusEntry> {
        self.entries
            .iter()
            .filter(|e| self.split.calibration_ids.contains(&e.record.id))
            .collect()
    }

    fn test(&self) -> Vec<&CorpusEntry> {
        self.entries
            .iter()
            .filter(|e| self.split.test_ids.contains(&e.record.id))
            .collect()
    }
}

fn read_cluster_model(cfg: &RunConfig, dim: Option<usize>) -> Result<ClusterModel> {
    let model: ClusterModel = read_json(&cfg.cluster_model)?;
    model.validate()?;
    if let Some(d) = dim {
        if d != model.dim() {
            return Err(Error::schema(
                None,
                format!("cluster model dimension {} does not match corpus dimension {d}", model.dim()),
            ));
        }
    }
    Ok(model)
}

fn label_counts<'a>(entries: impl IntoIterator<Item = &'a CorpusEntry>) -> [usize; 2] {
    let mut c = [0; 2];
    for e in entries {
        c[e.record.gold_label.index()] += 1;
    }
    c
}

/// Writes the stratified calibration/test split.
pub fn cmd_split(cfg: &RunConfig) -> Result<StageSummary> {
    let entries = corpus::load_corpus(&cfg.corpus)?;
    let records: Vec<_> = entries.iter().map(|e| e.record.clone()).collect();
    let split = corpus::stratified_split(&records, cfg.calibration_fraction, cfg.seed)?;
    write_json(&cfg.split, &split)?;

    let mut s = StageSummary::new("split", cfg.seed);
    let cal = entries.iter().filter(|e| split.calibration_ids.contains(&e.record.id));
    let [cal_neg, cal_pos] = label_counts(cal);
    let [neg, pos] = label_counts(&entries);
    s.count("records", entries.len());
    s.count("calibration", split.calibration_ids.len());
    s.count("calibration_correct", cal_pos);
    s.count("calibration_incorrect", cal_neg);
    s.count("test", split.test_ids.len());
    s.count("test_correct", pos - cal_pos);
    s.count("test_incorrect", neg - cal_neg);
    s.outputs.push(cfg.split.clone());
    Ok(s)
}

/// Fits the Ward cluster model on the calibration subset.
pub fn cmd_cluster(cfg: &RunConfig) -> Result<StageSummary> {
    let data = Loaded::read(cfg)?;
    let cal: Vec<_> = data.calibration().into_iter().map(|e| &e.record).collect();
    let mut s = StageSummary::new("cluster", cfg.seed);

    let k = match cfg.k {
        Some(k) => k,
        None => {
            let grid = match &cfg.k_grid {
                Some(g) => g.clone(),
                None => aleatoric::default_k_grid(cal.len())?,
            };
            let embeddings: Vec<Vec<f64>> = cal.iter().map(|r| r.embedding.clone()).collect();
            let sel = aleatoric::choose_k(&embeddings, &grid)?;
            if sel.degenerate {
                s.warnings.push(format!(
                    "silhouette undefined for every grid value; using smallest K = {}",
                    sel.k
                ));
            }
            let k = sel.k;
            s.k_selection = Some(sel);
            k
        }
    };
    let model = aleatoric::fit(&cal, k)?;
    let singletons = model.singleton_clusters();
    if !singletons.is_empty() {
        s.warnings.push(format!(
            "{} singleton cluster(s) {:?}; their zero entropy is a weak estimate",
            singletons.len(),
            singletons
        ));
    }
    write_json(&cfg.cluster_model, &model)?;
    s.count("calibration", cal.len());
    s.count("k", k);
    s.count("singleton_clusters", singletons.len());
    s.outputs.push(cfg.cluster_model.clone());
    Ok(s)
}

struct Scored<'a> {
    entry: &'a CorpusEntry,
    signals: SignalSet,
    s_alea: f64,
}

fn signal_rows<'a>(
    entries: &[&'a CorpusEntry],
    policy: VerbalizedPolicy,
    alea: impl Fn(&CorpusEntry) -> Result<f64>,
) -> Result<(Vec<Scored<'a>>, usize)> {
    let mut builder = SignalBuilder::new(policy);
    let mut rows = Vec::with_capacity(entries.len());
    for &e in entries {
        rows.push(Scored {
            entry: e,
            signals: builder.build(&e.raw)?,
            s_alea: alea(e)?,
        });
    }
    Ok((rows, builder.missing_verbalized()))
}

/// Trains and calibrates every configured scorer on the calibration subset.
pub fn cmd_fuse(cfg: &RunConfig) -> Result<StageSummary> {
    let data = Loaded::read(cfg)?;
    let dim = data.entries.first().map(|e| e.record.embedding.len());
    let model = read_cluster_model(cfg, dim)?;
    let cal = data.calibration();
    if model.assignments.len() != cal.len()
        || cal.iter().any(|e| !model.assignments.contains_key(&e.record.id))
    {
        return Err(Error::schema(
            None,
            "cluster model assignments do not match the calibration subset of the split",
        ));
    }
    let (rows, missing) = signal_rows(&cal, cfg.verbalized_policy, |e| {
        Ok(model.member_uncertainty(&e.record.id).expect("checked above"))
    })?;
    let labels: Vec<Label> = rows.iter().map(|r| r.entry.record.gold_label).collect();

    let mut s = StageSummary::new("fuse", cfg.seed);
    for method in cfg.methods() {
        let inputs = rows
            .iter()
            .map(|r| method.inputs(&r.signals, r.s_alea, r.entry.record.token_len))
            .collect::<Result<Vec<_>>>()?;
        let scorer = if method.is_hybrid() {
            fusion::calibrate_cv(method, &inputs, &labels, cfg.calibration())?
        } else {
            let values: Vec<f64> = inputs.iter().map(|v| v[0]).collect();
            fusion::calibrate_baseline(method, &values, &labels, cfg.calibration())?
        };
        let path = cfg.scorer_path(method);
        write_json(&path, &scorer)?;
        s.outputs.push(path);
    }
    s.count("calibration", rows.len());
    s.count("missing_verbalized", missing);
    if missing > 0 {
        s.warnings.push(format!(
            "{missing} calibration record(s) had no verbalized confidence; used 0.5"
        ));
    }
    s.count("scorers", s.outputs.len());
    Ok(s)
}

/// Top-level evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub n_test: usize,
    pub n_bins: usize,
    /// Accuracy of the grader's own decisions on the test subset, before any
    /// confidence-based rejection.
    pub grader_accuracy: f64,
    pub missing_verbalized: usize,
    pub methods: Vec<MethodEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodEntry {
    pub method: Method,
    #[serde(flatten)]
    pub report: MethodReport,
}

impl Report {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|e| e.method == m).map(|e| &e.report)
    }
}

/// Per-response scores of every method, in test-subset order.
pub struct ScoreTable {
    pub ids: Vec<String>,
    pub items: BTreeMap<Method, Vec<EvalItem>>,
}

/// Scores the test subset with every configured scorer.
pub fn score_test_set(cfg: &RunConfig) -> Result<(ScoreTable, usize)> {
    // check scorers before doing any work so a missing one is reported first
    let paths: Vec<(Method, PathBuf)> = cfg.methods().into_iter().map(|m| (m, cfg.scorer_path(m))).collect();
    for (_, p) in &paths {
        if !p.exists() {
            return Err(Error::MissingInput { path: p.clone() });
        }
    }
    let data = Loaded::read(cfg)?;
    let dim = data.entries.first().map(|e| e.record.embedding.len());
    let model = read_cluster_model(cfg, dim)?;
    let mut scorers = Vec::with_capacity(paths.len());
    for (m, p) in paths {
        let scorer: CalibratedScorer = read_json(&p)?;
        if scorer.method != m {
            return Err(Error::schema(
                None,
                format!("{} holds a {} scorer", p.display(), scorer.method),
            ));
        }
        scorers.push(scorer);
    }

    let test = data.test();
    let (rows, missing) = signal_rows(&test, cfg.verbalized_policy, |e| {
        aleatoric::assign_uncertainty(&e.record.embedding, &model)
    })?;
    let mut items = BTreeMap::new();
    for scorer in &scorers {
        let m = scorer.method;
        let mut v = Vec::with_capacity(rows.len());
        for r in &rows {
            let p = scorer.predict(&m.inputs(&r.signals, r.s_alea, r.entry.record.token_len)?)?;
            let gold = r.entry.record.gold_label;
            v.push(if m.is_hybrid() {
                EvalItem::new(p, gold)
            } else {
                EvalItem::with_decision(p, gold, r.signals.pred_label)
            });
        }
        items.insert(m, v);
    }
    let ids = rows.iter().map(|r| r.entry.record.id.clone()).collect();
    Ok((ScoreTable { ids, items }, missing))
}

fn curve_csv<'a>(curves: impl IntoIterator<Item = (&'a str, &'a [metrics::CurvePoint])>) -> String {
    let mut out = String::from("x,y,method\n");
    for (name, points) in curves {
        for p in points {
            let _ = writeln!(out, "{},{},{}", p.x, p.y, name);
        }
    }
    out
}

/// Evaluates every configured method on the test subset and writes
/// `report.json`, `roc.csv`, `roc_gold.csv`, `arc.csv`, `reliability.csv`
/// and `scores.csv` into the report directory.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(Report, StageSummary)> {
    let (table, missing) = score_test_set(cfg)?;
    let mut methods = Vec::new();
    for (&m, items) in &table.items {
        methods.push(MethodEntry {
            method: m,
            report: metrics::evaluate_method(items, cfg.n_bins)?,
        });
    }
    methods.sort_by_key(|e| e.method);

    let grader_correct = table
        .items
        .values()
        .next()
        .map(|items| {
            items
                .iter()
                .filter(|i| match i.decision_override {
                    Some(d) => d == i.gold_label,
                    None => false,
                })
                .count()
        })
        .unwrap_or(0);
    let n_test = table.ids.len();
    let report = Report {
        seed: cfg.seed,
        n_test,
        n_bins: cfg.n_bins,
        grader_accuracy: grader_correct as f64 / n_test.max(1) as f64,
        missing_verbalized: missing,
        methods,
    };

    let dir = &cfg.report_dir;
    let mut s = StageSummary::new("evaluate", cfg.seed);
    let mut write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, bytes)?;
        s.outputs.push(p);
        Ok(())
    };
    let mut json = serde_json::to_vec_pretty(&report).map_err(|e| Error::schema(None, e.to_string()))?;
    json.push(b'\n');
    write("report.json", &json)?;
    let named = |f: fn(&MethodReport) -> &[metrics::CurvePoint]| {
        curve_csv(report.methods.iter().map(|e| (e.method.name(), f(&e.report))))
    };
    write("roc.csv", named(|r| &r.roc).as_bytes())?;
    write("roc_gold.csv", named(|r| &r.roc_gold).as_bytes())?;
    write("arc.csv", named(|r| &r.arc).as_bytes())?;

    let mut rel = String::from("x,y,method\n");
    for e in &report.methods {
        for b in &e.report.reliability.bins {
            if let (Some(c), Some(a)) = (b.mean_confidence, b.empirical_accuracy) {
                let _ = writeln!(rel, "{c},{a},{}", e.method.name());
            }
        }
    }
    write("reliability.csv", rel.as_bytes())?;

    let mut scores = String::from("id,method,confidence_correct,decision,gold_label\n");
    for (m, items) in &table.items {
        for (id, it) in table.ids.iter().zip(items) {
            let _ = writeln!(
                scores,
                "{id},{},{},{},{}",
                m.name(),
                it.confidence_correct,
                it.decision(),
                it.gold_label
            );
        }
    }
    write("scores.csv", scores.as_bytes())?;

    s.count("test", n_test);
    s.count("methods", report.methods.len());
    s.count("missing_verbalized", missing);
    if missing > 0 {
        s.warnings.push(format!(
            "{missing} test record(s) had no verbalized confidence; used 0.5"
        ));
    }
    Ok((report, s))
}
