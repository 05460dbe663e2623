//! `hyconf`: command-line front end for the staged pipeline.
//!
//! Exit status is 0 on success, 1 for invalid input or arguments and 2 for
//! filesystem failures. Failures print one JSON object on stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use hybrid_confidence::pipeline::{self, PartialConfig, RunConfig, SEED_ENV};
use hybrid_confidence::Error;

#[derive(Parser)]
#[command(name = "hyconf", version, about = "Hybrid confidence estimation for automatic short answer grading")]
struct Cli {
    /// TOML file setting any of the flags below; flags win over the file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stratified calibration/test split of the corpus.
    Split(Flags),
    /// Ward clustering of calibration embeddings and per-cluster entropies.
    Cluster(Flags),
    /// Train and calibrate the hybrid scorers and the single-signal baselines.
    Fuse(Flags),
    /// Score the test subset and write the report and curve files.
    Evaluate(Flags),
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Args, Default)]
struct Flags {
    /// Corpus JSONL [default: corpus.jsonl]
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Split assignment JSON [default: split.json]
    #[arg(long)]
    split: Option<PathBuf>,
    /// Cluster model JSON [default: clusters.json]
    #[arg(long)]
    cluster_model: Option<PathBuf>,
    /// Directory of calibrated scorer files [default: scorers]
    #[arg(long)]
    scorer_dir: Option<PathBuf>,
    /// Directory for the report and curve files [default: report]
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Share of each class used for calibration [default: 0.10]
    #[arg(long)]
    calibration_fraction: Option<f64>,
    /// Seed for every random choice [default: $HYCONF_SEED, else 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed cluster count (otherwise chosen by silhouette)
    #[arg(long)]
    k: Option<usize>,
    /// Candidate cluster counts, comma separated [default: 2,4,8,.. up to min(64, n/5)]
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    /// Trees per forest [default: 500]
    #[arg(long)]
    n_trees: Option<usize>,
    /// Cross-validation folds [default: 5]
    #[arg(long)]
    folds: Option<usize>,
    /// Reliability bins [default: 10]
    #[arg(long)]
    n_bins: Option<usize>,
    /// Missing verbalized score: strict (reject) | lenient (use 0.5) [default: lenient]
    #[arg(long, value_parser = parse_enum::<hybrid_confidence::signals::VerbalizedPolicy>)]
    verbalized_policy: Option<hybrid_confidence::signals::VerbalizedPolicy>,
    /// fold_ensemble | pooled [default: fold_ensemble]
    #[arg(long, value_parser = parse_enum::<hybrid_confidence::fusion::CalibrationScheme>)]
    calibration_scheme: Option<hybrid_confidence::fusion::CalibrationScheme>,
    /// Platt targets: smoothed | hard [default: smoothed]
    #[arg(long, value_parser = parse_enum::<hybrid_confidence::fusion::PlattTargets>)]
    platt_targets: Option<hybrid_confidence::fusion::PlattTargets>,
    /// Skip the hybrid variant that uses the aleatoric feature
    #[arg(long)]
    skip_with_aleatoric: bool,
    /// Skip the hybrid variant without the aleatoric feature
    #[arg(long)]
    skip_without_aleatoric: bool,
}

impl Flags {
    fn into_partial(self) -> PartialConfig {
        PartialConfig {
            corpus: self.corpus,
            split: self.split,
            cluster_model: self.cluster_model,
            scorer_dir: self.scorer_dir,
            report_dir: self.report_dir,
            calibration_fraction: self.calibration_fraction,
            seed: self.seed,
            k: self.k,
            k_grid: self.k_grid,
            n_trees: self.n_trees,
            folds: self.folds,
            n_bins: self.n_bins,
            verbalized_policy: self.verbalized_policy,
            calibration_scheme: self.calibration_scheme,
            platt_targets: self.platt_targets,
            with_aleatoric: self.skip_with_aleatoric.then_some(false),
            without_aleatoric: self.skip_without_aleatoric.then_some(false),
        }
    }
}

fn resolve(config: Option<PathBuf>, flags: Flags) -> hybrid_confidence::Result<RunConfig> {
    let file = match config {
        Some(p) => PartialConfig::load(&p)?,
        None => PartialConfig::default(),
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    flags.into_partial().over(file).resolve(env_seed.as_deref())
}

fn run(cli: Cli) -> hybrid_confidence::Result<String> {
    let (stage, flags): (fn(&RunConfig) -> hybrid_confidence::Result<pipeline::StageSummary>, Flags) =
        match cli.command {
            Command::Split(f) => (pipeline::cmd_split, f),
            Command::Cluster(f) => (pipeline::cmd_cluster, f),
            Command::Fuse(f) => (pipeline::cmd_fuse, f),
            Command::Evaluate(f) => (|c| pipeline::cmd_evaluate(c).map(|(_, s)| s), f),
        };
    let cfg = resolve(cli.config, flags)?;
    Ok(stage(&cfg)?.render())
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            return fail("usage", &message, 1);
        }
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e @ Error::Io { .. }) => fail(e.kind(), &e.to_string(), 2),
        Err(e) => fail(e.kind(), &e.to_string(), 1),
    }
}
