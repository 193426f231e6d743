//! `myomap` — command-line front end.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "myomap", version, about = "Myocardial T1/T2 map analysis toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

/// Flags shared by all subcommands. A `--config` JSON file may supply any of
/// them under the same names; flags given on the command line win.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Common {
    /// Cohort manifest (manifest.json).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// train | validation | test | train+validation | all
    #[arg(long, global = true)]
    pub subset: Option<String>,
    /// Mask source used for features (e.g. gt, obs1).
    #[arg(long, global = true)]
    pub source: Option<String>,
    /// Two mask sources, `A:B`; A is the reference.
    #[arg(long, global = true)]
    pub pair: Option<String>,
    /// logreg | knn | svm_linear | random_forest | perceptron
    #[arg(long, global = true)]
    pub classifier: Option<String>,
    /// `f1,f2,...`, several sets separated by `;`, or
    /// top<k>-per-modality | top<k>-overall | all
    #[arg(long, global = true)]
    pub features: Option<String>,
    /// `default` or a JSON grid file.
    #[arg(long, global = true)]
    pub grid: Option<String>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Common {
    /// Fills every unset flag from `other`.
    pub fn or(self, other: Common) -> Common {
        Common {
            manifest: self.manifest.or(other.manifest),
            out: self.out.or(other.out),
            seed: self.seed.or(other.seed),
            subset: self.subset.or(other.subset),
            source: self.source.or(other.source),
            pair: self.pair.or(other.pair),
            classifier: self.classifier.or(other.classifier),
            features: self.features.or(other.features),
            grid: self.grid.or(other.grid),
            threads: self.threads.or(other.threads),
            config: self.config,
        }
    }
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a phantom cohort.
    Synth {
        /// Phantom spec JSON (defaults built in).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Check a cohort for structural problems.
    Validate,
    /// Resample, normalize and crop every map and mask.
    Preprocess,
    /// Segmentation agreement between two mask sources.
    Agree,
    /// Per-patient feature table.
    Features,
    /// ROC curves, AUC confidence intervals, Youden cutoffs and DeLong tests.
    Roc {
        /// Features CSV; computed from --manifest/--source when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Classify with a single-feature cutoff rule.
    CutoffClassify {
        #[arg(long)]
        input: Option<PathBuf>,
        /// cutoffs.json written by `roc`.
        #[arg(long)]
        rules: PathBuf,
    },
    /// Grid-search a classifier on TRAIN, scored on VALIDATION.
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Evaluate a trained model.
    Eval {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
    },
    /// Wilcoxon comparison of two classification reports.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Bland-Altman data for myocardial means under two mask sources.
    BlandAltman,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Validate => "validate",
            Command::Preprocess => "preprocess",
            Command::Agree => "agree",
            Command::Features => "features",
            Command::Roc { .. } => "roc",
            Command::CutoffClassify { .. } => "cutoff-classify",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Compare { .. } => "compare",
            Command::BlandAltman => "bland-altman",
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<myomap_core::Error> for Failure {
    fn from(e: myomap_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
