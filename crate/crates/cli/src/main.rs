//! `flusense` command-line front end.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flusense::rulelang::RuleError;
use flusense::surveillance::SurveillanceError;
use flusense::Error;

use config::{FileConfig, Overrides};

/// What went wrong, mapped onto the exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad invocation: exit 1.
    Usage(String),
    /// Unreadable or malformed input: exit 2.
    Data(String),
    /// Well-formed input that fails a check: exit 3.
    Validation(String),
}

impl Failure {
    pub fn io(path: &Path, err: std::io::Error) -> Failure {
        Failure::Data(format!("{}: {err}", path.display()))
    }

    pub fn from_rule_error(path: &Path, err: RuleError) -> Failure {
        let msg = format!("{}: {err}", path.display());
        match err {
            RuleError::Syntax { .. } => Failure::Data(msg),
            _ => Failure::Validation(msg),
        }
    }

    pub fn from_core(err: Error) -> Failure {
        let msg = err.to_string();
        match err {
            Error::Corpus(_) | Error::Keywords(_) => Failure::Data(msg),
            Error::Rules(RuleError::Syntax { .. }) => Failure::Data(msg),
            Error::Features(flusense::features::FeatureError::BadVocabFile { .. }) => Failure::Data(msg),
            Error::Classify(flusense::classify::ClassifyError::BadModelFile { .. }) => Failure::Data(msg),
            Error::Surveillance(SurveillanceError::Csv { .. } | SurveillanceError::BadWeek(_)) => Failure::Data(msg),
            _ => Failure::Validation(msg),
        }
    }

    pub fn context(self, what: &str) -> Failure {
        match self {
            Failure::Usage(m) => Failure::Usage(format!("{what}: {m}")),
            Failure::Data(m) => Failure::Data(format!("{what}: {m}")),
            Failure::Validation(m) => Failure::Validation(format!("{what}: {m}")),
        }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Validation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Validation(m) => m,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "flusense", version, about = "Flu message classification and surveillance correlation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Rule book; the built-in demo book when absent.
    #[arg(long, global = true)]
    rulebook: Option<PathBuf>,
    /// Keyword bag; the built-in bag when absent.
    #[arg(long, global = true)]
    keywords: Option<PathBuf>,
    /// CSV with `week,count` rows.
    #[arg(long, global = true)]
    baseline: Option<PathBuf>,
    /// CSV with `week,<categories>` rows.
    #[arg(long, global = true)]
    counts: Option<PathBuf>,
    #[arg(long, global = true)]
    model_dir: Option<PathBuf>,
    /// Feature configuration such as UNI, UNI+BI, UNI+BI+SRL. Repeatable.
    #[arg(long = "features", global = true)]
    features: Vec<String>,
    /// nb or svm.
    #[arg(long, global = true)]
    classifier: Option<String>,
    /// Fixed SVM cost; with --svm-gamma, skips the grid search.
    #[arg(long, global = true)]
    svm_c: Option<f64>,
    #[arg(long, global = true)]
    svm_gamma: Option<f64>,
    /// Per-category fold count, CATEGORY=K. Repeatable.
    #[arg(long = "folds", global = true)]
    folds: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Drop negatives from training data until the classes balance.
    #[arg(long, global = true)]
    undersample: bool,
    /// More logging on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Keep messages that match the keyword bag.
    Filter,
    /// Parse a rule book and count matches per rule.
    RulesCheck,
    /// Cross-validate per category and feature configuration.
    Cv {
        /// Comma-separated categories, e.g. A,S.
        #[arg(long)]
        categories: Option<String>,
    },
    /// Train one model per labeled category and save it.
    Train {
        #[arg(long)]
        categories: Option<String>,
    },
    /// Label a corpus with saved models.
    Predict,
    /// Count positives per MMWR week.
    Aggregate,
    /// Spearman correlation of weekly counts with a baseline.
    Correlate {
        /// Comma-separated category sets, e.g. A,S,A+I+P.
        #[arg(long)]
        sets: Option<String>,
        /// squared-difference (default) or pearson.
        #[arg(long)]
        rank_method: Option<String>,
    },
    /// Cohen's kappa between two annotation files, or from given agreement values.
    Kappa {
        #[arg(long)]
        a: Option<PathBuf>,
        #[arg(long)]
        b: Option<PathBuf>,
        /// Compare one category's polarity instead of the positive set.
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        p_a: Option<f64>,
        #[arg(long)]
        p_e: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Filter => "filter",
            Command::RulesCheck => "rules-check",
            Command::Cv { .. } => "cv",
            Command::Train { .. } => "train",
            Command::Predict => "predict",
            Command::Aggregate => "aggregate",
            Command::Correlate { .. } => "correlate",
            Command::Kappa { .. } => "kappa",
        }
    }

    fn default_features(&self) -> &'static [&'static str] {
        match self {
            Command::Cv { .. } => &["UNI", "UNI+BI", "UNI+SRL", "UNI+BI+SRL"],
            _ => &["UNI+BI+SRL"],
        }
    }

    /// Settings that only some commands take, folded into the config hash.
    fn extra(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        match self {
            Command::Cv { categories } | Command::Train { categories } => put("categories", categories.clone()),
            Command::Correlate { sets, rank_method } => {
                put("sets", sets.clone());
                put("rank_method", rank_method.clone());
            }
            Command::Kappa { a, b, category, p_a, p_e } => {
                put("a", a.as_ref().map(|p| p.display().to_string()));
                put("b", b.as_ref().map(|p| p.display().to_string()));
                put("category", category.clone());
                put("p_a", p_a.map(|v| v.to_string()));
                put("p_e", p_e.map(|v| v.to_string()));
            }
            _ => {}
        }
        out
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.common.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let c = cli.common;
    let flags = Overrides {
        corpus: c.corpus,
        rulebook: c.rulebook,
        keywords: c.keywords,
        baseline: c.baseline,
        counts: c.counts,
        model_dir: c.model_dir,
        features: c.features,
        classifier: c.classifier,
        svm_c: c.svm_c,
        svm_gamma: c.svm_gamma,
        folds: c.folds,
        seed: c.seed,
        out: c.out,
        undersample: c.undersample,
    };
    let mut cfg = config::resolve(cli.command.name(), file, flags, cli.command.default_features())?;
    for (k, v) in cli.command.extra() {
        cfg.extra.insert(k.to_string(), v);
    }
    log::debug!("config hash {}", cfg.hash());
    match cli.command {
        Command::Filter => commands::filter(&cfg),
        Command::RulesCheck => commands::rules_check(&cfg),
        Command::Cv { .. } => commands::cv(&cfg),
        Command::Train { .. } => commands::train(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::Aggregate => commands::aggregate(&cfg),
        Command::Correlate { .. } => commands::correlate(&cfg),
        Command::Kappa { .. } => commands::kappa(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
