//! Pipeline configuration: a TOML file merged with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use flusense::features::FeatureConfig;
use flusense::pipeline::{default_folds, ClassifierKind, SvmTuning};
use flusense::Category;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const DEFAULT_SEED: u64 = 42;

/// Everything a run may read from the config file. All fields are optional;
/// flags with the same names take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub rulebook: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub features: Option<Vec<String>>,
    pub classifier: Option<String>,
    pub svm_c: Option<f64>,
    pub svm_gamma: Option<f64>,
    pub folds: Option<BTreeMap<String, usize>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub undersample: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        toml::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    }
}

/// The resolved settings of one run. Serialized (without the output path)
/// to produce the config hash recorded in every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineConfig {
    pub command: String,
    pub corpus: Option<PathBuf>,
    pub rulebook: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub features: Vec<String>,
    pub classifier: String,
    /// Fixed SVM parameters; both absent means grid search.
    pub svm_c: Option<f64>,
    pub svm_gamma: Option<f64>,
    pub folds: BTreeMap<String, usize>,
    pub seed: u64,
    pub undersample: bool,
    /// Command-specific settings that change the output.
    pub extra: BTreeMap<String, String>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// `# config_hash=... seed=...`, the first line of every artifact.
    pub fn provenance(&self) -> String {
        format!("# config_hash={} seed={}\n", self.hash(), self.seed)
    }

    pub fn feature_configs(&self) -> Result<Vec<FeatureConfig>, Failure> {
        self.features
            .iter()
            .map(|f| f.parse().map_err(|e: String| Failure::Usage(e)))
            .collect()
    }

    pub fn classifier_kind(&self) -> Result<ClassifierKind, Failure> {
        self.classifier.parse().map_err(Failure::Usage)
    }

    pub fn svm_tuning(&self) -> SvmTuning {
        match (self.svm_c, self.svm_gamma) {
            (Some(c), Some(gamma)) => SvmTuning::Fixed { c, gamma },
            _ => SvmTuning::default(),
        }
    }

    pub fn folds_for(&self, cat: Category) -> usize {
        self.folds[&cat.to_string()]
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, Failure> {
        field
            .as_deref()
            .ok_or_else(|| Failure::Usage(format!("{} needs --{name} (or `{}` in the config file)", self.command, name.replace('-', "_"))))
    }
}

/// Flag values shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub corpus: Option<PathBuf>,
    pub rulebook: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub features: Vec<String>,
    pub classifier: Option<String>,
    pub svm_c: Option<f64>,
    pub svm_gamma: Option<f64>,
    pub folds: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub undersample: bool,
}

pub fn resolve(command: &str, file: FileConfig, flags: Overrides, default_features: &[&str]) -> Result<PipelineConfig, Failure> {
    let mut folds: BTreeMap<String, usize> =
        Category::ALL.iter().map(|c| (c.to_string(), default_folds(*c))).collect();
    let mut set_fold = |key: &str, k: usize| -> Result<(), Failure> {
        let cat: Category = key.parse().map_err(Failure::Usage)?;
        if k < 2 {
            return Err(Failure::Validation(format!("fold count for {cat} must be at least 2, got {k}")));
        }
        folds.insert(cat.to_string(), k);
        Ok(())
    };
    for (key, k) in file.folds.unwrap_or_default() {
        set_fold(&key, k)?;
    }
    for entry in &flags.folds {
        let (key, k) = entry
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--folds expects CATEGORY=K, got {entry:?}")))?;
        let k: usize = k.trim().parse().map_err(|_| Failure::Usage(format!("bad fold count in {entry:?}")))?;
        set_fold(key.trim(), k)?;
    }
    let features = if !flags.features.is_empty() {
        flags.features
    } else {
        file.features.unwrap_or_else(|| default_features.iter().map(|s| s.to_string()).collect())
    };
    // canonical spelling so equivalent configs hash alike
    let features = features
        .iter()
        .map(|f| f.parse::<FeatureConfig>().map(|c| c.to_string()).map_err(Failure::Usage))
        .collect::<Result<Vec<_>, _>>()?;
    let classifier = flags.classifier.or(file.classifier).unwrap_or_else(|| "nb".into()).to_ascii_lowercase();
    classifier.parse::<ClassifierKind>().map_err(Failure::Usage)?;
    let (svm_c, svm_gamma) = (flags.svm_c.or(file.svm_c), flags.svm_gamma.or(file.svm_gamma));
    match (svm_c, svm_gamma) {
        (Some(c), Some(g)) if !(c > 0.0 && g > 0.0 && c.is_finite() && g.is_finite()) => {
            return Err(Failure::Validation(format!("svm_c and svm_gamma must be positive, got {c} and {g}")));
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(Failure::Usage("svm_c and svm_gamma go together".into()));
        }
        _ => {}
    }
    Ok(PipelineConfig {
        command: command.to_string(),
        corpus: flags.corpus.or(file.corpus),
        rulebook: flags.rulebook.or(file.rulebook),
        keywords: flags.keywords.or(file.keywords),
        baseline: flags.baseline.or(file.baseline),
        counts: flags.counts.or(file.counts),
        model_dir: flags.model_dir.or(file.model_dir),
        features,
        classifier,
        svm_c,
        svm_gamma,
        folds,
        seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        undersample: flags.undersample || file.undersample.unwrap_or(false),
        extra: BTreeMap::new(),
        out: flags.out.or(file.out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: FileConfig = toml::from_str("seed = 7\nclassifier = \"svm\"\n[folds]\nI = 5\n").unwrap();
        let flags = Overrides {
            seed: Some(9),
            folds: vec!["W=4".into()],
            ..Overrides::default()
        };
        let cfg = resolve("cv", file, flags, &["UNI"]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.classifier, "svm");
        assert_eq!(cfg.folds_for(Category::I), 5);
        assert_eq!(cfg.folds_for(Category::W), 4);
        assert_eq!(cfg.folds_for(Category::A), 10);
        assert_eq!(cfg.features, ["UNI"]);
    }

    #[test]
    fn output_path_does_not_change_the_hash() {
        let mk = |out: &str| {
            let flags = Overrides {
                out: Some(out.into()),
                ..Overrides::default()
            };
            resolve("cv", FileConfig::default(), flags, &["UNI"]).unwrap().hash()
        };
        assert_eq!(mk("a.tsv"), mk("b/c.tsv"));
    }

    #[test]
    fn fold_count_below_two_is_rejected() {
        let flags = Overrides {
            folds: vec!["A=1".into()],
            ..Overrides::default()
        };
        assert!(matches!(resolve("cv", FileConfig::default(), flags, &["UNI"]), Err(Failure::Validation(_))));
    }

    #[test]
    fn svm_parameters_come_in_pairs() {
        let flags = Overrides {
            svm_c: Some(1.0),
            ..Overrides::default()
        };
        assert!(matches!(resolve("cv", FileConfig::default(), flags, &["UNI"]), Err(Failure::Usage(_))));
        let file: FileConfig = toml::from_str("svm_c = 10.0\nsvm_gamma = 0.05\n").unwrap();
        let cfg = resolve("cv", file, Overrides::default(), &["UNI"]).unwrap();
        assert_eq!(cfg.svm_tuning(), SvmTuning::Fixed { c: 10.0, gamma: 0.05 });
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("sed = 1\n").is_err());
    }
}
