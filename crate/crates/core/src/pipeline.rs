//! Per-category text classifiers: vocabulary, rule subset and model bundled
//! together, with training and cross-validation over raw messages.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::classify::{
    grid_search, train_nb, train_svm, undersample, ClassifyError, Dataset, Model, ModelFile, DEFAULT_C_GRID,
    DEFAULT_GAMMA_GRID,
};
use crate::corpus::{AnnotatedMessage, Category, Message, Polarity};
use crate::eval::{cross_validate, CvOutcome, Metrics};
use crate::features::{build_vocab_with, vectorize, FeatureConfig, Vocabulary};
use crate::rulelang::RuleBook;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Nb,
    Svm,
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::Nb => "nb",
            ClassifierKind::Svm => "svm",
        })
    }
}

impl FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nb" => Ok(ClassifierKind::Nb),
            "svm" => Ok(ClassifierKind::Svm),
            other => Err(format!("unknown classifier {other:?} (expected nb or svm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SvmTuning {
    Fixed { c: f64, gamma: f64 },
    Grid { c_grid: Vec<f64>, gamma_grid: Vec<f64>, folds: usize },
}

impl Default for SvmTuning {
    fn default() -> Self {
        SvmTuning::Grid {
            c_grid: DEFAULT_C_GRID.to_vec(),
            gamma_grid: DEFAULT_GAMMA_GRID.to_vec(),
            folds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub kind: ClassifierKind,
    pub features: FeatureConfig,
    pub svm: SvmTuning,
    pub undersample: bool,
    pub min_df: usize,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(kind: ClassifierKind, features: FeatureConfig, seed: u64) -> TrainOptions {
        TrainOptions {
            kind,
            features,
            svm: SvmTuning::default(),
            undersample: false,
            min_df: 1,
            seed,
        }
    }
}

/// Tokenized messages and gold polarities of one category; unlabeled messages are skipped.
pub fn category_examples(corpus: &[AnnotatedMessage], category: Category) -> (Vec<Message>, Vec<Polarity>) {
    corpus
        .iter()
        .filter_map(|m| {
            m.label(category).map(|p| {
                let msg = if m.message.tokens.is_empty() {
                    m.message.clone().tokenized()
                } else {
                    m.message.clone()
                };
                (msg, p)
            })
        })
        .unzip()
}

/// A trained classifier for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryClassifier {
    pub category: Category,
    pub vocab: Vocabulary,
    pub book: RuleBook,
    pub model: Model,
}

impl CategoryClassifier {
    pub fn predict(&self, msg: &Message) -> Result<(Polarity, f64), Error> {
        Ok(self.model.predict(&vectorize(msg, &self.vocab, &self.book))?)
    }

    pub fn model_file(&self, meta: BTreeMap<String, String>) -> ModelFile {
        ModelFile {
            category: self.category,
            vocab_hash: self.vocab.hash(),
            meta,
            model: self.model.clone(),
        }
    }

    /// Reassembles a classifier from its saved parts, checking they belong together.
    pub fn from_parts(file: ModelFile, vocab: Vocabulary, book: &RuleBook) -> Result<CategoryClassifier, Error> {
        if file.vocab_hash != vocab.hash() {
            return Err(Error::Validation(format!(
                "model for {} references vocabulary {} but the vocabulary file hashes to {}",
                file.category,
                file.vocab_hash,
                vocab.hash()
            )));
        }
        if file.model.dimension() != vocab.dimension() {
            return Err(Error::Validation(format!(
                "model dimension {} does not match vocabulary dimension {}",
                file.model.dimension(),
                vocab.dimension()
            )));
        }
        let book = book.for_category(file.category);
        let book_rules: Vec<&str> = if vocab.config().use_rules {
            book.rules().iter().map(|r| r.name.as_str()).collect()
        } else {
            Vec::new()
        };
        if vocab.rule_names().collect::<Vec<_>>() != book_rules {
            return Err(Error::Validation(format!(
                "rulebook rules for {} do not match the vocabulary's rule features",
                file.category
            )));
        }
        Ok(CategoryClassifier {
            category: file.category,
            vocab,
            book,
            model: file.model,
        })
    }
}

fn fit_model(data: &Dataset, opts: &TrainOptions) -> Result<Model, ClassifyError> {
    let balanced;
    let data = if opts.undersample && data.positives() <= data.negatives() {
        balanced = undersample(data, opts.seed)?;
        &balanced
    } else {
        data
    };
    Ok(match opts.kind {
        ClassifierKind::Nb => Model::Nb(train_nb(data)?),
        ClassifierKind::Svm => {
            let (c, gamma) = match &opts.svm {
                SvmTuning::Fixed { c, gamma } => (*c, *gamma),
                SvmTuning::Grid {
                    c_grid,
                    gamma_grid,
                    folds,
                } => grid_search(data, c_grid, gamma_grid, *folds, opts.seed)?,
            };
            Model::Svm(train_svm(data, c, gamma, opts.seed)?)
        }
    })
}

/// Builds the vocabulary from `msgs` and trains a model on them.
pub fn train_category(
    msgs: &[Message],
    labels: &[Polarity],
    category: Category,
    book: &RuleBook,
    opts: &TrainOptions,
) -> Result<CategoryClassifier, Error> {
    let book = book.for_category(category);
    let vocab = build_vocab_with(msgs, opts.features, &book, opts.min_df)?;
    let vectors = msgs.iter().map(|m| vectorize(m, &vocab, &book)).collect();
    let data = Dataset::new(vectors, labels.to_vec(), category)?;
    let model = fit_model(&data, opts)?;
    Ok(CategoryClassifier {
        category,
        vocab,
        book,
        model,
    })
}

/// Stratified k-fold cross-validation; each fold rebuilds vocabulary and
/// model from its training part only.
pub fn cross_validate_category(
    msgs: &[Message],
    labels: &[Polarity],
    category: Category,
    book: &RuleBook,
    opts: &TrainOptions,
    k: usize,
) -> Result<CvOutcome, Error> {
    cross_validate::<Error, _>(labels, k, opts.seed, |train, test| {
        let train_msgs: Vec<Message> = train.iter().map(|&i| msgs[i].clone()).collect();
        let train_labels: Vec<Polarity> = train.iter().map(|&i| labels[i]).collect();
        let clf = train_category(&train_msgs, &train_labels, category, book, opts)?;
        test.iter().map(|&i| clf.predict(&msgs[i]).map(|(p, _)| p)).collect()
    })
}

/// One row of a cross-validation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub category: Category,
    pub features: FeatureConfig,
    pub metrics: Metrics,
}

/// `category<TAB>features<TAB>P<TAB>R<TAB>F1`.
pub fn eval_report(rows: &[EvalRow]) -> String {
    let mut out = String::from("category\tfeatures\tP\tR\tF1\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
            r.category, r.features, r.metrics.precision, r.metrics.recall, r.metrics.f1
        ));
    }
    out
}

/// Default folds per category: 10 for A, P and S, 3 for the small I and W classes.
pub fn default_folds(category: Category) -> usize {
    match category {
        Category::A | Category::P | Category::S => 10,
        Category::I | Category::W => 3,
    }
}
