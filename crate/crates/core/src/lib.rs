//! Classification of short social-media health messages into
//! self-protective behaviour and self-diagnosis categories, and correlation
//! of the weekly positive counts with laboratory surveillance data.
//!
//! The pieces compose as a pipeline:
//!
//! 1. [`corpus`] reads annotated messages (JSON Lines or TSV),
//! 2. [`filter`] keeps influenza-related messages by keyword,
//! 3. [`rulelang`] matches hand-written pattern rules,
//! 4. [`features`] turns tokens and rule hits into binary vectors,
//! 5. [`classify`] trains naive Bayes or RBF SVM models per category,
//! 6. [`eval`] cross-validates and measures agreement,
//! 7. [`surveillance`] buckets positives by MMWR week and computes Spearman's rho.

pub mod classify;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod filter;
pub mod pipeline;
pub mod rulelang;
pub mod surveillance;

use thiserror::Error;

pub use corpus::{AnnotatedMessage, Category, Message, Polarity};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Keywords(#[from] filter::KeywordError),
    #[error(transparent)]
    Rules(#[from] rulelang::RuleError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Classify(#[from] classify::ClassifyError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Surveillance(#[from] surveillance::SurveillanceError),
    #[error("{0}")]
    Validation(String),
}
