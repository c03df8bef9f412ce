//! Precision/recall/F1, stratified k-fold cross-validation, Cohen's kappa and
//! error rates by message length.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Polarity;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("cannot build {k} stratified folds: {positives} positives, {negatives} negatives")]
    InfeasibleStratification { k: usize, positives: usize, negatives: usize },
    #[error("expected agreement must be below 1, got {0}")]
    DegenerateChance(f64),
    #[error("agreement {name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("length bins overlap or are inverted: {0:?}")]
    BadBins(Vec<LengthBin>),
}

fn same_len(a: usize, b: usize) -> Result<(), EvalError> {
    if a == b {
        Ok(())
    } else {
        Err(EvalError::LengthMismatch { left: a, right: b })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, pred: Polarity, gold: Polarity) {
        match (pred, gold) {
            (Polarity::Positive, Polarity::Positive) => self.tp += 1,
            (Polarity::Positive, Polarity::Negative) => self.fp += 1,
            (Polarity::Negative, Polarity::Positive) => self.fn_ += 1,
            (Polarity::Negative, Polarity::Negative) => self.tn += 1,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::from_counts(self)
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    /// Positive class is the target; zero denominators give 0.
    pub fn from_counts(c: &ConfusionCounts) -> Metrics {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics { precision, recall, f1 }
    }
}

pub fn confusion(pred: &[Polarity], gold: &[Polarity]) -> Result<ConfusionCounts, EvalError> {
    same_len(pred.len(), gold.len())?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gold) {
        c.record(p, g);
    }
    Ok(c)
}

pub fn prf1(pred: &[Polarity], gold: &[Polarity]) -> Result<(ConfusionCounts, Metrics), EvalError> {
    if pred.is_empty() && gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let c = confusion(pred, gold)?;
    Ok((c, c.metrics()))
}

/// Assigns every item to one of `k` folds. Each class is shuffled with the
/// seed and dealt round-robin, continuing the deal across classes, so fold
/// sizes differ by at most one both per class and overall.
pub fn stratified_folds(labels: &[Polarity], k: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_positive()).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_positive()).collect();
    if k < 2 || positives.len() < k || negatives.len() < k {
        return Err(EvalError::InfeasibleStratification {
            k,
            positives: positives.len(),
            negatives: negatives.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for mut class in [positives, negatives] {
        class.shuffle(&mut rng);
        for i in class {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    /// Fold id of each item.
    pub folds: Vec<usize>,
    pub per_fold: Vec<(ConfusionCounts, Metrics)>,
    /// Sum of the per-fold confusions.
    pub pooled: ConfusionCounts,
    /// Micro-averaged metrics over the pooled predictions.
    pub metrics: Metrics,
    /// Out-of-fold prediction for every item.
    pub predictions: Vec<Polarity>,
}

impl CvOutcome {
    /// Unweighted mean of per-fold F1.
    pub fn mean_fold_f1(&self) -> f64 {
        self.per_fold.iter().map(|(_, m)| m.f1).sum::<f64>() / self.per_fold.len() as f64
    }
}

/// Stratified k-fold cross-validation. `fit_predict(train, test)` receives
/// item indices and must return one prediction per test index; anything
/// fitted (vocabulary, model) must come from the training indices only.
pub fn cross_validate<E, F>(labels: &[Polarity], k: usize, seed: u64, mut fit_predict: F) -> Result<CvOutcome, E>
where
    E: From<EvalError>,
    F: FnMut(&[usize], &[usize]) -> Result<Vec<Polarity>, E>,
{
    let folds = stratified_folds(labels, k, seed)?;
    let mut predictions = vec![Polarity::Negative; labels.len()];
    let mut per_fold = Vec::with_capacity(k);
    let mut pooled = ConfusionCounts::default();
    for fold in 0..k {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| folds[i] == fold);
        let preds = fit_predict(&train, &test)?;
        same_len(preds.len(), test.len())?;
        let mut c = ConfusionCounts::default();
        for (&i, &p) in test.iter().zip(&preds) {
            predictions[i] = p;
            c.record(p, labels[i]);
        }
        pooled += c;
        per_fold.push((c, c.metrics()));
    }
    Ok(CvOutcome {
        folds,
        per_fold,
        pooled,
        metrics: pooled.metrics(),
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementResult {
    pub p_a: f64,
    pub p_e: f64,
    pub kappa: f64,
}

/// kappa = (pA - pE) / (1 - pE).
pub fn kappa_from(p_a: f64, p_e: f64) -> Result<f64, EvalError> {
    if !(0.0..=1.0).contains(&p_a) {
        return Err(EvalError::OutOfRange { name: "pA", value: p_a });
    }
    if !(0.0..=1.0).contains(&p_e) {
        return Err(EvalError::OutOfRange { name: "pE", value: p_e });
    }
    if p_e >= 1.0 {
        return Err(EvalError::DegenerateChance(p_e));
    }
    Ok((p_a - p_e) / (1.0 - p_e))
}

/// Cohen's kappa for two annotators; chance agreement from the product of marginals.
pub fn cohens_kappa<T: Ord>(a1: &[T], a2: &[T]) -> Result<AgreementResult, EvalError> {
    same_len(a1.len(), a2.len())?;
    if a1.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = a1.len() as f64;
    let mut m1: BTreeMap<&T, usize> = BTreeMap::new();
    let mut m2: BTreeMap<&T, usize> = BTreeMap::new();
    let mut agree = 0usize;
    for (x, y) in a1.iter().zip(a2) {
        *m1.entry(x).or_default() += 1;
        *m2.entry(y).or_default() += 1;
        if x == y {
            agree += 1;
        }
    }
    let p_a = agree as f64 / n;
    let p_e = m1
        .iter()
        .map(|(label, &c1)| c1 as f64 / n * m2.get(label).copied().unwrap_or(0) as f64 / n)
        .sum::<f64>();
    let kappa = kappa_from(p_a, p_e)?;
    Ok(AgreementResult { p_a, p_e, kappa })
}

/// Inclusive range of message lengths in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthBin {
    pub lo: usize,
    pub hi: usize,
}

impl LengthBin {
    pub fn contains(&self, len: usize) -> bool {
        self.lo <= len && len <= self.hi
    }
}

/// 34-56 and 122-144 at the ends, with the span between split into three bins.
pub fn default_length_bins() -> Vec<LengthBin> {
    [(34, 56), (57, 78), (79, 100), (101, 121), (122, 144)]
        .into_iter()
        .map(|(lo, hi)| LengthBin { lo, hi })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinRates {
    pub bin: LengthBin,
    pub counts: ConfusionCounts,
    /// fp / (fp + tn); `None` without negatives in the bin.
    pub fp_rate: Option<f64>,
    /// fn / (fn + tp); `None` without positives in the bin.
    pub fn_rate: Option<f64>,
}

pub fn error_by_length(
    preds: &[Polarity],
    golds: &[Polarity],
    texts: &[&str],
    bins: &[LengthBin],
) -> Result<Vec<BinRates>, EvalError> {
    same_len(preds.len(), golds.len())?;
    same_len(preds.len(), texts.len())?;
    let mut sorted = bins.to_vec();
    sorted.sort_by_key(|b| b.lo);
    if sorted.iter().any(|b| b.lo > b.hi) || sorted.windows(2).any(|w| w[0].hi >= w[1].lo) {
        return Err(EvalError::BadBins(bins.to_vec()));
    }
    let mut counts = vec![ConfusionCounts::default(); bins.len()];
    for ((&p, &g), text) in preds.iter().zip(golds).zip(texts) {
        let len = text.chars().count();
        if let Some(b) = bins.iter().position(|b| b.contains(len)) {
            counts[b].record(p, g);
        }
    }
    Ok(bins
        .iter()
        .zip(counts)
        .map(|(&bin, c)| BinRates {
            bin,
            counts: c,
            fp_rate: (c.fp + c.tn > 0).then(|| c.fp as f64 / (c.fp + c.tn) as f64),
            fn_rate: (c.fn_ + c.tp > 0).then(|| c.fn_ as f64 / (c.fn_ + c.tp) as f64),
        })
        .collect())
}
