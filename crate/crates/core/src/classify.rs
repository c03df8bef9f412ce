//! Per-category binary classifiers over binary feature vectors: Bernoulli
//! naive Bayes and a soft-margin RBF SVM trained by SMO, plus grid search,
//! undersampling and a text model format.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::rc::Rc;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Category, Polarity};
use crate::eval::{cross_validate, EvalError};
use crate::features::FeatureVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset is inconsistent: {0}")]
    InconsistentDataset(String),
    #[error("training data holds a single class")]
    SingleClass,
    #[error("dimension mismatch: model has {expected}, vector has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot undersample negatives: {positives} positives exceed {negatives} negatives")]
    MorePositivesThanNegatives { positives: usize, negatives: usize },
    #[error("model file line {line}: {reason}")]
    BadModelFile { line: usize, reason: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Labeled vectors for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vectors: Vec<FeatureVector>,
    labels: Vec<Polarity>,
    category: Category,
    dimension: usize,
}

impl Dataset {
    pub fn new(vectors: Vec<FeatureVector>, labels: Vec<Polarity>, category: Category) -> Result<Dataset, ClassifyError> {
        if vectors.is_empty() {
            return Err(ClassifyError::EmptyDataset);
        }
        if vectors.len() != labels.len() {
            return Err(ClassifyError::InconsistentDataset(format!(
                "{} vectors but {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        let dimension = vectors[0].dimension();
        if let Some(v) = vectors.iter().find(|v| v.dimension() != dimension) {
            return Err(ClassifyError::InconsistentDataset(format!(
                "mixed dimensions {dimension} and {}",
                v.dimension()
            )));
        }
        Ok(Dataset {
            vectors,
            labels,
            category,
            dimension,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[FeatureVector] {
        &self.vectors
    }

    pub fn labels(&self) -> &[Polarity] {
        &self.labels
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| l.is_positive()).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, ClassifyError> {
        Dataset::new(
            indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.category,
        )
    }

    /// Same vectors with every label flipped.
    pub fn flipped(&self) -> Dataset {
        Dataset {
            labels: self.labels.iter().map(|l| l.flipped()).collect(),
            ..self.clone()
        }
    }

    fn require_both_classes(&self) -> Result<(), ClassifyError> {
        let pos = self.positives();
        if pos == 0 || pos == self.len() {
            Err(ClassifyError::SingleClass)
        } else {
            Ok(())
        }
    }
}

fn check_dimension(expected: usize, v: &FeatureVector) -> Result<(), ClassifyError> {
    if v.dimension() == expected {
        Ok(())
    } else {
        Err(ClassifyError::DimensionMismatch {
            expected,
            found: v.dimension(),
        })
    }
}

// ---------------------------------------------------------------------------
// naive Bayes

/// Per-class log prior and Laplace-smoothed Bernoulli log likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct NbClass {
    pub log_prior: f64,
    /// log P(f = 1 | class)
    pub log_p1: Vec<f64>,
    /// log P(f = 0 | class)
    pub log_p0: Vec<f64>,
    base: f64,
}

impl NbClass {
    fn new(log_prior: f64, log_p1: Vec<f64>, log_p0: Vec<f64>) -> NbClass {
        let base = log_p0.iter().sum();
        NbClass {
            log_prior,
            log_p1,
            log_p0,
            base,
        }
    }

    /// log P(class) + sum over features of log P(f = v_f | class).
    fn joint(&self, v: &FeatureVector) -> f64 {
        let mut s = self.log_prior + self.base;
        for f in v.active() {
            s += self.log_p1[f] - self.log_p0[f];
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NbModel {
    pub positive: NbClass,
    pub negative: NbClass,
    pub dimension: usize,
}

impl NbModel {
    /// log P(+ | v) - log P(- | v).
    pub fn log_odds(&self, v: &FeatureVector) -> Result<f64, ClassifyError> {
        check_dimension(self.dimension, v)?;
        Ok(self.positive.joint(v) - self.negative.joint(v))
    }

    pub fn posterior_positive(&self, v: &FeatureVector) -> Result<f64, ClassifyError> {
        Ok(1.0 / (1.0 + (-self.log_odds(v)?).exp()))
    }
}

/// Bernoulli naive Bayes with add-one smoothing over the two outcomes of each feature.
pub fn train_nb(data: &Dataset) -> Result<NbModel, ClassifyError> {
    data.require_both_classes()?;
    let d = data.dimension();
    let n = data.len() as f64;
    let mut on = [vec![0usize; d], vec![0usize; d]];
    let mut count = [0usize; 2];
    for (v, l) in data.vectors().iter().zip(data.labels()) {
        let c = usize::from(!l.is_positive());
        count[c] += 1;
        for f in v.active() {
            on[c][f] += 1;
        }
    }
    let class = |c: usize| {
        let denom = count[c] as f64 + 2.0;
        let p1: Vec<f64> = on[c].iter().map(|&k| (k as f64 + 1.0) / denom).collect();
        NbClass::new(
            (count[c] as f64 / n).ln(),
            p1.iter().map(|p| p.ln()).collect(),
            p1.iter().map(|p| (1.0 - p).ln()).collect(),
        )
    };
    Ok(NbModel {
        positive: class(0),
        negative: class(1),
        dimension: d,
    })
}

/// Polarity and log-odds; an exact tie predicts negative.
pub fn predict_nb(model: &NbModel, v: &FeatureVector) -> Result<(Polarity, f64), ClassifyError> {
    let score = model.log_odds(v)?;
    Ok((Polarity::from_bool(score > 0.0), score))
}

// ---------------------------------------------------------------------------
// SVM

pub const DEFAULT_C_GRID: [f64; 4] = [0.1, 1.0, 10.0, 100.0];
pub const DEFAULT_GAMMA_GRID: [f64; 4] = [0.001, 0.01, 0.1, 1.0];
pub const DEFAULT_KKT_TOL: f64 = 1e-3;
/// Iteration cap, in multiples of the training-set size.
pub const MAX_SWEEPS: usize = 100;

const TAU: f64 = 1e-12;
const CACHE_BYTES: usize = 256 << 20;

/// exp(-gamma * d) where d is the squared distance between binary vectors.
pub fn rbf(gamma: f64, sq_dist: usize) -> f64 {
    (-gamma * sq_dist as f64).exp()
}

pub fn rbf_kernel(gamma: f64, x: &FeatureVector, z: &FeatureVector) -> f64 {
    rbf(gamma, x.sym_diff_len(z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: f64,
    /// Stop once the maximal KKT violating pair differs by less than this.
    pub tol: f64,
    /// `None` means [`MAX_SWEEPS`] times the training-set size.
    pub max_iter: Option<usize>,
    /// Record the dual objective after every update.
    pub trace_objective: bool,
}

impl SvmParams {
    pub fn new(c: f64, gamma: f64) -> SvmParams {
        SvmParams {
            c,
            gamma,
            tol: DEFAULT_KKT_TOL,
            max_iter: None,
            trace_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub support: Vec<FeatureVector>,
    /// alpha_i * y_i per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub gamma: f64,
    pub dimension: usize,
}

impl SvmModel {
    pub fn decision(&self, v: &FeatureVector) -> Result<f64, ClassifyError> {
        check_dimension(self.dimension, v)?;
        let s: f64 = self
            .support
            .iter()
            .zip(&self.coef)
            .map(|(sv, &a)| a * rbf_kernel(self.gamma, sv, v))
            .sum();
        Ok(s + self.bias)
    }
}

/// Full solver state at the end of training.
#[derive(Debug, Clone)]
pub struct SvmTraining {
    pub model: SvmModel,
    /// One multiplier per training item.
    pub alphas: Vec<f64>,
    pub labels: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    /// Largest violation of the margin conditions, recomputed from scratch.
    pub max_kkt_violation: f64,
}

impl SvmTraining {
    /// sum of alpha_i * y_i.
    pub fn equality_residual(&self) -> f64 {
        self.alphas.iter().zip(&self.labels).map(|(a, y)| a * y).sum()
    }
}

struct KernelRows<'a> {
    xs: &'a [FeatureVector],
    gamma: f64,
    rows: HashMap<usize, Rc<[f64]>>,
    fifo: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(xs: &'a [FeatureVector], gamma: f64) -> Self {
        let capacity = (CACHE_BYTES / (xs.len().max(1) * 8)).max(2);
        KernelRows {
            xs,
            gamma,
            rows: HashMap::new(),
            fifo: VecDeque::new(),
            capacity,
        }
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        if let Some(r) = self.rows.get(&i) {
            return Rc::clone(r);
        }
        let xi = &self.xs[i];
        let row: Rc<[f64]> = self.xs.iter().map(|xj| rbf_kernel(self.gamma, xi, xj)).collect();
        if self.fifo.len() >= self.capacity {
            if let Some(old) = self.fifo.pop_front() {
                self.rows.remove(&old);
            }
        }
        self.fifo.push_back(i);
        self.rows.insert(i, Rc::clone(&row));
        row
    }
}

/// Soft-margin RBF SVM with default tolerance.
pub fn train_svm(data: &Dataset, c: f64, gamma: f64, seed: u64) -> Result<SvmModel, ClassifyError> {
    Ok(train_svm_with(data, &SvmParams::new(c, gamma), seed)?.model)
}

/// Solves the dual by SMO, each step optimizing the maximal violating pair.
/// The seed fixes the scan order that breaks ties between equally violating items.
pub fn train_svm_with(data: &Dataset, params: &SvmParams, seed: u64) -> Result<SvmTraining, ClassifyError> {
    let c = params.c;
    if !(c > 0.0 && c.is_finite()) {
        return Err(ClassifyError::InvalidParameter(format!("C must be positive, got {c}")));
    }
    if !(params.gamma > 0.0 && params.gamma.is_finite()) {
        return Err(ClassifyError::InvalidParameter(format!(
            "gamma must be positive, got {}",
            params.gamma
        )));
    }
    if params.tol.is_nan() || params.tol <= 0.0 {
        return Err(ClassifyError::InvalidParameter(format!("tolerance must be positive, got {}", params.tol)));
    }
    data.require_both_classes()?;

    let xs = data.vectors();
    let n = xs.len();
    let y: Vec<f64> = data.labels().iter().map(|l| if l.is_positive() { 1.0 } else { -1.0 }).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut alpha = vec![0.0f64; n];
    // gradient of the (minimized) dual: G = Q alpha - 1
    let mut grad = vec![-1.0f64; n];
    let mut kernel = KernelRows::new(xs, params.gamma);
    let max_iter = params.max_iter.unwrap_or(MAX_SWEEPS * n);
    let mut trace = Vec::new();
    let objective = |alpha: &[f64], grad: &[f64]| 0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (1.0 - g)).sum::<f64>();

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let (mut i, mut g_max) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut g_min) = (usize::MAX, f64::INFINITY);
        for &t in &order {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > g_max {
                g_max = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < g_min {
                g_min = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < params.tol {
            converged = true;
            break;
        }

        let ki = kernel.row(i);
        let kj = kernel.row(j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = ki[i] + kj[j] - 2.0 * ki[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
        iterations += 1;
        if params.trace_objective {
            trace.push(objective(&alpha, &grad));
        }
    }
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations without reaching tolerance {}", params.tol);
    }

    // rho: mean of y*G over free multipliers, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { (ub + lb) / 2.0 };

    let (mut support, mut coef) = (Vec::new(), Vec::new());
    for t in 0..n {
        if alpha[t] > 0.0 {
            support.push(xs[t].clone());
            coef.push(alpha[t] * y[t]);
        }
    }
    let model = SvmModel {
        support,
        coef,
        bias: -rho,
        c,
        gamma: params.gamma,
        dimension: data.dimension(),
    };

    let mut max_kkt_violation = 0.0f64;
    for t in 0..n {
        let margin = y[t] * model.decision(&xs[t])?;
        let v = if alpha[t] <= 0.0 {
            (1.0 - margin).max(0.0)
        } else if alpha[t] >= c {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        max_kkt_violation = max_kkt_violation.max(v);
    }

    Ok(SvmTraining {
        model,
        alphas: alpha,
        labels: y,
        iterations,
        converged,
        objective_trace: trace,
        max_kkt_violation,
    })
}

/// Polarity and decision value; zero predicts negative.
pub fn predict_svm(model: &SvmModel, v: &FeatureVector) -> Result<(Polarity, f64), ClassifyError> {
    let f = model.decision(v)?;
    Ok((Polarity::from_bool(f > 0.0), f))
}

/// Grid search over (C, gamma) by mean F1 of an inner stratified cross-validation.
/// Ties go to the smaller C, then the smaller gamma.
pub fn grid_search(
    data: &Dataset,
    c_grid: &[f64],
    gamma_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(f64, f64), ClassifyError> {
    if c_grid.is_empty() || gamma_grid.is_empty() {
        return Err(ClassifyError::InvalidParameter("empty parameter grid".into()));
    }
    let mut cs = c_grid.to_vec();
    let mut gs = gamma_grid.to_vec();
    cs.sort_by(f64::total_cmp);
    gs.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64, f64)> = None;
    for &c in &cs {
        for &g in &gs {
            let outcome = cross_validate::<ClassifyError, _>(data.labels(), folds, seed, |train, test| {
                let model = train_svm(&data.subset(train)?, c, g, seed)?;
                test.iter()
                    .map(|&i| predict_svm(&model, &data.vectors()[i]).map(|(p, _)| p))
                    .collect()
            })?;
            let score = outcome.mean_fold_f1();
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((c, g, score));
            }
        }
    }
    let (c, g, _) = best.expect("grid is non-empty");
    Ok((c, g))
}

/// Keeps every positive and a seeded uniform sample of as many negatives,
/// in original order.
pub fn undersample(data: &Dataset, seed: u64) -> Result<Dataset, ClassifyError> {
    let positives: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i].is_positive()).collect();
    let negatives: Vec<usize> = (0..data.len()).filter(|&i| !data.labels()[i].is_positive()).collect();
    if positives.len() > negatives.len() {
        return Err(ClassifyError::MorePositivesThanNegatives {
            positives: positives.len(),
            negatives: negatives.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = index::sample(&mut rng, negatives.len(), positives.len())
        .into_iter()
        .map(|k| negatives[k])
        .chain(positives)
        .collect();
    keep.sort_unstable();
    data.subset(&keep)
}

// ---------------------------------------------------------------------------
// models and model files

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Nb(NbModel),
    Svm(SvmModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Nb(_) => "nb",
            Model::Svm(_) => "svm",
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Model::Nb(m) => m.dimension,
            Model::Svm(m) => m.dimension,
        }
    }

    pub fn predict(&self, v: &FeatureVector) -> Result<(Polarity, f64), ClassifyError> {
        match self {
            Model::Nb(m) => predict_nb(m, v),
            Model::Svm(m) => predict_svm(m, v),
        }
    }
}

/// A model plus what it was trained for, in a line-oriented text format.
/// Floats are written in shortest round-trip form so reloaded models
/// reproduce predictions bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub category: Category,
    pub vocab_hash: String,
    pub meta: BTreeMap<String, String>,
    pub model: Model,
}

const MODEL_MAGIC: &str = "flusense-model 1";

impl ModelFile {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MODEL_MAGIC}").unwrap();
        writeln!(out, "kind {}", self.model.kind()).unwrap();
        writeln!(out, "category {}", self.category).unwrap();
        writeln!(out, "vocab {}", self.vocab_hash).unwrap();
        writeln!(out, "dimension {}", self.model.dimension()).unwrap();
        for (k, v) in &self.meta {
            writeln!(out, "meta {k} {v}").unwrap();
        }
        match &self.model {
            Model::Nb(m) => {
                writeln!(out, "prior {:?} {:?}", m.positive.log_prior, m.negative.log_prior).unwrap();
                for f in 0..m.dimension {
                    writeln!(
                        out,
                        "feature {f} {:?} {:?} {:?} {:?}",
                        m.positive.log_p1[f], m.positive.log_p0[f], m.negative.log_p1[f], m.negative.log_p0[f]
                    )
                    .unwrap();
                }
            }
            Model::Svm(m) => {
                writeln!(out, "c {:?}", m.c).unwrap();
                writeln!(out, "gamma {:?}", m.gamma).unwrap();
                writeln!(out, "bias {:?}", m.bias).unwrap();
                for (sv, a) in m.support.iter().zip(&m.coef) {
                    let idx: Vec<String> = sv.active().map(|i| i.to_string()).collect();
                    let idx = if idx.is_empty() { "-".to_string() } else { idx.join(",") };
                    writeln!(out, "sv {a:?} {idx}").unwrap();
                }
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<ModelFile, ClassifyError> {
        let bad = |line: usize, reason: String| ClassifyError::BadModelFile { line, reason };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == MODEL_MAGIC => {}
            _ => return Err(bad(1, format!("expected {MODEL_MAGIC:?}"))),
        }
        let num = |line: usize, s: &str| -> Result<f64, ClassifyError> {
            let v: f64 = s.parse().map_err(|_| bad(line, format!("bad number {s:?}")))?;
            if v.is_nan() {
                return Err(bad(line, "NaN in model".into()));
            }
            Ok(v)
        };
        let int = |line: usize, s: &str| -> Result<usize, ClassifyError> {
            s.parse().map_err(|_| bad(line, format!("bad integer {s:?}")))
        };

        let mut kind = None;
        let mut category = None;
        let mut vocab_hash = None;
        let mut dimension = None;
        let mut meta = BTreeMap::new();
        let mut prior = None;
        let mut features: Vec<[f64; 4]> = Vec::new();
        let (mut c, mut gamma, mut bias) = (None, None, None);
        let mut support = Vec::new();
        let mut coef = Vec::new();
        let mut ended = false;
        let mut last_line = 1;

        for (line, raw) in lines {
            last_line = line;
            if ended {
                if raw.trim().is_empty() {
                    continue;
                }
                return Err(bad(line, "content after 'end'".into()));
            }
            let mut parts = raw.split(' ');
            let key = parts.next().unwrap_or("");
            let rest: Vec<&str> = parts.collect();
            let arity = |n: usize| -> Result<(), ClassifyError> {
                if rest.len() == n {
                    Ok(())
                } else {
                    Err(bad(line, format!("'{key}' expects {n} fields, found {}", rest.len())))
                }
            };
            match key {
                "kind" => {
                    arity(1)?;
                    match rest[0] {
                        "nb" | "svm" => kind = Some(rest[0].to_string()),
                        other => return Err(bad(line, format!("unknown model kind {other:?}"))),
                    }
                }
                "category" => {
                    arity(1)?;
                    category = Some(rest[0].parse::<Category>().map_err(|e| bad(line, e))?);
                }
                "vocab" => {
                    arity(1)?;
                    vocab_hash = Some(rest[0].to_string());
                }
                "dimension" => {
                    arity(1)?;
                    dimension = Some(int(line, rest[0])?);
                }
                "meta" => {
                    if rest.len() < 2 {
                        return Err(bad(line, "'meta' expects a key and a value".into()));
                    }
                    meta.insert(rest[0].to_string(), rest[1..].join(" "));
                }
                "prior" => {
                    arity(2)?;
                    prior = Some((num(line, rest[0])?, num(line, rest[1])?));
                }
                "feature" => {
                    arity(5)?;
                    if int(line, rest[0])? != features.len() {
                        return Err(bad(line, format!("expected feature {}", features.len())));
                    }
                    features.push([
                        num(line, rest[1])?,
                        num(line, rest[2])?,
                        num(line, rest[3])?,
                        num(line, rest[4])?,
                    ]);
                }
                "c" => {
                    arity(1)?;
                    c = Some(num(line, rest[0])?);
                }
                "gamma" => {
                    arity(1)?;
                    gamma = Some(num(line, rest[0])?);
                }
                "bias" => {
                    arity(1)?;
                    bias = Some(num(line, rest[0])?);
                }
                "sv" => {
                    arity(2)?;
                    let dim = dimension.ok_or_else(|| bad(line, "'sv' before 'dimension'".into()))?;
                    let a = num(line, rest[0])?;
                    let mut idx = Vec::new();
                    if rest[1] != "-" {
                        for s in rest[1].split(',') {
                            let i = int(line, s)?;
                            if i >= dim {
                                return Err(bad(line, format!("index {i} out of range")));
                            }
                            if idx.last().is_some_and(|&p| p >= i) {
                                return Err(bad(line, "support vector indices must increase".into()));
                            }
                            idx.push(i);
                        }
                    }
                    support.push(FeatureVector::from_indices(idx, dim));
                    coef.push(a);
                }
                "end" => {
                    arity(0)?;
                    ended = true;
                }
                other => return Err(bad(line, format!("unknown key {other:?}"))),
            }
        }
        if !ended {
            return Err(bad(last_line, "missing 'end'".into()));
        }
        let missing = |what: &str| bad(last_line, format!("missing '{what}'"));
        let kind = kind.ok_or_else(|| missing("kind"))?;
        let category = category.ok_or_else(|| missing("category"))?;
        let vocab_hash = vocab_hash.ok_or_else(|| missing("vocab"))?;
        let dimension = dimension.ok_or_else(|| missing("dimension"))?;
        let model = if kind == "nb" {
            let (pp, pn) = prior.ok_or_else(|| missing("prior"))?;
            if features.len() != dimension {
                return Err(bad(last_line, format!("expected {dimension} features, found {}", features.len())));
            }
            let col = |k: usize| features.iter().map(|f| f[k]).collect::<Vec<f64>>();
            Model::Nb(NbModel {
                positive: NbClass::new(pp, col(0), col(1)),
                negative: NbClass::new(pn, col(2), col(3)),
                dimension,
            })
        } else {
            Model::Svm(SvmModel {
                support,
                coef,
                bias: bias.ok_or_else(|| missing("bias"))?,
                c: c.ok_or_else(|| missing("c"))?,
                gamma: gamma.ok_or_else(|| missing("gamma"))?,
                dimension,
            })
        };
        Ok(ModelFile {
            category,
            vocab_hash,
            meta,
            model,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Polarity::{Negative as N, Positive as P};

    fn fv(idx: &[usize], d: usize) -> FeatureVector {
        FeatureVector::from_indices(idx.iter().copied(), d)
    }

    fn ds(vs: Vec<FeatureVector>, ls: Vec<Polarity>) -> Dataset {
        Dataset::new(vs, ls, Category::S).unwrap()
    }

    #[test]
    fn dataset_invariants() {
        assert_eq!(Dataset::new(vec![], vec![], Category::A), Err(ClassifyError::EmptyDataset));
        assert!(Dataset::new(vec![fv(&[], 2)], vec![P, N], Category::A).is_err());
        assert!(Dataset::new(vec![fv(&[], 2), fv(&[], 3)], vec![P, N], Category::A).is_err());
    }

    #[test]
    fn nb_two_message_model() {
        let data = ds(vec![fv(&[0], 1), fv(&[], 1)], vec![P, N]);
        let m = train_nb(&data).unwrap();
        assert!((m.positive.log_p1[0].exp() - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.negative.log_p1[0].exp() - 1.0 / 3.0).abs() < 1e-15);
        let (pol, score) = predict_nb(&m, &fv(&[0], 1)).unwrap();
        assert_eq!(pol, P);
        assert!((score - 2f64.ln()).abs() < 1e-12);
        let (pol, score) = predict_nb(&m, &fv(&[], 1)).unwrap();
        assert_eq!(pol, N);
        assert!((score + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nb_probabilities_sum_to_one() {
        let data = ds(vec![fv(&[0, 2], 4), fv(&[1], 4), fv(&[2, 3], 4)], vec![P, N, N]);
        let m = train_nb(&data).unwrap();
        for class in [&m.positive, &m.negative] {
            for f in 0..4 {
                let s = class.log_p1[f].exp() + class.log_p0[f].exp();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(class.log_p1[f] < 0.0 && class.log_p0[f] < 0.0);
            }
        }
        // feature 3 never on for positives: floor 1 / (1 + 2)
        assert!((m.positive.log_p1[3].exp() - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.negative.log_p1[0].exp() - 1.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn nb_symmetric_tie_is_negative() {
        let data = ds(vec![fv(&[0], 2), fv(&[0], 2)], vec![P, N]);
        let m = train_nb(&data).unwrap();
        assert_eq!(m.positive.log_prior, m.negative.log_prior);
        for v in [fv(&[], 2), fv(&[0], 2), fv(&[0, 1], 2)] {
            assert_eq!(predict_nb(&m, &v).unwrap(), (N, 0.0));
        }
    }

    #[test]
    fn nb_errors() {
        let one_class = ds(vec![fv(&[0], 1)], vec![P]);
        assert_eq!(train_nb(&one_class), Err(ClassifyError::SingleClass));
        let m = train_nb(&ds(vec![fv(&[0], 1), fv(&[], 1)], vec![P, N])).unwrap();
        assert_eq!(
            predict_nb(&m, &fv(&[], 2)),
            Err(ClassifyError::DimensionMismatch { expected: 1, found: 2 })
        );
    }

    #[test]
    fn svm_two_points() {
        let data = ds(vec![fv(&[0], 2), fv(&[1], 2)], vec![P, N]);
        let t = train_svm_with(&data, &SvmParams::new(100.0, 0.5), 0).unwrap();
        // K12 = exp(-0.5 * 2); optimum alpha = 1 / (1 - K12) for both
        let k = (-1.0f64).exp();
        let expected = 1.0 / (1.0 - k);
        assert!((t.alphas[0] - expected).abs() < 1e-9, "{:?}", t.alphas);
        assert!((t.alphas[0] - t.alphas[1]).abs() < 1e-12);
        assert!(t.model.bias.abs() < 1e-12);
        assert_eq!(predict_svm(&t.model, &fv(&[0], 2)).unwrap().0, P);
        assert_eq!(predict_svm(&t.model, &fv(&[1], 2)).unwrap().0, N);
        // equidistant point sits on the boundary: decision 0 predicts negative
        let (pol, f) = predict_svm(&t.model, &fv(&[0, 1], 2)).unwrap();
        assert!(f.abs() < 1e-12);
        if f == 0.0 {
            assert_eq!(pol, N);
        }
    }

    #[test]
    fn svm_zero_decision_is_negative() {
        let model = SvmModel {
            support: vec![],
            coef: vec![],
            bias: 0.0,
            c: 1.0,
            gamma: 1.0,
            dimension: 3,
        };
        assert_eq!(predict_svm(&model, &fv(&[1], 3)).unwrap(), (N, 0.0));
    }

    #[test]
    fn svm_parameter_errors() {
        let data = ds(vec![fv(&[0], 2), fv(&[1], 2)], vec![P, N]);
        assert!(matches!(train_svm(&data, 0.0, 1.0, 0), Err(ClassifyError::InvalidParameter(_))));
        assert!(matches!(train_svm(&data, 1.0, -1.0, 0), Err(ClassifyError::InvalidParameter(_))));
        let single = ds(vec![fv(&[0], 2), fv(&[1], 2)], vec![P, P]);
        assert_eq!(train_svm(&single, 1.0, 1.0, 0), Err(ClassifyError::SingleClass));
    }

    #[test]
    fn svm_box_and_margin_conditions() {
        let vs: Vec<FeatureVector> = (0..30).map(|i| fv(&[i % 5, 5 + (i * 7) % 6, 11 + (i % 3)], 14)).collect();
        let ls: Vec<Polarity> = (0..30).map(|i| Polarity::from_bool(i % 5 < 2)).collect();
        let data = ds(vs, ls);
        let t = train_svm_with(&data, &SvmParams::new(1.0, 0.3), 9).unwrap();
        assert!(t.converged);
        assert!(t.alphas.iter().all(|&a| (0.0..=1.0).contains(&a)));
        assert!(t.equality_residual().abs() < 1e-9);
        assert!(t.max_kkt_violation < 1e-3, "{}", t.max_kkt_violation);
    }

    #[test]
    fn undersample_counts() {
        let vs: Vec<FeatureVector> = (0..13).map(|i| fv(&[i], 13)).collect();
        let ls: Vec<Polarity> = (0..13).map(|i| Polarity::from_bool(i < 3)).collect();
        let data = ds(vs, ls);
        let u = undersample(&data, 5).unwrap();
        assert_eq!((u.positives(), u.negatives()), (3, 3));
        assert_eq!(u, undersample(&data, 5).unwrap());
        let flipped = data.flipped();
        assert!(matches!(
            undersample(&flipped, 5),
            Err(ClassifyError::MorePositivesThanNegatives { positives: 10, negatives: 3 })
        ));
    }

    #[test]
    fn undersample_balanced_keeps_everything() {
        let data = ds(vec![fv(&[0], 2), fv(&[1], 2), fv(&[], 2), fv(&[0, 1], 2)], vec![P, N, N, P]);
        assert_eq!(undersample(&data, 1).unwrap(), data);
    }

    #[test]
    fn grid_single_cell() {
        let vs: Vec<FeatureVector> = (0..12).map(|i| fv(if i % 2 == 0 { &[0] } else { &[1] }, 2)).collect();
        let ls: Vec<Polarity> = (0..12).map(|i| Polarity::from_bool(i % 2 == 0)).collect();
        let data = ds(vs, ls);
        assert_eq!(grid_search(&data, &[3.0], &[0.2], 3, 0).unwrap(), (3.0, 0.2));
        // every cell separates perfectly: the smallest one wins
        assert_eq!(grid_search(&data, &[10.0, 1.0], &[0.5, 0.1], 3, 0).unwrap(), (1.0, 0.1));
        assert!(matches!(grid_search(&data, &[1.0], &[1.0], 7, 0), Err(ClassifyError::Eval(_))));
        assert!(grid_search(&data, &[], &[1.0], 3, 0).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let data = ds(vec![fv(&[0, 2], 3), fv(&[1], 3), fv(&[], 3), fv(&[2], 3)], vec![P, N, N, P]);
        let nb = Model::Nb(train_nb(&data).unwrap());
        let svm = Model::Svm(train_svm(&data, 10.0, 0.5, 1).unwrap());
        for model in [nb, svm] {
            let file = ModelFile {
                category: Category::W,
                vocab_hash: "abc".into(),
                meta: [("seed".to_string(), "7".to_string())].into(),
                model,
            };
            let back = ModelFile::parse(&file.to_text()).unwrap();
            assert_eq!(back, file);
            for v in data.vectors() {
                let (a, b) = (file.model.predict(v).unwrap(), back.model.predict(v).unwrap());
                assert_eq!(a.0, b.0);
                assert_eq!(a.1.to_bits(), b.1.to_bits());
            }
        }
    }

    #[test]
    fn model_file_errors() {
        assert!(matches!(ModelFile::parse(""), Err(ClassifyError::BadModelFile { line: 1, .. })));
        let text = "flusense-model 1\nkind svm\ncategory A\nvocab x\ndimension 2\nc 1\ngamma 1\nbias 0\nsv 1 5\nend\n";
        assert!(matches!(ModelFile::parse(text), Err(ClassifyError::BadModelFile { line: 9, .. })));
        let text = "flusense-model 1\nkind nb\ncategory A\nvocab x\ndimension 1\nprior -1 -1\nend\n";
        assert!(matches!(ModelFile::parse(text), Err(ClassifyError::BadModelFile { .. })));
    }
}
