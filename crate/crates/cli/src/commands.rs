use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flusense::classify::ModelFile;
use flusense::corpus::{
    corpus_header, parse_corpus_bytes, serialize_record, AnnotatedMessage, CorpusFormat, CorpusReader,
};
use flusense::eval::{cohens_kappa, kappa_from};
use flusense::features::{FeatureConfig, Vocabulary};
use flusense::filter::{default_keywords, stage1_match, KeywordBag};
use flusense::pipeline::{
    category_examples, cross_validate_category, eval_report, train_category, CategoryClassifier, EvalRow,
    TrainOptions,
};
use flusense::rulelang::{demo_rulebook, match_rule, parse_rulebook, RuleBook};
use flusense::surveillance::{
    correlate_with, correlation_report, parse_baseline_csv, parse_category_set, parse_counts_csv, RankMethod,
    WeeklyCounter, WeeklySeries,
};
use flusense::{Category, Polarity};

use crate::config::PipelineConfig;
use crate::Failure;

/// Category sets correlated by default.
pub const DEFAULT_SETS: &[&str] = &["A", "S", "I", "P", "A+I+P", "A+I+P+S"];

const RULEBOOK_FILE: &str = "rulebook.rules";

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::io(path, e))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    String::from_utf8(read(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_corpus(path: &Path) -> Result<(Vec<AnnotatedMessage>, CorpusFormat), Failure> {
    let format = CorpusFormat::from_path(path);
    let msgs = parse_corpus_bytes(&read(path)?, format).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok((msgs, format))
}

/// Record-at-a-time view of a corpus file.
fn stream_corpus(
    path: &Path,
) -> Result<(impl Iterator<Item = Result<AnnotatedMessage, Failure>> + use<'_>, CorpusFormat), Failure> {
    let format = CorpusFormat::from_path(path);
    let file = File::open(path).map_err(|e| Failure::io(path, e))?;
    let reader = CorpusReader::new(BufReader::new(file), format)
        .map(move |r| r.map_err(|e| Failure::Data(format!("{}: {e}", path.display()))));
    Ok((reader, format))
}

fn load_rulebook(path: Option<&Path>) -> Result<RuleBook, Failure> {
    match path {
        None => Ok(demo_rulebook()),
        Some(p) => parse_rulebook(&read_text(p)?).map_err(|e| Failure::from_rule_error(p, e)),
    }
}

fn load_keywords(path: Option<&Path>) -> Result<KeywordBag, Failure> {
    match path {
        None => Ok(default_keywords()),
        Some(p) => KeywordBag::parse(&read_text(p)?).map_err(|e| Failure::Data(format!("{}: {e}", p.display()))),
    }
}

/// Output destination. A file target is written to a temporary file next to
/// it and renamed into place by [`Sink::finish`], so failed runs leave nothing.
enum Sink {
    File { tmp: BufWriter<tempfile::NamedTempFile>, path: PathBuf },
    Stdout(BufWriter<std::io::StdoutLock<'static>>),
}

impl Sink {
    fn open(out: Option<&Path>) -> Result<Sink, Failure> {
        let Some(path) = out else {
            return Ok(Sink::Stdout(BufWriter::new(std::io::stdout().lock())));
        };
        let parent = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        std::fs::create_dir_all(parent).map_err(|e| Failure::io(parent, e))?;
        let tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| Failure::io(parent, e))?;
        Ok(Sink::File {
            tmp: BufWriter::new(tmp),
            path: path.to_path_buf(),
        })
    }

    fn write(&mut self, s: &str) -> Result<(), Failure> {
        let res = match self {
            Sink::File { tmp, .. } => tmp.write_all(s.as_bytes()),
            Sink::Stdout(w) => w.write_all(s.as_bytes()),
        };
        res.map_err(|e| self.fail(e))
    }

    fn fail(&self, e: std::io::Error) -> Failure {
        match self {
            Sink::File { path, .. } => Failure::io(path, e),
            Sink::Stdout(_) => Failure::Data(format!("stdout: {e}")),
        }
    }

    fn finish(self) -> Result<(), Failure> {
        match self {
            Sink::File { tmp, path } => {
                let tmp = tmp.into_inner().map_err(|e| Failure::io(&path, e.into_error()))?;
                tmp.persist(&path).map_err(|e| Failure::io(&path, e.error))?;
                Ok(())
            }
            Sink::Stdout(mut w) => w.flush().map_err(|e| Failure::Data(format!("stdout: {e}"))),
        }
    }
}

/// Writes a whole artifact, provenance line first, to `--out` or stdout.
fn emit(cfg: &PipelineConfig, body: &str) -> Result<(), Failure> {
    let mut sink = Sink::open(cfg.out.as_deref())?;
    sink.write(&cfg.provenance())?;
    sink.write(body)?;
    sink.finish()
}

fn write_file(path: &Path, content: &str) -> Result<(), Failure> {
    let mut sink = Sink::open(Some(path))?;
    sink.write(content)?;
    sink.finish()
}

fn tokenized(mut m: AnnotatedMessage) -> AnnotatedMessage {
    m.message = m.message.tokenized();
    m
}

pub fn filter(cfg: &PipelineConfig) -> Result<(), Failure> {
    let bag = load_keywords(cfg.keywords.as_deref())?;
    let (msgs, format) = stream_corpus(cfg.require(&cfg.corpus, "corpus")?)?;
    let mut sink = Sink::open(cfg.out.as_deref())?;
    sink.write(&cfg.provenance())?;
    sink.write(corpus_header(format))?;
    let (mut total, mut kept) = (0usize, 0usize);
    for m in msgs {
        let m = tokenized(m?);
        total += 1;
        if stage1_match(&m.message, &bag) {
            kept += 1;
            sink.write(&serialize_record(&m, format))?;
        }
    }
    log::info!("kept {kept} of {total} messages");
    sink.finish()
}

pub fn rules_check(cfg: &PipelineConfig) -> Result<(), Failure> {
    let path = cfg.require(&cfg.rulebook, "rulebook")?;
    let book = load_rulebook(Some(path))?;
    let corpus = match cfg.corpus.as_deref() {
        Some(p) => Some(load_corpus(p)?.0.into_iter().map(tokenized).collect::<Vec<_>>()),
        None => None,
    };
    let mut out = String::from("rule\tcategory\tmatches\n");
    for rule in book.rules() {
        let matches = match &corpus {
            Some(msgs) => msgs.iter().filter(|m| match_rule(rule, &m.message.tokens, &book)).count().to_string(),
            None => "NA".to_string(),
        };
        out.push_str(&format!("{}\t{}\t{matches}\n", rule.name, rule.category));
    }
    emit(cfg, &out)
}

fn selected_categories(cfg: &PipelineConfig) -> Result<Option<Vec<Category>>, Failure> {
    cfg.extra
        .get("categories")
        .map(|s| {
            s.split(',')
                .map(|c| c.trim().parse::<Category>().map_err(Failure::Usage))
                .collect::<Result<Vec<_>, _>>()
        })
        .transpose()
}

/// Categories that carry labels in the corpus, restricted to the selection if one was given.
fn labeled_categories(cfg: &PipelineConfig, corpus: &[AnnotatedMessage]) -> Result<Vec<Category>, Failure> {
    let selection = selected_categories(cfg)?;
    let mut out = Vec::new();
    for cat in Category::ALL {
        let labeled = corpus.iter().any(|m| m.label(cat).is_some());
        match &selection {
            Some(sel) if !sel.contains(&cat) => {}
            Some(_) if !labeled => {
                return Err(Failure::Validation(format!("category {cat} has no labeled messages")));
            }
            _ if !labeled => log::info!("skipping {cat}: no labeled messages"),
            _ => out.push(cat),
        }
    }
    if out.is_empty() {
        return Err(Failure::Validation("no labeled categories to work on".into()));
    }
    Ok(out)
}

fn train_options(cfg: &PipelineConfig, features: FeatureConfig) -> Result<TrainOptions, Failure> {
    let mut opts = TrainOptions::new(cfg.classifier_kind()?, features, cfg.seed);
    opts.undersample = cfg.undersample;
    opts.svm = cfg.svm_tuning();
    Ok(opts)
}

pub fn cv(cfg: &PipelineConfig) -> Result<(), Failure> {
    let (corpus, _) = load_corpus(cfg.require(&cfg.corpus, "corpus")?)?;
    let book = load_rulebook(cfg.rulebook.as_deref())?;
    let configs = cfg.feature_configs()?;
    let mut rows = Vec::new();
    for cat in labeled_categories(cfg, &corpus)? {
        let (msgs, labels) = category_examples(&corpus, cat);
        let k = cfg.folds_for(cat);
        for &features in &configs {
            let outcome = cross_validate_category(&msgs, &labels, cat, &book, &train_options(cfg, features)?, k)
                .map_err(|e| Failure::from_core(e).context(&format!("{cat} {features}")))?;
            log::info!("{cat} {features}: pooled {:?}", outcome.pooled);
            rows.push(EvalRow {
                category: cat,
                features,
                metrics: outcome.metrics,
            });
        }
    }
    emit(cfg, &eval_report(&rows))
}

fn single_feature_config(cfg: &PipelineConfig) -> Result<FeatureConfig, Failure> {
    match cfg.feature_configs()?.as_slice() {
        [one] => Ok(*one),
        many => Err(Failure::Usage(format!("{} takes exactly one feature configuration, got {}", cfg.command, many.len()))),
    }
}

fn model_path(dir: &Path, cat: Category) -> PathBuf {
    dir.join(format!("{cat}.model"))
}

fn vocab_path(dir: &Path, cat: Category) -> PathBuf {
    dir.join(format!("{cat}.vocab"))
}

pub fn train(cfg: &PipelineConfig) -> Result<(), Failure> {
    let (corpus, _) = load_corpus(cfg.require(&cfg.corpus, "corpus")?)?;
    let dir = cfg.require(&cfg.model_dir, "model-dir")?;
    let book = load_rulebook(cfg.rulebook.as_deref())?;
    let features = single_feature_config(cfg)?;
    let opts = train_options(cfg, features)?;

    // train everything before touching the model directory
    let mut trained = Vec::new();
    for cat in labeled_categories(cfg, &corpus)? {
        let (msgs, labels) = category_examples(&corpus, cat);
        let clf = train_category(&msgs, &labels, cat, &book, &opts)
            .map_err(|e| Failure::from_core(e).context(&cat.to_string()))?;
        let pos = labels.iter().filter(|l| l.is_positive()).count();
        trained.push((clf, pos, labels.len() - pos));
    }

    let mut meta = BTreeMap::new();
    meta.insert("config_hash".to_string(), cfg.hash());
    meta.insert("seed".to_string(), cfg.seed.to_string());
    meta.insert("features".to_string(), features.to_string());
    meta.insert("undersample".to_string(), cfg.undersample.to_string());
    write_file(&dir.join(RULEBOOK_FILE), &format!("{}{book}", cfg.provenance()))?;
    let mut summary = String::from("category\tkind\tfeatures\tpositives\tnegatives\tdimension\n");
    for (clf, pos, neg) in &trained {
        let cat = clf.category;
        write_file(&vocab_path(dir, cat), &format!("{}{}", cfg.provenance(), clf.vocab.to_text()))?;
        write_file(&model_path(dir, cat), &clf.model_file(meta.clone()).to_text())?;
        summary.push_str(&format!(
            "{cat}\t{}\t{features}\t{pos}\t{neg}\t{}\n",
            clf.model.kind(),
            clf.vocab.dimension()
        ));
    }
    emit(cfg, &summary)
}

fn load_classifiers(dir: &Path) -> Result<Vec<CategoryClassifier>, Failure> {
    let book = load_rulebook(Some(&dir.join(RULEBOOK_FILE)))?;
    let mut out = Vec::new();
    for cat in Category::ALL {
        let mp = model_path(dir, cat);
        if !mp.exists() {
            continue;
        }
        let file = ModelFile::parse(&read_text(&mp)?).map_err(|e| Failure::Data(format!("{}: {e}", mp.display())))?;
        if file.category != cat {
            return Err(Failure::Validation(format!("{} holds a model for {}", mp.display(), file.category)));
        }
        let vp = vocab_path(dir, cat);
        let vocab = Vocabulary::parse(&read_text(&vp)?).map_err(|e| Failure::Data(format!("{}: {e}", vp.display())))?;
        out.push(CategoryClassifier::from_parts(file, vocab, &book).map_err(Failure::from_core)?);
    }
    if out.is_empty() {
        return Err(Failure::Validation(format!("no models found in {}", dir.display())));
    }
    Ok(out)
}

pub fn predict(cfg: &PipelineConfig) -> Result<(), Failure> {
    let classifiers = load_classifiers(cfg.require(&cfg.model_dir, "model-dir")?)?;
    let (msgs, format) = stream_corpus(cfg.require(&cfg.corpus, "corpus")?)?;
    let mut sink = Sink::open(cfg.out.as_deref())?;
    sink.write(&cfg.provenance())?;
    sink.write(corpus_header(format))?;
    for m in msgs {
        let mut m = tokenized(m?);
        m.labels.clear();
        for clf in &classifiers {
            let (pol, _) = clf.predict(&m.message).map_err(Failure::from_core)?;
            m.labels.insert(clf.category, pol);
        }
        sink.write(&serialize_record(&m, format))?;
    }
    sink.finish()
}

fn aggregate_file(path: &Path) -> Result<WeeklySeries, Failure> {
    let (msgs, _) = stream_corpus(path)?;
    let mut counter = WeeklyCounter::new();
    for m in msgs {
        counter.add_labeled(&m?);
    }
    Ok(counter.finish())
}

pub fn aggregate(cfg: &PipelineConfig) -> Result<(), Failure> {
    let series = aggregate_file(cfg.require(&cfg.corpus, "corpus")?)?;
    emit(cfg, &series.to_csv())
}

fn weekly_counts(cfg: &PipelineConfig) -> Result<WeeklySeries, Failure> {
    match (&cfg.counts, &cfg.corpus) {
        (Some(p), _) => parse_counts_csv(&read_text(p)?).map_err(|e| Failure::Data(format!("{}: {e}", p.display()))),
        (None, Some(p)) => aggregate_file(p),
        (None, None) => Err(Failure::Usage("correlate needs --counts or a labeled --corpus".into())),
    }
}

pub fn correlate(cfg: &PipelineConfig) -> Result<(), Failure> {
    let sets = cfg
        .extra
        .get("sets")
        .map(|s| s.split(',').map(str::to_string).collect::<Vec<_>>())
        .unwrap_or_else(|| DEFAULT_SETS.iter().map(|s| s.to_string()).collect());
    let sets: Vec<Vec<Category>> =
        sets.iter().map(|s| parse_category_set(s.trim()).map_err(Failure::Usage)).collect::<Result<_, _>>()?;
    let method: RankMethod = cfg
        .extra
        .get("rank_method")
        .map(|m| m.parse().map_err(Failure::Usage))
        .transpose()?
        .unwrap_or_default();
    let series = weekly_counts(cfg)?;
    let bp = cfg.require(&cfg.baseline, "baseline")?;
    let baseline = parse_baseline_csv(&read_text(bp)?).map_err(|e| Failure::Data(format!("{}: {e}", bp.display())))?;
    let results = correlate_with(&series.with_baseline(&baseline), &sets, method)
        .map_err(|e| Failure::from_core(e.into()))?;
    emit(cfg, &correlation_report(&results))
}

/// Per-message label for agreement: the positive category set, or one
/// category's polarity when `category` is given.
fn agreement_labels(
    a: &[AnnotatedMessage],
    b: &[AnnotatedMessage],
    category: Option<Category>,
) -> Result<(Vec<String>, Vec<String>), Failure> {
    let index: BTreeMap<&str, &AnnotatedMessage> = b.iter().map(|m| (m.message.id.as_str(), m)).collect();
    if a.len() != b.len() {
        return Err(Failure::Validation(format!("annotation files differ in size: {} vs {}", a.len(), b.len())));
    }
    let label = |m: &AnnotatedMessage| -> Result<String, Failure> {
        match category {
            None => Ok(m.positive_categories().iter().map(|c| c.letter()).collect::<String>()),
            Some(c) => m
                .label(c)
                .map(|p| Polarity::symbol(p).to_string())
                .ok_or_else(|| Failure::Validation(format!("message {} has no {c} label", m.message.id))),
        }
    };
    let mut la = Vec::with_capacity(a.len());
    let mut lb = Vec::with_capacity(a.len());
    for m in a {
        let other = index
            .get(m.message.id.as_str())
            .ok_or_else(|| Failure::Validation(format!("message {} is missing from the second file", m.message.id)))?;
        la.push(label(m)?);
        lb.push(label(other)?);
    }
    Ok((la, lb))
}

pub fn kappa(cfg: &PipelineConfig) -> Result<(), Failure> {
    let p_given = (cfg.extra.get("p_a"), cfg.extra.get("p_e"));
    let row = match p_given {
        (Some(pa), Some(pe)) => {
            let num = |s: &str| s.parse::<f64>().map_err(|_| Failure::Usage(format!("bad probability {s:?}")));
            let (pa, pe) = (num(pa)?, num(pe)?);
            let k = kappa_from(pa, pe).map_err(|e| Failure::from_core(e.into()))?;
            format!("{pa:.6}\t{pe:.6}\t{k:.6}\tNA\n")
        }
        (None, None) => {
            let pa = PathBuf::from(cfg.extra.get("a").ok_or_else(|| Failure::Usage("kappa needs --a and --b, or --p-a and --p-e".into()))?);
            let pb = PathBuf::from(cfg.extra.get("b").ok_or_else(|| Failure::Usage("kappa needs --a and --b".into()))?);
            let (a, _) = load_corpus(&pa)?;
            let (b, _) = load_corpus(&pb)?;
            let category = cfg.extra.get("category").map(|c| c.parse::<Category>().map_err(Failure::Usage)).transpose()?;
            let (la, lb) = agreement_labels(&a, &b, category)?;
            let r = cohens_kappa(&la, &lb).map_err(|e| Failure::from_core(e.into()))?;
            format!("{:.6}\t{:.6}\t{:.6}\t{}\n", r.p_a, r.p_e, r.kappa, la.len())
        }
        _ => return Err(Failure::Usage("--p-a and --p-e go together".into())),
    };
    emit(cfg, &format!("p_a\tp_e\tkappa\tn\n{row}"))
}
