//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test -p flusense-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use flusense::classify::{predict_nb, train_nb, train_svm_with, Dataset, SvmParams, DEFAULT_C_GRID};
use flusense::corpus::{class_stats, parse_corpus, CorpusFormat};
use flusense::eval::kappa_from;
use flusense::features::{build_vocab, vectorize, FeatureConfig, FeatureVector};
use flusense::pipeline::category_examples;
use flusense::rulelang::{demo_rulebook, match_rule, RuleBook};
use flusense::{Category, Polarity};
use num::{BigInt, BigRational, One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RHO_TOL: f64 = 0.005;
const P_TOL: f64 = 0.003;
const KAPPA_TOL: f64 = 0.0001;
const RATIO_TOL: f64 = 0.005;
const F1_FLOOR: f64 = 0.95;
const SVM_C: &str = "10";
const SVM_GAMMA: &str = "0.05";
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

struct Outcome {
    pass: bool,
    detail: String,
    /// Everything the criterion produced, compared across runs.
    report: String,
}

struct Ctx {
    dir: tempfile::TempDir,
    runs: usize,
}

impl Ctx {
    /// Runs the binary with `--out` into the scratch directory and returns the artifact.
    fn cli(&mut self, args: &[&str]) -> Result<String, String> {
        self.runs += 1;
        let out = self.dir.path().join(format!("out{}", self.runs));
        let res = Command::new(env!("CARGO_BIN_EXE_flusense"))
            .args(args)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !res.status.success() {
            return Err(format!("{args:?} exited {}: {}", res.status, String::from_utf8_lossy(&res.stderr)));
        }
        std::fs::read_to_string(&out).map_err(|e| e.to_string())
    }
}

/// Data rows of a TSV report, keyed by the first `key_cols` columns joined with a tab.
fn tsv_rows(report: &str, key_cols: usize) -> BTreeMap<String, Vec<String>> {
    report
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let cols: Vec<String> = l.split('\t').map(str::to_string).collect();
            (cols[..key_cols].join("\t"), cols[key_cols..].to_vec())
        })
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

fn correlate_report(ctx: &mut Ctx) -> Result<(String, Duration), String> {
    let (counts, baseline) = (data("weekly_counts.csv"), data("weekly_baseline.csv"));
    let start = Instant::now();
    let report = ctx.cli(&["correlate", "--counts", path(&counts), "--baseline", path(&baseline)])?;
    Ok((report, start.elapsed()))
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn rho_reproduction(ctx: &mut Ctx) -> Result<Outcome, String> {
    let reference = [("A", 0.66), ("S", 0.66), ("I", 0.58), ("P", 0.67), ("A+I+P", 0.68), ("A+I+P+S", 0.67)];
    let (report, elapsed) = correlate_report(ctx)?;
    let rows = tsv_rows(&report, 1);
    let mut pass = elapsed < Duration::from_secs(1);
    let mut detail = Vec::new();
    for (label, want) in reference {
        let rho = rows.get(label).map_or(f64::NAN, |r| num(&r[0]));
        let ok = (rho - want).abs() <= RHO_TOL;
        pass &= ok;
        detail.push(format!("{label} {rho:.4}{}", if ok { "" } else { " (off)" }));
    }
    detail.push(format!("{} ms", elapsed.as_millis()));
    Ok(Outcome {
        pass,
        detail: detail.join(", "),
        report,
    })
}

fn p_reproduction(ctx: &mut Ctx) -> Result<Outcome, String> {
    let reference = [("A", 0.020), ("S", 0.021), ("I", 0.048), ("P", 0.017), ("A+I+P+S", 0.017)];
    let (report, _) = correlate_report(ctx)?;
    let rows = tsv_rows(&report, 1);
    let mut pass = true;
    let mut detail = Vec::new();
    for (label, want) in reference {
        let p = rows.get(label).map_or(f64::NAN, |r| num(&r[1]));
        pass &= (p - want).abs() <= P_TOL;
        detail.push(format!("{label} {p:.4}"));
    }
    let aip = rows.get("A+I+P").map_or(f64::NAN, |r| num(&r[1]));
    detail.push(format!("A+I+P {aip:.4} (not checked)"));
    Ok(Outcome {
        pass,
        detail: detail.join(", "),
        report,
    })
}

fn kappa(ctx: &mut Ctx) -> Result<Outcome, String> {
    let lib = kappa_from(0.88, 0.12).map_err(|e| e.to_string())?;
    let report = ctx.cli(&["kappa", "--p-a", "0.88", "--p-e", "0.12"])?;
    let rows = tsv_rows(&report, 1);
    let cli = rows.values().next().map_or(f64::NAN, |r| num(&r[1]));
    let want = (0.88 - 0.12) / (1.0 - 0.12);
    let pass = (lib - 0.8636).abs() <= KAPPA_TOL
        && (lib - want).abs() < 1e-12
        && (cli - lib).abs() < 1e-6
        && format!("{lib:.2}") == "0.86";
    Ok(Outcome {
        pass,
        detail: format!("library {lib:.6}, cli {cli:.6}"),
        report: format!("{lib:?}\n{report}"),
    })
}

fn ratios(_: &mut Ctx) -> Result<Outcome, String> {
    let table: [(Category, usize, usize, f64); 5] = [
        (Category::A, 251, 632, 0.40),
        (Category::I, 37, 43, 0.86),
        (Category::P, 499, 974, 0.51),
        (Category::W, 32, 230, 0.14),
        (Category::S, 741, 1873, 0.40),
    ];
    let mut text = String::new();
    for (cat, pos, neg, _) in table {
        for i in 0..pos + neg {
            let sym = if i < pos { "+" } else { "-" };
            text.push_str(&format!(
                "{{\"id\":\"{cat}{i}\",\"ts\":\"2009-11-20T12:00:00Z\",\"text\":\"message {i}\",\"labels\":{{\"{cat}\":\"{sym}\"}}}}\n"
            ));
        }
    }
    let corpus = parse_corpus(&text, CorpusFormat::Jsonl).map_err(|e| e.to_string())?;
    let stats = class_stats(&corpus).map_err(|e| e.to_string())?;
    let mut pass = true;
    let mut detail = Vec::new();
    for (cat, _, _, want) in table {
        let got = stats.get(cat).and_then(|s| s.pn_ratio).unwrap_or(f64::NAN);
        pass &= (got - want).abs() <= RATIO_TOL;
        detail.push(format!("{cat} {got:.3}"));
    }
    Ok(Outcome {
        pass,
        detail: detail.join(", "),
        report: stats.to_tsv(),
    })
}

fn stage1_filter(ctx: &mut Ctx) -> Result<Outcome, String> {
    let report = ctx.cli(&["filter", "--corpus", path(&data("example_messages.jsonl"))])?;
    let kept = parse_corpus(&report, CorpusFormat::Jsonl).map_err(|e| e.to_string())?;
    let ids: Vec<&str> = kept.iter().map(|m| m.message.id.as_str()).collect();
    let pass = ids.len() == 15 && !ids.contains(&"e11");
    Ok(Outcome {
        pass,
        detail: format!("{} of 16 kept, e11 {}", ids.len(), if ids.contains(&"e11") { "kept" } else { "dropped" }),
        report,
    })
}

fn demo_rule(_: &mut Ctx) -> Result<Outcome, String> {
    let text = std::fs::read_to_string(data("example_messages.jsonl")).map_err(|e| e.to_string())?;
    let corpus = parse_corpus(&text, CorpusFormat::Jsonl).map_err(|e| e.to_string())?;
    let book = demo_rulebook();
    let rule = book.rules().iter().find(|r| r.name == "P_VACCINE").ok_or("no P_VACCINE rule")?;
    let hits: BTreeMap<String, bool> = corpus
        .into_iter()
        .map(|m| {
            let m = m.message.tokenized();
            (m.id.clone(), match_rule(rule, &m.tokens, &book))
        })
        .collect();
    let want = [("e6", true), ("e13", true), ("e2", false), ("e3", false)];
    let pass = want.iter().all(|(id, w)| hits.get(*id) == Some(w));
    let matched: Vec<&str> = hits.iter().filter(|(_, &h)| h).map(|(id, _)| id.as_str()).collect();
    Ok(Outcome {
        pass,
        detail: format!("matches {}", matched.join(" ")),
        report: format!("{hits:?}"),
    })
}

fn rat(n: usize, d: usize) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn to_f64(r: &BigRational) -> f64 {
    let n: i64 = r.numer().try_into().expect("small numerator");
    let d: i64 = r.denom().try_into().expect("small denominator");
    n as f64 / d as f64
}

/// Random small binary datasets with both classes present.
fn random_rows(rng: &mut ChaCha8Rng, d: usize, n_lo: usize, n_hi: usize) -> Vec<(Vec<bool>, bool)> {
    loop {
        let n = rng.random_range(n_lo..=n_hi);
        let rows: Vec<(Vec<bool>, bool)> =
            (0..n).map(|_| ((0..d).map(|_| rng.random_bool(0.5)).collect(), rng.random_bool(0.5))).collect();
        if rows.iter().any(|r| r.1) && rows.iter().any(|r| !r.1) {
            return rows;
        }
    }
}

fn to_dataset(rows: &[(Vec<bool>, bool)], d: usize) -> Result<Dataset, String> {
    let vectors = rows
        .iter()
        .map(|(bits, _)| FeatureVector::from_indices((0..d).filter(|&f| bits[f]), d))
        .collect();
    let labels = rows.iter().map(|(_, c)| Polarity::from_bool(*c)).collect();
    Dataset::new(vectors, labels, Category::S).map_err(|e| e.to_string())
}

/// Posterior of the positive class by enumerating every pattern exactly;
/// also checks that each class's likelihoods sum to one.
fn exact_posteriors(rows: &[(Vec<bool>, bool)], d: usize) -> Result<Vec<BigRational>, String> {
    let n = rows.len();
    let n_pos = rows.iter().filter(|r| r.1).count();
    let likelihood = |class: bool, pattern: &[bool]| {
        let members: Vec<&Vec<bool>> = rows.iter().filter(|r| r.1 == class).map(|r| &r.0).collect();
        let mut p = BigRational::one();
        for (f, &bit) in pattern.iter().enumerate() {
            let p1 = rat(members.iter().filter(|v| v[f]).count() + 1, members.len() + 2);
            p *= if bit { p1 } else { BigRational::one() - p1 };
        }
        p
    };
    let (mut sum_pos, mut sum_neg) = (BigRational::zero(), BigRational::zero());
    let mut out = Vec::new();
    for mask in 0..(1u32 << d) {
        let pattern: Vec<bool> = (0..d).map(|f| mask & (1 << f) != 0).collect();
        let (lp, ln) = (likelihood(true, &pattern), likelihood(false, &pattern));
        sum_pos += lp.clone();
        sum_neg += ln.clone();
        let jp = rat(n_pos, n) * lp;
        let jn = rat(n - n_pos, n) * ln;
        out.push(&jp / (&jp + &jn));
    }
    if sum_pos != BigRational::one() || sum_neg != BigRational::one() {
        return Err("likelihoods do not sum to one".into());
    }
    Ok(out)
}

fn nb_enumeration(report: &mut String) -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut mispredicted = 0;
    let mut cases = 0;
    for _ in 0..60 {
        for d in 1..=3 {
            let rows = random_rows(&mut rng, d, 2, 13);
            let model = train_nb(&to_dataset(&rows, d)?).map_err(|e| e.to_string())?;
            for (mask, exact) in exact_posteriors(&rows, d)?.iter().enumerate() {
                let v = FeatureVector::from_indices((0..d).filter(|&f| mask & (1 << f) != 0), d);
                let got = model.posterior_positive(&v).map_err(|e| e.to_string())?;
                worst = worst.max((got - to_f64(exact)).abs());
                let half = rat(1, 2);
                let (pred, score) = predict_nb(&model, &v).map_err(|e| e.to_string())?;
                let agrees = if *exact == half { score.abs() < 1e-12 } else { pred.is_positive() == (*exact > half) };
                mispredicted += usize::from(!agrees);
                report.push_str(&format!("{got:?}\n"));
                cases += 1;
            }
        }
    }
    Ok((
        worst < 1e-12 && mispredicted == 0,
        format!("NB {cases} patterns, max |diff| {worst:.1e}, {mispredicted} wrong decisions"),
    ))
}

fn svm_end_state(report: &mut String) -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gammas = [0.01, 0.1, 0.5, 1.0];
    let mut problems: Vec<(Dataset, f64, f64)> = Vec::new();
    for _ in 0..40 {
        let d = rng.random_range(2..8);
        let rows = random_rows(&mut rng, d, 4, 30);
        let c = DEFAULT_C_GRID[rng.random_range(0..DEFAULT_C_GRID.len())];
        let g = gammas[rng.random_range(0..gammas.len())];
        problems.push((to_dataset(&rows, d)?, c, g));
    }
    let text = std::fs::read_to_string(data("synthetic_separable.jsonl")).map_err(|e| e.to_string())?;
    let corpus = parse_corpus(&text, CorpusFormat::Jsonl).map_err(|e| e.to_string())?;
    let book = RuleBook::default();
    for cat in Category::ALL {
        let (msgs, labels) = category_examples(&corpus, cat);
        let vocab = build_vocab(&msgs, FeatureConfig::UNI, &book).map_err(|e| e.to_string())?;
        let vectors = msgs.iter().map(|m| vectorize(m, &vocab, &book)).collect();
        let data = Dataset::new(vectors, labels, cat).map_err(|e| e.to_string())?;
        problems.push((data, num(SVM_C), num(SVM_GAMMA)));
    }
    let (mut bounds, mut residual, mut kkt, mut unconverged) = (0, 0.0f64, 0.0f64, 0);
    for (i, (data, c, g)) in problems.iter().enumerate() {
        let t = train_svm_with(data, &SvmParams::new(*c, *g), i as u64).map_err(|e| e.to_string())?;
        bounds += t.alphas.iter().filter(|&&a| !(0.0..=*c).contains(&a)).count();
        residual = residual.max(t.equality_residual().abs());
        kkt = kkt.max(t.max_kkt_violation);
        unconverged += usize::from(!t.converged);
        report.push_str(&format!("{:?}\n", t.alphas));
    }
    Ok((
        bounds == 0 && residual < 1e-9 && kkt < 1e-3 && unconverged == 0,
        format!(
            "SVM {} problems, {bounds} alphas out of bounds, max residual {residual:.1e}, max KKT {kkt:.1e}",
            problems.len()
        ),
    ))
}

fn cv_f1(ctx: &mut Ctx, report: &mut String) -> Result<(bool, String), String> {
    let corpus = data("synthetic_separable.jsonl");
    let folds: Vec<String> = Category::ALL.iter().map(|c| format!("{c}=10")).collect();
    let mut base = vec!["cv", "--corpus", path(&corpus), "--features", "UNI+BI+SRL"];
    for f in &folds {
        base.extend(["--folds", f.as_str()]);
    }
    let mut pass = true;
    let mut detail = Vec::new();
    for extra in [&["--classifier", "nb"][..], &["--classifier", "svm", "--svm-c", SVM_C, "--svm-gamma", SVM_GAMMA]] {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        let out = ctx.cli(&args)?;
        let rows = tsv_rows(&out, 2);
        let f1s: Vec<f64> = Category::ALL
            .iter()
            .map(|c| rows.get(&format!("{c}\tUNI+BI+SRL")).map_or(f64::NAN, |r| num(&r[2])))
            .collect();
        let min = f1s.iter().copied().fold(f64::INFINITY, f64::min);
        pass &= f1s.iter().all(|&f| f >= F1_FLOOR);
        detail.push(format!("{} min F1 {min:.4}", extra[1]));
        report.push_str(&out);
    }
    Ok((pass, detail.join(", ")))
}

fn undersampling_recall(ctx: &mut Ctx, report: &mut String) -> Result<(bool, String), String> {
    let corpus = data("synthetic_imbalanced.jsonl");
    let mut pass = true;
    let mut detail = Vec::new();
    for clf in [&["--classifier", "nb"][..], &["--classifier", "svm", "--svm-c", SVM_C, "--svm-gamma", SVM_GAMMA]] {
        let mut held = 0;
        for seed in SEEDS {
            let seed = seed.to_string();
            let mut recall = [0.0; 2];
            for (slot, under) in [(0, false), (1, true)] {
                let mut args = vec!["cv", "--corpus", path(&corpus), "--features", "UNI+BI+SRL", "--seed", &seed];
                args.extend_from_slice(clf);
                if under {
                    args.push("--undersample");
                }
                let out = ctx.cli(&args)?;
                recall[slot] = tsv_rows(&out, 2).get("S\tUNI+BI+SRL").map_or(f64::NAN, |r| num(&r[1]));
                report.push_str(&out);
            }
            held += usize::from(recall[1] >= recall[0]);
        }
        pass &= held >= 4;
        detail.push(format!("{} recall held in {held}/5 seeds", clf[1]));
    }
    Ok((pass, detail.join(", ")))
}

fn classifier_properties(ctx: &mut Ctx) -> Result<Outcome, String> {
    let start = Instant::now();
    let mut report = String::new();
    let parts = [
        nb_enumeration(&mut report)?,
        svm_end_state(&mut report)?,
        cv_f1(ctx, &mut report)?,
        undersampling_recall(ctx, &mut report)?,
    ];
    let elapsed = start.elapsed();
    let pass = parts.iter().all(|p| p.0) && elapsed < Duration::from_secs(60);
    let detail = parts
        .iter()
        .zip(["a", "b", "c", "d"])
        .map(|((ok, d), tag)| format!("({tag}) {} {d}", if *ok { "ok" } else { "FAIL" }))
        .chain(std::iter::once(format!("{:.1} s", elapsed.as_secs_f64())))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(Outcome { pass, detail, report })
}

type Criterion = fn(&mut Ctx) -> Result<Outcome, String>;

const CRITERIA: [(&str, Criterion); 7] = [
    ("weekly rho reproduction", rho_reproduction),
    ("weekly p-value reproduction", p_reproduction),
    ("kappa from given agreement", kappa),
    ("class ratio column", ratios),
    ("keyword filter on the example messages", stage1_filter),
    ("demo vaccine rule", demo_rule),
    ("classifier properties", classifier_properties),
];

fn run_all(ctx: &mut Ctx) -> Vec<Outcome> {
    CRITERIA
        .iter()
        .map(|(_, f)| {
            f(ctx).unwrap_or_else(|e| Outcome {
                pass: false,
                detail: format!("error: {e}"),
                report: String::new(),
            })
        })
        .collect()
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture or a name filter are accepted and ignored
    let mut ctx = Ctx {
        dir: tempfile::tempdir().expect("scratch dir"),
        runs: 0,
    };
    let start = Instant::now();
    let first = run_all(&mut ctx);
    let second = run_all(&mut ctx);

    let mut all_pass = true;
    for (i, ((name, _), o)) in CRITERIA.iter().zip(&first).enumerate() {
        all_pass &= o.pass;
        println!("criterion {}: {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let differing: Vec<String> = first
        .iter()
        .zip(&second)
        .enumerate()
        .filter(|(_, (a, b))| a.report != b.report || a.report.is_empty())
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    let deterministic = differing.is_empty();
    all_pass &= deterministic;
    println!(
        "criterion 8: {} rerun byte-identical: {}",
        if deterministic { "PASS" } else { "FAIL" },
        if deterministic { "all reports match".to_string() } else { format!("criteria {} differ", differing.join(",")) }
    );
    println!("acceptance suite: {:.1} s", start.elapsed().as_secs_f64());
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
