//! Weekly aggregation of positive messages and rank correlation against
//! laboratory case counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Days, NaiveDate, Utc};
use thiserror::Error;

use crate::corpus::{AnnotatedMessage, Category};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurveillanceError {
    #[error("bad epi-week {0:?} (expected YYYY-WW)")]
    BadWeek(String),
    #[error("line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("weeks must be strictly increasing: {prev} then {next}")]
    UnorderedWeeks { prev: EpiWeek, next: EpiWeek },
    #[error("category {0} is not present in the series")]
    UnknownCategory(Category),
    #[error("series has no baseline counts")]
    NoBaseline,
    #[error("need at least 3 paired weeks, found {0}")]
    TooFewPoints(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("rank correlation undefined for a constant sequence")]
    ConstantSequence,
    #[error("rho must lie in [-1, 1], got {0}")]
    RhoOutOfRange(f64),
    #[error("empty category set")]
    EmptyCategorySet,
}

/// MMWR epidemiological week: Sunday to Saturday, week 1 being the first
/// week with at least four days in the calendar year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EpiWeek {
    pub year: i32,
    pub week: u32,
}

fn week_start(date: NaiveDate) -> NaiveDate {
    date - Days::new(u64::from(date.weekday().num_days_from_sunday()))
}

fn first_week_start(year: i32) -> NaiveDate {
    week_start(NaiveDate::from_ymd_opt(year, 1, 4).expect("valid date"))
}

impl EpiWeek {
    pub fn new(year: i32, week: u32) -> Option<EpiWeek> {
        let w = EpiWeek { year, week };
        (week >= 1 && NaiveDate::from_ymd_opt(year, 1, 4).is_some() && EpiWeek::from_date(w.start_date()) == w)
            .then_some(w)
    }

    pub fn from_date(date: NaiveDate) -> EpiWeek {
        let start = week_start(date);
        let year = (start + Days::new(3)).year();
        let week = ((start - first_week_start(year)).num_days() / 7 + 1) as u32;
        EpiWeek { year, week }
    }

    pub fn from_timestamp(ts: &DateTime<Utc>) -> EpiWeek {
        EpiWeek::from_date(ts.date_naive())
    }

    /// The Sunday the week starts on.
    pub fn start_date(&self) -> NaiveDate {
        first_week_start(self.year) + Days::new(7 * u64::from(self.week.saturating_sub(1)))
    }

    pub fn next(&self) -> EpiWeek {
        EpiWeek::from_date(self.start_date() + Days::new(7))
    }
}

impl fmt::Display for EpiWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.week)
    }
}

impl FromStr for EpiWeek {
    type Err = SurveillanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SurveillanceError::BadWeek(s.to_string());
        let (y, w) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || w.is_empty() || w.len() > 2 {
            return Err(bad());
        }
        let year: i32 = y.parse().map_err(|_| bad())?;
        let week: u32 = w.parse().map_err(|_| bad())?;
        EpiWeek::new(year, week).ok_or_else(bad)
    }
}

/// Per-week counts per category, with optional laboratory baseline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeeklySeries {
    weeks: Vec<EpiWeek>,
    counts: BTreeMap<Category, Vec<u64>>,
    baseline: Option<Vec<Option<u64>>>,
}

impl WeeklySeries {
    pub fn new(weeks: Vec<EpiWeek>, counts: BTreeMap<Category, Vec<u64>>) -> Result<WeeklySeries, SurveillanceError> {
        for w in weeks.windows(2) {
            if w[0] >= w[1] {
                return Err(SurveillanceError::UnorderedWeeks { prev: w[0], next: w[1] });
            }
        }
        if let Some(v) = counts.values().find(|v| v.len() != weeks.len()) {
            return Err(SurveillanceError::LengthMismatch(v.len(), weeks.len()));
        }
        Ok(WeeklySeries {
            weeks,
            counts,
            baseline: None,
        })
    }

    pub fn weeks(&self) -> &[EpiWeek] {
        &self.weeks
    }

    pub fn counts(&self, cat: Category) -> Option<&[u64]> {
        self.counts.get(&cat).map(Vec::as_slice)
    }

    pub fn categories(&self) -> impl Iterator<Item = Category> + '_ {
        self.counts.keys().copied()
    }

    pub fn baseline(&self) -> Option<&[Option<u64>]> {
        self.baseline.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }

    /// Attaches baseline counts; weeks missing from `baseline` stay unpaired.
    pub fn with_baseline(mut self, baseline: &BTreeMap<EpiWeek, u64>) -> WeeklySeries {
        self.baseline = Some(self.weeks.iter().map(|w| baseline.get(w).copied()).collect());
        self
    }

    /// `week,A,I,P,W,S` with one row per week.
    pub fn to_csv(&self) -> String {
        let cats: Vec<Category> = self.counts.keys().copied().collect();
        let mut out = String::from("week");
        for c in &cats {
            out.push(',');
            out.push(c.letter());
        }
        out.push('\n');
        for (i, w) in self.weeks.iter().enumerate() {
            out.push_str(&w.to_string());
            for c in &cats {
                out.push_str(&format!(",{}", self.counts[c][i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Running per-week counts; memory grows with the number of weeks seen,
/// not the number of messages.
#[derive(Debug, Clone, Default)]
pub struct WeeklyCounter {
    by_week: BTreeMap<EpiWeek, BTreeMap<Category, u64>>,
}

impl WeeklyCounter {
    pub fn new() -> WeeklyCounter {
        WeeklyCounter::default()
    }

    /// Counts one message once for each distinct category in `cats`.
    pub fn add(&mut self, ts: &DateTime<Utc>, cats: &[Category]) {
        let slot = self.by_week.entry(EpiWeek::from_timestamp(ts)).or_default();
        for c in cats.iter().collect::<BTreeSet<_>>() {
            *slot.entry(*c).or_default() += 1;
        }
    }

    pub fn add_labeled(&mut self, msg: &AnnotatedMessage) {
        self.add(&msg.message.timestamp, &msg.positive_categories());
    }

    /// The series over every week from the first to the last seen, zeros included.
    pub fn finish(self) -> WeeklySeries {
        let by_week = self.by_week;
        let (Some(&first), Some(&last)) = (by_week.keys().next(), by_week.keys().next_back()) else {
            return WeeklySeries::default();
        };
        let mut weeks = vec![first];
        while *weeks.last().expect("non-empty") < last {
            let next = weeks.last().expect("non-empty").next();
            weeks.push(next);
        }
        let counts = Category::ALL
            .iter()
            .map(|&c| {
                let col = weeks
                    .iter()
                    .map(|w| by_week.get(w).and_then(|m| m.get(&c)).copied().unwrap_or(0))
                    .collect();
                (c, col)
            })
            .collect();
        WeeklySeries::new(weeks, counts).expect("weeks are generated in order")
    }
}

/// Buckets each message into its MMWR week and increments every category it
/// is positive for. Weeks without messages inside the covered range get zeros.
pub fn aggregate_weekly(items: &[(DateTime<Utc>, Vec<Category>)]) -> WeeklySeries {
    let mut counter = WeeklyCounter::new();
    for (ts, cats) in items {
        counter.add(ts, cats);
    }
    counter.finish()
}

/// Aggregates the positive labels of (predicted) annotated messages.
pub fn aggregate_labeled(msgs: &[AnnotatedMessage]) -> WeeklySeries {
    let mut counter = WeeklyCounter::new();
    msgs.iter().for_each(|m| counter.add_labeled(m));
    counter.finish()
}

/// Element-wise sum of the named categories.
pub fn combine(series: &WeeklySeries, cats: &[Category]) -> Result<Vec<u64>, SurveillanceError> {
    if cats.is_empty() {
        return Err(SurveillanceError::EmptyCategorySet);
    }
    let mut out = vec![0u64; series.weeks.len()];
    for c in cats {
        let col = series.counts(*c).ok_or(SurveillanceError::UnknownCategory(*c))?;
        for (o, v) in out.iter_mut().zip(col) {
            *o += v;
        }
    }
    Ok(out)
}

/// 1-based ranks with ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// How rho is computed from average ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankMethod {
    /// Pearson correlation of the rank sequences; exact under ties.
    Pearson,
    /// 1 - 6 * sum(d^2) / (n (n^2 - 1)) on average ranks. Identical without
    /// ties, slightly off with them. The reference weekly correlations in
    /// `data/` were computed this way, so [`correlate`] uses it.
    #[default]
    SquaredDifference,
}

impl fmt::Display for RankMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankMethod::Pearson => "pearson",
            RankMethod::SquaredDifference => "squared-difference",
        })
    }
}

impl FromStr for RankMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pearson" => Ok(RankMethod::Pearson),
            "squared-difference" => Ok(RankMethod::SquaredDifference),
            other => Err(format!("unknown rank method {other:?} (expected pearson or squared-difference)")),
        }
    }
}

/// Spearman's rho: Pearson correlation of the average-rank sequences.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, SurveillanceError> {
    spearman_rho_with(x, y, RankMethod::Pearson)
}

pub fn spearman_rho_with(x: &[f64], y: &[f64], method: RankMethod) -> Result<f64, SurveillanceError> {
    if x.len() != y.len() {
        return Err(SurveillanceError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(SurveillanceError::TooFewPoints(x.len()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let rho = pearson(&rx, &ry).ok_or(SurveillanceError::ConstantSequence)?;
    Ok(match method {
        RankMethod::Pearson => rho,
        RankMethod::SquaredDifference => {
            let n = x.len() as f64;
            let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
            (1.0 - 6.0 * d2 / (n * (n * n - 1.0))).clamp(-1.0, 1.0)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PValue {
    pub p: f64,
    /// Set when |rho| = 1 and the reported p is only a floor.
    pub saturated: bool,
}

/// Two-tailed p-value of rho under the t approximation with n - 2 degrees of
/// freedom: t = rho * sqrt((n - 2) / (1 - rho^2)), and
/// P(|T| >= |t|) = I_{df / (df + t^2)}(df / 2, 1 / 2) = I_{1 - rho^2}(df / 2, 1 / 2).
pub fn spearman_pvalue(rho: f64, n: usize) -> Result<PValue, SurveillanceError> {
    if n < 3 {
        return Err(SurveillanceError::TooFewPoints(n));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(SurveillanceError::RhoOutOfRange(rho));
    }
    if rho.abs() == 1.0 {
        return Ok(PValue {
            p: f64::MIN_POSITIVE,
            saturated: true,
        });
    }
    let df = (n - 2) as f64;
    let p = statrs::function::beta::beta_reg(df / 2.0, 0.5, 1.0 - rho * rho);
    Ok(PValue {
        p: p.clamp(f64::MIN_POSITIVE, 1.0),
        saturated: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub series_label: String,
    /// `None` when either paired sequence is constant.
    pub rho: Option<f64>,
    pub p_value: Option<PValue>,
    pub n: usize,
}

pub fn category_set_label(cats: &[Category]) -> String {
    cats.iter().map(|c| c.letter().to_string()).collect::<Vec<_>>().join("+")
}

/// Parses `A+I+P` style labels.
pub fn parse_category_set(s: &str) -> Result<Vec<Category>, String> {
    let cats: Vec<Category> = s.split('+').map(str::parse).collect::<Result<_, _>>()?;
    if cats.is_empty() {
        return Err("empty category set".into());
    }
    Ok(cats)
}

/// One result per category set, pairing combined counts with the baseline
/// week by week; weeks without a baseline value are dropped. Uses
/// [`RankMethod::SquaredDifference`]; see [`correlate_with`] for the tie-exact form.
pub fn correlate(series: &WeeklySeries, cat_sets: &[Vec<Category>]) -> Result<Vec<CorrelationResult>, SurveillanceError> {
    correlate_with(series, cat_sets, RankMethod::default())
}

pub fn correlate_with(
    series: &WeeklySeries,
    cat_sets: &[Vec<Category>],
    method: RankMethod,
) -> Result<Vec<CorrelationResult>, SurveillanceError> {
    let baseline = series.baseline.as_ref().ok_or(SurveillanceError::NoBaseline)?;
    let mut out = Vec::with_capacity(cat_sets.len());
    for set in cat_sets {
        let combined = combine(series, set)?;
        let (xs, ys): (Vec<f64>, Vec<f64>) = combined
            .iter()
            .zip(baseline)
            .filter_map(|(&c, b)| b.map(|b| (c as f64, b as f64)))
            .unzip();
        let n = xs.len();
        let rho = match spearman_rho_with(&xs, &ys, method) {
            Ok(r) => Some(r),
            Err(SurveillanceError::ConstantSequence) => None,
            Err(e) => return Err(e),
        };
        let p_value = rho.map(|r| spearman_pvalue(r, n)).transpose()?;
        out.push(CorrelationResult {
            series_label: category_set_label(set),
            rho,
            p_value,
            n,
        });
    }
    Ok(out)
}

/// `label<TAB>rho<TAB>p<TAB>n`, `NA` for undefined values and `<` marking a saturated p.
pub fn correlation_report(results: &[CorrelationResult]) -> String {
    let mut out = String::from("label\trho\tp\tn\n");
    for r in results {
        let rho = r.rho.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        let p = match r.p_value {
            None => "NA".to_string(),
            Some(PValue { p, saturated: true }) => format!("<{p:e}"),
            Some(PValue { p, .. }) => format!("{p:.6}"),
        };
        out.push_str(&format!("{}\t{rho}\t{p}\t{}\n", r.series_label, r.n));
    }
    out
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn csv_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn csv_err(e: csv::Error) -> SurveillanceError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    SurveillanceError::Csv {
        line,
        reason: e.to_string(),
    }
}

fn parse_count(rec: &csv::StringRecord, field: &str) -> Result<u64, SurveillanceError> {
    field.parse().map_err(|_| SurveillanceError::Csv {
        line: csv_line(rec),
        reason: format!("bad count {field:?}"),
    })
}

/// Reads a `week,count` baseline file.
pub fn parse_baseline_csv(text: &str) -> Result<BTreeMap<EpiWeek, u64>, SurveillanceError> {
    let mut rdr = csv_reader(text);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["week", "count"] {
        return Err(SurveillanceError::Csv {
            line: 1,
            reason: format!("expected header week,count, found {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let week: EpiWeek = rec[0].parse()?;
        let count = parse_count(&rec, &rec[1])?;
        if out.insert(week, count).is_some() {
            return Err(SurveillanceError::Csv {
                line: csv_line(&rec),
                reason: format!("duplicate week {week}"),
            });
        }
    }
    Ok(out)
}

pub fn baseline_to_csv(baseline: &BTreeMap<EpiWeek, u64>) -> String {
    let mut out = String::from("week,count\n");
    for (w, c) in baseline {
        out.push_str(&format!("{w},{c}\n"));
    }
    out
}

/// Reads a `week,<categories...>` counts file.
pub fn parse_counts_csv(text: &str) -> Result<WeeklySeries, SurveillanceError> {
    let mut rdr = csv_reader(text);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let header_err = |reason: String| SurveillanceError::Csv { line: 1, reason };
    if headers.get(0) != Some("week") {
        return Err(header_err("first column must be 'week'".into()));
    }
    let mut cats = Vec::new();
    for h in headers.iter().skip(1) {
        let c: Category = h.parse().map_err(header_err)?;
        if cats.contains(&c) {
            return Err(header_err(format!("duplicate column {c}")));
        }
        cats.push(c);
    }
    let mut weeks = Vec::new();
    let mut cols: Vec<Vec<u64>> = vec![Vec::new(); cats.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        weeks.push(rec[0].parse::<EpiWeek>()?);
        for (col, field) in cols.iter_mut().zip(rec.iter().skip(1)) {
            col.push(parse_count(&rec, field)?);
        }
    }
    WeeklySeries::new(weeks, cats.into_iter().zip(cols).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn mmwr_weeks() {
        // 2009-11-21 is a Saturday ending MMWR week 46
        let d = NaiveDate::from_ymd_opt(2009, 11, 21).unwrap();
        assert_eq!(EpiWeek::from_date(d), EpiWeek { year: 2009, week: 46 });
        assert_eq!(EpiWeek::from_date(d + Days::new(1)), EpiWeek { year: 2009, week: 47 });
        // 2010-01-02 (Saturday) closes 2009 week 52
        let d = NaiveDate::from_ymd_opt(2010, 1, 2).unwrap();
        assert_eq!(EpiWeek::from_date(d), EpiWeek { year: 2009, week: 52 });
        assert_eq!(EpiWeek::from_date(d + Days::new(1)), EpiWeek { year: 2010, week: 1 });
        // Dec 28 2014 - Jan 3 2015 has only three days in 2015
        let d = NaiveDate::from_ymd_opt(2014, 12, 28).unwrap();
        assert_eq!(EpiWeek::from_date(d), EpiWeek { year: 2014, week: 53 });
        // Dec 30 2012 - Jan 5 2013 has five days in 2013
        let d = NaiveDate::from_ymd_opt(2012, 12, 30).unwrap();
        assert_eq!(EpiWeek::from_date(d), EpiWeek { year: 2013, week: 1 });
    }

    #[test]
    fn week_parse_and_next() {
        let w: EpiWeek = "2009-52".parse().unwrap();
        assert_eq!(w.next().to_string(), "2010-01");
        let w: EpiWeek = "2008-52".parse().unwrap();
        assert_eq!(w.next().to_string(), "2008-53");
        assert_eq!(w.next().next().to_string(), "2009-01");
        assert!("2009-53".parse::<EpiWeek>().is_err());
        assert!("2010-53".parse::<EpiWeek>().is_err());
        assert!("2010-00".parse::<EpiWeek>().is_err());
        assert!("10-1".parse::<EpiWeek>().is_err());
    }

    fn at(y: i32, m: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap()
    }

    #[test]
    fn aggregate_same_week() {
        let s = aggregate_weekly(&[(at(2010, 3, 1), vec![Category::P]), (at(2010, 3, 2), vec![Category::P])]);
        assert_eq!(s.weeks().len(), 1);
        assert_eq!(s.counts(Category::P).unwrap(), &[2]);
        assert_eq!(s.counts(Category::A).unwrap(), &[0]);
    }

    #[test]
    fn aggregate_multi_label_and_gaps() {
        let s = aggregate_weekly(&[
            (at(2010, 3, 1), vec![Category::A, Category::S]),
            (at(2010, 3, 22), vec![Category::S, Category::S]),
        ]);
        assert_eq!(s.weeks().len(), 4);
        assert_eq!(s.counts(Category::A).unwrap(), &[1, 0, 0, 0]);
        assert_eq!(s.counts(Category::S).unwrap(), &[1, 0, 0, 1]);
    }

    #[test]
    fn aggregate_empty() {
        assert!(aggregate_weekly(&[]).is_empty());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn perfect_monotone() {
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap(), -1.0);
    }

    #[test]
    fn rho_errors() {
        assert_eq!(spearman_rho(&[1.0, 2.0], &[1.0, 2.0]), Err(SurveillanceError::TooFewPoints(2)));
        assert_eq!(
            spearman_rho(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(SurveillanceError::LengthMismatch(3, 2))
        );
        assert_eq!(
            spearman_rho(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(SurveillanceError::ConstantSequence)
        );
    }

    #[test]
    fn pvalue_edges() {
        assert_eq!(spearman_pvalue(0.0, 12).unwrap().p, 1.0);
        let sat = spearman_pvalue(1.0, 12).unwrap();
        assert!(sat.saturated && sat.p > 0.0);
        assert!(spearman_pvalue(1.5, 12).is_err());
    }

    #[test]
    fn pvalue_matches_student_t_tail() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        for &(rho, n) in &[(0.657, 12usize), (0.3, 20), (-0.45, 8)] {
            let df = (n - 2) as f64;
            let t = rho * (df / (1.0 - rho * rho)).sqrt();
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            let p = 2.0 * (1.0 - dist.cdf(t.abs()));
            assert!((spearman_pvalue(rho, n).unwrap().p - p).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_formats() {
        let s = parse_counts_csv("week,A,I,P,W,S\n2009-46,49,22,222,0,48\n2009-47,32,30,258,0,72\n").unwrap();
        assert_eq!(s.counts(Category::P).unwrap(), &[222, 258]);
        assert_eq!(parse_counts_csv(&s.to_csv()).unwrap(), s);
        assert!(matches!(
            parse_counts_csv("week,A\n2009-47,1\n2009-46,2\n"),
            Err(SurveillanceError::UnorderedWeeks { .. })
        ));
        assert!(parse_counts_csv("wk,A\n").is_err());
        assert!(parse_counts_csv("week,A\n2009-47,x\n").is_err());
        let b = parse_baseline_csv("# lab positives\nweek,count\n2009-46,2715\n").unwrap();
        assert_eq!(b[&EpiWeek { year: 2009, week: 46 }], 2715);
        assert_eq!(parse_baseline_csv(&baseline_to_csv(&b)).unwrap(), b);
        assert!(parse_baseline_csv("week,count\n2009-46,1\n2009-46,2\n").is_err());
    }

    #[test]
    fn combine_and_correlate_errors() {
        let s = parse_counts_csv("week,A,S\n2009-46,1,2\n2009-47,2,3\n2009-48,4,1\n").unwrap();
        assert_eq!(combine(&s, &[Category::A, Category::S]).unwrap(), vec![3, 5, 5]);
        assert_eq!(combine(&s, &[Category::A]).unwrap(), vec![1, 2, 4]);
        assert_eq!(combine(&s, &[Category::P]), Err(SurveillanceError::UnknownCategory(Category::P)));
        assert_eq!(correlate(&s, &[vec![Category::A]]), Err(SurveillanceError::NoBaseline));
        let one_week: BTreeMap<EpiWeek, u64> = [("2009-46".parse().unwrap(), 10)].into();
        assert_eq!(
            correlate(&s.clone().with_baseline(&one_week), &[vec![Category::A]]),
            Err(SurveillanceError::TooFewPoints(1))
        );
    }

    #[test]
    fn correlate_identity_baseline() {
        let s = parse_counts_csv("week,A,W\n2009-46,5,0\n2009-47,9,0\n2009-48,2,0\n2009-49,7,0\n").unwrap();
        let base: BTreeMap<EpiWeek, u64> = s.weeks().iter().copied().zip([5, 9, 2, 7]).collect();
        let r = correlate(&s.with_baseline(&base), &[vec![Category::A], vec![Category::W]]).unwrap();
        assert_eq!(r[0].rho, Some(1.0));
        assert_eq!(r[0].n, 4);
        assert!(r[0].p_value.unwrap().saturated);
        assert_eq!(r[1].rho, None);
        let report = correlation_report(&r);
        assert!(report.contains("W\tNA\tNA\t4"));
    }
}
