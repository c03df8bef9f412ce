//! Message and annotation model, corpus ingestion, deduplication and
//! per-category corpus statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Soft length limit of a micro-blog post. Longer texts are accepted with a warning.
pub const SOFT_TEXT_LIMIT: usize = 140;

/// Self-protective behaviour and self-diagnosis categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    /// Avoidance behaviour.
    A,
    /// Increased sanitation.
    I,
    /// Seeking pharmaceutical intervention.
    P,
    /// Wearing a mask.
    W,
    /// Self-reported diagnosis.
    S,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::A, Category::I, Category::P, Category::W, Category::S];

    pub fn letter(self) -> char {
        match self {
            Category::A => 'A',
            Category::I => 'I',
            Category::P => 'P',
            Category::W => 'W',
            Category::S => 'S',
        }
    }

    pub fn from_letter(c: char) -> Option<Category> {
        match c {
            'A' => Some(Category::A),
            'I' => Some(Category::I),
            'P' => Some(Category::P),
            'W' => Some(Category::W),
            'S' => Some(Category::S),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Category::from_letter(c).ok_or_else(|| format!("unknown category {s:?}")),
            _ => Err(format!("unknown category {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn is_positive(self) -> bool {
        self == Polarity::Positive
    }

    pub fn from_bool(positive: bool) -> Polarity {
        if positive {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }

    pub fn flipped(self) -> Polarity {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Polarity::Positive => "+",
            Polarity::Negative => "-",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Polarity> {
        match s {
            "+" => Some(Polarity::Positive),
            "-" => Some(Polarity::Negative),
            _ => None,
        }
    }
}

/// One micro-blog post.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
    /// Normalized tokens; empty until [`Message::tokenized`] is called.
    pub tokens: Vec<String>,
}

impl Message {
    pub fn new(id: impl Into<String>, timestamp: DateTime<Utc>, text: impl Into<String>) -> Message {
        Message {
            id: id.into(),
            timestamp,
            text: text.into(),
            tokens: Vec::new(),
        }
    }

    /// Fills `tokens` from `text`.
    pub fn tokenized(mut self) -> Message {
        self.tokens = crate::features::tokenize(&self.text);
        self
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// A message together with its per-category polarity labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedMessage {
    pub message: Message,
    /// At most one polarity per category.
    pub labels: BTreeMap<Category, Polarity>,
}

impl AnnotatedMessage {
    pub fn unlabeled(message: Message) -> AnnotatedMessage {
        AnnotatedMessage {
            message,
            labels: BTreeMap::new(),
        }
    }

    pub fn label(&self, category: Category) -> Option<Polarity> {
        self.labels.get(&category).copied()
    }

    pub fn positive_categories(&self) -> Vec<Category> {
        self.labels
            .iter()
            .filter(|(_, p)| p.is_positive())
            .map(|(c, _)| *c)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

impl CorpusFormat {
    /// Guesses the format from a file name; anything not ending in `.tsv` is JSON Lines.
    pub fn from_path(path: &std::path::Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => CorpusFormat::Tsv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("message {id:?} carries no label")]
    Unlabeled { id: String },
}

fn malformed(line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        line,
        reason: reason.into(),
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    id: String,
    ts: String,
    text: String,
    #[serde(default)]
    labels: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct JsonRecordOut<'a> {
    id: &'a str,
    ts: String,
    text: &'a str,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    labels: BTreeMap<String, &'static str>,
}

fn parse_ts(line: usize, s: &str) -> Result<DateTime<Utc>, CorpusError> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| malformed(line, format!("bad timestamp {s:?}: {e}")))
}

pub fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn check_message(line: usize, msg: &Message) -> Result<(), CorpusError> {
    if msg.id.is_empty() {
        return Err(malformed(line, "empty id"));
    }
    if msg.text.trim().is_empty() {
        return Err(malformed(line, "empty text"));
    }
    let len = msg.char_len();
    if len > SOFT_TEXT_LIMIT {
        log::warn!("line {line}: message {:?} is {len} characters long", msg.id);
    }
    Ok(())
}

fn parse_jsonl_line(line_no: usize, line: &str) -> Result<AnnotatedMessage, CorpusError> {
    let rec: JsonRecord = serde_json::from_str(line).map_err(|e| malformed(line_no, e.to_string()))?;
    let timestamp = parse_ts(line_no, &rec.ts)?;
    let mut labels = BTreeMap::new();
    for (k, v) in &rec.labels {
        let cat: Category = k.parse().map_err(|e: String| malformed(line_no, e))?;
        let pol = Polarity::from_symbol(v).ok_or_else(|| malformed(line_no, format!("bad polarity {v:?} for {k}")))?;
        labels.insert(cat, pol);
    }
    Ok(AnnotatedMessage {
        message: Message::new(rec.id, timestamp, rec.text),
        labels,
    })
}

const TSV_HEADER: &str = "id\tts\ttext\tA\tI\tP\tW\tS\n";

fn unescape_tsv(line: usize, s: &str) -> Result<String, CorpusError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => return Err(malformed(line, format!("unknown escape \\{other}"))),
            None => return Err(malformed(line, "dangling backslash")),
        }
    }
    Ok(out)
}

fn escape_tsv(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn parse_tsv_line(line_no: usize, line: &str) -> Result<AnnotatedMessage, CorpusError> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < 3 {
        return Err(malformed(line_no, format!("expected at least 3 columns, found {}", cols.len())));
    }
    if cols.len() > 3 + Category::ALL.len() {
        return Err(malformed(line_no, format!("too many columns ({})", cols.len())));
    }
    let id = unescape_tsv(line_no, cols[0])?;
    let timestamp = parse_ts(line_no, cols[1])?;
    let text = unescape_tsv(line_no, cols[2])?;
    let mut labels = BTreeMap::new();
    for (cat, raw) in Category::ALL.iter().zip(cols[3..].iter()) {
        match raw.trim() {
            "" => {}
            sym => {
                let pol = Polarity::from_symbol(sym)
                    .ok_or_else(|| malformed(line_no, format!("bad polarity {sym:?} in column {cat}")))?;
                labels.insert(*cat, pol);
            }
        }
    }
    Ok(AnnotatedMessage {
        message: Message::new(id, timestamp, text),
        labels,
    })
}

/// Record-at-a-time corpus parser over any buffered reader. Blank lines and
/// lines starting with `#` are skipped; a TSV header row is accepted on the
/// first record line. Only the ids seen so far are kept, for the duplicate check.
pub struct CorpusReader<R> {
    input: R,
    format: CorpusFormat,
    line_no: usize,
    first_record: bool,
    seen: HashSet<String>,
    buf: Vec<u8>,
    failed: bool,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(input: R, format: CorpusFormat) -> CorpusReader<R> {
        CorpusReader {
            input,
            format,
            line_no: 0,
            first_record: true,
            seen: HashSet::new(),
            buf: Vec::new(),
            failed: false,
        }
    }

    fn next_record(&mut self) -> Option<Result<AnnotatedMessage, CorpusError>> {
        loop {
            self.buf.clear();
            match self.input.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(malformed(self.line_no + 1, format!("read failed: {e}")))),
            }
            self.line_no += 1;
            let line_no = self.line_no;
            let Ok(raw) = std::str::from_utf8(&self.buf) else {
                return Some(Err(malformed(line_no, "invalid UTF-8")));
            };
            let line = raw.strip_suffix('\n').unwrap_or(raw);
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            if self.first_record && self.format == CorpusFormat::Tsv && line.starts_with("id\tts\ttext") {
                self.first_record = false;
                continue;
            }
            self.first_record = false;
            let rec = match self.format {
                CorpusFormat::Jsonl => parse_jsonl_line(line_no, line),
                CorpusFormat::Tsv => parse_tsv_line(line_no, line),
            };
            let rec = rec.and_then(|rec| check_message(line_no, &rec.message).map(|_| rec));
            return Some(rec.and_then(|rec| {
                if self.seen.insert(rec.message.id.clone()) {
                    Ok(rec)
                } else {
                    Err(CorpusError::DuplicateId {
                        line: line_no,
                        id: rec.message.id,
                    })
                }
            }));
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<AnnotatedMessage, CorpusError>;

    /// Yields nothing more after the first error.
    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.next_record();
        self.failed = matches!(item, Some(Err(_)));
        item
    }
}

pub fn parse_corpus(input: &str, format: CorpusFormat) -> Result<Vec<AnnotatedMessage>, CorpusError> {
    CorpusReader::new(input.as_bytes(), format).collect()
}

/// Byte-slice entry point; invalid UTF-8 is reported against the line it occurs on.
pub fn parse_corpus_bytes(input: &[u8], format: CorpusFormat) -> Result<Vec<AnnotatedMessage>, CorpusError> {
    CorpusReader::new(input, format).collect()
}

/// What precedes the first record: the column header for TSV, nothing for JSON Lines.
pub fn corpus_header(format: CorpusFormat) -> &'static str {
    match format {
        CorpusFormat::Jsonl => "",
        CorpusFormat::Tsv => TSV_HEADER,
    }
}

/// One record, newline included.
pub fn serialize_record(m: &AnnotatedMessage, format: CorpusFormat) -> String {
    let mut out = match format {
        CorpusFormat::Jsonl => {
            let rec = JsonRecordOut {
                id: &m.message.id,
                ts: format_ts(&m.message.timestamp),
                text: &m.message.text,
                labels: m.labels.iter().map(|(c, p)| (c.to_string(), p.symbol())).collect(),
            };
            serde_json::to_string(&rec).expect("record serializes")
        }
        CorpusFormat::Tsv => {
            let mut out = String::new();
            out.push_str(&escape_tsv(&m.message.id));
            out.push('\t');
            out.push_str(&format_ts(&m.message.timestamp));
            out.push('\t');
            out.push_str(&escape_tsv(&m.message.text));
            for cat in Category::ALL {
                out.push('\t');
                if let Some(p) = m.labels.get(&cat) {
                    out.push_str(p.symbol());
                }
            }
            out
        }
    };
    out.push('\n');
    out
}

pub fn serialize_corpus(msgs: &[AnnotatedMessage], format: CorpusFormat) -> String {
    let mut out = corpus_header(format).to_string();
    for m in msgs {
        out.push_str(&serialize_record(m, format));
    }
    out
}

/// Lowercased, whitespace-collapsed text used for duplicate detection.
pub fn normalized_text(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Keeps the first occurrence of each normalized text, preserving order.
pub fn dedupe(msgs: Vec<AnnotatedMessage>) -> Vec<AnnotatedMessage> {
    let mut seen = HashSet::new();
    msgs.into_iter()
        .filter(|m| seen.insert(normalized_text(&m.message.text)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryStats {
    pub positive: usize,
    pub negative: usize,
    pub total: usize,
    pub mean_length: f64,
    /// Population standard deviation of character length.
    pub sd_length: f64,
    /// positive / negative; `None` when there are no negatives.
    pub pn_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassStats {
    pub per_category: BTreeMap<Category, CategoryStats>,
}

impl ClassStats {
    pub fn get(&self, cat: Category) -> Option<&CategoryStats> {
        self.per_category.get(&cat)
    }

    /// Tab-separated table: one row per statistic, one column per category.
    pub fn to_tsv(&self) -> String {
        let cats: Vec<Category> = self.per_category.keys().copied().collect();
        let mut out = String::from("stat");
        for c in &cats {
            out.push('\t');
            out.push(c.letter());
        }
        out.push('\n');
        type Getter = fn(&CategoryStats) -> String;
        let rows: [(&str, Getter); 6] = [
            ("positive", |s| s.positive.to_string()),
            ("negative", |s| s.negative.to_string()),
            ("total", |s| s.total.to_string()),
            ("mean_length", |s| format!("{:.1}", s.mean_length)),
            ("sd_length", |s| format!("{:.1}", s.sd_length)),
            ("pn_ratio", |s| s.pn_ratio.map_or_else(|| "NA".to_string(), |r| format!("{r:.2}"))),
        ];
        for (name, get) in rows {
            out.push_str(name);
            for c in &cats {
                out.push('\t');
                out.push_str(&get(&self.per_category[c]));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-category counts and length statistics over the messages labeled for that category.
pub fn class_stats(msgs: &[AnnotatedMessage]) -> Result<ClassStats, CorpusError> {
    let mut lengths: BTreeMap<Category, (usize, usize, Vec<f64>)> = BTreeMap::new();
    for m in msgs {
        if m.labels.is_empty() {
            return Err(CorpusError::Unlabeled {
                id: m.message.id.clone(),
            });
        }
        let len = m.message.char_len() as f64;
        for (cat, pol) in &m.labels {
            let entry = lengths.entry(*cat).or_default();
            match pol {
                Polarity::Positive => entry.0 += 1,
                Polarity::Negative => entry.1 += 1,
            }
            entry.2.push(len);
        }
    }
    let per_category = lengths
        .into_iter()
        .map(|(cat, (positive, negative, lens))| {
            let n = lens.len() as f64;
            let mean = lens.iter().sum::<f64>() / n;
            let var = lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
            let stats = CategoryStats {
                positive,
                negative,
                total: positive + negative,
                mean_length: mean,
                sd_length: var.sqrt(),
                pn_ratio: (negative > 0).then(|| positive as f64 / negative as f64),
            };
            (cat, stats)
        })
        .collect();
    Ok(ClassStats { per_category })
}
