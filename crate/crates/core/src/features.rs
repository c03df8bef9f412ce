//! Tokenization, n-gram extraction, vocabulary construction and binary
//! feature vectors.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Message;
use crate::rulelang::RuleBook;

pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";

fn is_url(chunk: &str) -> bool {
    let lower = chunk.to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

fn is_handle_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}')
}

/// Splits on anything that is not alphanumeric, keeping apostrophes that sit
/// between two alphanumeric characters.
fn push_words(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            // some lowercase forms carry combining marks ('İ' -> "i\u{307}")
            cur.extend(c.to_lowercase().filter(|l| l.is_alphanumeric()));
        } else if is_apostrophe(c)
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            cur.push('\'');
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
}

/// Normalizes a message into lowercase tokens. URLs become `<url>`,
/// @-mentions become `<user>` and hashtags lose their `#`. Tokenizing the
/// space-joined output again gives the same tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if chunk == URL_TOKEN || chunk == USER_TOKEN {
            out.push(chunk.to_string());
            continue;
        }
        if is_url(chunk) {
            out.push(URL_TOKEN.to_string());
            continue;
        }
        let mut rest = chunk;
        while let Some(pos) = rest.find('@') {
            let after = &rest[pos + 1..];
            let handle_len: usize = after.chars().take_while(|&c| is_handle_char(c)).map(char::len_utf8).sum();
            // '@' glued to a preceding word (e.g. an e-mail address) is not a mention
            let glued = rest[..pos].chars().next_back().is_some_and(char::is_alphanumeric);
            if handle_len == 0 || glued {
                push_words(&rest[..pos + 1], &mut out);
                rest = after;
                continue;
            }
            push_words(&rest[..pos], &mut out);
            out.push(USER_TOKEN.to_string());
            rest = &after[handle_len..];
        }
        push_words(rest, &mut out);
    }
    out
}

/// Unigrams (`n == 1`) or space-joined bigrams (`n == 2`).
pub fn ngrams(tokens: &[String], n: usize) -> Vec<String> {
    match n {
        1 => tokens.to_vec(),
        2 => tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])).collect(),
        _ => panic!("only unigrams and bigrams are supported, got n = {n}"),
    }
}

/// Which feature families make up a vector. Unigrams are always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureConfig {
    pub use_bigrams: bool,
    pub use_rules: bool,
}

impl FeatureConfig {
    pub const UNI: FeatureConfig = FeatureConfig {
        use_bigrams: false,
        use_rules: false,
    };
    pub const UNI_SRL: FeatureConfig = FeatureConfig {
        use_bigrams: false,
        use_rules: true,
    };
    pub const UNI_BI: FeatureConfig = FeatureConfig {
        use_bigrams: true,
        use_rules: false,
    };
    pub const UNI_BI_SRL: FeatureConfig = FeatureConfig {
        use_bigrams: true,
        use_rules: true,
    };
    pub const ALL: [FeatureConfig; 4] = [Self::UNI, Self::UNI_SRL, Self::UNI_BI, Self::UNI_BI_SRL];

    pub fn use_unigrams(&self) -> bool {
        true
    }
}

impl fmt::Display for FeatureConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("UNI")?;
        if self.use_bigrams {
            f.write_str("+BI")?;
        }
        if self.use_rules {
            f.write_str("+SRL")?;
        }
        Ok(())
    }
}

impl FromStr for FeatureConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts: Vec<String> = s.split('+').map(|p| p.trim().to_ascii_uppercase()).collect();
        if parts.first().map(String::as_str) != Some("UNI") {
            return Err(format!("feature config {s:?} must start with UNI"));
        }
        parts.remove(0);
        let mut cfg = FeatureConfig::UNI;
        for p in parts {
            match p.as_str() {
                "BI" if !cfg.use_bigrams && !cfg.use_rules => cfg.use_bigrams = true,
                "SRL" if !cfg.use_rules => cfg.use_rules = true,
                _ => return Err(format!("bad feature config {s:?}")),
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("cannot build a vocabulary from an empty training set")]
    EmptyTrainingSet,
    #[error("vocabulary line {line}: {reason}")]
    BadVocabFile { line: usize, reason: String },
}

/// Feature index for grams (first) and rule names (after all grams).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    grams: IndexMap<String, usize>,
    rule_names: IndexMap<String, usize>,
    config: FeatureConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Unigram,
    Bigram,
    Rule,
}

impl FeatureKind {
    fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Unigram => "uni",
            FeatureKind::Bigram => "bi",
            FeatureKind::Rule => "rule",
        }
    }
}

impl Vocabulary {
    pub fn config(&self) -> FeatureConfig {
        self.config
    }

    pub fn dimension(&self) -> usize {
        self.grams.len() + self.rule_names.len()
    }

    pub fn gram_count(&self) -> usize {
        self.grams.len()
    }

    pub fn gram_index(&self, gram: &str) -> Option<usize> {
        self.grams.get(gram).copied()
    }

    pub fn rule_index(&self, rule: &str) -> Option<usize> {
        self.rule_names.get(rule).copied()
    }

    pub fn rule_names(&self) -> impl Iterator<Item = &str> {
        self.rule_names.keys().map(String::as_str)
    }

    /// `index<TAB>kind<TAB>name` per feature, preceded by a config line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# features {}\n", self.config);
        for (g, i) in &self.grams {
            let kind = if g.contains(' ') { FeatureKind::Bigram } else { FeatureKind::Unigram };
            out.push_str(&format!("{i}\t{}\t{g}\n", kind.as_str()));
        }
        for (r, i) in &self.rule_names {
            out.push_str(&format!("{i}\t{}\t{r}\n", FeatureKind::Rule.as_str()));
        }
        out
    }

    /// Hex SHA-256 of [`Vocabulary::to_text`]; model files reference it.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn parse(text: &str) -> Result<Vocabulary, FeatureError> {
        let bad = |line: usize, reason: String| FeatureError::BadVocabFile { line, reason };
        let mut config = None;
        let mut grams = IndexMap::new();
        let mut rule_names = IndexMap::new();
        let mut next = 0usize;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(cfg) = rest.trim().strip_prefix("features ") {
                    config = Some(cfg.parse().map_err(|e| bad(line_no, e))?);
                }
                continue;
            }
            let cols: Vec<&str> = line.splitn(3, '\t').collect();
            if cols.len() != 3 {
                return Err(bad(line_no, "expected index<TAB>kind<TAB>name".into()));
            }
            let index: usize = cols[0].parse().map_err(|_| bad(line_no, format!("bad index {:?}", cols[0])))?;
            if index != next {
                return Err(bad(line_no, format!("expected index {next}, found {index}")));
            }
            let name = cols[2].to_string();
            if name.is_empty() {
                return Err(bad(line_no, "empty feature name".into()));
            }
            let fresh = match cols[1] {
                "uni" | "bi" => {
                    if !rule_names.is_empty() {
                        return Err(bad(line_no, "gram after rule features".into()));
                    }
                    if (cols[1] == "bi") != name.contains(' ') {
                        return Err(bad(line_no, format!("kind {} does not fit {name:?}", cols[1])));
                    }
                    grams.insert(name, index).is_none()
                }
                "rule" => rule_names.insert(name, index).is_none(),
                other => return Err(bad(line_no, format!("unknown kind {other:?}"))),
            };
            if !fresh {
                return Err(bad(line_no, "duplicate feature".into()));
            }
            next += 1;
        }
        let config = config.ok_or_else(|| bad(1, "missing '# features' line".into()))?;
        Ok(Vocabulary {
            grams,
            rule_names,
            config,
        })
    }
}

/// Sparse binary feature vector: sorted, duplicate-free active indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    active: Vec<u32>,
    dimension: usize,
}

impl FeatureVector {
    /// Builds a vector from any set of indices; panics if one is out of range.
    pub fn from_indices(indices: impl IntoIterator<Item = usize>, dimension: usize) -> FeatureVector {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(&max) = set.iter().next_back() {
            assert!(max < dimension, "feature index {max} out of range for dimension {dimension}");
        }
        FeatureVector {
            active: set.into_iter().map(|i| i as u32).collect(),
            dimension,
        }
    }

    pub fn empty(dimension: usize) -> FeatureVector {
        FeatureVector {
            active: Vec::new(),
            dimension,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().map(|&i| i as usize)
    }

    pub fn nnz(&self) -> usize {
        self.active.len()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.active.binary_search(&(index as u32)).is_ok()
    }

    /// Size of the symmetric difference of the active sets, i.e. the squared
    /// Euclidean distance between the two binary vectors.
    pub fn sym_diff_len(&self, other: &FeatureVector) -> usize {
        let (a, b) = (&self.active, &other.active);
        let (mut i, mut j, mut common) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    common += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        a.len() + b.len() - 2 * common
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for i in self.active() {
            v[i] = 1.0;
        }
        v
    }
}

fn message_grams(tokens: &[String], config: FeatureConfig) -> Vec<String> {
    let mut grams = ngrams(tokens, 1);
    if config.use_bigrams {
        grams.extend(ngrams(tokens, 2));
    }
    grams
}

/// Vocabulary with `min_df = 1`.
pub fn build_vocab(train: &[Message], config: FeatureConfig, book: &RuleBook) -> Result<Vocabulary, FeatureError> {
    build_vocab_with(train, config, book, 1)
}

/// Grams with document frequency at least `min_df`, in first-occurrence order,
/// followed by the book's rule names when rules are enabled.
pub fn build_vocab_with(
    train: &[Message],
    config: FeatureConfig,
    book: &RuleBook,
    min_df: usize,
) -> Result<Vocabulary, FeatureError> {
    if train.is_empty() {
        return Err(FeatureError::EmptyTrainingSet);
    }
    let mut df: IndexMap<String, usize> = IndexMap::new();
    for msg in train {
        let mut seen = HashSet::new();
        for g in message_grams(&msg.tokens, config) {
            if seen.insert(g.clone()) {
                *df.entry(g).or_insert(0) += 1;
            }
        }
    }
    let mut grams = IndexMap::new();
    for (g, count) in df {
        if count >= min_df.max(1) {
            let idx = grams.len();
            grams.insert(g, idx);
        }
    }
    let mut rule_names = IndexMap::new();
    if config.use_rules {
        for rule in book.rules() {
            let idx = grams.len() + rule_names.len();
            rule_names.insert(rule.name.clone(), idx);
        }
    }
    Ok(Vocabulary {
        grams,
        rule_names,
        config,
    })
}

/// Binary presence vector of `msg` over `vocab`. Out-of-vocabulary grams are ignored.
pub fn vectorize(msg: &Message, vocab: &Vocabulary, book: &RuleBook) -> FeatureVector {
    vectorize_tokens(&msg.tokens, vocab, book)
}

pub fn vectorize_tokens(tokens: &[String], vocab: &Vocabulary, book: &RuleBook) -> FeatureVector {
    let mut active: Vec<usize> = message_grams(tokens, vocab.config)
        .iter()
        .filter_map(|g| vocab.gram_index(g))
        .collect();
    if vocab.config.use_rules && !vocab.rule_names.is_empty() {
        let by_name: HashMap<&str, usize> = vocab.rule_names.iter().map(|(n, i)| (n.as_str(), *i)).collect();
        for (rule, hit) in book.rules().iter().zip(crate::rulelang::rule_features(book, tokens)) {
            if hit {
                if let Some(&idx) = by_name.get(rule.name.as_str()) {
                    active.push(idx);
                }
            }
        }
    }
    FeatureVector::from_indices(active, vocab.dimension())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulelang::parse_rulebook;
    use chrono::{TimeZone, Utc};

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    fn msg_with(tokens: &[&str]) -> Message {
        let mut m = Message::new("m", Utc.with_ymd_and_hms(2010, 1, 1, 0, 0, 0).unwrap(), tokens.join(" "));
        m.tokens = toks(tokens);
        m
    }

    #[test]
    fn tokenize_basic() {
        assert_eq!(tokenize("LOL U got flu?"), toks(&["lol", "u", "got", "flu"]));
    }

    #[test]
    fn tokenize_apostrophes() {
        assert_eq!(
            tokenize("home this weekend? i've been off work all week with the flu"),
            toks(&["home", "this", "weekend", "i've", "been", "off", "work", "all", "week", "with", "the", "flu"])
        );
        assert_eq!(tokenize("'quoted' words'"), toks(&["quoted", "words"]));
    }

    #[test]
    fn tokenize_social_markup() {
        assert_eq!(tokenize("@bob see http://x.y #H1N1"), toks(&["<user>", "see", "<url>", "h1n1"]));
        assert_eq!(tokenize("hi @bob: ok"), toks(&["hi", "<user>", "ok"]));
        assert_eq!(tokenize("mail me@x.org"), toks(&["mail", "me", "x", "org"]));
    }

    #[test]
    fn tokenize_punctuation() {
        assert_eq!(tokenize("swine-flu, it's 2:10pm..."), toks(&["swine", "flu", "it's", "2", "10pm"]));
        assert!(tokenize("  ... !!! ").is_empty());
    }

    #[test]
    fn ngram_cases() {
        assert_eq!(ngrams(&toks(&["a", "b", "c"]), 2), ["a b", "b c"]);
        assert!(ngrams(&toks(&["a"]), 2).is_empty());
        assert_eq!(ngrams(&toks(&["flu", "shot"]), 1), ["flu", "shot"]);
    }

    #[test]
    fn feature_config_names_round_trip() {
        for cfg in FeatureConfig::ALL {
            assert_eq!(cfg.to_string().parse::<FeatureConfig>().unwrap(), cfg);
        }
        assert!("BI".parse::<FeatureConfig>().is_err());
        assert!("UNI+SRL+BI".parse::<FeatureConfig>().is_err());
    }

    #[test]
    fn vocab_unigrams_then_bigrams() {
        let train = [msg_with(&["flu"]), msg_with(&["flu", "shot"])];
        let book = RuleBook::default();
        let v = build_vocab(&train, FeatureConfig::UNI, &book).unwrap();
        assert_eq!(v.gram_index("flu"), Some(0));
        assert_eq!(v.gram_index("shot"), Some(1));
        assert_eq!(v.dimension(), 2);
        let v = build_vocab(&train, FeatureConfig::UNI_BI, &book).unwrap();
        assert_eq!(v.gram_index("flu shot"), Some(2));
        assert_eq!(v.dimension(), 3);
    }

    #[test]
    fn rule_indices_follow_grams() {
        let book = parse_rulebook("list M = shot\nrule R1 cat P: flu @M\nrule R2 cat S: have flu\n").unwrap();
        let train = [msg_with(&["flu"]), msg_with(&["flu", "shot"])];
        let v = build_vocab(&train, FeatureConfig::UNI_SRL, &book).unwrap();
        assert_eq!(v.rule_index("R1"), Some(2));
        assert_eq!(v.rule_index("R2"), Some(3));
        assert_eq!(v.dimension(), 4);
        let vec = vectorize(&msg_with(&["flu", "shot"]), &v, &book);
        assert_eq!(vec.active().collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn empty_training_set() {
        assert_eq!(
            build_vocab(&[], FeatureConfig::UNI, &RuleBook::default()),
            Err(FeatureError::EmptyTrainingSet)
        );
    }

    #[test]
    fn min_df_prunes() {
        let train = [msg_with(&["flu", "a"]), msg_with(&["flu", "b"]), msg_with(&["flu", "flu"])];
        let v = build_vocab_with(&train, FeatureConfig::UNI, &RuleBook::default(), 2).unwrap();
        assert_eq!(v.dimension(), 1);
        assert_eq!(v.gram_index("flu"), Some(0));
    }

    #[test]
    fn presence_not_counts() {
        let train = [msg_with(&["flu", "shot"])];
        let book = RuleBook::default();
        let v = build_vocab(&train, FeatureConfig::UNI, &book).unwrap();
        let fv = vectorize(&msg_with(&["flu", "flu", "shot"]), &v, &book);
        assert_eq!(fv.active().collect::<Vec<_>>(), [0, 1]);
        assert_eq!(vectorize(&msg_with(&["cold"]), &v, &book).nnz(), 0);
    }

    #[test]
    fn sym_diff_matches_dense_distance() {
        let a = FeatureVector::from_indices([0, 2, 5], 8);
        let b = FeatureVector::from_indices([2, 3, 5, 7], 8);
        let dense: f64 = a.to_dense().iter().zip(b.to_dense()).map(|(x, y)| (x - y).powi(2)).sum();
        assert_eq!(a.sym_diff_len(&b) as f64, dense);
    }

    #[test]
    fn vocab_text_round_trip() {
        let book = parse_rulebook("list M = shot\nrule R1 cat P: flu @M\n").unwrap();
        let train = [msg_with(&["flu", "shot"]), msg_with(&["bad", "flu"])];
        let v = build_vocab(&train, FeatureConfig::UNI_BI_SRL, &book).unwrap();
        let text = v.to_text();
        assert!(text.contains("2\tbi\tflu shot\n"));
        let back = Vocabulary::parse(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
    }

    #[test]
    fn vocab_parse_rejects_gaps() {
        let err = Vocabulary::parse("# features UNI\n0\tuni\ta\n2\tuni\tb\n").unwrap_err();
        assert!(matches!(err, FeatureError::BadVocabFile { line: 3, .. }));
    }
}
