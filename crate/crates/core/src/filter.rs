//! Stage-1 topical keyword filter.

use thiserror::Error;

use crate::corpus::Message;
use crate::features::tokenize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeywordPattern {
    /// Matches any token ending in the stem (`*flu` matches `flu`, `swineflu`).
    Suffix(String),
    /// Matches a contiguous run of tokens.
    Phrase(Vec<String>),
}

impl KeywordPattern {
    /// Parses `*stem` as a suffix pattern and anything else as a phrase,
    /// normalized with the message tokenizer.
    pub fn parse(raw: &str) -> Option<KeywordPattern> {
        let raw = raw.trim();
        if let Some(stem) = raw.strip_prefix('*') {
            let stem = stem.trim().to_lowercase();
            return (!stem.is_empty() && !stem.chars().any(char::is_whitespace)).then_some(KeywordPattern::Suffix(stem));
        }
        let tokens = tokenize(raw);
        (!tokens.is_empty()).then_some(KeywordPattern::Phrase(tokens))
    }

    fn matches(&self, tokens: &[String]) -> bool {
        match self {
            KeywordPattern::Suffix(stem) => tokens.iter().any(|t| t.ends_with(stem.as_str())),
            KeywordPattern::Phrase(phrase) => tokens.windows(phrase.len()).any(|w| w == phrase.as_slice()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordBag {
    entries: Vec<KeywordPattern>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeywordError {
    #[error("line {line}: invalid keyword pattern {raw:?}")]
    BadPattern { line: usize, raw: String },
    #[error("keyword bag is empty")]
    Empty,
}

impl KeywordBag {
    pub fn new(entries: Vec<KeywordPattern>) -> Result<KeywordBag, KeywordError> {
        if entries.is_empty() {
            return Err(KeywordError::Empty);
        }
        Ok(KeywordBag { entries })
    }

    pub fn entries(&self) -> &[KeywordPattern] {
        &self.entries
    }

    pub fn with(mut self, pattern: KeywordPattern) -> KeywordBag {
        self.entries.push(pattern);
        self
    }

    /// One pattern per line; `*` prefixes a suffix pattern, `#` starts a comment line.
    pub fn parse(text: &str) -> Result<KeywordBag, KeywordError> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let pattern = KeywordPattern::parse(trimmed).ok_or_else(|| KeywordError::BadPattern {
                line: idx + 1,
                raw: trimmed.to_string(),
            })?;
            entries.push(pattern);
        }
        KeywordBag::new(entries)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| match e {
                KeywordPattern::Suffix(s) => format!("*{s}\n"),
                KeywordPattern::Phrase(p) => format!("{}\n", p.join(" ")),
            })
            .collect()
    }
}

/// The seven influenza keywords.
pub fn default_keywords() -> KeywordBag {
    let raw = ["*flu", "influenza", "H1N1", "H5N1", "swine flu", "pandemic", "bird flu"];
    KeywordBag::new(raw.iter().map(|r| KeywordPattern::parse(r).expect("valid pattern")).collect()).expect("non-empty")
}

/// True iff any bag entry matches the message's tokens.
pub fn stage1_match(msg: &Message, bag: &KeywordBag) -> bool {
    stage1_match_tokens(&msg.tokens, bag)
}

pub fn stage1_match_tokens(tokens: &[String], bag: &KeywordBag) -> bool {
    bag.entries.iter().any(|e| e.matches(tokens))
}

/// Order-preserving subset of messages passing the keyword filter.
pub fn filter_corpus(msgs: Vec<Message>, bag: &KeywordBag) -> Vec<Message> {
    msgs.into_iter().filter(|m| stage1_match(m, bag)).collect()
}
