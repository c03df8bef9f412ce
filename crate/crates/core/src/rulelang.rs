//! A small line-oriented pattern language over token streams.
//!
//! ```text
//! # comment
//! list MEDICINE = shot, vaccine, jab
//! list GET = get, got, had, have
//! list HYP = if, would, should
//! rule P_VACCINE cat P: @GET _{0,3} @MEDICINE unless @HYP within 2 before
//! ```
//!
//! A rule is a sequence of elements: bare or `"quoted"` literal tokens,
//! `@LIST` references and `_{m,n}` skips. It matches when the elements
//! align in order over some span of the token stream and none of its
//! `unless` guards find a listed token within the given window before the
//! span start (or after the span end).

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

use crate::corpus::Category;

pub const MAX_SKIP: usize = 20;

const RESERVED: &[char] = &['@', '"', '#', ',', ':', '=', '{', '}'];
const KEYWORDS: &[&str] = &["unless"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordList {
    pub name: String,
    pub words: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleElement {
    Literal(String),
    ListRef(String),
    Skip { min: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardDirection {
    Before,
    After,
}

/// Vetoes a match when a member of `list` occurs within `window` tokens
/// before the matched span (or after it).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Guard {
    pub list: String,
    pub window: usize,
    pub direction: GuardDirection,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    pub category: Category,
    pub elements: Vec<RuleElement>,
    pub guards: Vec<Guard>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleBook {
    lists: IndexMap<String, WordList>,
    rules: Vec<Rule>,
}

/// Errors carry 1-based line and column; `line == 0` marks a book assembled in code.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("line {line}, column {col}: unresolved list reference @{name}")]
    UnresolvedList { line: usize, col: usize, name: String },
    #[error("line {line}, column {col}: skip bounds {{{min},{max}}} must satisfy 0 <= min <= max <= {MAX_SKIP}")]
    SkipBounds { line: usize, col: usize, min: usize, max: usize },
    #[error("line {line}: duplicate list {name}")]
    DuplicateList { line: usize, name: String },
    #[error("line {line}: duplicate rule {name}")]
    DuplicateRule { line: usize, name: String },
    #[error("line {line}: list {name} has no words")]
    EmptyList { line: usize, name: String },
    #[error("line {line}: rule {name} must start and end with a literal or list reference")]
    Unanchored { line: usize, name: String },
    #[error("line {line}: guard window of rule {name} must be at least 1")]
    ZeroWindow { line: usize, name: String },
}

impl RuleBook {
    /// Assembles and validates a book built in code.
    pub fn new(lists: Vec<WordList>, rules: Vec<Rule>) -> Result<RuleBook, RuleError> {
        let mut book = RuleBook::default();
        for l in lists {
            if l.words.is_empty() {
                return Err(RuleError::EmptyList { line: 0, name: l.name });
            }
            if book.lists.contains_key(&l.name) {
                return Err(RuleError::DuplicateList { line: 0, name: l.name });
            }
            book.lists.insert(l.name.clone(), l);
        }
        let mut names = HashSet::new();
        for r in &rules {
            if !names.insert(r.name.clone()) {
                return Err(RuleError::DuplicateRule {
                    line: 0,
                    name: r.name.clone(),
                });
            }
            check_rule_shape(r, 0)?;
            for el in &r.elements {
                if let RuleElement::ListRef(name) = el {
                    book.require_list(name, 0, 0)?;
                }
            }
            for g in &r.guards {
                book.require_list(&g.list, 0, 0)?;
            }
        }
        book.rules = rules;
        Ok(book)
    }

    fn require_list(&self, name: &str, line: usize, col: usize) -> Result<(), RuleError> {
        if self.lists.contains_key(name) {
            Ok(())
        } else {
            Err(RuleError::UnresolvedList {
                line,
                col,
                name: name.to_string(),
            })
        }
    }

    pub fn lists(&self) -> impl Iterator<Item = &WordList> {
        self.lists.values()
    }

    pub fn list(&self, name: &str) -> Option<&WordList> {
        self.lists.get(name)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty() && self.rules.is_empty()
    }

    /// Same lists, only the rules of one category.
    pub fn for_category(&self, category: Category) -> RuleBook {
        RuleBook {
            lists: self.lists.clone(),
            rules: self.rules.iter().filter(|r| r.category == category).cloned().collect(),
        }
    }

    fn contains(&self, list: &str, token: &str) -> bool {
        self.lists.get(list).is_some_and(|l| l.words.contains(token))
    }
}

fn check_rule_shape(rule: &Rule, line: usize) -> Result<(), RuleError> {
    let anchored = |e: Option<&RuleElement>| matches!(e, Some(RuleElement::Literal(_) | RuleElement::ListRef(_)));
    if !anchored(rule.elements.first()) || !anchored(rule.elements.last()) {
        return Err(RuleError::Unanchored {
            line,
            name: rule.name.clone(),
        });
    }
    for el in &rule.elements {
        if let RuleElement::Skip { min, max } = *el {
            if min > max || max > MAX_SKIP {
                return Err(RuleError::SkipBounds { line, col: 0, min, max });
            }
        }
    }
    if rule.guards.iter().any(|g| g.window == 0) {
        return Err(RuleError::ZeroWindow {
            line,
            name: rule.name.clone(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// lexing

#[derive(Debug, Clone, PartialEq)]
enum Lexeme {
    Word(String),
    Quoted(String),
    ListRef(String),
    Skip(usize, usize),
    Eq,
    Comma,
    Colon,
}

#[derive(Debug, Clone)]
struct Tok {
    lex: Lexeme,
    col: usize,
}

fn is_bare_char(c: char) -> bool {
    !c.is_whitespace() && !RESERVED.contains(&c)
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn lex_line(line: &str, line_no: usize) -> Result<Vec<Tok>, RuleError> {
    let chars: Vec<char> = line.chars().collect();
    let syntax = |col: usize, message: String| RuleError::Syntax {
        line: line_no,
        col,
        message,
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '#' => break,
            '=' => {
                out.push(Tok { lex: Lexeme::Eq, col });
                i += 1;
            }
            ',' => {
                out.push(Tok { lex: Lexeme::Comma, col });
                i += 1;
            }
            ':' => {
                out.push(Tok { lex: Lexeme::Colon, col });
                i += 1;
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(syntax(col, "unterminated quoted literal".into())),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => match chars.get(i + 1) {
                            Some(&e @ ('"' | '\\')) => {
                                s.push(e);
                                i += 2;
                            }
                            _ => return Err(syntax(i + 1, "bad escape in quoted literal".into())),
                        },
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                if s.is_empty() || s.chars().any(char::is_whitespace) {
                    return Err(syntax(col, "quoted literal must be a single non-empty token".into()));
                }
                out.push(Tok {
                    lex: Lexeme::Quoted(s),
                    col,
                });
            }
            '@' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let name: String = chars[start..j].iter().collect();
                if !is_ident(&name) {
                    return Err(syntax(col, "expected list name after '@'".into()));
                }
                out.push(Tok {
                    lex: Lexeme::ListRef(name),
                    col,
                });
                i = j;
            }
            '_' if chars.get(i + 1) == Some(&'{') => {
                let close = chars[i..]
                    .iter()
                    .position(|&ch| ch == '}')
                    .map(|p| p + i)
                    .ok_or_else(|| syntax(col, "unterminated skip expression".into()))?;
                let body: String = chars[i + 2..close].iter().collect();
                let (lo, hi) = body
                    .split_once(',')
                    .ok_or_else(|| syntax(col, format!("skip expects {{min,max}}, found {{{body}}}")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| syntax(col, format!("bad skip bound {:?}", s.trim())))
                };
                let (min, max) = (parse(lo)?, parse(hi)?);
                if min > max || max > MAX_SKIP {
                    return Err(RuleError::SkipBounds {
                        line: line_no,
                        col,
                        min,
                        max,
                    });
                }
                out.push(Tok {
                    lex: Lexeme::Skip(min, max),
                    col,
                });
                i = close + 1;
            }
            c if is_bare_char(c) => {
                let start = i;
                while i < chars.len() && is_bare_char(chars[i]) {
                    i += 1;
                }
                out.push(Tok {
                    lex: Lexeme::Word(chars[start..i].iter().collect()),
                    col,
                });
            }
            other => return Err(syntax(col, format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// parsing

struct LineParser {
    toks: Vec<Tok>,
    pos: usize,
    line: usize,
    end_col: usize,
}

impl LineParser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn col(&self) -> usize {
        self.peek().map_or(self.end_col, |t| t.col)
    }

    fn err(&self, col: usize, message: impl Into<String>) -> RuleError {
        RuleError::Syntax {
            line: self.line,
            col,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Lexeme, what: &str) -> Result<(), RuleError> {
        let col = self.col();
        match self.next() {
            Some(t) if t.lex == want => Ok(()),
            _ => Err(self.err(col, format!("expected {what}"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), RuleError> {
        let col = self.col();
        match self.next() {
            Some(Tok {
                lex: Lexeme::Word(w), ..
            }) if w == kw => Ok(()),
            _ => Err(self.err(col, format!("expected '{kw}'"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize), RuleError> {
        let col = self.col();
        match self.next() {
            Some(Tok {
                lex: Lexeme::Word(w), ..
            }) if is_ident(&w) => Ok((w, col)),
            _ => Err(self.err(col, format!("expected {what}"))),
        }
    }

    fn done(&self) -> Result<(), RuleError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(self.err(t.col, "unexpected trailing input")),
        }
    }
}

struct PendingRef {
    name: String,
    line: usize,
    col: usize,
}

fn literal_token(raw: &str) -> String {
    raw.to_lowercase()
}

fn parse_list(p: &mut LineParser) -> Result<WordList, RuleError> {
    let (name, _) = p.ident("list name")?;
    p.expect(Lexeme::Eq, "'='")?;
    let mut words = BTreeSet::new();
    loop {
        let col = p.col();
        match p.next() {
            Some(Tok {
                lex: Lexeme::Word(w) | Lexeme::Quoted(w),
                ..
            }) => {
                words.insert(literal_token(&w));
            }
            _ => return Err(p.err(col, "expected a word")),
        }
        match p.peek().map(|t| &t.lex) {
            Some(Lexeme::Comma) => {
                p.next();
            }
            None => break,
            Some(_) => return Err(p.err(p.col(), "expected ',' or end of line")),
        }
    }
    Ok(WordList { name, words })
}

fn parse_rule(p: &mut LineParser, refs: &mut Vec<PendingRef>) -> Result<Rule, RuleError> {
    let line = p.line;
    let (name, _) = p.ident("rule name")?;
    p.keyword("cat")?;
    let col = p.col();
    let category = match p.next() {
        Some(Tok {
            lex: Lexeme::Word(w), ..
        }) => w
            .parse::<Category>()
            .map_err(|_| p.err(col, format!("unknown category {w:?} (expected one of A, I, P, W, S)")))?,
        _ => return Err(p.err(col, "expected category")),
    };
    p.expect(Lexeme::Colon, "':'")?;

    let mut elements = Vec::new();
    while let Some(tok) = p.peek().cloned() {
        match tok.lex {
            Lexeme::Word(ref w) if w == "unless" => break,
            Lexeme::Word(w) | Lexeme::Quoted(w) => elements.push(RuleElement::Literal(literal_token(&w))),
            Lexeme::ListRef(n) => {
                refs.push(PendingRef {
                    name: n.clone(),
                    line,
                    col: tok.col,
                });
                elements.push(RuleElement::ListRef(n));
            }
            Lexeme::Skip(min, max) => elements.push(RuleElement::Skip { min, max }),
            _ => return Err(p.err(tok.col, "expected a rule element")),
        }
        p.next();
    }
    if elements.is_empty() {
        return Err(p.err(p.col(), "rule needs at least one element"));
    }

    let mut guards = Vec::new();
    while p.peek().is_some() {
        p.keyword("unless")?;
        let col = p.col();
        let list = match p.next() {
            Some(Tok {
                lex: Lexeme::ListRef(n), ..
            }) => n,
            _ => return Err(p.err(col, "expected @LIST after 'unless'")),
        };
        refs.push(PendingRef {
            name: list.clone(),
            line,
            col,
        });
        p.keyword("within")?;
        let col = p.col();
        let window = match p.next() {
            Some(Tok {
                lex: Lexeme::Word(w), ..
            }) => w.parse::<usize>().map_err(|_| p.err(col, format!("bad window {w:?}")))?,
            _ => return Err(p.err(col, "expected window size")),
        };
        let col = p.col();
        let direction = match p.next() {
            Some(Tok {
                lex: Lexeme::Word(w), ..
            }) if w == "before" => GuardDirection::Before,
            Some(Tok {
                lex: Lexeme::Word(w), ..
            }) if w == "after" => GuardDirection::After,
            _ => return Err(p.err(col, "expected 'before' or 'after'")),
        };
        guards.push(Guard {
            list,
            window,
            direction,
        });
    }
    p.done()?;
    let rule = Rule {
        name,
        category,
        elements,
        guards,
    };
    check_rule_shape(&rule, line)?;
    Ok(rule)
}

/// Parses a rulebook. List references may point at lists declared later in the file.
pub fn parse_rulebook(text: &str) -> Result<RuleBook, RuleError> {
    let mut book = RuleBook::default();
    let mut rule_names = HashSet::new();
    let mut refs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks = lex_line(raw, line)?;
        if toks.is_empty() {
            continue;
        }
        let mut p = LineParser {
            toks,
            pos: 0,
            line,
            end_col: raw.chars().count() + 1,
        };
        let (head, col) = p.ident("'list' or 'rule'")?;
        match head.as_str() {
            "list" => {
                let list = parse_list(&mut p)?;
                if book.lists.contains_key(&list.name) {
                    return Err(RuleError::DuplicateList { line, name: list.name });
                }
                book.lists.insert(list.name.clone(), list);
            }
            "rule" => {
                let rule = parse_rule(&mut p, &mut refs)?;
                if !rule_names.insert(rule.name.clone()) {
                    return Err(RuleError::DuplicateRule { line, name: rule.name });
                }
                book.rules.push(rule);
            }
            _ => return Err(p.err(col, format!("expected 'list' or 'rule', found {head:?}"))),
        }
    }
    for r in refs {
        book.require_list(&r.name, r.line, r.col)?;
    }
    Ok(book)
}

// ---------------------------------------------------------------------------
// serialization

fn write_token(f: &mut fmt::Formatter<'_>, tok: &str) -> fmt::Result {
    let bare = !tok.is_empty()
        && tok.chars().all(is_bare_char)
        && !tok.starts_with("_{")
        && !KEYWORDS.contains(&tok);
    if bare {
        f.write_str(tok)
    } else {
        f.write_str("\"")?;
        for c in tok.chars() {
            if c == '"' || c == '\\' {
                f.write_str("\\")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("\"")
    }
}

impl fmt::Display for RuleElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleElement::Literal(t) => write_token(f, t),
            RuleElement::ListRef(n) => write!(f, "@{n}"),
            RuleElement::Skip { min, max } => write!(f, "_{{{min},{max}}}"),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {} cat {}:", self.name, self.category)?;
        for el in &self.elements {
            write!(f, " {el}")?;
        }
        for g in &self.guards {
            let dir = match g.direction {
                GuardDirection::Before => "before",
                GuardDirection::After => "after",
            };
            write!(f, " unless @{} within {} {dir}", g.list, g.window)?;
        }
        Ok(())
    }
}

impl fmt::Display for RuleBook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in self.lists.values() {
            write!(f, "list {} =", l.name)?;
            for (i, w) in l.words.iter().enumerate() {
                f.write_str(if i == 0 { " " } else { ", " })?;
                write_token(f, w)?;
            }
            writeln!(f)?;
        }
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// matching

fn element_matches(el: &RuleElement, token: &str, book: &RuleBook) -> bool {
    match el {
        RuleElement::Literal(t) => t == token,
        RuleElement::ListRef(name) => book.contains(name, token),
        RuleElement::Skip { .. } => unreachable!("skips are handled by the frontier expansion"),
    }
}

fn guard_hits(guard: &Guard, tokens: &[String], start: usize, end: usize, book: &RuleBook) -> bool {
    let window = match guard.direction {
        GuardDirection::Before => &tokens[start.saturating_sub(guard.window)..start],
        GuardDirection::After => &tokens[end..(end + guard.window).min(tokens.len())],
    };
    window.iter().any(|t| book.contains(&guard.list, t))
}

/// Ends (exclusive) of every alignment of `rule.elements` starting at `start`.
fn span_ends(rule: &Rule, tokens: &[String], start: usize, book: &RuleBook, cur: &mut Vec<bool>, next: &mut Vec<bool>) {
    let n = tokens.len();
    cur.clear();
    cur.resize(n + 1, false);
    cur[start] = true;
    for el in &rule.elements {
        next.clear();
        next.resize(n + 1, false);
        let mut any = false;
        for p in (0..=n).filter(|&p| cur[p]) {
            match *el {
                RuleElement::Skip { min, max } => {
                    let hi = (p + max).min(n);
                    if p + min <= hi {
                        next[p + min..=hi].fill(true);
                        any = true;
                    }
                }
                _ => {
                    if p < n && element_matches(el, &tokens[p], book) {
                        next[p + 1] = true;
                        any = true;
                    }
                }
            }
        }
        std::mem::swap(cur, next);
        if !any {
            return;
        }
    }
}

/// True iff some alignment of the rule over `tokens` survives all guards.
pub fn match_rule(rule: &Rule, tokens: &[String], book: &RuleBook) -> bool {
    let Some(first) = rule.elements.first() else {
        return false;
    };
    let before: Vec<&Guard> = rule.guards.iter().filter(|g| g.direction == GuardDirection::Before).collect();
    let after: Vec<&Guard> = rule.guards.iter().filter(|g| g.direction == GuardDirection::After).collect();
    let (mut cur, mut next) = (Vec::new(), Vec::new());
    for start in 0..tokens.len() {
        if !element_matches(first, &tokens[start], book) {
            continue;
        }
        if before.iter().any(|g| guard_hits(g, tokens, start, start, book)) {
            continue;
        }
        span_ends(rule, tokens, start, book, &mut cur, &mut next);
        let hit = cur
            .iter()
            .enumerate()
            .filter(|(_, &reached)| reached)
            .any(|(end, _)| end > start && !after.iter().any(|g| guard_hits(g, tokens, start, end, book)));
        if hit {
            return true;
        }
    }
    false
}

/// One boolean per rule, in declaration order.
pub fn rule_features(book: &RuleBook, tokens: &[String]) -> Vec<bool> {
    book.rules.iter().map(|r| match_rule(r, tokens, book)).collect()
}

/// The bundled example rulebook.
pub const DEMO_RULEBOOK: &str = include_str!("../data/demo.rules");

pub fn demo_rulebook() -> RuleBook {
    parse_rulebook(DEMO_RULEBOOK).expect("bundled rulebook parses")
}
