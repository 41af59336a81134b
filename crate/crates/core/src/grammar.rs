//! Context-free grammar model and its line-based text format.
//!
//! Terminals are raw character strings; `""` is the explicit empty string and
//! may only form a whole right-hand side. Character classes (`[a-z]`, `[^"]`)
//! match exactly one character. Repetition is written with recursion.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

/// Longest string `enumerate_language` will produce.
pub const MAX_ENUMERATION_LEN: usize = 12;
/// Explosion guard for `enumerate_language`.
pub const MAX_ENUMERATION_STRINGS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("undefined nonterminal `{0}`")]
    UndefinedNonterminal(String),
    #[error("duplicate @start directive at line {0}")]
    DuplicateStart(usize),
    #[error("grammar has no productions")]
    NoProductions,
    #[error("invalid nonterminal name `{0}`")]
    InvalidName(String),
    #[error("empty terminal is only allowed as an entire right-hand side (rule for `{0}`)")]
    MisplacedEpsilon(String),
    #[error("empty character class in rule for `{0}`")]
    EmptyCharClass(String),
    #[error("start symbol `{0}` derives no terminal string; the language is empty")]
    EmptyLanguage(String),
    #[error("cannot enumerate: {0}")]
    Unenumerable(String),
    #[error("enumeration exceeded {MAX_ENUMERATION_STRINGS} strings")]
    EnumerationExplosion,
}

/// A single-character class such as `[a-z_]` or `[^"]`.
///
/// Ranges are kept in written order so that serialization reproduces the
/// source exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CharClass {
    pub negated: bool,
    pub ranges: Vec<(char, char)>,
}

impl CharClass {
    pub fn new(negated: bool, ranges: Vec<(char, char)>) -> Self {
        CharClass { negated, ranges }
    }

    pub fn of_chars(chars: impl IntoIterator<Item = char>) -> Self {
        CharClass {
            negated: false,
            ranges: chars.into_iter().map(|c| (c, c)).collect(),
        }
    }

    pub fn matches(&self, c: char) -> bool {
        let inside = self.ranges.iter().any(|&(lo, hi)| lo <= c && c <= hi);
        inside != self.negated
    }

    /// True when at least one character matches.
    pub fn is_satisfiable(&self) -> bool {
        if self.negated {
            // A negated class is empty only if it covers every scalar value.
            let mut ranges = self.ranges.clone();
            ranges.sort();
            let mut next = '\0' as u32;
            for (lo, hi) in ranges {
                if lo as u32 > next {
                    return true;
                }
                next = next.max(hi as u32 + 1);
            }
            next <= char::MAX as u32
        } else {
            self.ranges.iter().any(|&(lo, hi)| lo <= hi)
        }
    }

    /// The explicit members of a positive class, `None` for negated classes.
    pub fn finite_members(&self) -> Option<BTreeSet<char>> {
        if self.negated {
            return None;
        }
        let mut out = BTreeSet::new();
        for &(lo, hi) in &self.ranges {
            for u in lo as u32..=hi as u32 {
                if let Some(c) = char::from_u32(u) {
                    out.insert(c);
                }
            }
        }
        Some(out)
    }
}

impl fmt::Display for CharClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        if self.negated {
            f.write_str("^")?;
        }
        for &(lo, hi) in &self.ranges {
            write_class_char(f, lo)?;
            if lo != hi {
                f.write_str("-")?;
                write_class_char(f, hi)?;
            }
        }
        f.write_str("]")
    }
}

fn write_class_char(f: &mut fmt::Formatter<'_>, c: char) -> fmt::Result {
    match c {
        '\\' | ']' | '[' | '-' | '^' => write!(f, "\\{c}"),
        '\n' => f.write_str("\\n"),
        '\t' => f.write_str("\\t"),
        '\r' => f.write_str("\\r"),
        _ => write!(f, "{c}"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    /// Literal text. Empty text is ε.
    Terminal(String),
    Nonterminal(String),
    Class(CharClass),
}

impl Symbol {
    pub fn t(text: impl Into<String>) -> Self {
        Symbol::Terminal(text.into())
    }

    pub fn nt(name: impl Into<String>) -> Self {
        Symbol::Nonterminal(name.into())
    }

    pub fn is_epsilon(&self) -> bool {
        matches!(self, Symbol::Terminal(t) if t.is_empty())
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Terminal(text) => {
                f.write_str("\"")?;
                for c in text.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\t' => f.write_str("\\t")?,
                        '\r' => f.write_str("\\r")?,
                        _ => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
            Symbol::Nonterminal(name) => f.write_str(name),
            Symbol::Class(class) => class.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Production {
    pub lhs: String,
    pub rhs: Vec<Symbol>,
}

impl Production {
    pub fn new(lhs: impl Into<String>, rhs: Vec<Symbol>) -> Self {
        Production { lhs: lhs.into(), rhs }
    }

    pub fn epsilon(lhs: impl Into<String>) -> Self {
        Production::new(lhs, vec![Symbol::t("")])
    }

    /// True for `A -> ""`.
    pub fn is_epsilon(&self) -> bool {
        self.rhs.len() == 1 && self.rhs[0].is_epsilon()
    }

    fn nonterminals(&self) -> impl Iterator<Item = &str> {
        self.rhs.iter().filter_map(|s| match s {
            Symbol::Nonterminal(n) => Some(n.as_str()),
            _ => None,
        })
    }
}

impl fmt::Display for Production {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ->", self.lhs)?;
        for sym in &self.rhs {
            write!(f, " {sym}")?;
        }
        Ok(())
    }
}

/// An immutable, validated context-free grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    start: String,
    productions: Vec<Production>,
    version: String,
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Grammar {
    /// Validates and builds a grammar. Identical productions are collapsed,
    /// keeping the first occurrence.
    pub fn new(start: impl Into<String>, productions: Vec<Production>) -> Result<Self, GrammarError> {
        let start = start.into();
        if productions.is_empty() {
            return Err(GrammarError::NoProductions);
        }
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(productions.len());
        for p in productions {
            if seen.insert(p.clone()) {
                kept.push(p);
            }
        }
        let defined: HashSet<&str> = kept.iter().map(|p| p.lhs.as_str()).collect();
        for p in &kept {
            if !is_identifier(&p.lhs) {
                return Err(GrammarError::InvalidName(p.lhs.clone()));
            }
            if p.rhs.is_empty() {
                return Err(GrammarError::MisplacedEpsilon(p.lhs.clone()));
            }
            for sym in &p.rhs {
                match sym {
                    Symbol::Terminal(t) if t.is_empty() && p.rhs.len() > 1 => {
                        return Err(GrammarError::MisplacedEpsilon(p.lhs.clone()))
                    }
                    Symbol::Nonterminal(n) => {
                        if !is_identifier(n) {
                            return Err(GrammarError::InvalidName(n.clone()));
                        }
                        if !defined.contains(n.as_str()) {
                            return Err(GrammarError::UndefinedNonterminal(n.clone()));
                        }
                    }
                    Symbol::Class(c) if !c.is_satisfiable() => return Err(GrammarError::EmptyCharClass(p.lhs.clone())),
                    _ => {}
                }
            }
        }
        if !defined.contains(start.as_str()) {
            return Err(GrammarError::UndefinedNonterminal(start));
        }
        Ok(Grammar {
            start,
            productions: kept,
            version: String::new(),
        })
    }

    pub fn with_version(mut self, version: impl Into<String>) -> Self {
        self.version = version.into();
        self
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Nonterminals in order of first definition.
    pub fn nonterminals(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.productions
            .iter()
            .map(|p| p.lhs.as_str())
            .filter(|n| seen.insert(*n))
            .collect()
    }

    pub fn productions_for<'a>(&'a self, lhs: &'a str) -> impl Iterator<Item = &'a Production> + 'a {
        self.productions.iter().filter(move |p| p.lhs == lhs)
    }

    /// Every character that can appear in a terminal literal or positive class.
    /// `None` if the grammar contains a negated class.
    pub fn terminal_alphabet(&self) -> Option<BTreeSet<char>> {
        let mut out = BTreeSet::new();
        for sym in self.productions.iter().flat_map(|p| &p.rhs) {
            match sym {
                Symbol::Terminal(t) => out.extend(t.chars()),
                Symbol::Class(c) => out.extend(c.finite_members()?),
                Symbol::Nonterminal(_) => {}
            }
        }
        Some(out)
    }

    /// Nonterminals deriving ε.
    pub fn nullable_set(&self) -> BTreeSet<String> {
        let mut nullable: HashSet<&str> = HashSet::new();
        loop {
            let before = nullable.len();
            for p in &self.productions {
                if nullable.contains(p.lhs.as_str()) {
                    continue;
                }
                let all_null = p.rhs.iter().all(|s| match s {
                    Symbol::Terminal(t) => t.is_empty(),
                    Symbol::Nonterminal(n) => nullable.contains(n.as_str()),
                    Symbol::Class(_) => false,
                });
                if all_null {
                    nullable.insert(&p.lhs);
                }
            }
            if nullable.len() == before {
                break;
            }
        }
        nullable.into_iter().map(str::to_owned).collect()
    }

    fn productive_set(&self) -> HashSet<&str> {
        let mut productive: HashSet<&str> = HashSet::new();
        loop {
            let before = productive.len();
            for p in &self.productions {
                if !productive.contains(p.lhs.as_str()) && p.nonterminals().all(|n| productive.contains(n)) {
                    productive.insert(&p.lhs);
                }
            }
            if productive.len() == before {
                return productive;
            }
        }
    }

    /// Drops unreachable and unproductive nonterminals (and their productions)
    /// without changing the language.
    pub fn reduce(&self) -> Result<Grammar, GrammarError> {
        let productive = self.productive_set();
        if !productive.contains(self.start.as_str()) {
            return Err(GrammarError::EmptyLanguage(self.start.clone()));
        }
        let useful: Vec<&Production> = self
            .productions
            .iter()
            .filter(|p| productive.contains(p.lhs.as_str()) && p.nonterminals().all(|n| productive.contains(n)))
            .collect();

        let mut by_lhs: HashMap<&str, Vec<&Production>> = HashMap::new();
        for p in &useful {
            by_lhs.entry(p.lhs.as_str()).or_default().push(p);
        }
        let mut reachable: HashSet<&str> = HashSet::from([self.start.as_str()]);
        let mut stack = vec![self.start.as_str()];
        while let Some(n) = stack.pop() {
            for p in by_lhs.get(n).into_iter().flatten() {
                for m in p.nonterminals() {
                    if reachable.insert(m) {
                        stack.push(m);
                    }
                }
            }
        }
        let kept = useful
            .into_iter()
            .filter(|p| reachable.contains(p.lhs.as_str()))
            .cloned()
            .collect();
        Ok(Grammar::new(self.start.clone(), kept)?.with_version(self.version.clone()))
    }

    /// All members of the language of length at most `max_len` (in characters).
    ///
    /// Computed as a least fixed point of length-bounded string sets per
    /// nonterminal. Requires a grammar without negated classes.
    pub fn enumerate_language(&self, max_len: usize) -> Result<BTreeSet<String>, GrammarError> {
        if max_len > MAX_ENUMERATION_LEN {
            return Err(GrammarError::Unenumerable(format!(
                "max_len {max_len} exceeds {MAX_ENUMERATION_LEN}"
            )));
        }
        let names = self.nonterminals();
        let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let mut sets: Vec<BTreeSet<String>> = vec![BTreeSet::new(); names.len()];

        // Pre-expand classes to their members once.
        let mut class_members: HashMap<&CharClass, Vec<String>> = HashMap::new();
        for sym in self.productions.iter().flat_map(|p| &p.rhs) {
            if let Symbol::Class(c) = sym {
                let members = c
                    .finite_members()
                    .ok_or_else(|| GrammarError::Unenumerable(format!("negated class {c}")))?;
                class_members.insert(c, members.into_iter().map(String::from).collect());
            }
        }

        loop {
            let mut changed = false;
            for p in &self.productions {
                let mut partial: BTreeSet<String> = BTreeSet::from([String::new()]);
                for sym in &p.rhs {
                    let options: Vec<&str> = match sym {
                        Symbol::Terminal(t) => vec![t.as_str()],
                        Symbol::Class(c) => class_members[c].iter().map(String::as_str).collect(),
                        Symbol::Nonterminal(n) => sets[index[n.as_str()]].iter().map(String::as_str).collect(),
                    };
                    let mut next = BTreeSet::new();
                    for head in &partial {
                        let head_len = head.chars().count();
                        for tail in &options {
                            if head_len + tail.chars().count() <= max_len {
                                next.insert(format!("{head}{tail}"));
                                if next.len() > MAX_ENUMERATION_STRINGS {
                                    return Err(GrammarError::EnumerationExplosion);
                                }
                            }
                        }
                    }
                    partial = next;
                    if partial.is_empty() {
                        break;
                    }
                }
                let target = &mut sets[index[p.lhs.as_str()]];
                for s in partial {
                    if target.insert(s) {
                        changed = true;
                        if target.len() > MAX_ENUMERATION_STRINGS {
                            return Err(GrammarError::EnumerationExplosion);
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Ok(std::mem::take(&mut sets[index[self.start.as_str()]]))
    }
}

impl fmt::Display for Grammar {
    /// The canonical text form; see [`serialize_grammar`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_grammar(self))
    }
}

/// Writes `@start`, an optional `@version`, then one production per line in
/// order. The output has no trailing newline and reparses to an equal grammar.
pub fn serialize_grammar(g: &Grammar) -> String {
    let mut lines = vec![format!("@start {}", g.start)];
    if !g.version.is_empty() {
        lines.push(format!("@version {}", g.version));
    }
    lines.extend(g.productions.iter().map(Production::to_string));
    lines.join("\n")
}

/// Parses the line-based grammar format.
///
/// ```text
/// # comment
/// @start S
/// S -> "a" S "b" | ""
/// ```
pub fn parse_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let mut start: Option<String> = None;
    let mut version = String::new();
    let mut productions = Vec::new();

    for (idx, raw_line) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        let mut lexer = LineLexer::new(line, line_no);
        lexer.skip_ws();
        if lexer.at_end() || lexer.peek() == Some('#') {
            continue;
        }
        if lexer.peek() == Some('@') {
            lexer.bump();
            let directive = lexer.word();
            lexer.skip_ws();
            match directive.as_str() {
                "start" => {
                    let name = lexer.identifier()?;
                    lexer.expect_line_end()?;
                    if start.is_some() {
                        return Err(GrammarError::DuplicateStart(line_no));
                    }
                    start = Some(name);
                }
                "version" => {
                    version = lexer.rest().trim().to_owned();
                }
                other => return Err(lexer.error(format!("unknown directive @{other}"))),
            }
            continue;
        }
        let lhs = lexer.identifier()?;
        lexer.skip_ws();
        if !lexer.eat_str("->") {
            return Err(lexer.error("expected `->`"));
        }
        let mut alternative = Vec::new();
        loop {
            lexer.skip_ws();
            match lexer.peek() {
                None | Some('#') => {
                    productions.push(lexer.finish_alternative(&lhs, std::mem::take(&mut alternative))?);
                    break;
                }
                Some('|') => {
                    lexer.bump();
                    productions.push(lexer.finish_alternative(&lhs, std::mem::take(&mut alternative))?);
                }
                Some('"') => alternative.push(Symbol::Terminal(lexer.literal()?)),
                Some('[') => alternative.push(Symbol::Class(lexer.char_class()?)),
                Some(_) => alternative.push(Symbol::Nonterminal(lexer.identifier()?)),
            }
        }
    }

    if productions.is_empty() {
        return Err(GrammarError::NoProductions);
    }
    let start = start.unwrap_or_else(|| productions[0].lhs.clone());
    Ok(Grammar::new(start, productions)?.with_version(version))
}

struct LineLexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl LineLexer {
    fn new(src: &str, line: usize) -> Self {
        LineLexer {
            chars: src.chars().collect(),
            pos: 0,
            line,
        }
    }

    fn error(&self, message: impl Into<String>) -> GrammarError {
        GrammarError::Syntax {
            line: self.line,
            column: self.pos + 1,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        Some(c)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c == ' ' || c == '\t') {
            self.pos += 1;
        }
    }

    fn eat_str(&mut self, s: &str) -> bool {
        let want: Vec<char> = s.chars().collect();
        if self.chars[self.pos..].starts_with(&want) {
            self.pos += want.len();
            true
        } else {
            false
        }
    }

    fn rest(&self) -> String {
        self.chars[self.pos..].iter().collect()
    }

    fn word(&mut self) -> String {
        let begin = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        self.chars[begin..self.pos].iter().collect()
    }

    fn identifier(&mut self) -> Result<String, GrammarError> {
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => Ok(self.word()),
            Some(c) => Err(self.error(format!("unexpected character `{c}`"))),
            None => Err(self.error("expected identifier")),
        }
    }

    fn expect_line_end(&mut self) -> Result<(), GrammarError> {
        self.skip_ws();
        match self.peek() {
            None | Some('#') => Ok(()),
            Some(c) => Err(self.error(format!("unexpected character `{c}`"))),
        }
    }

    fn escape(&mut self) -> Result<char, GrammarError> {
        match self.bump() {
            Some('n') => Ok('\n'),
            Some('t') => Ok('\t'),
            Some('r') => Ok('\r'),
            Some(c) => Ok(c),
            None => Err(self.error("dangling escape")),
        }
    }

    fn literal(&mut self) -> Result<String, GrammarError> {
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.error("unterminated string literal")),
                Some('"') => return Ok(out),
                Some('\\') => {
                    let escaped = match self.bump() {
                        Some('"') => '"',
                        Some('\\') => '\\',
                        Some('n') => '\n',
                        Some('t') => '\t',
                        Some('r') => '\r',
                        Some(c) => return Err(self.error(format!("unknown escape `\\{c}`"))),
                        None => return Err(self.error("unterminated string literal")),
                    };
                    out.push(escaped);
                }
                Some(c) => out.push(c),
            }
        }
    }

    fn class_char(&mut self) -> Result<char, GrammarError> {
        match self.bump() {
            Some('\\') => self.escape(),
            Some(c) => Ok(c),
            None => Err(self.error("unterminated character class")),
        }
    }

    fn char_class(&mut self) -> Result<CharClass, GrammarError> {
        self.bump();
        let negated = if self.peek() == Some('^') {
            self.bump();
            true
        } else {
            false
        };
        let mut ranges = Vec::new();
        loop {
            match self.peek() {
                None => return Err(self.error("unterminated character class")),
                Some(']') => {
                    self.bump();
                    break;
                }
                Some(_) => {
                    let lo = self.class_char()?;
                    let is_range = self.peek() == Some('-') && self.chars.get(self.pos + 1).is_some_and(|&c| c != ']');
                    if is_range {
                        self.bump();
                        let hi = self.class_char()?;
                        if hi < lo {
                            return Err(self.error(format!("reversed range {lo}-{hi}")));
                        }
                        ranges.push((lo, hi));
                    } else {
                        ranges.push((lo, lo));
                    }
                }
            }
        }
        if !negated && ranges.is_empty() {
            return Err(self.error("empty character class"));
        }
        Ok(CharClass { negated, ranges })
    }

    fn finish_alternative(&self, lhs: &str, rhs: Vec<Symbol>) -> Result<Production, GrammarError> {
        if rhs.is_empty() {
            return Err(self.error("empty alternative (write `\"\"` for the empty string)"));
        }
        if rhs.len() > 1 && rhs.iter().any(Symbol::is_epsilon) {
            return Err(self.error("`\"\"` must be the entire alternative"));
        }
        Ok(Production::new(lhs, rhs))
    }
}
