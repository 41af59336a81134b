//! Character-incremental Earley recognition.
//!
//! Items carry a `terminal_offset` so that a scan can stop in the middle of a
//! multi-character terminal: LM tokens rarely line up with grammar terminals.
//! Nullable nonterminals are handled by advancing over them at prediction
//! time, which keeps every column closed without a second completion pass.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use crate::grammar::{CharClass, Grammar, GrammarError, Symbol};

type NtId = u32;

#[derive(Debug, Clone)]
enum CompiledSymbol {
    Literal(Box<[char]>),
    Class(CharClass),
    Nonterminal(NtId),
}

#[derive(Debug, Clone)]
struct CompiledProduction {
    lhs: NtId,
    rhs: Box<[CompiledSymbol]>,
}

/// A reduced grammar lowered to integer ids for recognition.
#[derive(Debug)]
pub struct CompiledGrammar {
    grammar: Grammar,
    names: Vec<String>,
    productions: Vec<CompiledProduction>,
    by_lhs: Vec<Vec<u32>>,
    nullable: Vec<bool>,
    start: NtId,
}

impl CompiledGrammar {
    /// Reduces `grammar` and compiles it. Reduction is mandatory: only for
    /// reduced grammars does a non-empty chart column imply the prefix extends
    /// to a sentence.
    pub fn new(grammar: &Grammar) -> Result<Arc<Self>, GrammarError> {
        let reduced = grammar.reduce()?;
        let names: Vec<String> = reduced.nonterminals().into_iter().map(str::to_owned).collect();
        let ids: HashMap<&str, NtId> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i as NtId)).collect();
        let nullable_names = reduced.nullable_set();

        let mut productions = Vec::with_capacity(reduced.productions().len());
        let mut by_lhs = vec![Vec::new(); names.len()];
        for p in reduced.productions() {
            let lhs = ids[p.lhs.as_str()];
            let rhs: Vec<CompiledSymbol> = if p.is_epsilon() {
                Vec::new()
            } else {
                p.rhs
                    .iter()
                    .map(|s| match s {
                        Symbol::Terminal(t) => CompiledSymbol::Literal(t.chars().collect()),
                        Symbol::Class(c) => CompiledSymbol::Class(c.clone()),
                        Symbol::Nonterminal(n) => CompiledSymbol::Nonterminal(ids[n.as_str()]),
                    })
                    .collect()
            };
            by_lhs[lhs as usize].push(productions.len() as u32);
            productions.push(CompiledProduction {
                lhs,
                rhs: rhs.into_boxed_slice(),
            });
        }
        let nullable = names.iter().map(|n| nullable_names.contains(n)).collect();
        let start = ids[reduced.start()];
        Ok(Arc::new(CompiledGrammar {
            grammar: reduced,
            names,
            productions,
            by_lhs,
            nullable,
            start,
        }))
    }

    /// The reduced grammar this was compiled from.
    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn nonterminal_name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    fn next_symbol(&self, item: &EarleyItem) -> Option<&CompiledSymbol> {
        self.productions[item.production as usize].rhs.get(item.dot as usize)
    }
}

/// A dotted production. `terminal_offset` counts characters already matched
/// inside the literal right after the dot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EarleyItem {
    pub production: u32,
    pub dot: u16,
    pub origin: u32,
    pub terminal_offset: u16,
}

impl EarleyItem {
    fn advanced(self) -> Self {
        EarleyItem {
            dot: self.dot + 1,
            terminal_offset: 0,
            ..self
        }
    }
}

#[derive(Debug, Default)]
struct Column {
    items: Vec<EarleyItem>,
    /// Items with the dot directly before a nonterminal, keyed by it.
    waiting: HashMap<NtId, Vec<u32>>,
    /// Items with the dot before (or inside) a terminal or class.
    scanners: Vec<u32>,
    accepts: bool,
}

struct ColumnBuilder<'g> {
    grammar: &'g CompiledGrammar,
    index: u32,
    column: Column,
    seen: HashSet<EarleyItem>,
}

impl<'g> ColumnBuilder<'g> {
    fn new(grammar: &'g CompiledGrammar, index: u32) -> Self {
        ColumnBuilder {
            grammar,
            index,
            column: Column::default(),
            seen: HashSet::new(),
        }
    }

    fn add(&mut self, item: EarleyItem) {
        if self.seen.insert(item) {
            self.column.items.push(item);
        }
    }

    /// Closes the column under prediction and completion.
    fn close(mut self, earlier: &[Arc<Column>]) -> Column {
        let g = self.grammar;
        let mut cursor = 0;
        while cursor < self.column.items.len() {
            let item = self.column.items[cursor];
            match g.next_symbol(&item) {
                None => {
                    let lhs = g.productions[item.production as usize].lhs;
                    if item.origin == self.index {
                        let parents = self.column.waiting.get(&lhs).cloned().unwrap_or_default();
                        for idx in parents {
                            let parent = self.column.items[idx as usize];
                            self.add(parent.advanced());
                        }
                    } else {
                        let origin = &earlier[item.origin as usize];
                        for &idx in origin.waiting.get(&lhs).into_iter().flatten() {
                            self.add(origin.items[idx as usize].advanced());
                        }
                    }
                    if lhs == g.start && item.origin == 0 {
                        self.column.accepts = true;
                    }
                }
                Some(CompiledSymbol::Nonterminal(next)) => {
                    let next = *next;
                    self.column.waiting.entry(next).or_default().push(cursor as u32);
                    for &p in &g.by_lhs[next as usize] {
                        self.add(EarleyItem {
                            production: p,
                            dot: 0,
                            origin: self.index,
                            terminal_offset: 0,
                        });
                    }
                    if g.nullable[next as usize] {
                        self.add(item.advanced());
                    }
                }
                Some(_) => self.column.scanners.push(cursor as u32),
            }
            cursor += 1;
        }
        self.column
    }
}

fn scan(grammar: &CompiledGrammar, columns: &[Arc<Column>], c: char) -> Option<Column> {
    let frontier = columns.last()?;
    let mut builder = ColumnBuilder::new(grammar, columns.len() as u32);
    for &idx in &frontier.scanners {
        let item = frontier.items[idx as usize];
        match grammar.next_symbol(&item) {
            Some(CompiledSymbol::Literal(text)) => {
                let offset = item.terminal_offset as usize;
                if text[offset] == c {
                    if offset + 1 == text.len() {
                        builder.add(item.advanced());
                    } else {
                        builder.add(EarleyItem {
                            terminal_offset: item.terminal_offset + 1,
                            ..item
                        });
                    }
                }
            }
            Some(CompiledSymbol::Class(class)) => {
                if class.matches(c) {
                    builder.add(item.advanced());
                }
            }
            _ => unreachable!("scanner list holds only terminal items"),
        }
    }
    if builder.column.items.is_empty() {
        return None;
    }
    Some(builder.close(columns))
}

/// Characters that may follow the current prefix: explicit characters plus
/// any character classes the frontier is waiting on.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AllowedChars {
    pub chars: BTreeSet<char>,
    pub classes: Vec<CharClass>,
}

impl AllowedChars {
    pub fn contains(&self, c: char) -> bool {
        self.chars.contains(&c) || self.classes.iter().any(|cl| cl.matches(c))
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty() && self.classes.iter().all(|c| !c.is_satisfiable())
    }

    /// The allowed set as an explicit character set, when it is finite.
    pub fn finite(&self) -> Option<BTreeSet<char>> {
        let mut out = self.chars.clone();
        for class in &self.classes {
            out.extend(class.finite_members()?);
        }
        Some(out)
    }
}

impl fmt::Display for AllowedChars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self.chars.iter().map(|c| format!("{c:?}")).collect();
        parts.extend(self.classes.iter().map(CharClass::to_string));
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// Earley chart after consuming a viable prefix.
///
/// Advancing returns a new state and leaves `self` untouched; completed
/// columns are immutable and shared between forks.
#[derive(Debug, Clone)]
pub struct PrefixState {
    grammar: Arc<CompiledGrammar>,
    columns: Vec<Arc<Column>>,
}

impl PrefixState {
    pub fn new(grammar: Arc<CompiledGrammar>) -> Self {
        let mut builder = ColumnBuilder::new(&grammar, 0);
        for &p in &grammar.by_lhs[grammar.start as usize] {
            builder.add(EarleyItem {
                production: p,
                dot: 0,
                origin: 0,
                terminal_offset: 0,
            });
        }
        let column = builder.close(&[]);
        PrefixState {
            columns: vec![Arc::new(column)],
            grammar,
        }
    }

    /// Reduces, compiles and initializes in one step.
    pub fn for_grammar(grammar: &Grammar) -> Result<Self, GrammarError> {
        Ok(Self::new(CompiledGrammar::new(grammar)?))
    }

    pub fn grammar(&self) -> &Arc<CompiledGrammar> {
        &self.grammar
    }

    /// Number of characters consumed.
    pub fn consumed(&self) -> usize {
        self.columns.len() - 1
    }

    /// Items of the frontier column, in insertion order.
    pub fn frontier_items(&self) -> &[EarleyItem] {
        &self.columns.last().expect("column 0 always exists").items
    }

    /// `None` if `prefix + c` is not a prefix of any sentence.
    pub fn advance_char(&self, c: char) -> Option<PrefixState> {
        let column = scan(&self.grammar, &self.columns, c)?;
        let mut columns = self.columns.clone();
        columns.push(Arc::new(column));
        Some(PrefixState {
            grammar: Arc::clone(&self.grammar),
            columns,
        })
    }

    /// Advances over every character of `text`, or returns the offset (in
    /// characters, relative to `text`) of the first rejected one.
    pub fn advance_str(&self, text: &str) -> Result<PrefixState, usize> {
        let mut scratch = ScanStack::new(self);
        for (i, c) in text.chars().enumerate() {
            if !scratch.push(c) {
                return Err(i);
            }
        }
        Ok(scratch.into_state())
    }

    pub fn allowed_next_chars(&self) -> AllowedChars {
        allowed_from(&self.grammar, self.columns.last().expect("column 0 always exists"))
    }

    /// True iff the consumed prefix is itself a sentence.
    pub fn is_complete(&self) -> bool {
        self.columns.last().is_some_and(|c| c.accepts)
    }
}

fn allowed_from(grammar: &CompiledGrammar, column: &Column) -> AllowedChars {
    let mut out = AllowedChars::default();
    for &idx in &column.scanners {
        let item = column.items[idx as usize];
        match grammar.next_symbol(&item) {
            Some(CompiledSymbol::Literal(text)) => {
                out.chars.insert(text[item.terminal_offset as usize]);
            }
            Some(CompiledSymbol::Class(class)) if !out.classes.contains(class) => {
                out.classes.push(class.clone());
            }
            _ => {}
        }
    }
    out
}

/// A push/pop view over a state's columns, used to walk many continuations
/// of one prefix (trie co-walks, string advancement) without re-cloning.
pub(crate) struct ScanStack {
    grammar: Arc<CompiledGrammar>,
    columns: Vec<Arc<Column>>,
}

impl ScanStack {
    pub(crate) fn new(state: &PrefixState) -> Self {
        ScanStack {
            grammar: Arc::clone(&state.grammar),
            columns: state.columns.clone(),
        }
    }

    pub(crate) fn push(&mut self, c: char) -> bool {
        match scan(&self.grammar, &self.columns, c) {
            Some(column) => {
                self.columns.push(Arc::new(column));
                true
            }
            None => false,
        }
    }

    pub(crate) fn pop(&mut self) {
        self.columns.pop();
    }

    pub(crate) fn allowed(&self) -> AllowedChars {
        allowed_from(&self.grammar, self.columns.last().expect("non-empty"))
    }

    pub(crate) fn into_state(self) -> PrefixState {
        PrefixState {
            grammar: self.grammar,
            columns: self.columns,
        }
    }
}

/// Outcome of recognizing a whole string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recognition {
    Accepted,
    /// Every character was viable but the string is not a sentence.
    Incomplete,
    /// The character at this offset has no continuation.
    RejectedAt(usize),
}

pub fn recognize(grammar: &Arc<CompiledGrammar>, text: &str) -> Recognition {
    match PrefixState::new(Arc::clone(grammar)).advance_str(text) {
        Ok(state) if state.is_complete() => Recognition::Accepted,
        Ok(_) => Recognition::Incomplete,
        Err(offset) => Recognition::RejectedAt(offset),
    }
}
