//! Grammar induction from training programs.
//!
//! Lispress: every typed sub-expression contributes a production from its
//! type's nonterminal to the fixed syntax around the symbol and the
//! nonterminals of its argument types. Keying productions on
//! (symbol, argument types, result type) rather than whole subtrees lets the
//! grammar recombine fragments across programs.
//!
//! MTOP: intent and slot labels act as types; each observed node contributes
//! its child-label sequence, with token spans generalized to an open `TEXT`
//! class.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::sync::{Arc, OnceLock};

use serde::Deserialize;
use thiserror::Error;

use crate::earley::{recognize, CompiledGrammar, Recognition};
use crate::grammar::{parse_grammar, CharClass, Grammar, GrammarError, Production, Symbol};
use crate::lispress::SexpNode;

/// Type assigned to quoted-string atoms.
pub const STRING_TYPE: &str = "String";

#[derive(Debug, Error)]
pub enum InductionError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("`{symbol}` expects {expected} argument(s), got {got}")]
    Arity {
        symbol: String,
        expected: usize,
        got: usize,
    },
    #[error("expected type `{expected}`, found `{found}` in `{expr}`")]
    TypeMismatch {
        expected: String,
        found: String,
        expr: String,
    },
    #[error("literal `{literal}` is not a valid `{type_name}`")]
    IllTypedLiteral { literal: String, type_name: String },
    #[error("malformed expression `{0}`")]
    Malformed(String),
    #[error("no programs to induce from")]
    EmptyInput,
    #[error("programs disagree on root type: {0:?}")]
    ConflictingRoots(Vec<String>),
    #[error("root type `{0}` never occurs in the programs")]
    UnobservedRoot(String),
    #[error("symbol `{0}` declared twice")]
    DuplicateSymbol(String),
    #[error("type `{0}` is used as an argument but nothing produces it")]
    UnproducibleType(String),
    #[error("names `{0}` and `{1}` map to the same nonterminal")]
    NameCollision(String, String),
    #[error("literal class for `{type_name}`: {source}")]
    LiteralClass {
        type_name: String,
        #[source]
        source: GrammarError,
    },
    #[error("signature line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("MTOP parse error at offset {offset}: {message}")]
    Mtop { offset: usize, message: String },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub args: Vec<String>,
    pub result: String,
}

/// A literal type's character-level grammar, kept both as text (for the
/// induced grammar) and compiled (for checking atoms).
#[derive(Debug, Clone)]
pub struct LiteralClass {
    pub type_name: String,
    grammar: Grammar,
    compiled: Arc<CompiledGrammar>,
}

impl LiteralClass {
    /// `snippet` is either a bare right-hand side such as `"#" [0-9]`, or a
    /// block of rules whose first lhs is the entry point.
    pub fn new(type_name: impl Into<String>, snippet: &str) -> Result<Self, InductionError> {
        let type_name = type_name.into();
        let text = if snippet.contains("->") {
            snippet.to_owned()
        } else {
            format!("LIT -> {snippet}")
        };
        let wrap = |source| InductionError::LiteralClass {
            type_name: type_name.clone(),
            source,
        };
        let grammar = parse_grammar(&text).map_err(wrap)?;
        let compiled = CompiledGrammar::new(&grammar).map_err(wrap)?;
        Ok(LiteralClass {
            type_name,
            grammar,
            compiled,
        })
    }

    /// The open string class: `"` then any run of non-quote characters or
    /// `\"` / `\\` escapes, then `"`.
    pub fn builtin_string() -> Self {
        static BUILTIN: OnceLock<LiteralClass> = OnceLock::new();
        BUILTIN
            .get_or_init(|| {
                LiteralClass::new(
                    STRING_TYPE,
                    "STR -> \"\\\"\" BODY \"\\\"\"\nBODY -> \"\" | CHAR BODY\nCHAR -> [^\"\\\\] | \"\\\\\" [\"\\\\]",
                )
                .expect("built-in string class is valid")
            })
            .clone()
    }

    pub fn accepts(&self, literal: &str) -> bool {
        recognize(&self.compiled, literal) == Recognition::Accepted
    }

    /// The class's rules with nonterminals moved into a per-type namespace,
    /// plus `lhs -> <entry>`.
    fn productions_under(&self, lhs: &str) -> Vec<Production> {
        let prefix = format!("L_{}", sanitize(&self.type_name));
        let rename = |n: &str| format!("{prefix}_{n}");
        let mut out = vec![Production::new(
            lhs,
            vec![Symbol::Nonterminal(rename(self.grammar.start()))],
        )];
        out.extend(self.grammar.productions().iter().map(|p| {
            let rhs = p
                .rhs
                .iter()
                .map(|s| match s {
                    Symbol::Nonterminal(n) => Symbol::Nonterminal(rename(n)),
                    other => other.clone(),
                })
                .collect();
            Production::new(rename(&p.lhs), rhs)
        }));
        out
    }
}

/// Function signatures plus literal classes, read from a JSON Lines sidecar.
#[derive(Debug, Clone, Default)]
pub struct SignatureTable {
    symbols: BTreeMap<String, Signature>,
    literals: Vec<LiteralClass>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SignatureRecord {
    Symbol {
        symbol: String,
        args: Vec<String>,
        result: String,
    },
    Literal {
        literal: String,
        class: String,
    },
}

impl SignatureTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_symbol(
        &mut self,
        symbol: impl Into<String>,
        args: &[&str],
        result: impl Into<String>,
    ) -> Result<&mut Self, InductionError> {
        let symbol = symbol.into();
        let sig = Signature {
            args: args.iter().map(|s| s.to_string()).collect(),
            result: result.into(),
        };
        if self.symbols.insert(symbol.clone(), sig).is_some() {
            return Err(InductionError::DuplicateSymbol(symbol));
        }
        Ok(self)
    }

    pub fn add_literal(&mut self, type_name: impl Into<String>, snippet: &str) -> Result<&mut Self, InductionError> {
        let class = LiteralClass::new(type_name, snippet)?;
        self.literals.retain(|l| l.type_name != class.type_name);
        self.literals.push(class);
        Ok(self)
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, InductionError> {
        let mut table = SignatureTable::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SignatureRecord = serde_json::from_str(&line).map_err(|e| InductionError::Format {
                line: idx + 1,
                message: e.to_string(),
            })?;
            match record {
                SignatureRecord::Symbol { symbol, args, result } => {
                    let args: Vec<&str> = args.iter().map(String::as_str).collect();
                    table.add_symbol(symbol, &args, result)?;
                }
                SignatureRecord::Literal { literal, class } => {
                    table.add_literal(literal, &class)?;
                }
            }
        }
        table.validate()?;
        Ok(table)
    }

    /// Every argument type must be producible by some symbol or literal class.
    pub fn validate(&self) -> Result<(), InductionError> {
        let produced: BTreeSet<&str> = self
            .symbols
            .values()
            .map(|s| s.result.as_str())
            .chain(self.literals.iter().map(|l| l.type_name.as_str()))
            .chain([STRING_TYPE])
            .collect();
        for sig in self.symbols.values() {
            for arg in &sig.args {
                if !produced.contains(arg.as_str()) {
                    return Err(InductionError::UnproducibleType(arg.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn signature(&self, symbol: &str) -> Option<&Signature> {
        self.symbols.get(symbol)
    }

    pub fn literal(&self, type_name: &str) -> Option<&LiteralClass> {
        self.literals.iter().find(|l| l.type_name == type_name)
    }

    fn string_class(&self) -> LiteralClass {
        self.literal(STRING_TYPE)
            .cloned()
            .unwrap_or_else(LiteralClass::builtin_string)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprKind {
    /// `(symbol arg ...)`
    Application(String),
    /// A zero-argument symbol written without parentheses.
    BareSymbol(String),
    Literal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedExpression {
    pub node: SexpNode,
    pub type_name: String,
    pub kind: ExprKind,
    pub children: Vec<TypedExpression>,
}

/// Annotates every sub-expression of `program` with its type.
pub fn type_check(program: &SexpNode, sigs: &SignatureTable) -> Result<TypedExpression, InductionError> {
    check(program, None, sigs)
}

fn check(node: &SexpNode, expected: Option<&str>, sigs: &SignatureTable) -> Result<TypedExpression, InductionError> {
    let typed = match node {
        SexpNode::Atom(atom) if node.is_string_atom() => {
            if !sigs.string_class().accepts(atom) {
                return Err(InductionError::IllTypedLiteral {
                    literal: atom.clone(),
                    type_name: STRING_TYPE.into(),
                });
            }
            leaf(node, STRING_TYPE, ExprKind::Literal)
        }
        SexpNode::Atom(atom) => match sigs.signature(atom) {
            Some(sig) if sig.args.is_empty() => leaf(node, &sig.result, ExprKind::BareSymbol(atom.clone())),
            Some(sig) => {
                return Err(InductionError::Arity {
                    symbol: atom.clone(),
                    expected: sig.args.len(),
                    got: 0,
                })
            }
            None => {
                let class =
                    match expected {
                        Some(t) => sigs.literal(t).filter(|c| c.accepts(atom)).ok_or_else(|| {
                            InductionError::IllTypedLiteral {
                                literal: atom.clone(),
                                type_name: t.to_owned(),
                            }
                        })?,
                        None => sigs
                            .literals
                            .iter()
                            .find(|c| c.accepts(atom))
                            .ok_or_else(|| InductionError::UnknownSymbol(atom.clone()))?,
                    };
                leaf(node, &class.type_name, ExprKind::Literal)
            }
        },
        SexpNode::List(items) => {
            let Some(head) = items
                .first()
                .filter(|h| !h.is_string_atom())
                .and_then(SexpNode::as_atom)
            else {
                return Err(InductionError::Malformed(node.to_string()));
            };
            let sig = sigs
                .signature(head)
                .ok_or_else(|| InductionError::UnknownSymbol(head.to_owned()))?;
            let args = &items[1..];
            if args.len() != sig.args.len() {
                return Err(InductionError::Arity {
                    symbol: head.to_owned(),
                    expected: sig.args.len(),
                    got: args.len(),
                });
            }
            let children = args
                .iter()
                .zip(&sig.args)
                .map(|(arg, ty)| check(arg, Some(ty), sigs))
                .collect::<Result<Vec<_>, _>>()?;
            TypedExpression {
                node: node.clone(),
                type_name: sig.result.clone(),
                kind: ExprKind::Application(head.to_owned()),
                children,
            }
        }
    };
    if let Some(want) = expected {
        if typed.type_name != want {
            return Err(InductionError::TypeMismatch {
                expected: want.to_owned(),
                found: typed.type_name,
                expr: node.to_string(),
            });
        }
    }
    Ok(typed)
}

fn leaf(node: &SexpNode, type_name: &str, kind: ExprKind) -> TypedExpression {
    TypedExpression {
        node: node.clone(),
        type_name: type_name.to_owned(),
        kind,
        children: Vec::new(),
    }
}

/// Maps an arbitrary label onto identifier characters. Characters outside
/// `[A-Za-z0-9_]` become `_xHH_`.
pub fn sanitize(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for c in name.chars() {
        if c.is_ascii_alphanumeric() || c == '_' {
            out.push(c);
        } else {
            out.push_str(&format!("_x{:X}_", c as u32));
        }
    }
    out
}

/// Tracks label → nonterminal names and refuses collisions.
#[derive(Default)]
struct Namer {
    by_name: HashMap<String, String>,
}

impl Namer {
    fn name(&mut self, prefix: &str, label: &str) -> Result<String, InductionError> {
        let nt = format!("{prefix}{}", sanitize(label));
        match self.by_name.get(&nt) {
            Some(prev) if prev != label => Err(InductionError::NameCollision(prev.clone(), label.to_owned())),
            Some(_) => Ok(nt),
            None => {
                self.by_name.insert(nt.clone(), label.to_owned());
                Ok(nt)
            }
        }
    }
}

/// Induces a grammar whose start symbol is the root type's nonterminal.
///
/// Programs must agree on their root type unless `root_type` is given.
pub fn induce_lispress_grammar(
    programs: &[TypedExpression],
    sigs: &SignatureTable,
    root_type: Option<&str>,
) -> Result<Grammar, InductionError> {
    if programs.is_empty() {
        return Err(InductionError::EmptyInput);
    }
    let mut namer = Namer::default();
    let mut productions = BTreeSet::new();
    let mut literal_types = BTreeSet::new();
    let mut observed_types = BTreeSet::new();
    for program in programs {
        collect_lispress(
            program,
            &mut namer,
            &mut productions,
            &mut literal_types,
            &mut observed_types,
        )?;
    }
    for type_name in &literal_types {
        let class = if type_name == STRING_TYPE {
            sigs.string_class()
        } else {
            sigs.literal(type_name)
                .cloned()
                .ok_or_else(|| InductionError::UnknownSymbol(type_name.clone()))?
        };
        let lhs = namer.name("T_", type_name)?;
        productions.extend(class.productions_under(&lhs));
    }

    let roots: BTreeSet<&str> = programs.iter().map(|p| p.type_name.as_str()).collect();
    let root = match root_type {
        Some(r) if observed_types.contains(r) => r.to_owned(),
        Some(r) => return Err(InductionError::UnobservedRoot(r.to_owned())),
        None if roots.len() == 1 => roots.into_iter().next().unwrap().to_owned(),
        None => {
            return Err(InductionError::ConflictingRoots(
                roots.into_iter().map(str::to_owned).collect(),
            ))
        }
    };
    let start = namer.name("T_", &root)?;
    Ok(Grammar::new(start, productions.into_iter().collect())?)
}

fn collect_lispress(
    expr: &TypedExpression,
    namer: &mut Namer,
    productions: &mut BTreeSet<Production>,
    literal_types: &mut BTreeSet<String>,
    observed: &mut BTreeSet<String>,
) -> Result<(), InductionError> {
    observed.insert(expr.type_name.clone());
    let lhs = namer.name("T_", &expr.type_name)?;
    match &expr.kind {
        ExprKind::Literal => {
            literal_types.insert(expr.type_name.clone());
        }
        ExprKind::BareSymbol(symbol) => {
            productions.insert(Production::new(lhs, vec![Symbol::t(symbol.clone())]));
        }
        ExprKind::Application(symbol) => {
            let rhs = if expr.children.is_empty() {
                vec![Symbol::t(format!("({symbol})"))]
            } else {
                let mut rhs = vec![Symbol::t(format!("({symbol} "))];
                for (i, child) in expr.children.iter().enumerate() {
                    if i > 0 {
                        rhs.push(Symbol::t(" "));
                    }
                    rhs.push(Symbol::Nonterminal(namer.name("T_", &child.type_name)?));
                }
                rhs.push(Symbol::t(")"));
                rhs
            };
            productions.insert(Production::new(lhs, rhs));
            for child in &expr.children {
                collect_lispress(child, namer, productions, literal_types, observed)?;
            }
        }
    }
    Ok(())
}

/// A node of an MTOP bracketed representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MtopTree {
    pub label: String,
    pub children: Vec<MtopChild>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MtopChild {
    Tree(MtopTree),
    /// Consecutive words, joined by single spaces.
    Text(String),
}

impl MtopTree {
    pub fn is_intent(&self) -> bool {
        self.label.starts_with("IN:")
    }

    /// The label without its `IN:` / `SL:` prefix.
    pub fn name(&self) -> &str {
        &self.label[3..]
    }
}

impl fmt::Display for MtopTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}", self.label)?;
        for child in &self.children {
            match child {
                MtopChild::Tree(t) => write!(f, " {t}")?,
                MtopChild::Text(s) => write!(f, " {s}")?,
            }
        }
        f.write_str("]")
    }
}

/// Parses `[IN:Label child ...]`. Slots may nest intents.
pub fn parse_mtop(text: &str) -> Result<MtopTree, InductionError> {
    let tokens = mtop_tokens(text);
    let mut pos = 0;
    let err = |offset: usize, message: &str| InductionError::Mtop {
        offset,
        message: message.to_owned(),
    };
    let tree = match tokens.first() {
        Some((_, "[")) => parse_mtop_node(&tokens, &mut pos)?,
        Some((offset, _)) => return Err(err(*offset, "expected `[`")),
        None => return Err(err(0, "empty input")),
    };
    if let Some((offset, _)) = tokens.get(pos) {
        return Err(err(*offset, "trailing input"));
    }
    if !tree.is_intent() {
        return Err(err(0, "root must be an intent (IN:)"));
    }
    Ok(tree)
}

fn mtop_tokens(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut begin = None;
    for (i, c) in text.char_indices() {
        if c == '[' || c == ']' || c.is_whitespace() {
            if let Some(b) = begin.take() {
                out.push((b, &text[b..i]));
            }
            if !c.is_whitespace() {
                out.push((i, &text[i..i + 1]));
            }
        } else if begin.is_none() {
            begin = Some(i);
        }
    }
    if let Some(b) = begin {
        out.push((b, &text[b..]));
    }
    out
}

fn parse_mtop_node(tokens: &[(usize, &str)], pos: &mut usize) -> Result<MtopTree, InductionError> {
    let open = tokens[*pos].0;
    *pos += 1;
    let label = match tokens.get(*pos) {
        Some((_, l)) if (l.starts_with("IN:") || l.starts_with("SL:")) && l.len() > 3 => l.to_string(),
        Some((offset, l)) => {
            return Err(InductionError::Mtop {
                offset: *offset,
                message: format!("label `{l}` lacks an IN:/SL: prefix"),
            })
        }
        None => {
            return Err(InductionError::Mtop {
                offset: open,
                message: "unbalanced brackets".into(),
            })
        }
    };
    *pos += 1;
    let mut children = Vec::new();
    let mut words: Vec<&str> = Vec::new();
    loop {
        match tokens.get(*pos) {
            None => {
                return Err(InductionError::Mtop {
                    offset: open,
                    message: "unbalanced brackets".into(),
                })
            }
            Some((_, "]")) => {
                *pos += 1;
                if !words.is_empty() {
                    children.push(MtopChild::Text(words.join(" ")));
                }
                return Ok(MtopTree { label, children });
            }
            Some((_, "[")) => {
                if !words.is_empty() {
                    children.push(MtopChild::Text(words.join(" ")));
                    words.clear();
                }
                children.push(MtopChild::Tree(parse_mtop_node(tokens, pos)?));
            }
            Some((_, word)) => {
                words.push(word);
                *pos += 1;
            }
        }
    }
}

pub const MTOP_ROOT: &str = "MTOP_ROOT";
const MTOP_TEXT: &str = "TEXT";

/// Induces one production per observed parent label and child pattern.
pub fn induce_mtop_grammar(trees: &[MtopTree]) -> Result<Grammar, InductionError> {
    if trees.is_empty() {
        return Err(InductionError::EmptyInput);
    }
    let mut namer = Namer::default();
    let mut productions = BTreeSet::new();
    let mut uses_text = false;
    for tree in trees {
        let root = collect_mtop(tree, &mut namer, &mut productions, &mut uses_text)?;
        productions.insert(Production::new(MTOP_ROOT, vec![Symbol::Nonterminal(root)]));
    }
    if uses_text {
        let word_char = CharClass::new(
            true,
            vec![
                ('[', '['),
                (']', ']'),
                (' ', ' '),
                ('\t', '\t'),
                ('\n', '\n'),
                ('\r', '\r'),
            ],
        );
        productions.insert(Production::new(MTOP_TEXT, vec![Symbol::nt("WORD")]));
        productions.insert(Production::new(
            MTOP_TEXT,
            vec![Symbol::nt("WORD"), Symbol::t(" "), Symbol::nt(MTOP_TEXT)],
        ));
        productions.insert(Production::new("WORD", vec![Symbol::Class(word_char.clone())]));
        productions.insert(Production::new(
            "WORD",
            vec![Symbol::Class(word_char), Symbol::nt("WORD")],
        ));
    }
    Ok(Grammar::new(MTOP_ROOT, productions.into_iter().collect())?)
}

fn mtop_nonterminal(tree: &MtopTree, namer: &mut Namer) -> Result<String, InductionError> {
    let prefix = if tree.is_intent() { "INTENT_" } else { "SLOT_" };
    namer.name(prefix, tree.name())
}

fn collect_mtop(
    tree: &MtopTree,
    namer: &mut Namer,
    productions: &mut BTreeSet<Production>,
    uses_text: &mut bool,
) -> Result<String, InductionError> {
    let lhs = mtop_nonterminal(tree, namer)?;
    let mut rhs = vec![Symbol::t(format!("[{}", tree.label))];
    for child in &tree.children {
        rhs.push(Symbol::t(" "));
        match child {
            MtopChild::Tree(t) => rhs.push(Symbol::Nonterminal(collect_mtop(t, namer, productions, uses_text)?)),
            MtopChild::Text(_) => {
                *uses_text = true;
                rhs.push(Symbol::nt(MTOP_TEXT));
            }
        }
    }
    rhs.push(Symbol::t("]"));
    productions.insert(Production::new(lhs.clone(), rhs));
    Ok(lhs)
}
