//! Subword vocabularies, the token trie, and exact next-token masks.
//!
//! Masks are computed over token *strings*, so any tokenizer works, including
//! byte-level ones whose bytes are mapped to characters.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::earley::{PrefixState, ScanStack};

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum TokenError {
    #[error("token {0} has an empty string (only eos may be empty)")]
    EmptyToken(TokenId),
    #[error("eos token {0} must map to the empty string")]
    NonEmptyEos(TokenId),
    #[error("eos id {eos} is outside the vocabulary of size {size}")]
    EosOutOfRange { eos: TokenId, size: usize },
    #[error("token ids are not dense: id {0} missing")]
    MissingId(TokenId),
    #[error("token id {0} appears twice")]
    DuplicateId(TokenId),
    #[error("vocabulary file has no eos header")]
    MissingEos,
    #[error("token {0} is not allowed in the current state")]
    Disallowed(TokenId),
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(TokenId),
    #[error("eos cannot be advanced over")]
    AdvanceEos,
    #[error("vocabulary line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense id → string map with a designated end-of-sequence id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<String>,
    eos: TokenId,
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum VocabRecord {
    Header { eos: TokenId },
    Entry { id: TokenId, text: String },
}

impl Vocabulary {
    /// `entries[eos]` must be empty and every other entry non-empty.
    pub fn new(entries: Vec<String>, eos: TokenId) -> Result<Self, TokenError> {
        if eos as usize >= entries.len() {
            return Err(TokenError::EosOutOfRange {
                eos,
                size: entries.len(),
            });
        }
        for (id, text) in entries.iter().enumerate() {
            let id = id as TokenId;
            if id == eos && !text.is_empty() {
                return Err(TokenError::NonEmptyEos(eos));
            }
            if id != eos && text.is_empty() {
                return Err(TokenError::EmptyToken(id));
            }
        }
        Ok(Vocabulary { entries, eos })
    }

    /// Builds a vocabulary from non-eos strings; eos is appended as the last id.
    pub fn with_eos_last<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self, TokenError> {
        let mut entries: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let eos = entries.len() as TokenId;
        entries.push(String::new());
        Vocabulary::new(entries, eos)
    }

    /// Reads the JSON Lines format: `{"eos": id}` plus one `{"id", "text"}`
    /// record per token.
    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, TokenError> {
        let mut eos = None;
        let mut by_id: BTreeMap<TokenId, String> = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: VocabRecord = serde_json::from_str(&line).map_err(|e| TokenError::Format {
                line: idx + 1,
                message: e.to_string(),
            })?;
            match record {
                VocabRecord::Header { eos: id } => eos = Some(id),
                VocabRecord::Entry { id, text } => {
                    if by_id.insert(id, text).is_some() {
                        return Err(TokenError::DuplicateId(id));
                    }
                }
            }
        }
        let eos = eos.ok_or(TokenError::MissingEos)?;
        by_id.entry(eos).or_default();
        let mut entries = Vec::with_capacity(by_id.len());
        for (expected, (id, text)) in by_id.into_iter().enumerate() {
            if id as usize != expected {
                return Err(TokenError::MissingId(expected as TokenId));
            }
            entries.push(text);
        }
        Vocabulary::new(entries, eos)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&VocabRecord::Header { eos: self.eos }).expect("serializable");
        out.push('\n');
        for (id, text) in self.entries.iter().enumerate() {
            let rec = VocabRecord::Entry {
                id: id as TokenId,
                text: text.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn text(&self, id: TokenId) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    /// Concatenates token strings; eos contributes nothing.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter().filter_map(|&id| self.text(id)).collect()
    }

    /// Greedy longest-match segmentation. `None` if some character cannot be
    /// covered by any token.
    pub fn tokenize_greedy(&self, trie: &TokenTrie, text: &str) -> Option<Vec<TokenId>> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let mut node = 0;
            let mut best = None;
            for (i, c) in chars[pos..].iter().enumerate() {
                match trie.child(node, *c) {
                    Some(next) => {
                        node = next;
                        if let Some(&id) = trie.nodes[node].tokens.first() {
                            best = Some((id, i + 1));
                        }
                    }
                    None => break,
                }
            }
            let (id, len) = best?;
            out.push(id);
            pos += len;
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: BTreeMap<char, usize>,
    tokens: Vec<TokenId>,
}

/// Prefix trie over the non-eos token strings of a [`Vocabulary`].
#[derive(Debug, Clone)]
pub struct TokenTrie {
    nodes: Vec<TrieNode>,
    eos: TokenId,
    vocab_size: usize,
}

impl TokenTrie {
    pub fn build(vocab: &Vocabulary) -> Self {
        let mut nodes = vec![TrieNode::default()];
        for (id, text) in vocab.entries.iter().enumerate() {
            let id = id as TokenId;
            if id == vocab.eos {
                continue;
            }
            let mut node = 0;
            for c in text.chars() {
                node = match nodes[node].children.get(&c) {
                    Some(&next) => next,
                    None => {
                        nodes.push(TrieNode::default());
                        let next = nodes.len() - 1;
                        nodes[node].children.insert(c, next);
                        next
                    }
                };
            }
            nodes[node].tokens.push(id);
        }
        TokenTrie {
            nodes,
            eos: vocab.eos,
            vocab_size: vocab.len(),
        }
    }

    fn child(&self, node: usize, c: char) -> Option<usize> {
        self.nodes[node].children.get(&c).copied()
    }

    /// Token ids whose string is exactly `text`.
    pub fn lookup(&self, text: &str) -> &[TokenId] {
        let mut node = 0;
        for c in text.chars() {
            match self.child(node, c) {
                Some(next) => node = next,
                None => return &[],
            }
        }
        &self.nodes[node].tokens
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Number of tokens stored (eos excluded).
    pub fn token_count(&self) -> usize {
        self.nodes.iter().map(|n| n.tokens.len()).sum()
    }
}

/// Legal next tokens, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenMask {
    pub ids: Vec<TokenId>,
}

impl TokenMask {
    pub fn contains(&self, id: TokenId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Dense view sized to the vocabulary.
    pub fn dense(&self, vocab_size: usize) -> Vec<bool> {
        let mut out = vec![false; vocab_size];
        for &id in &self.ids {
            out[id as usize] = true;
        }
        out
    }
}

/// Every token whose full string is a viable continuation of `state`, plus
/// eos iff the prefix is complete.
///
/// Walks the trie and the chart together; a rejected character prunes the
/// whole subtree below it.
pub fn allowed_tokens(state: &PrefixState, trie: &TokenTrie) -> TokenMask {
    let mut ids = Vec::new();
    let mut stack = ScanStack::new(state);
    walk(trie, 0, &mut stack, &mut ids);
    if state.is_complete() {
        ids.push(trie.eos);
    }
    ids.sort_unstable();
    TokenMask { ids }
}

fn walk(trie: &TokenTrie, node: usize, stack: &mut ScanStack, out: &mut Vec<TokenId>) {
    let children = &trie.nodes[node].children;
    if children.is_empty() {
        return;
    }
    let allowed = stack.allowed();
    let mut visit = |c: char, child: usize, stack: &mut ScanStack| {
        if stack.push(c) {
            out.extend_from_slice(&trie.nodes[child].tokens);
            walk(trie, child, stack, out);
            stack.pop();
        }
    };
    if allowed.classes.is_empty() && allowed.chars.len() < children.len() {
        for &c in &allowed.chars {
            if let Some(&child) = children.get(&c) {
                visit(c, child, stack);
            }
        }
    } else {
        for (&c, &child) in children {
            if allowed.contains(c) {
                visit(c, child, stack);
            }
        }
    }
}

/// Advances `state` over the characters of token `id`.
pub fn advance_token(state: &PrefixState, vocab: &Vocabulary, id: TokenId) -> Result<PrefixState, TokenError> {
    if id == vocab.eos {
        return Err(TokenError::AdvanceEos);
    }
    let text = vocab.text(id).ok_or(TokenError::UnknownId(id))?;
    state.advance_str(text).map_err(|_| TokenError::Disallowed(id))
}
