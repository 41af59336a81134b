//! Constrained beam search over a pluggable next-token scorer.
//!
//! The constrained and unconstrained paths share everything except the mask,
//! so comparing them isolates the effect of the grammar.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::earley::{CompiledGrammar, PrefixState};
use crate::grammar::{Grammar, GrammarError};
use crate::tokens::{advance_token, allowed_tokens, TokenId, TokenTrie, Vocabulary};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer returned {got} scores for a vocabulary of {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("scorer returned a non-finite score for token {0}")]
    NonFinite(TokenId),
    #[error("scorer endpoint answered with HTTP status {0}")]
    Status(u16),
    #[error("scorer transport error: {0}")]
    Transport(String),
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("no viable hypothesis remained at step {step} and none had finished")]
    NoViableHypothesis { step: usize },
    #[error("no hypothesis finished within {0} tokens")]
    MaxTokensReached(usize),
    #[error("invalid decode configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("n-gram order must be in 1..=5, got {0}")]
    Order(usize),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("token {id} is outside the vocabulary of size {size}")]
    TokenOutOfRange { id: TokenId, size: usize },
}

/// Next-token log-scores for every vocabulary id, given the conditioning
/// string and the tokens emitted so far. Must be deterministic and safe to
/// call from several threads at once.
pub trait Scorer: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn score(&self, conditioning: &str, prefix: &[TokenId]) -> Result<Vec<f64>, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn score(&self, conditioning: &str, prefix: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        (**self).score(conditioning, prefix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthHandling {
    #[default]
    None,
    /// Rank finished hypotheses by log-probability per token (eos included).
    NormalizeByLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_tokens: usize,
    pub constrained: bool,
    pub length: LengthHandling,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 5,
            max_tokens: 256,
            constrained: true,
            length: LengthHandling::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    /// Chart after replaying `tokens`; `None` once an unconstrained
    /// hypothesis leaves the grammar.
    pub state: Option<PrefixState>,
    pub finished: bool,
}

/// One finished output.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub text: String,
    /// Emitted ids, ending with eos.
    pub tokens: Vec<TokenId>,
    /// Exact sum of the chosen tokens' scores.
    pub logprob: f64,
    /// Ranking key: `logprob`, or its per-token mean when normalizing.
    pub score: f64,
}

/// Grammar, vocabulary and trie bundled for repeated decoding.
#[derive(Debug, Clone)]
pub struct DecodeContext {
    grammar: Arc<CompiledGrammar>,
    vocab: Vocabulary,
    trie: TokenTrie,
}

struct Candidate {
    parent: usize,
    token: TokenId,
    logprob: f64,
}

impl DecodeContext {
    pub fn new(grammar: &Grammar, vocab: Vocabulary) -> Result<Self, GrammarError> {
        Ok(Self::from_compiled(CompiledGrammar::new(grammar)?, vocab))
    }

    pub fn from_compiled(grammar: Arc<CompiledGrammar>, vocab: Vocabulary) -> Self {
        let trie = TokenTrie::build(&vocab);
        DecodeContext { grammar, vocab, trie }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn trie(&self) -> &TokenTrie {
        &self.trie
    }

    pub fn grammar(&self) -> &Arc<CompiledGrammar> {
        &self.grammar
    }

    pub fn initial_state(&self) -> PrefixState {
        PrefixState::new(Arc::clone(&self.grammar))
    }

    /// Beam search. Finished hypotheses are set aside and ranked together at
    /// the end; equal scores are broken by lexicographic token-id order.
    pub fn decode(
        &self,
        scorer: &dyn Scorer,
        cfg: &DecodeConfig,
        conditioning: &str,
    ) -> Result<Vec<DecodeResult>, DecodeError> {
        if cfg.beam_size == 0 {
            return Err(DecodeError::Config("beam_size must be at least 1"));
        }
        if cfg.max_tokens == 0 {
            return Err(DecodeError::Config("max_tokens must be at least 1"));
        }
        let eos = self.vocab.eos();
        let vocab_size = self.vocab.len();
        let mut beam = vec![Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            state: Some(self.initial_state()),
            finished: false,
        }];
        let mut finished: Vec<Hypothesis> = Vec::new();

        for step in 0..cfg.max_tokens {
            let expansions: Vec<Result<Vec<Candidate>, ScorerError>> = beam
                .par_iter()
                .enumerate()
                .map(|(parent, hyp)| {
                    let scores = scorer.score(conditioning, &hyp.tokens)?;
                    validate_scores(&scores, vocab_size)?;
                    let ids: Vec<TokenId> = if cfg.constrained {
                        let state = hyp.state.as_ref().expect("constrained hypotheses stay in the grammar");
                        allowed_tokens(state, &self.trie).ids
                    } else {
                        (0..vocab_size as TokenId).collect()
                    };
                    Ok(ids
                        .into_iter()
                        .map(|token| Candidate {
                            parent,
                            token,
                            logprob: hyp.logprob + scores[token as usize],
                        })
                        .collect())
                })
                .collect();
            let mut candidates = Vec::new();
            for e in expansions {
                candidates.extend(e?);
            }
            if candidates.is_empty() {
                if finished.is_empty() {
                    return Err(DecodeError::NoViableHypothesis { step });
                }
                break;
            }
            candidates.sort_by(|a, b| {
                b.logprob
                    .total_cmp(&a.logprob)
                    .then_with(|| beam[a.parent].tokens.cmp(&beam[b.parent].tokens))
                    .then_with(|| a.token.cmp(&b.token))
            });
            candidates.truncate(cfg.beam_size);

            let mut next = Vec::with_capacity(candidates.len());
            for cand in candidates {
                let parent = &beam[cand.parent];
                let mut tokens = parent.tokens.clone();
                tokens.push(cand.token);
                if cand.token == eos {
                    finished.push(Hypothesis {
                        tokens,
                        logprob: cand.logprob,
                        state: parent.state.clone(),
                        finished: true,
                    });
                    continue;
                }
                let state = match &parent.state {
                    Some(s) if cfg.constrained => {
                        Some(advance_token(s, &self.vocab, cand.token).expect("masked token advances"))
                    }
                    Some(s) => advance_token(s, &self.vocab, cand.token).ok(),
                    None => None,
                };
                next.push(Hypothesis {
                    tokens,
                    logprob: cand.logprob,
                    state,
                    finished: false,
                });
            }
            beam = next;
            if beam.is_empty() {
                break;
            }
        }

        if finished.is_empty() {
            return Err(DecodeError::MaxTokensReached(cfg.max_tokens));
        }
        let mut results: Vec<DecodeResult> = finished
            .into_iter()
            .map(|h| {
                let score = match cfg.length {
                    LengthHandling::None => h.logprob,
                    LengthHandling::NormalizeByLength => h.logprob / h.tokens.len() as f64,
                };
                DecodeResult {
                    text: self.vocab.detokenize(&h.tokens),
                    tokens: h.tokens,
                    logprob: h.logprob,
                    score,
                }
            })
            .collect();
        results.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
        Ok(results)
    }
}

fn validate_scores(scores: &[f64], vocab_size: usize) -> Result<(), ScorerError> {
    if scores.len() != vocab_size {
        return Err(ScorerError::WrongLength {
            expected: vocab_size,
            got: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(ScorerError::NonFinite(i as TokenId));
    }
    Ok(())
}

/// One-shot convenience around [`DecodeContext::decode`].
pub fn decode(
    scorer: &dyn Scorer,
    grammar: &Grammar,
    vocab: &Vocabulary,
    cfg: &DecodeConfig,
    conditioning: &str,
) -> Result<Vec<DecodeResult>, DecodeError> {
    DecodeContext::new(grammar, vocab.clone())?.decode(scorer, cfg, conditioning)
}

/// Next-token counts after one history, with their total.
type Continuations = (HashMap<TokenId, u64>, u64);

/// Add-one smoothed n-gram model over token ids. Histories shorter than
/// `order - 1` are padded with a begin marker. Ignores the conditioning.
#[derive(Debug, Clone)]
pub struct NgramScorer {
    order: usize,
    vocab_size: usize,
    counts: HashMap<Vec<Option<TokenId>>, Continuations>,
}

impl NgramScorer {
    pub fn order(&self) -> usize {
        self.order
    }

    fn history(&self, prefix: &[TokenId]) -> Vec<Option<TokenId>> {
        let n = self.order - 1;
        let mut h = vec![None; n.saturating_sub(prefix.len())];
        h.extend(prefix[prefix.len().saturating_sub(n)..].iter().map(|&t| Some(t)));
        h
    }

    /// log P(token | prefix).
    pub fn log_prob(&self, prefix: &[TokenId], token: TokenId) -> f64 {
        let (count, total) = match self.counts.get(&self.history(prefix)) {
            Some((next, total)) => (next.get(&token).copied().unwrap_or(0), *total),
            None => (0, 0),
        };
        ((count + 1) as f64 / (total + self.vocab_size as u64) as f64).ln()
    }
}

pub fn train_ngram(corpus: &[Vec<TokenId>], order: usize, vocab_size: usize) -> Result<NgramScorer, NgramError> {
    if !(1..=5).contains(&order) {
        return Err(NgramError::Order(order));
    }
    if corpus.iter().all(Vec::is_empty) {
        return Err(NgramError::EmptyCorpus);
    }
    let mut scorer = NgramScorer {
        order,
        vocab_size,
        counts: HashMap::new(),
    };
    for seq in corpus {
        for (i, &token) in seq.iter().enumerate() {
            if token as usize >= vocab_size {
                return Err(NgramError::TokenOutOfRange {
                    id: token,
                    size: vocab_size,
                });
            }
            let history = scorer.history(&seq[..i]);
            let entry = scorer.counts.entry(history).or_default();
            *entry.0.entry(token).or_default() += 1;
            entry.1 += 1;
        }
    }
    Ok(scorer)
}

impl Scorer for NgramScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score(&self, _conditioning: &str, prefix: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        Ok((0..self.vocab_size as TokenId)
            .map(|t| self.log_prob(prefix, t))
            .collect())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub conditioning: String,
    pub prefix: Vec<TokenId>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

/// Scorer backed by an HTTP endpoint that accepts a JSON [`ScoreRequest`] by
/// POST and answers with a [`ScoreResponse`].
#[derive(Debug, Clone)]
pub struct HttpScorer {
    url: String,
    vocab_size: usize,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>, vocab_size: usize, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpScorer {
            url: url.into(),
            vocab_size,
            agent,
        }
    }
}

impl Scorer for HttpScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score(&self, conditioning: &str, prefix: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        let request = ScoreRequest {
            conditioning: conditioning.to_owned(),
            prefix: prefix.to_vec(),
        };
        let response = self.agent.post(&self.url).send_json(&request).map_err(|e| match e {
            ureq::Error::StatusCode(code) => ScorerError::Status(code),
            other => ScorerError::Transport(other.to_string()),
        })?;
        let body: ScoreResponse = response
            .into_body()
            .read_json()
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        validate_scores(&body.scores, self.vocab_size)?;
        Ok(body.scores)
    }
}
