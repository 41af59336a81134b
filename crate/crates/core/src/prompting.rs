//! Few-shot prompt construction: input rendering, BM25 retrieval, and
//! budgeted assembly of `Human:` / `Computer:` blocks.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::splits::DatasetExample;
use crate::sql::render_schema;

pub const PROMPT_HEADER: &str = "Let's translate what a human user says into what a computer might say.";
pub const DEFAULT_BUDGET: usize = 1500;
pub const DEFAULT_MAX_EXAMPLES: usize = 20;
pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("budget {budget} is below the {needed} tokens of header and target")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("example {0} has an empty input")]
    EmptyInput(usize),
    #[error("example {0} has a non-finite relevance")]
    NonFiniteRelevance(usize),
    #[error("unknown context mode `{0}`")]
    UnknownMode(String),
    #[error("unknown ordering `{0}`")]
    UnknownOrder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqlHistory {
    None,
    LastInteraction,
    AllInteractions,
}

/// How much conversational or database context precedes the utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextMode {
    None,
    LastAgent,
    LastUserAndAgent,
    Sql { history: SqlHistory, values: bool },
}

impl FromStr for ContextMode {
    type Err = PromptError;

    /// Dialogue modes: `none`, `last_agent`, `last_user_and_agent`. SQL
    /// modes: `sql`, `sql_last_interaction`, `sql_all_interactions`, each
    /// optionally suffixed with `+values`.
    fn from_str(s: &str) -> Result<Self, PromptError> {
        let norm = s.replace('-', "_");
        let (base, values) = match norm.strip_suffix("+values") {
            Some(b) => (b, true),
            None => (norm.as_str(), false),
        };
        let sql = |history| Ok(ContextMode::Sql { history, values });
        match (base, values) {
            ("none", false) => Ok(ContextMode::None),
            ("last_agent", false) => Ok(ContextMode::LastAgent),
            ("last_user_and_agent", false) => Ok(ContextMode::LastUserAndAgent),
            ("sql", _) => sql(SqlHistory::None),
            ("sql_last_interaction", _) => sql(SqlHistory::LastInteraction),
            ("sql_all_interactions", _) => sql(SqlHistory::AllInteractions),
            _ => Err(PromptError::UnknownMode(s.to_owned())),
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextMode::None => f.write_str("none"),
            ContextMode::LastAgent => f.write_str("last_agent"),
            ContextMode::LastUserAndAgent => f.write_str("last_user_and_agent"),
            ContextMode::Sql { history, values } => {
                f.write_str(match history {
                    SqlHistory::None => "sql",
                    SqlHistory::LastInteraction => "sql_last_interaction",
                    SqlHistory::AllInteractions => "sql_all_interactions",
                })?;
                if *values {
                    f.write_str("+values")?;
                }
                Ok(())
            }
        }
    }
}

/// Renders the model input for `ex`. Dialogue modes give `l | a | u`,
/// `a | u` or `u`; SQL modes give `c , d , u` where `c` is the prior
/// utterances joined by ` | ` and `d` is the rendered schema. Empty context
/// pieces are left out along with their separator.
pub fn render_input(ex: &DatasetExample, mode: ContextMode) -> String {
    let mut parts: Vec<String> = Vec::new();
    let sep = match mode {
        ContextMode::None => " | ",
        ContextMode::LastAgent => {
            parts.push(ex.last_agent_utt.clone());
            " | "
        }
        ContextMode::LastUserAndAgent => {
            parts.push(ex.last_user_utt.clone());
            parts.push(ex.last_agent_utt.clone());
            " | "
        }
        ContextMode::Sql { history, values } => {
            let prior = &ex.prior_interactions;
            let c = match history {
                SqlHistory::None => String::new(),
                SqlHistory::LastInteraction => prior.last().cloned().unwrap_or_default(),
                SqlHistory::AllInteractions => prior.join(" | "),
            };
            parts.push(c);
            parts.push(ex.schema.as_ref().map(|s| render_schema(s, values)).unwrap_or_default());
            " , "
        }
    };
    parts.push(ex.utterance.clone());
    parts.retain(|p| !p.is_empty());
    parts.join(sep)
}

fn terms(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Okapi BM25 index over whitespace-separated, lowercased terms.
#[derive(Debug, Clone)]
pub struct Bm25 {
    k1: f64,
    b: f64,
    doc_tf: Vec<HashMap<String, usize>>,
    doc_len: Vec<usize>,
    avg_len: f64,
    doc_freq: HashMap<String, usize>,
}

impl Bm25 {
    pub fn new<S: AsRef<str>>(pool: &[S], k1: f64, b: f64) -> Self {
        let mut doc_tf = Vec::with_capacity(pool.len());
        let mut doc_len = Vec::with_capacity(pool.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for doc in pool {
            let ts = terms(doc.as_ref());
            doc_len.push(ts.len());
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in ts {
                *tf.entry(t).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            doc_tf.push(tf);
        }
        let avg_len = if pool.is_empty() {
            0.0
        } else {
            doc_len.iter().sum::<usize>() as f64 / pool.len() as f64
        };
        Bm25 {
            k1,
            b,
            doc_tf,
            doc_len,
            avg_len,
            doc_freq,
        }
    }

    /// `ln((N - n + 0.5) / (n + 0.5) + 1)`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        let total = self.doc_tf.len() as f64;
        ((total - n + 0.5) / (n + 0.5) + 1.0).ln()
    }

    /// Score of every pool document; repeated query terms count repeatedly.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let q = terms(query);
        (0..self.doc_tf.len())
            .map(|d| {
                let norm = if self.avg_len > 0.0 {
                    1.0 - self.b + self.b * self.doc_len[d] as f64 / self.avg_len
                } else {
                    1.0
                };
                q.iter()
                    .map(|t| {
                        let f = self.doc_tf[d].get(t).copied().unwrap_or(0) as f64;
                        if f == 0.0 {
                            return 0.0;
                        }
                        self.idf(t) * f * (self.k1 + 1.0) / (f + self.k1 * norm)
                    })
                    .sum()
            })
            .collect()
    }

    /// Pool indices with scores, best first; ties keep pool order.
    pub fn rank(&self, query: &str) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self.scores(query).into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }
}

pub fn bm25_rank<S: AsRef<str>>(query: &str, pool: &[S], k1: f64, b: f64) -> Vec<(usize, f64)> {
    Bm25::new(pool, k1, b).rank(query)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptExample {
    pub uc: String,
    pub p: String,
    pub relevance: f64,
}

/// The `k` most relevant pool examples for `target`, rendered with `mode`.
pub fn retrieve_examples(target: &str, pool: &[DatasetExample], mode: ContextMode, k: usize) -> Vec<PromptExample> {
    let rendered: Vec<String> = pool.iter().map(|ex| render_input(ex, mode)).collect();
    bm25_rank(target, &rendered, DEFAULT_K1, DEFAULT_B)
        .into_iter()
        .take(k)
        .map(|(i, relevance)| PromptExample {
            uc: rendered[i].clone(),
            p: pool[i].gold.clone(),
            relevance,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrder {
    Random {
        seed: u64,
    },
    /// Most relevant example first.
    BestFirst,
    /// Most relevant example last, next to the target.
    BestLast,
}

impl FromStr for PromptOrder {
    type Err = PromptError;

    /// `best_first`, `best_last`, or `random` (seed 0) / `random:<seed>`.
    fn from_str(s: &str) -> Result<Self, PromptError> {
        let norm = s.replace('-', "_");
        match norm.as_str() {
            "best_first" => Ok(PromptOrder::BestFirst),
            "best_last" => Ok(PromptOrder::BestLast),
            "random" => Ok(PromptOrder::Random { seed: 0 }),
            other => other
                .strip_prefix("random:")
                .and_then(|n| n.parse().ok())
                .map(|seed| PromptOrder::Random { seed })
                .ok_or_else(|| PromptError::UnknownOrder(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub order: PromptOrder,
    pub budget: usize,
    pub max_examples: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            order: PromptOrder::BestLast,
            budget: DEFAULT_BUDGET,
            max_examples: DEFAULT_MAX_EXAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt: String,
    pub n_examples: usize,
    /// Indices into the supplied examples, in prompt order.
    #[serde(skip)]
    pub included: Vec<usize>,
}

pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

fn example_block(ex: &PromptExample) -> String {
    format!("Human: {}\nComputer: {}", ex.uc, ex.p)
}

fn target_block(target: &str) -> String {
    format!("Human: {target}\nComputer:")
}

fn assemble(examples: &[PromptExample], order: &[usize], target: &str) -> String {
    let mut blocks = vec![PROMPT_HEADER.to_owned()];
    blocks.extend(order.iter().map(|&i| example_block(&examples[i])));
    blocks.push(target_block(target));
    blocks.join("\n\n")
}

/// Builds a prompt from `examples`. Examples are admitted in descending
/// relevance while the summed block counts stay within the budget, then
/// arranged by `cfg.order`.
pub fn build_prompt(
    examples: &[PromptExample],
    target: &str,
    cfg: &PromptConfig,
    counter: &dyn Fn(&str) -> usize,
) -> Result<Prompt, PromptError> {
    for (i, ex) in examples.iter().enumerate() {
        if ex.uc.is_empty() {
            return Err(PromptError::EmptyInput(i));
        }
        if !ex.relevance.is_finite() {
            return Err(PromptError::NonFiniteRelevance(i));
        }
    }
    let fixed = counter(PROMPT_HEADER) + counter(&target_block(target));
    if fixed > cfg.budget {
        return Err(PromptError::BudgetTooSmall {
            needed: fixed,
            budget: cfg.budget,
        });
    }
    let mut by_relevance: Vec<usize> = (0..examples.len()).collect();
    by_relevance.sort_by(|&a, &b| examples[b].relevance.total_cmp(&examples[a].relevance).then(a.cmp(&b)));

    let mut used = fixed;
    let mut included = Vec::new();
    for &i in &by_relevance {
        if included.len() == cfg.max_examples {
            break;
        }
        let cost = counter(&example_block(&examples[i]));
        if used + cost > cfg.budget {
            break;
        }
        used += cost;
        included.push(i);
    }

    loop {
        let order = arrange(&included, cfg.order);
        let text = assemble(examples, &order, target);
        // Counters that are not additive over blocks can still overshoot.
        if counter(&text) <= cfg.budget || included.is_empty() {
            return Ok(Prompt {
                prompt: text,
                n_examples: order.len(),
                included: order,
            });
        }
        included.pop();
    }
}

/// `included` is in descending relevance.
fn arrange(included: &[usize], order: PromptOrder) -> Vec<usize> {
    let mut out = included.to_vec();
    match order {
        PromptOrder::BestFirst => {}
        PromptOrder::BestLast => out.reverse(),
        PromptOrder::Random { seed } => out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    out
}
