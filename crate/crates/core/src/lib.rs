//! Grammar-constrained decoding for semantic parsing.
//!
//! The pipeline: load or induce a context-free grammar for a meaning
//! representation, recognize output prefixes incrementally with an Earley
//! chart, turn each chart state into an exact mask over an arbitrary subword
//! vocabulary, and run beam search against a pluggable scorer. Around that
//! sit the benchmark utilities: split generation, few-shot prompt
//! construction, and the exact-match / Lispress-match metrics.

pub mod decoder;
pub mod earley;
pub mod grammar;
pub mod induction;
pub mod lispress;
pub mod prompting;
pub mod splits;
pub mod sql;
pub mod tokens;

pub use decoder::{
    decode, train_ngram, DecodeConfig, DecodeContext, DecodeError, DecodeResult, HttpScorer, LengthHandling,
    NgramScorer, Scorer, ScorerError,
};
pub use earley::{recognize, AllowedChars, CompiledGrammar, EarleyItem, PrefixState, Recognition};
pub use grammar::{parse_grammar, serialize_grammar, CharClass, Grammar, GrammarError, Production, Symbol};
pub use induction::{
    induce_lispress_grammar, induce_mtop_grammar, parse_mtop, type_check, InductionError, LiteralClass, MtopTree,
    SignatureTable, TypedExpression,
};
pub use lispress::{canonical, lispress_equal, parse_sexp, SexpError, SexpNode};
pub use prompting::{
    bm25_rank, build_prompt, render_input, retrieve_examples, whitespace_tokens, Bm25, ContextMode, Prompt,
    PromptConfig, PromptExample, PromptOrder,
};
pub use splits::{
    aggregate_low, evaluate, make_splits, DatasetExample, Metric, MetricReport, Prediction, SplitManifest, SplitOptions,
};
pub use sql::{base_sql_grammar, render_schema, specialize_sql_grammar, DbSchema, SqlError};
pub use tokens::{advance_token, allowed_tokens, TokenId, TokenMask, TokenTrie, Vocabulary};
