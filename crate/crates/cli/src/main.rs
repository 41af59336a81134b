use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use semparse_core::decoder::{train_ngram, DecodeConfig, DecodeContext, HttpScorer, LengthHandling, Scorer};
use semparse_core::induction::{induce_lispress_grammar, induce_mtop_grammar, parse_mtop, type_check, SignatureTable};
use semparse_core::prompting::{
    build_prompt, render_input, retrieve_examples, whitespace_tokens, ContextMode, PromptConfig, PromptOrder,
};
use semparse_core::splits::{
    evaluate, make_splits, read_dataset, read_predictions, DatasetExample, Metric, Portion, SplitOptions,
};
use semparse_core::sql::{base_sql_grammar, specialize_sql_grammar, DbSchema};
use semparse_core::{
    allowed_tokens, parse_grammar, parse_sexp, recognize, serialize_grammar, CompiledGrammar, Grammar, PrefixState,
    Recognition, TokenTrie, Vocabulary,
};

#[derive(Parser)]
#[command(name = "semparse", version, about = "Grammar-constrained semantic parsing toolkit")]
struct Cli {
    /// Print results and errors as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// JSON object of flag values; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Induce a grammar from typed Lispress programs or MTOP trees.
    InduceGrammar(InduceArgs),
    /// Specialize the SQL grammar to one database schema.
    SpecializeSql(SpecializeArgs),
    /// Test whether a string belongs to a grammar's language.
    Check(CheckArgs),
    /// Characters that may follow a prefix.
    AllowedChars(AllowedCharsArgs),
    /// Vocabulary ids that may follow a prefix.
    AllowedTokens(AllowedTokensArgs),
    /// Beam-search decode with an n-gram or HTTP scorer.
    Decode(DecodeArgs),
    /// Generate low/medium/high and test splits.
    MakeSplits(SplitArgs),
    /// Build a few-shot prompt with BM25-retrieved examples.
    BuildPrompt(PromptArgs),
    /// Score predictions against gold programs.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InduceFormat {
    Lispress,
    Mtop,
}

#[derive(Args)]
struct InduceArgs {
    #[arg(long, value_enum, default_value = "lispress")]
    format: InduceFormat,
    /// One program per line.
    #[arg(long, conflicts_with = "dataset")]
    programs: Option<PathBuf>,
    /// Dataset JSON Lines; gold programs of the train portion are used.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Signature JSON Lines (lispress only).
    #[arg(long)]
    signatures: Option<PathBuf>,
    #[arg(long)]
    root_type: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpecializeArgs {
    /// Schema JSON.
    #[arg(long)]
    schema: PathBuf,
    /// Base grammar; defaults to the bundled SQL subset.
    #[arg(long)]
    grammar: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    input: String,
}

#[derive(Args)]
struct AllowedCharsArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long, default_value = "")]
    prefix: String,
}

#[derive(Args)]
struct AllowedTokensArgs {
    #[arg(long)]
    grammar: PathBuf,
    /// Vocabulary JSON Lines.
    #[arg(long)]
    vocab: PathBuf,
    /// Text already emitted.
    #[arg(long, default_value = "")]
    prefix: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerKind {
    Ngram,
    Http,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum, default_value = "ngram")]
    scorer: ScorerKind,
    /// Training text for the n-gram scorer, one output per line.
    #[arg(long)]
    ngram_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long)]
    scorer_url: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 256)]
    max_tokens: usize,
    #[arg(long, overrides_with = "unconstrained")]
    constrained: bool,
    #[arg(long, overrides_with = "constrained")]
    unconstrained: bool,
    #[arg(long)]
    normalize_length: bool,
    /// Conditioning text for a single decode.
    #[arg(long, conflicts_with = "dataset")]
    input: Option<String>,
    /// Decode every example; writes `{"id","prediction"}` lines.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "none")]
    context_mode: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Treat the released dev set as test and carve dev from train.
    #[arg(long)]
    no_public_test: bool,
    /// Let the three low-resource train sets overlap.
    #[arg(long)]
    overlapping_low: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PromptArgs {
    /// Dataset JSON Lines; the train portion is the retrieval pool.
    #[arg(long)]
    dataset: PathBuf,
    /// Example to build the prompt for.
    #[arg(long, conflicts_with = "utterance")]
    target_id: Option<String>,
    /// Raw utterance to build the prompt for.
    #[arg(long)]
    utterance: Option<String>,
    #[arg(long, default_value = "none")]
    context_mode: String,
    /// best_first, best_last or random.
    #[arg(long, default_value = "best_last")]
    order: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1500)]
    budget: usize,
    #[arg(long, default_value_t = 20)]
    max_examples: usize,
    /// Print `{"prompt","n_examples"}` instead of plain text.
    #[arg(long)]
    emit_json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "exact")]
    metric: String,
    /// Restrict gold to one portion (train, dev or test).
    #[arg(long)]
    portion: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad invocation that clap cannot detect by itself.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

/// Appends config entries whose flag is absent from `argv`.
fn merge_config(argv: &mut Vec<String>) -> Result<()> {
    let Some(path) = config_path(argv) else {
        return Ok(());
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let Value::Object(entries) =
        serde_json::from_str::<Value>(&text).with_context(|| format!("parsing config {path}"))?
    else {
        bail!("config {path} must be a JSON object");
    };
    let present = |flag: &str| argv.iter().any(|a| a == flag || a.starts_with(&format!("{flag}=")));
    let mut extra = Vec::new();
    for (key, value) in entries {
        let key = key.replace('_', "-");
        let flag = format!("--{key}");
        let negated = match key.as_str() {
            "constrained" => Some("--unconstrained"),
            "unconstrained" => Some("--constrained"),
            _ => None,
        };
        if present(&flag) || negated.is_some_and(present) {
            continue;
        }
        match value {
            Value::Bool(true) => extra.push(flag),
            Value::Bool(false) => {
                if let Some(n) = negated {
                    extra.push(n.to_owned());
                }
            }
            Value::String(s) => extra.extend([flag, s]),
            Value::Number(n) => extra.extend([flag, n.to_string()]),
            Value::Null => {}
            other => bail!("config key `{key}` has unsupported value {other}"),
        }
    }
    argv.extend(extra);
    Ok(())
}

fn config_path(argv: &[String]) -> Option<String> {
    argv.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            argv.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_owned)
        }
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_grammar(path: &Path) -> Result<Grammar> {
    parse_grammar(&read_text(path)?).with_context(|| format!("grammar {}", path.display()))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Vocabulary::read_jsonl(BufReader::new(file)).with_context(|| format!("vocabulary {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Vec<DatasetExample>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_dataset(BufReader::new(file)).with_context(|| format!("dataset {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn parse_mode(s: &str) -> Result<ContextMode> {
    s.parse()
        .map_err(|e: semparse_core::prompting::PromptError| usage(e.to_string()))
}

/// Outcome of a successful run: 0, or 2 for a negative `check` verdict.
type Status = u8;

fn run(cli: Cli) -> Result<Status> {
    let json_out = cli.json;
    match cli.command {
        Command::InduceGrammar(a) => {
            let programs: Vec<String> = match (&a.programs, &a.dataset) {
                (Some(p), _) => read_text(p)?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(str::to_owned)
                    .collect(),
                (None, Some(d)) => load_dataset(d)?
                    .into_iter()
                    .filter(|e| e.portion == Portion::Train)
                    .map(|e| e.gold)
                    .collect(),
                (None, None) => return Err(usage("one of --programs or --dataset is required")),
            };
            let grammar = match a.format {
                InduceFormat::Lispress => {
                    let Some(sig_path) = &a.signatures else {
                        return Err(usage("--signatures is required for lispress induction"));
                    };
                    let file = File::open(sig_path).with_context(|| format!("opening {}", sig_path.display()))?;
                    let sigs = SignatureTable::read_jsonl(BufReader::new(file))?;
                    let typed = programs
                        .iter()
                        .enumerate()
                        .map(|(i, p)| {
                            let tree = parse_sexp(p).with_context(|| format!("program {}", i + 1))?;
                            type_check(&tree, &sigs).with_context(|| format!("program {}", i + 1))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    induce_lispress_grammar(&typed, &sigs, a.root_type.as_deref())?
                }
                InduceFormat::Mtop => {
                    let trees = programs
                        .iter()
                        .enumerate()
                        .map(|(i, p)| parse_mtop(p).with_context(|| format!("tree {}", i + 1)))
                        .collect::<Result<Vec<_>>>()?;
                    induce_mtop_grammar(&trees)?
                }
            };
            emit(a.out.as_deref(), &serialize_grammar(&grammar))?;
            Ok(0)
        }
        Command::SpecializeSql(a) => {
            let base = match &a.grammar {
                Some(p) => load_grammar(p)?,
                None => base_sql_grammar(),
            };
            let schema: DbSchema = serde_json::from_str(&read_text(&a.schema)?)
                .with_context(|| format!("schema {}", a.schema.display()))?;
            emit(
                a.out.as_deref(),
                &serialize_grammar(&specialize_sql_grammar(&base, &schema)?),
            )?;
            Ok(0)
        }
        Command::Check(a) => {
            let compiled = CompiledGrammar::new(&load_grammar(&a.grammar)?)?;
            let (status, text, value) = match recognize(&compiled, &a.input) {
                Recognition::Accepted => (0, "accepted".to_owned(), json!({"result": "accepted"})),
                Recognition::Incomplete => (
                    2,
                    format!("incomplete: valid prefix of length {}", a.input.chars().count()),
                    json!({"result": "incomplete", "length": a.input.chars().count()}),
                ),
                Recognition::RejectedAt(k) => (
                    2,
                    format!("rejected at offset {k}"),
                    json!({"result": "rejected", "offset": k}),
                ),
            };
            emit(None, &if json_out { value.to_string() } else { text })?;
            Ok(status)
        }
        Command::AllowedChars(a) => {
            let state = prefix_state(&load_grammar(&a.grammar)?, &a.prefix)?;
            let allowed = state.allowed_next_chars();
            let text = if json_out {
                json!({
                    "chars": allowed.chars.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
                    "classes": allowed.classes.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
                    "complete": state.is_complete(),
                })
                .to_string()
            } else {
                format!("{allowed}\ncomplete: {}", state.is_complete())
            };
            emit(None, &text)?;
            Ok(0)
        }
        Command::AllowedTokens(a) => {
            let state = prefix_state(&load_grammar(&a.grammar)?, &a.prefix)?;
            let vocab = load_vocab(&a.vocab)?;
            let mask = allowed_tokens(&state, &TokenTrie::build(&vocab));
            let text = if json_out {
                json!({"allowed": mask.ids, "complete": state.is_complete()}).to_string()
            } else {
                mask.ids
                    .iter()
                    .map(|&id| format!("{id}\t{:?}", vocab.text(id).unwrap_or("")))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            emit(None, &text)?;
            Ok(0)
        }
        Command::Decode(a) => run_decode(a, json_out),
        Command::MakeSplits(a) => {
            let dataset = load_dataset(&a.dataset)?;
            let options = SplitOptions {
                has_public_test: !a.no_public_test,
                seed: a.seed,
                disjoint_low: !a.overlapping_low,
            };
            emit(a.out.as_deref(), &make_splits(&dataset, &options)?.to_json())?;
            Ok(0)
        }
        Command::BuildPrompt(a) => {
            let dataset = load_dataset(&a.dataset)?;
            let mode = parse_mode(&a.context_mode)?;
            let order = match a
                .order
                .parse()
                .map_err(|e: semparse_core::prompting::PromptError| usage(e.to_string()))?
            {
                PromptOrder::Random { .. } => PromptOrder::Random { seed: a.seed },
                other => other,
            };
            let (target, exclude) = match (&a.target_id, &a.utterance) {
                (Some(id), _) => {
                    let ex = dataset
                        .iter()
                        .find(|e| &e.id == id)
                        .with_context(|| format!("no example with id `{id}`"))?;
                    (render_input(ex, mode), Some(id.as_str()))
                }
                (None, Some(u)) => (u.clone(), None),
                (None, None) => return Err(usage("one of --target-id or --utterance is required")),
            };
            let pool: Vec<DatasetExample> = dataset
                .iter()
                .filter(|e| e.portion == Portion::Train && Some(e.id.as_str()) != exclude)
                .cloned()
                .collect();
            let examples = retrieve_examples(&target, &pool, mode, a.max_examples);
            let cfg = PromptConfig {
                order,
                budget: a.budget,
                max_examples: a.max_examples,
            };
            let prompt = build_prompt(&examples, &target, &cfg, &whitespace_tokens)?;
            let text = if a.emit_json || json_out {
                serde_json::to_string(&prompt)?
            } else {
                prompt.prompt
            };
            emit(a.out.as_deref(), &text)?;
            Ok(0)
        }
        Command::Evaluate(a) => {
            let metric: Metric = a.metric.parse()?;
            let mut gold = load_dataset(&a.dataset)?;
            if let Some(p) = &a.portion {
                let portion: Portion = serde_json::from_value(Value::String(p.clone()))
                    .map_err(|_| usage(format!("unknown portion `{p}`")))?;
                gold.retain(|e| e.portion == portion);
            }
            let file = File::open(&a.predictions).with_context(|| format!("opening {}", a.predictions.display()))?;
            let preds = read_predictions(BufReader::new(file))?;
            let report = evaluate(&preds, &gold, metric)?;
            let text = if json_out {
                serde_json::to_string_pretty(&report)?
            } else {
                let mut s = format!("accuracy {:.4} ({}/{})", report.accuracy, report.correct, report.total);
                if report.missing > 0 {
                    s.push_str(&format!("\nmissing predictions: {}", report.missing));
                }
                if metric == Metric::Lispress {
                    s.push_str(&format!(
                        "\nparse failures: {} prediction, {} gold",
                        report.prediction_parse_failures, report.gold_parse_failures
                    ));
                }
                s
            };
            emit(a.out.as_deref(), &text)?;
            Ok(0)
        }
    }
}

fn prefix_state(grammar: &Grammar, prefix: &str) -> Result<PrefixState> {
    PrefixState::for_grammar(grammar)?
        .advance_str(prefix)
        .map_err(|k| anyhow::anyhow!("prefix rejected at offset {k}"))
}

fn run_decode(a: DecodeArgs, json_out: bool) -> Result<Status> {
    if a.input.is_none() && a.dataset.is_none() {
        return Err(usage("one of --input or --dataset is required"));
    }
    let grammar = load_grammar(&a.grammar)?;
    let vocab = load_vocab(&a.vocab)?;
    let ctx = DecodeContext::new(&grammar, vocab)?;
    let scorer: Box<dyn Scorer> = match a.scorer {
        ScorerKind::Ngram => {
            let Some(path) = &a.ngram_corpus else {
                return Err(usage("--ngram-corpus is required for the n-gram scorer"));
            };
            let eos = ctx.vocab().eos();
            let corpus = read_text(path)?
                .lines()
                .filter(|l| !l.is_empty())
                .map(|l| {
                    let mut ids = ctx
                        .vocab()
                        .tokenize_greedy(ctx.trie(), l)
                        .with_context(|| format!("vocabulary cannot spell `{l}`"))?;
                    ids.push(eos);
                    Ok(ids)
                })
                .collect::<Result<Vec<_>>>()?;
            Box::new(train_ngram(&corpus, a.order, ctx.vocab().len())?)
        }
        ScorerKind::Http => {
            let Some(url) = &a.scorer_url else {
                return Err(usage("--scorer-url is required for the HTTP scorer"));
            };
            Box::new(HttpScorer::new(
                url.clone(),
                ctx.vocab().len(),
                Duration::from_millis(a.timeout_ms),
            ))
        }
    };
    let cfg = DecodeConfig {
        beam_size: a.beam,
        max_tokens: a.max_tokens,
        constrained: !a.unconstrained,
        length: if a.normalize_length {
            LengthHandling::NormalizeByLength
        } else {
            LengthHandling::None
        },
    };
    match (&a.input, &a.dataset) {
        (Some(input), _) => {
            let results = ctx.decode(scorer.as_ref(), &cfg, input)?;
            let text = if json_out {
                let rows: Vec<Value> = results
                    .iter()
                    .map(|r| json!({"text": r.text, "tokens": r.tokens, "logprob": r.logprob, "score": r.score}))
                    .collect();
                serde_json::to_string_pretty(&rows)?
            } else {
                results
                    .iter()
                    .map(|r| format!("{:.6}\t{}", r.score, r.text))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            emit(a.out.as_deref(), &text)?;
        }
        (None, Some(path)) => {
            let mode = parse_mode(&a.context_mode)?;
            let mut lines = Vec::new();
            for ex in load_dataset(path)? {
                let prediction = match ctx.decode(scorer.as_ref(), &cfg, &render_input(&ex, mode)) {
                    Ok(results) => results.into_iter().next().map(|r| r.text).unwrap_or_default(),
                    Err(semparse_core::DecodeError::Scorer(e)) => return Err(e.into()),
                    Err(_) => String::new(),
                };
                lines.push(json!({"id": ex.id, "prediction": prediction}).to_string());
            }
            emit(a.out.as_deref(), &lines.join("\n"))?;
        }
        (None, None) => unreachable!("checked on entry"),
    }
    Ok(0)
}

fn report_error(json_out: bool, message: &str) {
    if json_out {
        eprintln!("{}", json!({ "error": message }));
    } else {
        eprintln!("error: {message}");
    }
}

fn main() -> ExitCode {
    let mut argv: Vec<String> = std::env::args().collect();
    let json_flag = argv.iter().any(|a| a == "--json");
    if let Err(e) = merge_config(&mut argv) {
        report_error(json_flag, &format!("{e:#}"));
        return ExitCode::from(1);
    }
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if json_flag {
                report_error(true, e.to_string().trim());
            } else {
                let _ = e.print();
            }
            return ExitCode::from(1);
        }
    };
    let json_out = cli.json;
    match run(cli) {
        Ok(status) => ExitCode::from(status),
        Err(e) => {
            report_error(json_out, &format!("{e:#}"));
            ExitCode::from(if e.is::<UsageError>() { 1 } else { 2 })
        }
    }
}
