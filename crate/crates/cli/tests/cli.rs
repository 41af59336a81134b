use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semparse_core::splits::Portion;
use semparse_core::{
    allowed_tokens, base_sql_grammar, make_splits, parse_grammar, serialize_grammar, specialize_sql_grammar,
    DatasetExample, DbSchema, PrefixState, SplitOptions, TokenTrie, Vocabulary,
};
use serde_json::Value;
use tempfile::TempDir;

const ARITH: &str = "E -> \"(\" OP \" \" E \" \" E \")\" | NUM\nOP -> \"add\" | \"mul\"\nNUM -> [0-9]\n";

fn semparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semparse"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dataset_jsonl(examples: &[DatasetExample]) -> String {
    examples
        .iter()
        .map(|e| serde_json::to_string(e).unwrap() + "\n")
        .collect()
}

fn corpus(n_train: usize, n_dev: usize, n_test: usize) -> Vec<DatasetExample> {
    let mut out = Vec::new();
    for i in 0..n_train + n_dev + n_test {
        let mut e = DatasetExample::simple(format!("ex{i}"), format!("show item {i} now"), format!("(Get {i})"));
        if i >= n_train + n_dev {
            e.portion = Portion::Test;
        } else if i >= n_train {
            e.portion = Portion::Dev;
        }
        out.push(e);
    }
    out
}

#[test]
fn check_reports_verdicts_through_exit_status() {
    let dir = TempDir::new().unwrap();
    let g = write(&dir, "g.cfg", ARITH);
    let ok = semparse(&["check", "--grammar", s(&g), "--input", "(add 1 2)"]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(stdout(&ok).trim(), "accepted");

    let bad = semparse(&["check", "--grammar", s(&g), "--input", "(div 1 2)"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(stdout(&bad).trim(), "rejected at offset 1");

    let partial = semparse(&["--json", "check", "--grammar", s(&g), "--input", "(add 1"]);
    assert_eq!(partial.status.code(), Some(2));
    let v: Value = serde_json::from_str(&stdout(&partial)).unwrap();
    assert_eq!(v["result"], "incomplete");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(semparse(&["check", "--grammar"]).status.code(), Some(1));
    assert_eq!(semparse(&["no-such-command"]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let g = write(&dir, "g.cfg", ARITH);
    let v = write(&dir, "v.jsonl", &Vocabulary::with_eos_last(["1"]).unwrap().to_jsonl());
    // Neither --input nor --dataset.
    let o = semparse(&["decode", "--grammar", s(&g), "--vocab", s(&v), "--ngram-corpus", s(&g)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(semparse(&["--help"]).status.code(), Some(0));
}

#[test]
fn json_errors_go_to_stderr_as_objects() {
    let o = semparse(&["--json", "check", "--grammar", "/nonexistent/g.cfg", "--input", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert!(v["error"].as_str().unwrap().contains("/nonexistent/g.cfg"));
}

#[test]
fn make_splits_is_deterministic_and_matches_library() {
    let dir = TempDir::new().unwrap();
    let data = corpus(700, 80, 150);
    let d = write(&dir, "d.jsonl", &dataset_jsonl(&data));
    let a = semparse(&["make-splits", "--dataset", s(&d), "--seed", "13"]);
    let b = semparse(&["make-splits", "--dataset", s(&d), "--seed", "13"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let lib = make_splits(&data, &SplitOptions::new(13)).unwrap().to_json();
    assert_eq!(stdout(&a).trim_end(), lib.trim_end());
    let other = semparse(&["make-splits", "--dataset", s(&d), "--seed", "14"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn evaluate_lispress_ignores_whitespace() {
    let dir = TempDir::new().unwrap();
    let gold = vec![
        DatasetExample::simple("a", "u", "(Yield (Event.start x))"),
        DatasetExample::simple("b", "u", "(f 1)"),
    ];
    let d = write(&dir, "d.jsonl", &dataset_jsonl(&gold));
    let p = write(
        &dir,
        "p.jsonl",
        "{\"id\":\"a\",\"prediction\":\"( Yield\\n (Event.start   x) )\"}\n{\"id\":\"b\",\"prediction\":\"(f 2)\"}\n",
    );
    let o = semparse(&[
        "evaluate",
        "--predictions",
        s(&p),
        "--dataset",
        s(&d),
        "--metric",
        "lispress",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("accuracy 0.5000 (1/2)"));
    let exact = semparse(&["--json", "evaluate", "--predictions", s(&p), "--dataset", s(&d)]);
    let v: Value = serde_json::from_str(&stdout(&exact)).unwrap();
    assert_eq!(v["accuracy"], 0.0);
    let bad = semparse(&[
        "evaluate",
        "--predictions",
        s(&p),
        "--dataset",
        s(&d),
        "--metric",
        "denotation",
    ]);
    assert_ne!(bad.status.code(), Some(0));
}

#[test]
fn config_file_supplies_missing_flags() {
    let dir = TempDir::new().unwrap();
    let g = write(&dir, "g.cfg", ARITH);
    let cfg = write(
        &dir,
        "c.json",
        &format!("{{\"grammar\": {:?}, \"input\": \"(add 1 2)\"}}", s(&g)),
    );
    let o = semparse(&["--config", s(&cfg), "check"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    // Explicit flags win over the file.
    let o = semparse(&["--config", s(&cfg), "check", "--input", "(add"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn specialize_sql_matches_library() {
    let dir = TempDir::new().unwrap();
    let schema =
        r#"{"tables":[{"name":"head","columns":[{"name":"name","type":"text"},{"name":"age","type":"number"}]}]}"#;
    let path = write(&dir, "schema.json", schema);
    let out = dir.path().join("g.cfg");
    let o = semparse(&["specialize-sql", "--schema", s(&path), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let parsed: DbSchema = serde_json::from_str(schema).unwrap();
    let lib = serialize_grammar(&specialize_sql_grammar(&base_sql_grammar(), &parsed).unwrap());
    assert_eq!(fs::read_to_string(&out).unwrap(), lib);
    let ok = semparse(&[
        "check",
        "--grammar",
        s(&out),
        "--input",
        "SELECT name FROM head WHERE age > 3",
    ]);
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn allowed_tokens_matches_library() {
    let dir = TempDir::new().unwrap();
    let g = write(&dir, "g.cfg", ARITH);
    let vocab = Vocabulary::with_eos_last(["(", "(add ", "add", "1", "1)", " ", "x", ")"]).unwrap();
    let v = write(&dir, "v.jsonl", &vocab.to_jsonl());
    for prefix in ["", "(", "(add 1", "(add 1 2)"] {
        let o = semparse(&[
            "--json",
            "allowed-tokens",
            "--grammar",
            s(&g),
            "--vocab",
            s(&v),
            "--prefix",
            prefix,
        ]);
        assert_eq!(o.status.code(), Some(0));
        let got: Value = serde_json::from_str(&stdout(&o)).unwrap();
        let state = PrefixState::for_grammar(&parse_grammar(ARITH).unwrap())
            .unwrap()
            .advance_str(prefix)
            .unwrap();
        let mask = allowed_tokens(&state, &TokenTrie::build(&vocab));
        assert_eq!(
            got["allowed"],
            serde_json::to_value(&mask.ids).unwrap(),
            "prefix {prefix:?}"
        );
        assert_eq!(got["complete"], state.is_complete());
    }
}

#[test]
fn build_prompt_respects_budget_and_format() {
    let dir = TempDir::new().unwrap();
    let d = write(&dir, "d.jsonl", &dataset_jsonl(&corpus(40, 0, 0)));
    let o = semparse(&[
        "--json",
        "build-prompt",
        "--dataset",
        s(&d),
        "--utterance",
        "show item 7",
        "--budget",
        "60",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let prompt = v["prompt"].as_str().unwrap();
    assert!(prompt.split_whitespace().count() <= 60);
    assert!(prompt.ends_with("Human: show item 7\nComputer:"));
    let n = v["n_examples"].as_u64().unwrap();
    assert!(n > 0 && n < 20);
}

#[test]
fn decode_with_ngram_scorer_stays_in_grammar() {
    let dir = TempDir::new().unwrap();
    let g = write(&dir, "g.cfg", ARITH);
    let tokens: Vec<String> = "()0123456789 adml x"
        .chars()
        .map(String::from)
        .chain(["add".into(), "mul".into()])
        .collect();
    let v = write(&dir, "v.jsonl", &Vocabulary::with_eos_last(tokens).unwrap().to_jsonl());
    let c = write(&dir, "c.txt", "(add 1 2)\n(mul 3 (add 4 5))\n7\nxx)(\n");
    let o = semparse(&[
        "--json",
        "decode",
        "--grammar",
        s(&g),
        "--vocab",
        s(&v),
        "--ngram-corpus",
        s(&c),
        "--input",
        "",
        "--beam",
        "3",
        "--max-tokens",
        "20",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Value> = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(!rows.is_empty());
    let check_g = semparse_core::CompiledGrammar::new(&parse_grammar(ARITH).unwrap()).unwrap();
    for r in rows {
        let text = r["text"].as_str().unwrap();
        assert_eq!(
            semparse_core::recognize(&check_g, text),
            semparse_core::Recognition::Accepted,
            "{text:?}"
        );
    }
}
