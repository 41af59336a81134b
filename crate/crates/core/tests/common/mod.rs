//! Random grammars and brute-force oracles shared by the integration tests.
//! Nothing here calls into the recognizer.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use semparse_core::grammar::{CharClass, Grammar, Production, Symbol};
use semparse_core::Vocabulary;

pub const LETTERS: [char; 5] = ['a', 'b', 'c', 'd', 'e'];

/// A random reduced grammar with at most `max_nts` nonterminals over the
/// first `alphabet` letters.
pub fn random_grammar(rng: &mut impl RngCore, max_nts: usize, alphabet: usize) -> Grammar {
    loop {
        let n = rng.random_range(1..=max_nts);
        let letters = &LETTERS[..alphabet];
        let mut prods = Vec::new();
        for lhs in 0..n {
            for _ in 0..rng.random_range(1..=3) {
                let len = rng.random_range(0..=3);
                if len == 0 {
                    prods.push(Production::epsilon(format!("N{lhs}")));
                    continue;
                }
                let rhs = (0..len)
                    .map(|_| {
                        let roll: f64 = rng.random();
                        if roll < 0.45 {
                            let tlen = rng.random_range(1..=2);
                            Symbol::t((0..tlen).map(|_| *letters.choose(rng).unwrap()).collect::<String>())
                        } else if roll < 0.55 {
                            let k = rng.random_range(1..=alphabet.min(2));
                            let mut chosen: Vec<char> = letters.choose_multiple(rng, k).copied().collect();
                            chosen.sort();
                            Symbol::Class(CharClass::of_chars(chosen))
                        } else {
                            Symbol::nt(format!("N{}", rng.random_range(0..n)))
                        }
                    })
                    .collect();
                prods.push(Production::new(format!("N{lhs}"), rhs));
            }
        }
        let Ok(g) = Grammar::new("N0", prods) else { continue };
        if let Ok(r) = g.reduce() {
            return r;
        }
    }
}

/// Random vocabulary of up to `max_tokens` distinct strings of length 1..=3
/// over the first `alphabet` letters, eos last.
pub fn random_vocab(rng: &mut impl RngCore, max_tokens: usize, alphabet: usize) -> Vocabulary {
    let target = rng.random_range(1..=max_tokens.saturating_sub(1).max(1));
    let mut seen = BTreeSet::new();
    let mut tokens = Vec::new();
    let mut attempts = 0;
    while tokens.len() < target && attempts < 10 * max_tokens {
        attempts += 1;
        let len = rng.random_range(1..=3);
        let s: String = (0..len).map(|_| LETTERS[rng.random_range(0..alphabet)]).collect();
        if seen.insert(s.clone()) {
            tokens.push(s);
        }
    }
    Vocabulary::with_eos_last(tokens).unwrap()
}

/// Membership by fixed-point chart filling over all spans of `w`
/// (a generalized CYK that needs no normal form).
pub fn derives(g: &Grammar, w: &str) -> bool {
    let chars: Vec<char> = w.chars().collect();
    let n = chars.len();
    let names = g.nonterminals();
    let idx = |s: &str| names.iter().position(|x| *x == s).unwrap();
    // table[i][j] = nonterminals deriving chars[i..j]
    let mut table = vec![vec![HashSet::<usize>::new(); n + 1]; n + 1];
    loop {
        let mut changed = false;
        for p in g.productions() {
            let lhs = idx(&p.lhs);
            for i in 0..=n {
                let mut reach: BTreeSet<usize> = BTreeSet::from([i]);
                for sym in &p.rhs {
                    let mut next = BTreeSet::new();
                    for &pos in &reach {
                        match sym {
                            Symbol::Terminal(t) => {
                                let tc: Vec<char> = t.chars().collect();
                                if chars[pos..].starts_with(&tc) {
                                    next.insert(pos + tc.len());
                                }
                            }
                            Symbol::Class(c) => {
                                if pos < n && c.matches(chars[pos]) {
                                    next.insert(pos + 1);
                                }
                            }
                            Symbol::Nonterminal(m) => {
                                let m = idx(m);
                                for (j, cell) in table[pos].iter().enumerate().skip(pos) {
                                    if cell.contains(&m) {
                                        next.insert(j);
                                    }
                                }
                            }
                        }
                    }
                    reach = next;
                }
                for j in reach {
                    if table[i][j].insert(lhs) {
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    table[0][n].contains(&idx(g.start()))
}

/// All strings over `alphabet` of length at most `max_len`.
pub fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Language up to `max_len` by testing every candidate string with [`derives`].
pub fn brute_force_language(g: &Grammar, alphabet: &[char], max_len: usize) -> BTreeSet<String> {
    all_strings(alphabet, max_len)
        .into_iter()
        .filter(|w| derives(g, w))
        .collect()
}

/// Every prefix (including the empty string and the members themselves).
pub fn prefix_closure(language: &BTreeSet<String>) -> HashSet<String> {
    let mut out = HashSet::new();
    for w in language {
        let chars: Vec<char> = w.chars().collect();
        for k in 0..=chars.len() {
            out.insert(chars[..k].iter().collect());
        }
    }
    out
}

/// Length of the shortest member of L(g) that starts with `prefix`, or
/// `None` if `prefix` is not viable.
///
/// Intersects `g` with the automaton for `prefix · Σ*` (states `0..=|prefix|`,
/// the last one looping on every character) and runs a shortest-derivation
/// fixed point over triples `(q, A, q')`.
pub fn shortest_completion(g: &Grammar, prefix: &str) -> Option<usize> {
    let p: Vec<char> = prefix.chars().collect();
    let last = p.len();
    let names = g.nonterminals();
    let idx = |s: &str| names.iter().position(|x| *x == s).unwrap();
    let step = |q: usize, accept: &dyn Fn(char) -> bool| -> Option<usize> {
        if q < last {
            accept(p[q]).then_some(q + 1)
        } else {
            Some(last)
        }
    };
    // dist[a][q][q2] = shortest string derived by nonterminal a moving q -> q2
    let mut dist = vec![vec![vec![None::<usize>; last + 1]; last + 1]; names.len()];
    loop {
        let mut changed = false;
        for prod in g.productions() {
            let a = idx(&prod.lhs);
            for q0 in 0..=last {
                let mut reach: Vec<Option<usize>> = vec![None; last + 1];
                reach[q0] = Some(0);
                for sym in &prod.rhs {
                    let mut next: Vec<Option<usize>> = vec![None; last + 1];
                    let mut relax = |q: usize, len: usize| {
                        if next[q].is_none_or(|old| len < old) {
                            next[q] = Some(len);
                        }
                    };
                    for q in 0..=last {
                        let Some(len) = reach[q] else { continue };
                        match sym {
                            Symbol::Terminal(t) => {
                                let mut cur = Some(q);
                                for c in t.chars() {
                                    cur = cur.and_then(|s| step(s, &|x| x == c));
                                }
                                if let Some(q2) = cur {
                                    relax(q2, len + t.chars().count());
                                }
                            }
                            Symbol::Class(cls) => {
                                let ok = if q < last {
                                    cls.matches(p[q])
                                } else {
                                    cls.is_satisfiable()
                                };
                                if ok {
                                    relax(if q < last { q + 1 } else { last }, len + 1);
                                }
                            }
                            Symbol::Nonterminal(m) => {
                                let m = idx(m);
                                for (q2, d) in dist[m][q].iter().enumerate() {
                                    if let Some(d) = *d {
                                        relax(q2, len + d);
                                    }
                                }
                            }
                        }
                    }
                    reach = next;
                }
                for q2 in 0..=last {
                    if let Some(len) = reach[q2] {
                        if dist[a][q0][q2].is_none_or(|old| len < old) {
                            dist[a][q0][q2] = Some(len);
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    dist[idx(g.start())][0][last]
}

/// Deterministic pseudo-random log-scores keyed on `(seed, prefix)`.
pub struct HashScorer {
    pub seed: u64,
    pub vocab_size: usize,
}

impl semparse_core::Scorer for HashScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score(
        &self,
        _conditioning: &str,
        prefix: &[semparse_core::TokenId],
    ) -> Result<Vec<f64>, semparse_core::ScorerError> {
        use rand::SeedableRng;
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (self.seed, prefix).hash(&mut h);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(h.finish());
        Ok((0..self.vocab_size).map(|_| -rng.random_range(0.0..5.0)).collect())
    }
}

/// A random signature table over types `T0..T{n}` plus `Number` and
/// `String` literals, with symbol names drawn from Lispress-like spellings.
/// Every type has a zero-argument symbol so programs always terminate.
pub fn random_signatures(
    rng: &mut impl RngCore,
) -> (semparse_core::SignatureTable, Vec<(String, Vec<String>, String)>) {
    const NAMES: [&str; 8] = [
        "Yield",
        "Event.start",
        "FindNumNextEvent",
        "Event.subject_?",
        "?~=",
        "x-y",
        "do!",
        "get",
    ];
    let n_types = rng.random_range(1..=4);
    let types: Vec<String> = (0..n_types).map(|i| format!("T{i}")).collect();
    let mut arg_types = types.clone();
    arg_types.push("Number".into());
    arg_types.push("String".into());
    let mut sigs = Vec::new();
    for (i, t) in types.iter().enumerate() {
        sigs.push((format!("leaf{i}"), vec![], t.clone()));
    }
    for k in 0..rng.random_range(1..=6) {
        let arity = rng.random_range(0..=3);
        let args = (0..arity).map(|_| arg_types.choose(rng).unwrap().clone()).collect();
        let name = format!("{}{k}", NAMES.choose(rng).unwrap());
        sigs.push((name, args, types.choose(rng).unwrap().clone()));
    }
    let mut table = semparse_core::SignatureTable::new();
    for (name, args, result) in &sigs {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        table.add_symbol(name.clone(), &args, result.clone()).unwrap();
    }
    table
        .add_literal("Number", "N -> D \"L\" | D\nD -> [0-9] | [0-9] D")
        .unwrap();
    (table, sigs)
}

/// A random program of type `ty` as Lispress text.
pub fn random_program(
    rng: &mut impl RngCore,
    sigs: &[(String, Vec<String>, String)],
    ty: &str,
    depth: usize,
) -> String {
    match ty {
        "Number" => {
            let digits: String = (0..rng.random_range(1..=3))
                .map(|_| char::from(b'0' + rng.random_range(0..10u8)))
                .collect();
            if rng.random_bool(0.5) {
                format!("{digits}L")
            } else {
                digits
            }
        }
        "String" => {
            let body: String = (0..rng.random_range(0..6))
                .map(|_| match rng.random_range(0..8) {
                    0 => "\\\"".to_owned(),
                    1 => " ".to_owned(),
                    2 => "(".to_owned(),
                    _ => LETTERS.choose(rng).unwrap().to_string(),
                })
                .collect();
            format!("\"{body}\"")
        }
        _ => {
            let options: Vec<&(String, Vec<String>, String)> = sigs
                .iter()
                .filter(|(_, args, r)| r == ty && (depth > 0 || args.is_empty()))
                .collect();
            let (name, args, _) = options.choose(rng).unwrap();
            if args.is_empty() && rng.random_bool(0.5) {
                return name.clone();
            }
            let mut out = format!("({name}");
            for a in args {
                out.push(' ');
                out.push_str(&random_program(rng, sigs, a, depth - 1));
            }
            out.push(')');
            out
        }
    }
}

/// A random MTOP tree in bracket notation with nested slots and intents.
pub fn random_mtop(rng: &mut impl RngCore, depth: usize) -> String {
    const INTENTS: [&str; 4] = ["Get_Message", "SEND_MESSAGE", "Get-Weather", "Create.Alarm"];
    const SLOTS: [&str; 4] = ["Type_Content", "Sender", "DATE_TIME", "recipient"];
    const WORDS: [&str; 6] = ["video", "Atlas", "tomorrow", "at", "5pm", "l'eau"];
    let mut out = format!("[IN:{}", INTENTS.choose(rng).unwrap());
    for _ in 0..rng.random_range(0..=3) {
        out.push_str(&format!(" [SL:{}", SLOTS.choose(rng).unwrap()));
        if depth > 0 && rng.random_bool(0.3) {
            out.push(' ');
            out.push_str(&random_mtop(rng, depth - 1));
        } else {
            for _ in 0..rng.random_range(1..=3) {
                out.push(' ');
                out.push_str(WORDS.choose(rng).unwrap());
            }
        }
        out.push(']');
    }
    if rng.random_bool(0.3) {
        out.push_str(" please");
    }
    out.push(']');
    out
}
