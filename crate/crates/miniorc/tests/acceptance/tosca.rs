//! Golden TOSCA corpus plus a mutation fuzzer over the parser and
//! validator.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use miniorc_core::tosca::{parse_template, resolve_order, to_yaml, validate};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{Value, json};

const FUZZ_INPUTS: u64 = 1_000_000;

const ALPHABET: &[char] = &[
    ':', '-', ' ', ' ', '\n', '{', '}', '[', ']', ',', '"', '\'', '#', '\t', 'a', 'x', '1', '0', '.', '&', '*', '!', '|', '>', '?',
    '%', '@', '\\', '\r', 'é', '\u{feff}',
];

const WORDS: &[&str] = &[
    "topology_template:", "node_templates:", "type: Compute", "requirements:", "- host: ", "- dependency: ", "properties:",
    "get_input", "policies:", "inputs:", "---", "{ cpu: 1 }", "[a, b]", "type: BatchJob", "null", "~", "true", "1e999",
];

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus/tosca")
}

/// Same stored form as the core corpus test.
fn outcome(text: &str) -> Value {
    match parse_template(text) {
        Err(e) => json!({ "parse_error": { "code": e.code(), "error": e } }),
        Ok(doc) => {
            let report = validate(&doc);
            let order = if report.is_deployable() { resolve_order(&doc).ok() } else { None };
            json!({ "report": report, "order": order })
        }
    }
}

fn golden(paths: &[PathBuf]) -> Result<usize, String> {
    for path in paths {
        let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
        let stored = fs::read_to_string(path.with_extension("expected.json")).map_err(|e| format!("{}: {e}", path.display()))?;
        let rendered = serde_json::to_string_pretty(&outcome(&text)).unwrap() + "\n";
        if rendered != stored {
            return Err(format!("{} differs from its stored report", path.display()));
        }
    }
    Ok(paths.len())
}

fn mutate(rng: &mut StdRng, seeds: &[Vec<char>]) -> String {
    if rng.random_bool(0.05) {
        let n = rng.random_range(0..200);
        return (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect();
    }
    let mut text = seeds[rng.random_range(0..seeds.len())].clone();
    for _ in 0..rng.random_range(1..=4) {
        let at = rng.random_range(0..=text.len());
        match rng.random_range(0..6) {
            0 if !text.is_empty() => {
                let i = at.min(text.len() - 1);
                text[i] = ALPHABET[rng.random_range(0..ALPHABET.len())];
            }
            1 => text.insert(at, ALPHABET[rng.random_range(0..ALPHABET.len())]),
            2 => {
                let end = (at + rng.random_range(1..40)).min(text.len());
                text.drain(at..end);
            }
            3 => {
                let end = (at + rng.random_range(1..60)).min(text.len());
                let copy: Vec<char> = text[at..end].to_vec();
                let to = rng.random_range(0..=text.len());
                text.splice(to..to, copy);
            }
            4 => {
                let w = WORDS[rng.random_range(0..WORDS.len())];
                text.splice(at..at, w.chars());
            }
            _ => {
                let other = &seeds[rng.random_range(0..seeds.len())];
                let from = rng.random_range(0..=other.len());
                text.truncate(at);
                text.extend_from_slice(&other[from..]);
            }
        }
    }
    text.into_iter().collect()
}

/// Parses, validates, orders and re-emits one input. Only a panic counts
/// as a failure.
fn exercise(text: &str) -> (bool, bool) {
    match parse_template(text) {
        Err(e) => {
            let _ = e.code();
            (false, false)
        }
        Ok(doc) => {
            let report = validate(&doc);
            let _ = resolve_order(&doc);
            let emitted = to_yaml(&doc);
            let _ = parse_template(&emitted);
            (true, report.is_deployable())
        }
    }
}

pub fn run() -> Result<String, String> {
    let mut paths: Vec<PathBuf> = fs::read_dir(corpus_dir())
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.path()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "yaml"));
    paths.sort();
    let n = golden(&paths)?;

    let seeds: Vec<Vec<char>> =
        paths.iter().map(|p| fs::read_to_string(p).map(|t| t.chars().collect())).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(0x705CA);
    let hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut parsed = 0u64;
    let mut deployable = 0u64;
    let mut crash = None;
    for i in 0..FUZZ_INPUTS {
        let text = mutate(&mut rng, &seeds);
        match panic::catch_unwind(AssertUnwindSafe(|| exercise(&text))) {
            Ok((p, d)) => {
                parsed += u64::from(p);
                deployable += u64::from(d);
            }
            Err(_) => {
                crash = Some((i, text));
                break;
            }
        }
    }
    panic::set_hook(hook);
    if let Some((i, text)) = crash {
        return Err(format!("input {i} panicked: {text:?}"));
    }
    Ok(format!(
        "{n} golden templates match; {FUZZ_INPUTS} fuzz inputs: {} ParseError, {parsed} reports ({deployable} deployable), 0 panics",
        FUZZ_INPUTS - parsed
    ))
}
