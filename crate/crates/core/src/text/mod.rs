//! Tokenization, answer normalization and lemma matching shared by the
//! annotation pipeline, the metrics and the refinement step.

pub mod lexicon;

use std::collections::HashMap;

use once_cell::sync::Lazy;
use regex::Regex;

pub use lexicon::{lemmatize, Tag};

static TOKEN_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"[\p{L}\p{N}]+(?:['’\-][\p{L}\p{N}]+)*|[^\s\p{L}\p{N}]").unwrap());

static SENTENCE_END_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r#"[.!?]+["')\]]*\s+"#).unwrap());

/// A token with its byte offsets in the source string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// Word-and-punctuation tokenization with offsets. Words keep internal
/// apostrophes and hyphens ("didn't", "Mary's", "well-known").
pub fn token_spans(text: &str) -> Vec<Span<'_>> {
    TOKEN_RE
        .find_iter(text)
        .map(|m| Span {
            text: m.as_str(),
            start: m.start(),
            end: m.end(),
        })
        .collect()
}

pub fn tokenize(text: &str) -> Vec<&str> {
    TOKEN_RE.find_iter(text).map(|m| m.as_str()).collect()
}

/// Lowercased word tokens with punctuation removed.
pub fn words_lower(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .map(str::to_lowercase)
        .collect()
}

pub fn is_punct(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

/// Split running text into sentences after terminal punctuation followed by
/// whitespace. Sentences are trimmed; empty pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut last = 0;
    for m in SENTENCE_END_RE.find_iter(text) {
        let end = m.start() + m.as_str().trim_end().len();
        let piece = text[last..end].trim();
        if !piece.is_empty() {
            out.push(piece.to_string());
        }
        last = m.end();
    }
    let tail = text[last..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Answer normalization: lowercase, drop punctuation and the articles
/// a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    words_lower(text)
        .into_iter()
        .filter(|w| !matches!(w.as_str(), "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Word-boundary containment of normalized `needle` inside normalized
/// `haystack`. An empty needle is contained in everything.
pub fn normalized_contains(haystack: &str, needle: &str) -> bool {
    let h = normalize_answer(haystack);
    let n = normalize_answer(needle);
    if n.is_empty() {
        return true;
    }
    format!(" {h} ").contains(&format!(" {n} "))
}

/// Multiset token F1 over normalized answers.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let p: Vec<&str> = p.split_whitespace().collect();
    let g: Vec<&str> = g.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, i32> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Lemmas of the content words in `text` (stopwords and punctuation dropped).
pub fn content_lemmas(text: &str) -> Vec<String> {
    words_lower(text)
        .into_iter()
        .filter(|w| !lexicon::is_stopword(w))
        .map(|w| lemmatize(&w))
        .collect()
}
