//! Word-level tokenizer with registered special tokens and a greedy
//! character-piece fallback for unseen words.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::text::tokenize;
use crate::vision::concepts::SEP;

use super::serialize::{CONTEXT, END, NEXT_SENTENCE, PLAN, START, STORY};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

const CONTROL: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];
pub const SPECIAL_TOKENS: [&str; 7] = [PLAN, STORY, CONTEXT, NEXT_SENTENCE, START, END, SEP];
const CONTINUATION: &str = "##";

/// Punctuation written without a leading space.
const CLOSING: [&str; 8] = [".", ",", "!", "?", ":", ")", "]", "%"];
/// Punctuation written without a trailing space.
const OPENING: [&str; 3] = ["(", "[", "$"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TokenizerFile", into = "TokenizerFile")]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    vocab: Vec<String>,
}

impl From<TokenizerFile> for Tokenizer {
    fn from(f: TokenizerFile) -> Self {
        Self::from_vocab(f.vocab)
    }
}

impl From<Tokenizer> for TokenizerFile {
    fn from(t: Tokenizer) -> Self {
        Self { vocab: t.vocab }
    }
}

impl Tokenizer {
    fn from_vocab(vocab: Vec<String>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self { vocab, index }
    }

    /// Vocabulary: control tokens, special tokens, every character seen (as a
    /// word-initial and a continuation piece), then words by descending
    /// frequency with ties in lexical order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut chars: BTreeMap<char, ()> = BTreeMap::new();
        // plan delimiters are part of the target grammar
        chars.insert(';', ());
        chars.insert('|', ());
        for text in texts {
            for piece in split_special(text) {
                if let Piece::Text(t) = piece {
                    for w in tokenize(t) {
                        *counts.entry(w.to_string()).or_default() += 1;
                        w.chars().for_each(|c| {
                            chars.insert(c, ());
                        });
                    }
                }
            }
        }
        let mut vocab: Vec<String> = CONTROL.iter().chain(&SPECIAL_TOKENS).map(|s| s.to_string()).collect();
        for &c in chars.keys() {
            vocab.push(c.to_string());
            vocab.push(format!("{CONTINUATION}{c}"));
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, n)| *n >= min_count && w.chars().count() > 1)
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        vocab.extend(words.into_iter().map(|(w, _)| w));
        Self::from_vocab(vocab)
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.vocab.get(id as usize).map_or("<unk>", String::as_str)
    }

    /// Each special token has exactly one id.
    pub fn special_ids(&self) -> Vec<u32> {
        SPECIAL_TOKENS.iter().filter_map(|t| self.id(t)).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for piece in split_special(text) {
            match piece {
                Piece::Special(s) => out.push(self.index[s]),
                Piece::Text(t) => {
                    for w in tokenize(t) {
                        match self.id(w) {
                            Some(id) => out.push(id),
                            None => self.encode_unknown(w, &mut out),
                        }
                    }
                }
            }
        }
        out
    }

    /// Greedy longest-match pieces; characters never seen become `<unk>`.
    fn encode_unknown(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let prefix = if i == 0 { "" } else { CONTINUATION };
            let mut found = None;
            for j in (i + 1..=chars.len()).rev() {
                let cand: String = prefix.chars().chain(chars[i..j].iter().copied()).collect();
                if let Some(id) = self.id(&cand) {
                    found = Some((id, j));
                    break;
                }
            }
            match found {
                Some((id, j)) => {
                    out.push(id);
                    i = j;
                }
                None => {
                    out.push(UNK);
                    i += 1;
                }
            }
        }
    }

    /// Ids back to text. Control tokens are dropped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        let mut glue_next = true;
        let mut prev = "";
        for &id in ids {
            if matches!(id, PAD | BOS | EOS) {
                continue;
            }
            let tok = self.token(id);
            if let Some(cont) = tok.strip_prefix(CONTINUATION).filter(|c| !c.is_empty()) {
                out.push_str(cont);
                continue;
            }
            // `||` is split into two pipes by the word tokenizer
            let doubled = tok == "|" && prev == "|";
            if !(glue_next || doubled || CLOSING.contains(&tok)) {
                out.push(' ');
            }
            out.push_str(tok);
            glue_next = OPENING.contains(&tok);
            prev = tok;
        }
        out
    }
}

enum Piece<'a> {
    Special(&'a str),
    Text(&'a str),
}

fn split_special(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    loop {
        let next = SPECIAL_TOKENS
            .iter()
            .filter_map(|s| rest.find(s).map(|at| (at, *s)))
            .min_by_key(|&(at, s)| (at, std::cmp::Reverse(s.len())));
        match next {
            Some((at, s)) => {
                if at > 0 {
                    out.push(Piece::Text(&rest[..at]));
                }
                out.push(Piece::Special(s));
                rest = &rest[at + s.len()..];
            }
            None => {
                if !rest.is_empty() {
                    out.push(Piece::Text(rest));
                }
                return out;
            }
        }
    }
}
