//! Shallow sentence analysis: tags, phrase chunks and a single-clause
//! skeleton (subject, verb group, object).

use crate::corpus::SourceKind;
use crate::text::lexicon::{self, Tag};
use crate::text::{self, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub kind: SourceKind,
    /// Token range `[start, end)`.
    pub start: usize,
    pub end: usize,
    /// Index of the head token (last nominal, or the main verb).
    pub head: usize,
}

#[derive(Debug, Clone)]
pub struct ParsedSentence<'a> {
    pub source: &'a str,
    pub tokens: Vec<Span<'a>>,
    pub tags: Vec<Tag>,
    pub chunks: Vec<Chunk>,
    /// First verb group `[start, end)`, auxiliaries included.
    pub verb_group: Option<(usize, usize)>,
}

impl<'a> ParsedSentence<'a> {
    pub fn parse(source: &'a str) -> Self {
        let tokens = text::token_spans(source);
        let words: Vec<&str> = tokens.iter().map(|t| t.text).collect();
        let tags = lexicon::tag_sentence(&words);
        let verb_group = find_verb_group(&tags);
        let chunks = chunk(&words, &tags);
        Self {
            source,
            tokens,
            tags,
            chunks,
            verb_group,
        }
    }

    pub fn word(&self, i: usize) -> &'a str {
        self.tokens[i].text
    }

    /// Source text covering tokens `[start, end)`.
    pub fn text_of(&self, start: usize, end: usize) -> &'a str {
        &self.source[self.tokens[start].start..self.tokens[end - 1].end]
    }

    pub fn byte_range(&self, start: usize, end: usize) -> (usize, usize) {
        (self.tokens[start].start, self.tokens[end - 1].end)
    }

    /// Token range exactly covering `needle`, first match; case-sensitive
    /// first, then case-insensitive.
    pub fn find_tokens(&self, needle: &str) -> Option<(usize, usize)> {
        let target: Vec<&str> = text::tokenize(needle);
        if target.is_empty() || target.len() > self.tokens.len() {
            return None;
        }
        let n = target.len();
        let exact = (0..=self.tokens.len() - n).find(|&i| (0..n).all(|j| self.tokens[i + j].text == target[j]));
        exact
            .or_else(|| {
                (0..=self.tokens.len() - n)
                    .find(|&i| (0..n).all(|j| self.tokens[i + j].text.eq_ignore_ascii_case(target[j])))
            })
            .map(|i| (i, i + n))
    }

    /// Tokens before the verb group, skipping a leading conjunction or adverb.
    pub fn subject(&self) -> Option<(usize, usize)> {
        let (v0, _) = self.verb_group?;
        let mut s = 0;
        while s < v0 && matches!(self.tags[s], Tag::Conj | Tag::Adv | Tag::Punct) {
            s += 1;
        }
        (s < v0).then_some((s, v0))
    }

    /// Index of the main (non-auxiliary) verb in the verb group, if any.
    pub fn main_verb(&self) -> Option<usize> {
        let (v0, v1) = self.verb_group?;
        (v0..v1).rev().find(|&i| self.tags[i] == Tag::Verb)
    }

    pub fn chunk_at(&self, start: usize, end: usize) -> Option<&Chunk> {
        self.chunks.iter().find(|c| c.start == start && c.end == end)
    }

    /// End index of the sentence body (terminal punctuation excluded).
    pub fn body_end(&self) -> usize {
        let mut e = self.tokens.len();
        while e > 0 && self.tags[e - 1] == Tag::Punct {
            e -= 1;
        }
        e
    }

    pub fn is_person_chunk(&self, c: &Chunk) -> bool {
        c.kind == SourceKind::NamedEntity
            || self.tags[c.head] == Tag::Propn
            || lexicon::is_person_noun(&lexicon::lemmatize(self.word(c.head)))
    }
}

fn find_verb_group(tags: &[Tag]) -> Option<(usize, usize)> {
    let start = tags.iter().position(|t| matches!(t, Tag::Verb | Tag::Aux))?;
    let mut end = start;
    while end < tags.len() && matches!(tags[end], Tag::Verb | Tag::Aux) {
        end += 1;
        // adverb inside the group ("was really enjoying")
        if end + 1 < tags.len() && tags[end] == Tag::Adv && tags[end + 1] == Tag::Verb {
            end += 1;
        }
    }
    Some((start, end))
}

fn is_nominal(t: Tag) -> bool {
    matches!(t, Tag::Noun | Tag::Propn)
}

fn chunk(words: &[&str], tags: &[Tag]) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        let start = i;
        let mut j = i;
        let has_det = matches!(tags[j], Tag::Det | Tag::Poss);
        if has_det {
            j += 1;
        }
        let body = j;
        while j < tags.len() && matches!(tags[j], Tag::Adj | Tag::Num | Tag::Noun | Tag::Propn) {
            j += 1;
        }
        let mut end = j;
        while end > body && !is_nominal(tags[end - 1]) {
            end -= 1;
        }
        if end > body {
            let all_proper = (body..end).all(|k| tags[k] == Tag::Propn);
            if all_proper && !has_det {
                chunks.push(Chunk {
                    kind: SourceKind::NamedEntity,
                    start: body,
                    end,
                    head: end - 1,
                });
            } else {
                chunks.push(Chunk {
                    kind: SourceKind::NounPhrase,
                    start,
                    end,
                    head: end - 1,
                });
            }
            i = end;
        } else {
            i = start + 1;
        }
    }

    // maximal verb phrases: each verb group plus a directly following object
    let mut k = 0;
    while k < tags.len() {
        if tags[k] != Tag::Verb && tags[k] != Tag::Aux {
            k += 1;
            continue;
        }
        let g0 = k;
        while k < tags.len() && matches!(tags[k], Tag::Verb | Tag::Aux | Tag::Adv) {
            if tags[k] == Tag::Adv && !(k + 1 < tags.len() && tags[k + 1] == Tag::Verb) {
                // trailing particle stays only right after a verb ("picked up")
                if tags[k - 1] == Tag::Verb && is_particle(words[k]) {
                    k += 1;
                }
                break;
            }
            k += 1;
        }
        let g1 = k;
        let Some(main) = (g0..g1).rev().find(|&x| tags[x] == Tag::Verb) else {
            continue;
        };
        let end = chunks
            .iter()
            .find(|c| c.start == g1 && c.kind != SourceKind::VerbPhrase)
            .map_or(g1, |c| c.end);
        chunks.push(Chunk {
            kind: SourceKind::VerbPhrase,
            start: g0,
            end,
            head: main,
        });
    }
    chunks.sort_by_key(|c| (c.start, c.end));
    chunks
}

fn is_particle(w: &str) -> bool {
    matches!(
        w.to_lowercase().as_str(),
        "up" | "down" | "out" | "away" | "back" | "off" | "home"
    )
}

/// Join tokens the way they would be written: no space before closing
/// punctuation.
pub fn join_words<S: AsRef<str>>(words: &[S]) -> String {
    let mut out = String::new();
    for w in words {
        let w = w.as_ref();
        if w.is_empty() {
            continue;
        }
        let attach = matches!(w, "." | "," | "!" | "?" | ";" | ":" | ")" | "'s" | "’s");
        if !out.is_empty() && !attach && !out.ends_with('(') {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}
