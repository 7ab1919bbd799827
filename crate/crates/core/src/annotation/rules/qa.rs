//! Extractive question answering: pick the sentence sharing the most content
//! lemmas with the question, then the phrase of the expected type that the
//! question does not already mention.

use std::collections::HashSet;

use crate::annotation::adapters::{QaPrediction, QuestionAnswerer};
use crate::corpus::SourceKind;
use crate::error::Result;
use crate::text::lexicon::{self, Tag};
use crate::text::{content_lemmas, normalized_contains, split_sentences, words_lower};

use super::analysis::{Chunk, ParsedSentence};

#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveQa;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    Person,
    Place,
    Action,
    Thing,
}

fn expected_type(question: &str) -> Expect {
    let words = words_lower(question);
    let wh = words
        .iter()
        .find(|w| matches!(w.as_str(), "who" | "whom" | "what" | "where" | "which"));
    match wh.map(String::as_str) {
        Some("who" | "whom") => Expect::Person,
        Some("where") => Expect::Place,
        Some(_) if words.iter().any(|w| w == "do" || w == "doing" || w == "done") => Expect::Action,
        _ => Expect::Thing,
    }
}

fn fits(p: &ParsedSentence<'_>, c: &Chunk, expect: Expect) -> bool {
    match expect {
        Expect::Action => c.kind == SourceKind::VerbPhrase,
        Expect::Person => c.kind != SourceKind::VerbPhrase && p.is_person_chunk(c),
        Expect::Place => {
            c.kind != SourceKind::VerbPhrase
                && c.start > 0
                && p.tags[c.start - 1] == Tag::Prep
                && lexicon::is_locative(&p.word(c.start - 1).to_lowercase())
        }
        Expect::Thing => c.kind == SourceKind::NounPhrase && !p.is_person_chunk(c),
    }
}

impl QuestionAnswerer for ExtractiveQa {
    fn answer(&self, question: &str, context: &str) -> Result<QaPrediction> {
        let q_lemmas: HashSet<String> = content_lemmas(question).into_iter().filter(|l| l != "do").collect();
        let sentences = split_sentences(context);
        let mut best: Option<(usize, usize)> = None;
        for (i, s) in sentences.iter().enumerate() {
            let lemmas: HashSet<String> = content_lemmas(s).into_iter().collect();
            let score = q_lemmas.intersection(&lemmas).count();
            if score > 0 && best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let Some((si, score)) = best else {
            return Ok(QaPrediction {
                answer: String::new(),
                confidence: 0.0,
            });
        };
        let expect = expected_type(question);
        let parsed = ParsedSentence::parse(&sentences[si]);
        let mut pick: Option<(&Chunk, usize)> = None;
        for c in parsed.chunks.iter().filter(|c| fits(&parsed, c, expect)) {
            let text = parsed.text_of(c.start, c.end);
            if normalized_contains(question, text) {
                continue;
            }
            let overlap = content_lemmas(text).iter().filter(|l| q_lemmas.contains(*l)).count();
            if pick.is_none_or(|(_, o)| overlap < o) {
                pick = Some((c, overlap));
            }
        }
        Ok(match pick {
            Some((c, overlap)) => QaPrediction {
                answer: parsed.text_of(c.start, c.end).to_string(),
                confidence: (score as f64 / q_lemmas.len().max(1) as f64) / (1.0 + overlap as f64),
            },
            None => QaPrediction {
                answer: String::new(),
                confidence: 0.0,
            },
        })
    }
}
