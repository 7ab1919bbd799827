//! Recency-based pronoun resolution.
//!
//! Gender is never inferred from names: "he"/"she" resolve to the most recent
//! named entity, "they"/"them" to the most recent group mention (a noun phrase
//! headed by a person noun, or a coordination of names). "it" is left alone,
//! since pleonastic uses ("It rained.") are common in short stories.

use crate::annotation::adapters::{CoreferenceResolver, Replacement};
use crate::corpus::SourceKind;
use crate::error::Result;
use crate::text::lexicon::{self, PronounKind, Tag};

use super::analysis::ParsedSentence;

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleCoref;

#[derive(Default, Clone)]
struct Memory {
    person: Option<String>,
    group: Option<String>,
}

fn lower_determiner(text: &str, first_tag: Tag) -> String {
    if matches!(first_tag, Tag::Det) {
        let mut chars = text.chars();
        match chars.next() {
            Some(c) => c.to_lowercase().collect::<String>() + chars.as_str(),
            None => String::new(),
        }
    } else {
        text.to_string()
    }
}

fn capitalize(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn possessive(text: &str) -> String {
    if text.ends_with('s') {
        format!("{text}'")
    } else {
        format!("{text}'s")
    }
}

impl CoreferenceResolver for RuleCoref {
    fn resolve(&self, sentences: &[String]) -> Result<Vec<Replacement>> {
        let mut memory = Memory::default();
        let mut out = Vec::new();
        for (si, sentence) in sentences.iter().enumerate() {
            let at_start = memory.clone();
            let first_new = out.len();
            let parsed = ParsedSentence::parse(sentence);
            let mut chunk_iter = parsed
                .chunks
                .iter()
                .filter(|c| c.kind != SourceKind::VerbPhrase)
                .peekable();
            for ti in 0..parsed.tokens.len() {
                // record mentions that end before this token
                while let Some(c) = chunk_iter.peek() {
                    if c.end > ti {
                        break;
                    }
                    remember(&parsed, c, &mut memory);
                    chunk_iter.next();
                }
                let word = parsed.word(ti).to_lowercase();
                let Some(kind) = lexicon::pronoun_kind(&word) else {
                    continue;
                };
                let is_poss = parsed.tags[ti] == Tag::Poss;
                let (antecedent, poss) = match kind {
                    PronounKind::PersonSubject | PronounKind::PersonObject => (memory.person.clone(), false),
                    PronounKind::PersonAmbiguous => (memory.person.clone(), is_poss),
                    PronounKind::PersonPossessive => (memory.person.clone(), true),
                    PronounKind::GroupSubject | PronounKind::GroupObject => (memory.group.clone(), false),
                    PronounKind::GroupPossessive => (memory.group.clone(), true),
                };
                let Some(mut text) = antecedent else { continue };
                if poss {
                    text = possessive(&text);
                }
                if ti == 0 {
                    text = capitalize(&text);
                }
                out.push(Replacement {
                    sentence: si,
                    start: parsed.tokens[ti].start,
                    end: parsed.tokens[ti].end,
                    text,
                });
            }
            // later sentences see this one with its pronouns already resolved
            let mut resolved = sentence.clone();
            for r in out[first_new..].iter().rev() {
                resolved.replace_range(r.start..r.end, &r.text);
            }
            memory = at_start;
            let reparsed = ParsedSentence::parse(&resolved);
            for c in reparsed.chunks.iter().filter(|c| c.kind != SourceKind::VerbPhrase) {
                remember(&reparsed, c, &mut memory);
            }
        }
        Ok(out)
    }
}

fn remember(parsed: &ParsedSentence<'_>, c: &super::analysis::Chunk, memory: &mut Memory) {
    let text = parsed.text_of(c.start, c.end);
    if c.kind == SourceKind::NamedEntity {
        memory.person = Some(text.to_string());
        // "Mary and John"
        if c.start >= 2
            && parsed.word(c.start - 1).eq_ignore_ascii_case("and")
            && parsed.tags[c.start - 2] == Tag::Propn
        {
            let mut s = c.start - 2;
            while s > 0 && parsed.tags[s - 1] == Tag::Propn {
                s -= 1;
            }
            memory.group = Some(parsed.text_of(s, c.end).to_string());
        }
        return;
    }
    let head = lexicon::lemmatize(parsed.word(c.head));
    if lexicon::is_person_noun(&head) {
        memory.group = Some(lower_determiner(text, parsed.tags[c.start]));
    }
}
