//! Template question generation over the clause skeleton of the sentence
//! that contains the answer.

use crate::annotation::adapters::QuestionGenerator;
use crate::annotation::HIGHLIGHT;
use crate::corpus::SourceKind;
use crate::error::{Error, Result};
use crate::text::lexicon::{self, Tag};
use crate::text::split_sentences;

use super::analysis::{join_words, ParsedSentence};

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateQuestionGenerator;

impl QuestionGenerator for TemplateQuestionGenerator {
    fn generate(&self, answer: &str, context: &str) -> Result<String> {
        let sentences = split_sentences(context);
        let marked: Vec<String> = sentences
            .iter()
            .filter(|s| s.contains(HIGHLIGHT))
            .map(|s| unmark(s))
            .collect();
        let sentences = if marked.is_empty() { sentences } else { marked };
        for sentence in &sentences {
            let parsed = ParsedSentence::parse(sentence);
            if let Some((a, b)) = parsed.find_tokens(answer) {
                return Ok(question_for(&parsed, a, b));
            }
        }
        Err(Error::Adapter(format!("answer `{answer}` not found in context")))
    }
}

fn unmark(s: &str) -> String {
    s.replace(&format!("{HIGHLIGHT} "), "")
        .replace(&format!(" {HIGHLIGHT}"), "")
}

/// Subject text as it reads mid-sentence ("The family" -> "the family").
fn subject_text(p: &ParsedSentence<'_>, s0: usize, s1: usize) -> String {
    let words: Vec<String> = (s0..s1)
        .map(|i| {
            let w = p.word(i);
            if i == s0 && matches!(p.tags[i], Tag::Det | Tag::Pron | Tag::Adj | Tag::Noun | Tag::Num) {
                w.to_lowercase()
            } else {
                w.to_string()
            }
        })
        .collect();
    join_words(&words)
}

fn words(p: &ParsedSentence<'_>, from: usize, to: usize) -> Vec<String> {
    (from..to.max(from)).map(|i| p.word(i).to_string()).collect()
}

fn wh_for(p: &ParsedSentence<'_>, a: usize, b: usize) -> &'static str {
    let person = match p.chunk_at(a, b) {
        Some(c) => p.is_person_chunk(c),
        None => p.tags[b - 1] == Tag::Propn,
    };
    if person {
        "Who"
    } else {
        "What"
    }
}

fn finish(mut parts: Vec<String>) -> String {
    parts.retain(|w| !w.is_empty());
    let mut q = join_words(&parts);
    q.push('?');
    q
}

fn question_for(p: &ParsedSentence<'_>, a: usize, b: usize) -> String {
    let end = p.body_end();
    let fallback = || {
        let mut parts = words(p, 0, a);
        parts.push("what".into());
        parts.extend(words(p, b, end));
        if let Some(first) = parts.first_mut() {
            if a > 0 && p.tags[0] == Tag::Det {
                *first = first.to_lowercase();
            }
        }
        let mut q = finish(parts);
        if a == 0 {
            q = capitalize(&q);
        }
        q
    };
    let (Some((v0, v1)), Some((s0, s1))) = (p.verb_group, p.subject()) else {
        return fallback();
    };
    let subj = subject_text(p, s0, s1);
    let main = p.main_verb();
    let auxes: Vec<String> = (v0..v1)
        .filter(|&i| p.tags[i] == Tag::Aux)
        .map(|i| p.word(i).to_lowercase())
        .collect();
    let copula_only = main.is_none();

    // subject
    if a == s0 && b == s1 {
        let mut parts = vec![wh_for(p, a, b).to_string()];
        parts.extend(words(p, v0, end));
        return finish(parts);
    }

    let is_vp = p.chunk_at(a, b).is_some_and(|c| c.kind == SourceKind::VerbPhrase);
    if a == v0 && is_vp {
        let Some(main) = main else { return fallback() };
        let mut parts = vec!["What".to_string()];
        if auxes.is_empty() {
            parts.push("did".into());
            parts.push(subj);
            parts.push("do".into());
        } else {
            parts.push(auxes[0].clone());
            parts.push(subj);
            parts.extend(auxes[1..].iter().cloned());
            parts.push(if p.word(main).ends_with("ing") {
                "doing".into()
            } else {
                "done".into()
            });
        }
        parts.extend(words(p, b, end));
        return finish(parts);
    }

    // direct object
    if a == v1 {
        let mut parts = vec![wh_for(p, a, b).to_string()];
        parts.extend(predicate(p, &auxes, main, copula_only, v0, v1, subj));
        parts.extend(words(p, b, end));
        return finish(parts);
    }

    // object of a preposition after the verb
    if a > v1 && p.tags[a - 1] == Tag::Prep {
        let prep = p.word(a - 1).to_lowercase();
        let before = words(p, v1, a - 1);
        let after = words(p, b, end);
        if lexicon::is_locative(&prep) && prep != "from" {
            let mut parts = vec!["Where".to_string()];
            parts.extend(predicate(p, &auxes, main, copula_only, v0, v1, subj));
            parts.extend(before);
            parts.extend(after);
            return finish(parts);
        }
        let mut parts = vec![wh_for(p, a, b).to_string()];
        parts.extend(predicate(p, &auxes, main, copula_only, v0, v1, subj));
        parts.extend(before);
        parts.extend(after);
        parts.push(prep);
        return finish(parts);
    }

    fallback()
}

/// Inverted predicate: "did the family buy", "was Mary walking",
/// "was the market".
fn predicate(
    p: &ParsedSentence<'_>,
    auxes: &[String],
    main: Option<usize>,
    copula_only: bool,
    v0: usize,
    v1: usize,
    subj: String,
) -> Vec<String> {
    if copula_only {
        let mut parts = vec![p.word(v0).to_lowercase(), subj];
        parts.extend(words(p, v0 + 1, v1));
        return parts;
    }
    let main = main.expect("non-copula group has a main verb");
    if auxes.is_empty() {
        let word = p.word(main).to_lowercase();
        let base = lexicon::base_verb(&word);
        let aux = if base == word && word.ends_with('s') {
            "does"
        } else if base == word {
            "do"
        } else {
            "did"
        };
        let base = if aux == "does" {
            word.trim_end_matches('s').to_string()
        } else {
            base
        };
        // keep particles that followed the verb
        let mut parts = vec![aux.to_string(), subj, base];
        parts.extend(words(p, main + 1, v1));
        parts
    } else {
        let mut parts = vec![auxes[0].clone(), subj];
        parts.extend(auxes[1..].iter().cloned());
        parts.extend(
            (v0..v1)
                .filter(|&i| p.tags[i] != Tag::Aux)
                .map(|i| p.word(i).to_string()),
        );
        parts
    }
}

fn capitalize(text: &str) -> String {
    let mut c = text.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}
