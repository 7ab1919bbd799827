//! Blueprint annotation: decontextualize the story, extract answer
//! candidates, generate questions, filter, and align the surviving pairs to
//! story sentences.

pub mod adapters;
pub mod rules;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerSpan, Blueprint, QAPair, Story, StorySample};
use crate::error::{Error, Result, Stage};
use crate::text::{self, lexicon};

pub use adapters::{
    Adapters, AnswerCandidate, CoreferenceResolver, QaPrediction, QuestionAnswerer, QuestionGenerator, Replacement,
    SyntacticAnalyzer,
};

/// How a round-trip answer is compared with the answer that seeded the
/// question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum MatchRule {
    /// Normalized exact match.
    #[default]
    Exact,
    /// Normalized exact match, or token F1 at least `tau`.
    F1 { tau: f64 },
}

impl MatchRule {
    pub fn matches(&self, predicted: &str, expected: &str) -> bool {
        let exact = text::normalize_answer(predicted) == text::normalize_answer(expected)
            && !text::normalize_answer(expected).is_empty();
        match *self {
            MatchRule::Exact => exact,
            MatchRule::F1 { tau } => exact || text::token_f1(predicted, expected) >= tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    pub match_rule: MatchRule,
    /// Cap on answer candidates per story; `None` keeps all.
    pub max_candidates: Option<usize>,
    /// Continue with the original sentences when coreference fails.
    pub coref_fallback: bool,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self {
            match_rule: MatchRule::Exact,
            max_candidates: None,
            coref_fallback: true,
        }
    }
}

fn stage_err(stage: Stage, id: &str, e: impl std::fmt::Display) -> Error {
    Error::Annotation {
        stage,
        sample_id: id.to_string(),
        message: e.to_string(),
    }
}

/// Replace pronouns with their head mentions. Replacements that do not
/// target a pronoun token are ignored.
pub fn decontextualize(story: &Story, resolver: &dyn CoreferenceResolver) -> Result<Story> {
    if story.is_empty() || story.sentences.iter().any(|s| s.trim().is_empty()) {
        return Err(Error::Domain("story has no sentences or an empty sentence".into()));
    }
    let replacements = resolver.resolve(&story.sentences)?;
    let mut per_sentence: Vec<Vec<&Replacement>> = vec![Vec::new(); story.len()];
    for r in &replacements {
        let Some(sentence) = story.sentences.get(r.sentence) else {
            log::warn!("coreference replacement for missing sentence {}", r.sentence);
            continue;
        };
        let target = sentence.get(r.start..r.end).unwrap_or("");
        if !lexicon::is_pronoun(&target.to_lowercase()) {
            log::warn!("ignoring replacement of non-pronoun `{target}`");
            continue;
        }
        per_sentence[r.sentence].push(r);
    }
    let decontextualized = story
        .sentences
        .iter()
        .zip(per_sentence.iter_mut())
        .map(|(s, reps)| {
            reps.sort_by_key(|r| std::cmp::Reverse(r.start));
            let mut out = s.clone();
            let mut last_start = usize::MAX;
            for r in reps.iter() {
                if r.end > last_start {
                    continue; // overlapping
                }
                out.replace_range(r.start..r.end, &r.text);
                last_start = r.start;
            }
            out
        })
        .collect();
    Ok(Story {
        sentences: story.sentences.clone(),
        decontextualized_sentences: Some(decontextualized),
    })
}

/// Answer candidates over the decontextualized sentences, de-duplicated on
/// (normalized text, sentence index), in analyzer order.
pub fn extract_answer_candidates(story: &Story, analyzer: &dyn SyntacticAnalyzer) -> Result<Vec<AnswerCandidate>> {
    let Some(sentences) = story.decontextualized_sentences.as_deref() else {
        return Err(Error::Domain("story is not decontextualized".into()));
    };
    if sentences.is_empty() {
        return Err(Error::Domain("story has no sentences".into()));
    }
    let raw = analyzer.analyze(sentences)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in raw {
        let valid = sentences
            .get(c.span.sentence)
            .and_then(|s| crate::corpus::char_slice(s, c.span.start, c.span.end))
            == Some(c.text.as_str());
        if !valid {
            return Err(Error::Adapter(format!(
                "analyzer produced a span that does not match `{}`",
                c.text
            )));
        }
        let key = (text::normalize_answer(&c.text), c.span.sentence);
        if key.0.is_empty() || !seen.insert(key) {
            continue;
        }
        out.push(c);
    }
    Ok(out)
}

/// Capitalized, trimmed, single trailing question mark.
pub fn normalize_question(q: &str) -> String {
    let q = q.trim().trim_end_matches(['?', '.', '!', ' ']);
    let mut chars = q.chars();
    let mut out = match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    };
    out.push('?');
    out
}

/// Marker placed on both sides of the answer inside a QG context.
pub const HIGHLIGHT: &str = "<hl>";

/// The whole story with the candidate's span wrapped in [`HIGHLIGHT`]
/// markers. A span that does not fit its sentence highlights the sentence.
pub fn highlighted_context(sentences: &[String], span: AnswerSpan) -> String {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if i != span.sentence {
                return s.clone();
            }
            let byte = |c: usize| s.char_indices().map(|(b, _)| b).chain([s.len()]).nth(c);
            match (byte(span.start), byte(span.end)) {
                (Some(a), Some(b)) if a < b => format!("{}{HIGHLIGHT} {} {HIGHLIGHT}{}", &s[..a], &s[a..b], &s[b..]),
                _ => {
                    let body = s.trim_end_matches(['.', '!', '?']);
                    format!("{HIGHLIGHT} {body} {HIGHLIGHT}{}", &s[body.len()..])
                }
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// One question per candidate, in candidate order. The context is the
/// working story with the candidate highlighted. Generation failures skip
/// the candidate.
pub fn generate_questions(candidates: &[AnswerCandidate], story: &Story, qg: &dyn QuestionGenerator) -> Vec<QAPair> {
    let sentences = story.working_sentences();
    candidates
        .iter()
        .filter_map(
            |c| match qg.generate(&c.text, &highlighted_context(sentences, c.span)) {
                Ok(q) if !q.trim().trim_end_matches('?').trim().is_empty() => Some(QAPair {
                    answer: c.text.clone(),
                    question: normalize_question(&q),
                    answer_span: Some(c.span),
                    source_kind: c.kind,
                }),
                Ok(_) => {
                    log::warn!("empty question for answer `{}`", c.text);
                    None
                }
                Err(e) => {
                    log::warn!("question generation failed for `{}`: {e}", c.text);
                    None
                }
            },
        )
        .collect()
}

/// Drop pairs whose normalized answer already appears in the question.
pub fn filter_redundant(pairs: &[QAPair]) -> Vec<QAPair> {
    pairs
        .iter()
        .filter(|p| !text::normalized_contains(&p.question, &p.answer))
        .cloned()
        .collect()
}

/// Keep pairs whose question, answered over the story, gives back the
/// seeding answer under `rule`.
pub fn round_trip_filter(
    pairs: &[QAPair],
    story: &Story,
    qa: &dyn QuestionAnswerer,
    rule: MatchRule,
) -> Result<Vec<QAPair>> {
    if story.decontextualized_sentences.is_none() {
        return Err(Error::Domain("story is not decontextualized".into()));
    }
    let context = story.working_text();
    Ok(pairs
        .iter()
        .filter(|p| match qa.answer(&p.question, &context) {
            Ok(pred) => rule.matches(&pred.answer, &p.answer),
            Err(e) => {
                log::warn!("question answering failed for `{}`: {e}", p.question);
                false
            }
        })
        .cloned()
        .collect())
}

/// Group pairs by answer sentence, ordered by answer offset within a
/// sentence. Every pair needs a span.
pub fn align_to_sentences(pairs: &[QAPair], story: &Story) -> Result<Blueprint> {
    let mut segments: Vec<Vec<(AnswerSpan, usize, QAPair)>> = vec![Vec::new(); story.len()];
    for (i, p) in pairs.iter().enumerate() {
        let span = p
            .answer_span
            .ok_or_else(|| Error::Domain(format!("pair `{}` has no answer span", p.answer)))?;
        let seg = segments.get_mut(span.sentence).ok_or_else(|| {
            Error::Domain(format!(
                "answer span sentence {} outside a {}-sentence story",
                span.sentence,
                story.len()
            ))
        })?;
        seg.push((span, i, p.clone()));
    }
    Ok(Blueprint::from_segments(
        segments
            .into_iter()
            .map(|mut seg| {
                seg.sort_by_key(|(span, i, _)| (span.start, *i));
                seg.into_iter().map(|(_, _, p)| p).collect()
            })
            .collect(),
    ))
}

/// Full annotation of one sample. Errors carry the failing stage.
pub fn annotate_sample(sample: &StorySample, adapters: &Adapters, cfg: &AnnotationConfig) -> Result<StorySample> {
    let id = sample.id();
    let story = match decontextualize(&sample.story, adapters.coref.as_ref()) {
        Ok(s) => s,
        Err(Error::Domain(m)) => return Err(stage_err(Stage::Decontextualize, id, m)),
        Err(e) if cfg.coref_fallback => {
            log::warn!("{id}: coreference failed ({e}); using original sentences");
            Story {
                sentences: sample.story.sentences.clone(),
                decontextualized_sentences: Some(sample.story.sentences.clone()),
            }
        }
        Err(e) => return Err(stage_err(Stage::Decontextualize, id, e)),
    };
    let mut candidates = extract_answer_candidates(&story, adapters.analyzer.as_ref())
        .map_err(|e| stage_err(Stage::ExtractCandidates, id, e))?;
    if let Some(max) = cfg.max_candidates {
        candidates.truncate(max);
    }
    let pairs = generate_questions(&candidates, &story, adapters.qg.as_ref());
    let pairs = filter_redundant(&pairs);
    let pairs = round_trip_filter(&pairs, &story, adapters.qa.as_ref(), cfg.match_rule)
        .map_err(|e| stage_err(Stage::RoundTripFilter, id, e))?;
    let blueprint = align_to_sentences(&pairs, &story).map_err(|e| stage_err(Stage::Align, id, e))?;
    Ok(StorySample {
        image_sequence: sample.image_sequence.clone(),
        story,
        blueprint: Some(blueprint),
        split: sample.split,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationFailure {
    pub sequence_id: String,
    pub index: usize,
    pub category: String,
    pub message: String,
}

/// Annotate a corpus on `parallelism` workers. Output order follows input
/// order; failures are collected instead of aborting the batch.
pub fn annotate_corpus(
    samples: &[StorySample],
    adapters: &Adapters,
    cfg: &AnnotationConfig,
    parallelism: usize,
) -> Result<(Vec<StorySample>, Vec<AnnotationFailure>)> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<StorySample>> =
        pool.install(|| samples.par_iter().map(|s| annotate_sample(s, adapters, cfg)).collect());
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (i, (sample, r)) in samples.iter().zip(results).enumerate() {
        match r {
            Ok(s) => ok.push(s),
            Err(e) => failures.push(AnnotationFailure {
                sequence_id: sample.id().to_string(),
                index: i,
                category: e.category().to_string(),
                message: e.to_string(),
            }),
        }
    }
    Ok((ok, failures))
}
