//! Blueprint refinement against detected concepts, refined regeneration, and
//! generation with a raised iteration cap.

use serde::{Deserialize, Serialize};

use crate::corpus::{Blueprint, QAPair};
use crate::error::Result;
use crate::metrics::ConceptLexicon;
use crate::model::decode::{DecodeConfig, TextDecoder};
use crate::model::generate::{
    generate_iterative, generate_iterative_with, generate_topdown, generate_topdown_from, GenerationTrace,
    FLAG_REFINEMENT_FALLBACK,
};
use crate::model::serialize::topdown_plan_prefix;
use crate::model::Mode;
use crate::text::{content_lemmas, lemmatize, lexicon, tokenize, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityRule {
    /// The answer's head-noun lemma must be a concept lemma.
    #[default]
    HeadNoun,
    /// Every content lemma of the answer must be a concept lemma.
    FullPhrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedPair {
    pub segment: usize,
    pub pair: QAPair,
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub removed_pairs: Vec<RemovedPair>,
    #[serde(with = "blueprint_segments")]
    pub kept: Blueprint,
}

mod blueprint_segments {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &Blueprint, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<&Vec<QAPair>> = b.segments.iter().map(|x| &x.pairs).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Blueprint, D::Error> {
        Ok(Blueprint::from_segments(Vec::<Vec<QAPair>>::deserialize(d)?))
    }
}

/// Lemma of the answer's head noun: the last noun before the first
/// preposition, else the last noun anywhere.
pub fn head_noun_lemma(answer: &str) -> Option<String> {
    let toks = tokenize(answer);
    let tags = lexicon::tag_sentence(&toks);
    let is_noun = |i: &usize| matches!(tags[*i], Tag::Noun | Tag::Propn);
    let cut = tags.iter().position(|t| *t == Tag::Prep).unwrap_or(toks.len());
    (0..cut)
        .rev()
        .find(is_noun)
        .or_else(|| (0..toks.len()).rev().find(is_noun))
        .map(|i| lemmatize(&toks[i].to_lowercase()))
}

/// The first ungrounded entity of an answer under `rule`, if any.
pub fn ungrounded_entity(answer: &str, lemmas: &std::collections::HashSet<&str>, rule: EntityRule) -> Option<String> {
    match rule {
        EntityRule::HeadNoun => head_noun_lemma(answer).filter(|h| !lemmas.contains(h.as_str())),
        EntityRule::FullPhrase => content_lemmas(answer)
            .into_iter()
            .find(|l| !lemmas.contains(l.as_str())),
    }
}

/// Drop every pair whose answer names an entity outside the concept
/// lexicon. Segment structure and the order of kept pairs are preserved.
pub fn refine_blueprint(blueprint: &Blueprint, concepts: &ConceptLexicon, rule: EntityRule) -> RefinementReport {
    let lemmas = concepts.lemmas();
    let mut removed = Vec::new();
    let mut segments = Vec::with_capacity(blueprint.segments.len());
    for (si, seg) in blueprint.segments.iter().enumerate() {
        let mut kept = Vec::new();
        for p in &seg.pairs {
            match ungrounded_entity(&p.answer, &lemmas, rule) {
                Some(entity) => removed.push(RemovedPair {
                    segment: si,
                    pair: p.clone(),
                    entity,
                }),
                None => kept.push(p.clone()),
            }
        }
        segments.push(kept);
    }
    RefinementReport {
        removed_pairs: removed,
        kept: Blueprint::from_segments(segments),
    }
}

/// Generate, refining the plan before the story is decoded. Top-down:
/// decode, refine, and re-decode the story from the refined plan. Iterative:
/// refine each step's plan before it enters the context. If refinement
/// removes every pair, the unrefined generation is returned and flagged.
pub fn generate_refined(
    dec: &dyn TextDecoder,
    mode: Mode,
    cfg: &DecodeConfig,
    concepts: &ConceptLexicon,
    rule: EntityRule,
) -> Result<GenerationTrace> {
    match mode {
        Mode::TopDown => {
            let raw = generate_topdown(dec, cfg)?;
            let report = refine_blueprint(&raw.blueprint, concepts, rule);
            if report.removed_pairs.is_empty() {
                return Ok(GenerationTrace {
                    refinement: Some(report),
                    ..raw
                });
            }
            if report.kept.is_empty() {
                let mut t = raw;
                t.flag(FLAG_REFINEMENT_FALLBACK);
                t.refinement = Some(report);
                return Ok(t);
            }
            let mut t = generate_topdown_from(dec, cfg, &topdown_plan_prefix(&report.kept))?;
            t.refinement = Some(report);
            Ok(t)
        }
        Mode::Iterative => {
            let lemmas = concepts.lemmas();
            let mut removed = Vec::new();
            let mut step = 0usize;
            let mut hook = |pairs: &[QAPair]| {
                let (keep, drop): (Vec<_>, Vec<_>) = pairs
                    .iter()
                    .map(|p| (p, ungrounded_entity(&p.answer, &lemmas, rule)))
                    .partition(|(_, e)| e.is_none());
                let si = step;
                step += 1;
                if drop.is_empty() {
                    return None;
                }
                removed.extend(drop.into_iter().map(|(p, e)| RemovedPair {
                    segment: si,
                    pair: p.clone(),
                    entity: e.expect("partitioned"),
                }));
                Some(keep.into_iter().map(|(p, _)| p.clone()).collect())
            };
            let mut t = generate_iterative_with(dec, cfg, &mut hook)?;
            let report = RefinementReport {
                removed_pairs: removed,
                kept: t.blueprint.clone(),
            };
            if !report.removed_pairs.is_empty() && report.kept.is_empty() {
                let mut raw = generate_iterative(dec, cfg)?;
                raw.flag(FLAG_REFINEMENT_FALLBACK);
                raw.refinement = Some(report);
                return Ok(raw);
            }
            t.refinement = Some(report);
            Ok(t)
        }
    }
}

/// Iterative generation with the step cap set to `max_iterations`.
pub fn generate_extended(dec: &dyn TextDecoder, cfg: &DecodeConfig, max_iterations: usize) -> Result<GenerationTrace> {
    let cfg = DecodeConfig {
        max_iterations,
        ..cfg.clone()
    };
    generate_iterative(dec, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate::tests::Scripted;

    fn lex(c: &[&str]) -> ConceptLexicon {
        ConceptLexicon::new(c.iter().copied())
    }

    fn bp(answers: &[&[&str]]) -> Blueprint {
        Blueprint::from_segments(
            answers
                .iter()
                .map(|seg| seg.iter().map(|a| QAPair::generated(*a, "What?")).collect())
                .collect(),
        )
    }

    #[test]
    fn head_nouns() {
        assert_eq!(head_noun_lemma("the beach").as_deref(), Some("beach"));
        assert_eq!(head_noun_lemma("a box of apples").as_deref(), Some("box"));
        assert_eq!(head_noun_lemma("bought fresh apples").as_deref(), Some("apple"));
        assert_eq!(head_noun_lemma("quickly").as_deref(), None);
    }

    #[test]
    fn removes_ungrounded_pairs() {
        let r = refine_blueprint(&bp(&[&["the beach", "a dog"]]), &lex(&["beach"]), EntityRule::HeadNoun);
        assert_eq!(r.kept, bp(&[&["the beach"]]));
        assert_eq!(r.removed_pairs.len(), 1);
        assert_eq!(r.removed_pairs[0].entity, "dog");
        let all = bp(&[&["the beach"], &[]]);
        assert_eq!(refine_blueprint(&all, &lex(&["beach"]), EntityRule::HeadNoun).kept, all);
        let strict = refine_blueprint(&bp(&[&["the sandy beach"]]), &lex(&["beach"]), EntityRule::FullPhrase);
        assert_eq!(strict.removed_pairs[0].entity, "sandy");
    }

    #[test]
    fn topdown_refinement_redecodes_from_kept_plan() {
        let dec = Scripted::new(&[
            "Plan: the beach ; Where? | a dog ; What ran? Story: We saw a dog at the beach.",
            "Plan: the beach ; Where? Story: We went to the beach.",
        ]);
        let t = generate_refined(
            &dec,
            Mode::TopDown,
            &DecodeConfig::default(),
            &lex(&["beach"]),
            EntityRule::HeadNoun,
        )
        .unwrap();
        assert_eq!(t.blueprint.num_pairs(), 1);
        assert_eq!(t.refinement.as_ref().unwrap().removed_pairs[0].pair.answer, "a dog");
        assert_eq!(dec.calls.borrow()[1].1, "Plan: the beach ; Where? Story:");
    }

    #[test]
    fn grounded_plan_is_untouched_and_empty_plan_falls_back() {
        let out = "Plan: the beach ; Where? Story: We went to the beach.";
        let dec = Scripted::new(&[out]);
        let t = generate_refined(
            &dec,
            Mode::TopDown,
            &DecodeConfig::default(),
            &lex(&["beach"]),
            EntityRule::HeadNoun,
        )
        .unwrap();
        assert_eq!(t.raw_text, out);
        assert_eq!(dec.calls.borrow().len(), 1);
        let dec = Scripted::new(&["Plan: a dog ; What? Story: A dog ran."]);
        let t = generate_refined(
            &dec,
            Mode::TopDown,
            &DecodeConfig::default(),
            &lex(&["beach"]),
            EntityRule::HeadNoun,
        )
        .unwrap();
        assert!(t.has_flag(FLAG_REFINEMENT_FALLBACK));
        assert_eq!(t.blueprint.num_pairs(), 1);
    }

    #[test]
    fn iterative_refinement_forces_kept_plan() {
        let dec = Scripted::new(&[
            "Plan: the beach ; Where? | a dog ; What? Next Sentence: A dog ran on the beach.",
            "Plan: the beach ; Where? Next Sentence: We went to the beach.",
            "⟨END⟩",
        ]);
        let t = generate_refined(
            &dec,
            Mode::Iterative,
            &DecodeConfig::default(),
            &lex(&["beach"]),
            EntityRule::HeadNoun,
        )
        .unwrap();
        assert_eq!(t.story.sentences, vec!["We went to the beach."]);
        assert_eq!(t.blueprint.num_pairs(), 1);
        assert_eq!(dec.calls.borrow()[1].1, "Plan: the beach ; Where? Next Sentence:");
        assert_eq!(
            dec.calls.borrow()[2].0,
            "Context: the beach ; Where? We went to the beach."
        );
    }

    #[test]
    fn extended_cap() {
        let dec = Scripted::new(&["Plan: Next Sentence: Again."; 30]);
        let t = generate_extended(&dec, &DecodeConfig::default(), 10).unwrap();
        assert_eq!(t.story.len(), 10);
        let dec = Scripted::new(&["Plan: Next Sentence: Again."; 30]);
        assert_eq!(
            generate_extended(&dec, &DecodeConfig::default(), 1)
                .unwrap()
                .story
                .len(),
            1
        );
    }
}
