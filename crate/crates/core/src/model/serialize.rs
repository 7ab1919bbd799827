//! Target-string formats.
//!
//! Top-down: `Plan: <plan> Story: <s_1> ... <s_k>` where the plan lists the
//! per-sentence segments in order, segments joined by ` || `, pairs within a
//! segment by ` | `, and each pair written answer first as `<answer> ; <question>`.
//! An empty plan leaves `Plan: Story: ...`.
//!
//! Iterative step `i`: context `⟨START⟩` for the first step, otherwise
//! `Context: ` followed by every earlier step target with its markers
//! removed; target `Plan: <segment> Next Sentence: <s_i>`, and `⟨END⟩` after
//! the last sentence.

use crate::corpus::{Blueprint, QAPair, Story, StorySample};
use crate::error::{Error, Result};
use crate::text::split_sentences;

pub const PLAN: &str = "Plan:";
pub const STORY: &str = "Story:";
pub const CONTEXT: &str = "Context:";
pub const NEXT_SENTENCE: &str = "Next Sentence:";
pub const START: &str = "⟨START⟩";
pub const END: &str = "⟨END⟩";

pub const QA_SEP: &str = ";";
pub const PAIR_SEP: &str = "|";
pub const SEGMENT_SEP: &str = "||";

pub fn serialize_pair(pair: &QAPair) -> String {
    format!("{} {QA_SEP} {}", pair.answer.trim(), pair.question.trim())
}

pub fn serialize_segment(pairs: &[QAPair]) -> String {
    pairs
        .iter()
        .map(serialize_pair)
        .collect::<Vec<_>>()
        .join(&format!(" {PAIR_SEP} "))
}

pub fn serialize_plan(blueprint: &Blueprint) -> String {
    if blueprint.is_empty() {
        return String::new();
    }
    blueprint
        .segments
        .iter()
        .map(|s| serialize_segment(&s.pairs))
        .collect::<Vec<_>>()
        .join(&format!(" {SEGMENT_SEP} "))
}

fn join_nonempty(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn serialize_topdown(blueprint: &Blueprint, story: &Story) -> String {
    join_nonempty(&[PLAN, &serialize_plan(blueprint), STORY, &story.text()])
}

/// Parse one segment; empty text gives no pairs.
pub fn parse_segment(text: &str) -> Result<Vec<QAPair>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(PAIR_SEP)
        .map(|pair| {
            let (a, q) = pair.split_once(QA_SEP).ok_or_else(|| Error::Output {
                message: format!("plan pair without `{QA_SEP}`: {pair:?}"),
                recovered: text.to_string(),
            })?;
            let (a, q) = (a.trim(), q.trim());
            if a.is_empty() || q.is_empty() {
                return Err(Error::Output {
                    message: format!("empty answer or question in {pair:?}"),
                    recovered: text.to_string(),
                });
            }
            Ok(QAPair::generated(a, q))
        })
        .collect()
}

/// Plan text to per-segment pairs. An empty plan gives no segments.
pub fn parse_plan(text: &str) -> Result<Vec<Vec<QAPair>>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(SEGMENT_SEP).map(parse_segment).collect()
}

/// Structured result of parsing decoded text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTopDown {
    pub blueprint: Blueprint,
    pub story: Story,
    /// Problems repaired during the parse.
    pub flags: Vec<String>,
}

/// Inverse of [`serialize_topdown`]. A plan whose segment count differs from
/// the sentence count is padded or folded into the last segment and flagged.
pub fn parse_topdown(text: &str) -> Result<ParsedTopDown> {
    let Some(story_at) = text.find(STORY) else {
        return Err(Error::Output {
            message: format!("missing `{STORY}` marker"),
            recovered: text.trim().to_string(),
        });
    };
    let head = text[..story_at].trim();
    let plan_text = match head.strip_prefix(PLAN) {
        Some(rest) => rest,
        None if head.is_empty() => "",
        None => {
            return Err(Error::Output {
                message: format!("text before `{STORY}` does not start with `{PLAN}`"),
                recovered: head.to_string(),
            })
        }
    };
    let sentences = split_sentences(&text[story_at + STORY.len()..]);
    let mut segments = parse_plan(plan_text)?;
    let mut flags = Vec::new();
    let k = sentences.len();
    if !segments.is_empty() && segments.len() != k {
        flags.push("segment_mismatch".to_string());
        while segments.len() > k.max(1) {
            let extra = segments.pop().unwrap_or_default();
            if let Some(s) = segments.last_mut() {
                s.extend(extra)
            }
        }
    }
    segments.resize_with(k.max(segments.len()), Vec::new);
    Ok(ParsedTopDown {
        blueprint: Blueprint::from_segments(segments),
        story: Story::new(sentences),
        flags,
    })
}

/// `Plan: <plan> Story:`, the forced prefix for decoding a story from a
/// given plan.
pub fn topdown_plan_prefix(blueprint: &Blueprint) -> String {
    join_nonempty(&[PLAN, &serialize_plan(blueprint), STORY])
}

/// `Plan: <segment> Next Sentence:`
pub fn step_prefix(pairs: &[QAPair]) -> String {
    join_nonempty(&[PLAN, &serialize_segment(pairs), NEXT_SENTENCE])
}

/// One iterative training row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterativeStep {
    pub context: String,
    pub target: String,
}

pub fn serialize_step(pairs: &[QAPair], sentence: &str) -> String {
    join_nonempty(&[PLAN, &serialize_segment(pairs), NEXT_SENTENCE, sentence])
}

/// A step target with its markers removed, as it appears in later contexts.
pub fn strip_markers(target: &str) -> String {
    target
        .replace(NEXT_SENTENCE, " ")
        .replace(PLAN, " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Context string given the targets emitted so far.
pub fn render_context<S: AsRef<str>>(previous_targets: &[S]) -> String {
    if previous_targets.is_empty() {
        return START.to_string();
    }
    let body: Vec<String> = previous_targets
        .iter()
        .map(|t| strip_markers(t.as_ref()))
        .filter(|t| !t.is_empty())
        .collect();
    join_nonempty(&[CONTEXT, &body.join(" ")])
}

/// k+1 (context, target) rows for a k-sentence sample.
pub fn expand_iterative_samples(sample: &StorySample) -> Result<Vec<IterativeStep>> {
    let blueprint = sample.blueprint.as_ref().ok_or_else(|| Error::Data {
        sample_id: sample.id().to_string(),
        message: "no blueprint".into(),
    })?;
    let sentences = &sample.story.sentences;
    if blueprint.segments.len() != sentences.len() {
        return Err(Error::Data {
            sample_id: sample.id().to_string(),
            message: format!(
                "blueprint has {} segments for {} sentences",
                blueprint.segments.len(),
                sentences.len()
            ),
        });
    }
    let mut targets: Vec<String> = Vec::with_capacity(sentences.len() + 1);
    let mut steps = Vec::with_capacity(sentences.len() + 1);
    for (seg, sentence) in blueprint.segments.iter().zip(sentences) {
        let target = serialize_step(&seg.pairs, sentence);
        steps.push(IterativeStep {
            context: render_context(&targets),
            target: target.clone(),
        });
        targets.push(target);
    }
    steps.push(IterativeStep {
        context: render_context(&targets),
        target: END.to_string(),
    });
    Ok(steps)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedStep {
    Step { pairs: Vec<QAPair>, sentence: String },
    End,
}

/// Parse a decoded step target.
pub fn parse_step(text: &str) -> Result<ParsedStep> {
    let t = text.trim();
    if t == END {
        return Ok(ParsedStep::End);
    }
    let bad = |message: &str| Error::Output {
        message: message.to_string(),
        recovered: t.to_string(),
    };
    let rest = t
        .strip_prefix(PLAN)
        .ok_or_else(|| bad("step does not start with `Plan:`"))?;
    let (plan, sentence) = rest
        .split_once(NEXT_SENTENCE)
        .ok_or_else(|| bad("step without `Next Sentence:`"))?;
    let sentence = sentence.trim();
    if sentence.is_empty() || sentence.contains(END) || sentence.contains(PLAN) {
        return Err(bad("malformed sentence"));
    }
    Ok(ParsedStep::Step {
        pairs: parse_segment(plan)?,
        sentence: sentence.to_string(),
    })
}
