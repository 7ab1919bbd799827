//! Top-down and iterative generation over any [`TextDecoder`].

use serde::{Deserialize, Serialize};

use crate::control::RefinementReport;
use crate::corpus::{Blueprint, QAPair, Story};
use crate::error::{Error, Result};

use super::decode::{DecodeConfig, TextDecoder};
use super::serialize::{
    parse_plan, parse_step, parse_topdown, render_context, serialize_step, step_prefix, ParsedStep, PLAN,
};

pub const FLAG_TRUNCATED: &str = "truncated";
pub const FLAG_RETRIED: &str = "retried_greedy";
pub const FLAG_ITERATION_CAP: &str = "iteration_cap";
pub const FLAG_REFINEMENT_FALLBACK: &str = "refinement_fallback";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub context: String,
    pub raw_text: String,
    pub plan: Vec<QAPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentence: Option<String>,
    pub end: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub sequence_id: String,
    pub raw_text: String,
    pub blueprint: Blueprint,
    pub story: Story,
    pub steps: Vec<StepTrace>,
    pub flags: Vec<String>,
    pub refinement: Option<RefinementReport>,
}

impl GenerationTrace {
    fn new(raw_text: String) -> Self {
        Self {
            sequence_id: String::new(),
            raw_text,
            blueprint: Blueprint::default(),
            story: Story::default(),
            steps: Vec::new(),
            flags: Vec::new(),
            refinement: None,
        }
    }

    pub fn flag(&mut self, f: &str) {
        if !self.flags.iter().any(|x| x == f) {
            self.flags.push(f.to_string());
        }
    }

    pub fn has_flag(&self, f: &str) -> bool {
        self.flags.iter().any(|x| x == f)
    }

    /// One line of generation output.
    pub fn to_json(&self) -> serde_json::Value {
        let blueprint: Vec<Vec<serde_json::Value>> = self
            .blueprint
            .segments
            .iter()
            .map(|s| {
                s.pairs
                    .iter()
                    .map(|p| serde_json::json!({"answer": p.answer, "question": p.question}))
                    .collect()
            })
            .collect();
        let mut v = serde_json::json!({
            "sequence_id": self.sequence_id,
            "raw_text": self.raw_text,
            "story": self.story.sentences,
            "blueprint": blueprint,
            "flags": self.flags,
        });
        if !self.steps.is_empty() {
            v["steps"] = serde_json::to_value(&self.steps).expect("steps serialize");
        }
        if let Some(r) = &self.refinement {
            v["refinement"] = serde_json::to_value(r).expect("report serializes");
        }
        v
    }
}

/// One decode of the full `Plan: ... Story: ...` target. `forced` is a
/// prefix of that target the decoder must continue.
pub fn generate_topdown_from(dec: &dyn TextDecoder, cfg: &DecodeConfig, forced: &str) -> Result<GenerationTrace> {
    cfg.validate()?;
    let d = dec.decode("", forced, cfg.beam_size, cfg.max_output_tokens)?;
    let mut trace = GenerationTrace::new(d.text.clone());
    if !d.finished {
        trace.flag(FLAG_TRUNCATED);
    }
    match parse_topdown(&d.text) {
        Ok(p) => {
            trace.blueprint = p.blueprint;
            trace.story = p.story;
            p.flags.iter().for_each(|f| trace.flag(f));
        }
        Err(Error::Output { message, recovered }) => {
            log::warn!("unparseable top-down output: {message}");
            trace.flag(FLAG_TRUNCATED);
            let plan = recovered.strip_prefix(PLAN).unwrap_or("");
            if let Ok(segments) = parse_plan(plan) {
                trace.blueprint = Blueprint::from_segments(segments);
            }
        }
        Err(e) => return Err(e),
    }
    Ok(trace)
}

pub fn generate_topdown(dec: &dyn TextDecoder, cfg: &DecodeConfig) -> Result<GenerationTrace> {
    generate_topdown_from(dec, cfg, "")
}

/// Decode and parse one step, retrying once greedily.
fn decode_step(
    dec: &dyn TextDecoder,
    context: &str,
    forced: &str,
    cfg: &DecodeConfig,
    trace: &mut GenerationTrace,
) -> Result<(String, Option<ParsedStep>)> {
    let d = dec.decode(context, forced, cfg.beam_size, cfg.max_output_tokens)?;
    if d.finished {
        if let Ok(p) = parse_step(&d.text) {
            return Ok((d.text, Some(p)));
        }
    }
    trace.flag(FLAG_RETRIED);
    let g = dec.decode(context, forced, 1, cfg.max_output_tokens)?;
    let parsed = if g.finished { parse_step(&g.text).ok() } else { None };
    Ok((g.text, parsed))
}

/// Replaces an emitted plan segment before it enters the context; `None`
/// keeps it.
pub type PlanHook<'a> = dyn FnMut(&[QAPair]) -> Option<Vec<QAPair>> + 'a;

/// Iterative decoding with an optional plan rewrite per step. A rewritten
/// plan is forced as the step prefix and the sentence is decoded again.
pub fn generate_iterative_with(
    dec: &dyn TextDecoder,
    cfg: &DecodeConfig,
    hook: &mut PlanHook<'_>,
) -> Result<GenerationTrace> {
    cfg.validate()?;
    let mut trace = GenerationTrace::new(String::new());
    let mut targets: Vec<String> = Vec::new();
    let mut segments = Vec::new();
    let mut sentences = Vec::new();
    let mut raws = Vec::new();
    let mut ended = false;
    for _ in 0..cfg.max_iterations {
        let context = render_context(&targets);
        let (mut raw, parsed) = decode_step(dec, &context, "", cfg, &mut trace)?;
        let (mut pairs, mut sentence) = match parsed {
            None => {
                trace.flag(FLAG_TRUNCATED);
                raws.push(raw.clone());
                trace.steps.push(StepTrace {
                    context,
                    raw_text: raw,
                    plan: Vec::new(),
                    sentence: None,
                    end: false,
                });
                break;
            }
            Some(ParsedStep::End) => {
                raws.push(raw.clone());
                trace.steps.push(StepTrace {
                    context,
                    raw_text: raw,
                    plan: Vec::new(),
                    sentence: None,
                    end: true,
                });
                ended = true;
                break;
            }
            Some(ParsedStep::Step { pairs, sentence }) => (pairs, sentence),
        };
        if let Some(new_pairs) = hook(&pairs) {
            let forced = step_prefix(&new_pairs);
            let (r, p) = decode_step(dec, &context, &forced, cfg, &mut trace)?;
            match p {
                Some(ParsedStep::Step { sentence: s, .. }) => {
                    raw = r;
                    sentence = s;
                }
                _ => trace.flag(FLAG_TRUNCATED),
            }
            pairs = new_pairs;
        }
        targets.push(serialize_step(&pairs, &sentence));
        raws.push(raw.clone());
        trace.steps.push(StepTrace {
            context,
            raw_text: raw,
            plan: pairs.clone(),
            sentence: Some(sentence.clone()),
            end: false,
        });
        segments.push(pairs);
        sentences.push(sentence);
    }
    if !ended && !trace.has_flag(FLAG_TRUNCATED) {
        trace.flag(FLAG_ITERATION_CAP);
    }
    trace.raw_text = raws.join("\n");
    trace.blueprint = Blueprint::from_segments(segments);
    trace.story = Story::new(sentences);
    Ok(trace)
}

pub fn generate_iterative(dec: &dyn TextDecoder, cfg: &DecodeConfig) -> Result<GenerationTrace> {
    generate_iterative_with(dec, cfg, &mut |_| None)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::decode::Decoded;
    use std::cell::RefCell;

    /// Replays scripted outputs; records every (context, forced) call.
    pub struct Scripted {
        pub outputs: RefCell<Vec<String>>,
        pub calls: RefCell<Vec<(String, String)>>,
    }

    impl Scripted {
        pub fn new(outputs: &[&str]) -> Self {
            Self {
                outputs: RefCell::new(outputs.iter().rev().map(|s| s.to_string()).collect()),
                calls: RefCell::new(Vec::new()),
            }
        }
    }

    impl TextDecoder for Scripted {
        fn decode(&self, context: &str, forced: &str, _: usize, _: usize) -> Result<Decoded> {
            self.calls.borrow_mut().push((context.into(), forced.into()));
            let text = self.outputs.borrow_mut().pop().unwrap_or_else(|| "⟨END⟩".into());
            Ok(Decoded { text, finished: true })
        }
    }

    #[test]
    fn topdown_parses_or_flags() {
        let ok = Scripted::new(&["Plan: Anna ; Who swam? Story: Anna swam."]);
        let t = generate_topdown(&ok, &DecodeConfig::default()).unwrap();
        assert_eq!(t.story.sentences, vec!["Anna swam."]);
        assert_eq!(t.blueprint.num_pairs(), 1);
        let bad = Scripted::new(&["Plan: Anna ; Who swam?"]);
        let t = generate_topdown(&bad, &DecodeConfig::default()).unwrap();
        assert!(t.has_flag(FLAG_TRUNCATED));
        assert_eq!(t.raw_text, "Plan: Anna ; Who swam?");
        assert_eq!(t.blueprint.num_pairs(), 1);
    }

    #[test]
    fn iterative_contexts_accumulate() {
        let dec = Scripted::new(&[
            "Plan: Anna ; Who swam? Next Sentence: Anna swam.",
            "Plan: Next Sentence: It was fun.",
            "⟨END⟩",
        ]);
        let t = generate_iterative(&dec, &DecodeConfig::default()).unwrap();
        assert_eq!(t.story.sentences, vec!["Anna swam.", "It was fun."]);
        assert_eq!(t.steps.len(), 3);
        assert!(t.steps[2].end);
        assert_eq!(t.steps[0].context, "⟨START⟩");
        assert_eq!(t.steps[2].context, "Context: Anna ; Who swam? Anna swam. It was fun.");
        assert!(t.flags.is_empty());
    }

    #[test]
    fn malformed_step_retried_then_truncated() {
        let dec = Scripted::new(&["Plan: x ; y? Next Sentence: A.", "garbage", "still garbage"]);
        let t = generate_iterative(&dec, &DecodeConfig::default()).unwrap();
        assert_eq!(t.story.len(), 1);
        assert!(t.has_flag(FLAG_RETRIED) && t.has_flag(FLAG_TRUNCATED));
        let dec = Scripted::new(&["garbage", "⟨END⟩"]);
        let t = generate_iterative(&dec, &DecodeConfig::default()).unwrap();
        assert!(t.has_flag(FLAG_RETRIED) && !t.has_flag(FLAG_TRUNCATED));
    }

    #[test]
    fn iteration_cap() {
        let step = "Plan: Next Sentence: Again.";
        let dec = Scripted::new(&[step; 20]);
        let cfg = DecodeConfig {
            max_iterations: 10,
            ..DecodeConfig::default()
        };
        let t = generate_iterative(&dec, &cfg).unwrap();
        assert_eq!(t.story.len(), 10);
        assert!(t.has_flag(FLAG_ITERATION_CAP));
    }
}
