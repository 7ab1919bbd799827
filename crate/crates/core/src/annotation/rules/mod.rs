//! Bundled rule-based annotation models. They are deterministic and
//! dependency-free, which makes them suitable for toy corpora and tests;
//! neural models plug in through the same adapter traits.

pub mod analysis;
mod coref;
mod qa;
mod qg;

pub use coref::RuleCoref;
pub use qa::ExtractiveQa;
pub use qg::TemplateQuestionGenerator;

use crate::annotation::adapters::{AnswerCandidate, SyntacticAnalyzer};
use crate::corpus::{char_offset, AnswerSpan};
use crate::error::Result;

use analysis::ParsedSentence;

/// Noun-phrase, named-entity and verb-phrase chunker.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleAnalyzer;

impl SyntacticAnalyzer for RuleAnalyzer {
    fn analyze(&self, sentences: &[String]) -> Result<Vec<AnswerCandidate>> {
        let mut out = Vec::new();
        for (si, sentence) in sentences.iter().enumerate() {
            let parsed = ParsedSentence::parse(sentence);
            for c in &parsed.chunks {
                let (b0, b1) = parsed.byte_range(c.start, c.end);
                out.push(AnswerCandidate {
                    text: sentence[b0..b1].to_string(),
                    span: AnswerSpan {
                        sentence: si,
                        start: char_offset(sentence, b0),
                        end: char_offset(sentence, b1),
                    },
                    kind: c.kind,
                });
            }
        }
        Ok(out)
    }
}
