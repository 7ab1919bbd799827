//! Contracts for the external models used during annotation and evaluation.
//!
//! Implementations must be deterministic for fixed weights: greedy decoding
//! only. Batching is an implementation detail of each adapter.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::SourceKind;
use crate::error::Result;

/// An answer candidate located in the decontextualized story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub text: String,
    /// Sentence index and character offsets.
    pub span: crate::corpus::AnswerSpan,
    pub kind: SourceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPrediction {
    pub answer: String,
    /// In `[0, 1]`.
    pub confidence: f64,
}

/// Rewrites one pronoun token: byte range inside a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replacement {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

pub trait QuestionGenerator: Send + Sync {
    fn generate(&self, answer: &str, context: &str) -> Result<String>;
}

pub trait QuestionAnswerer: Send + Sync {
    fn answer(&self, question: &str, context: &str) -> Result<QaPrediction>;
}

pub trait CoreferenceResolver: Send + Sync {
    fn resolve(&self, sentences: &[String]) -> Result<Vec<Replacement>>;
}

pub trait SyntacticAnalyzer: Send + Sync {
    fn analyze(&self, sentences: &[String]) -> Result<Vec<AnswerCandidate>>;
}

/// The four annotation models, shared read-only across workers.
#[derive(Clone)]
pub struct Adapters {
    pub qg: Arc<dyn QuestionGenerator>,
    pub qa: Arc<dyn QuestionAnswerer>,
    pub coref: Arc<dyn CoreferenceResolver>,
    pub analyzer: Arc<dyn SyntacticAnalyzer>,
}

impl Adapters {
    /// The bundled rule-based models.
    pub fn builtin() -> Self {
        use super::rules;
        Self {
            qg: Arc::new(rules::TemplateQuestionGenerator),
            qa: Arc::new(rules::ExtractiveQa),
            coref: Arc::new(rules::RuleCoref),
            analyzer: Arc::new(rules::RuleAnalyzer),
        }
    }
}

impl std::fmt::Debug for Adapters {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Adapters { .. }")
    }
}
