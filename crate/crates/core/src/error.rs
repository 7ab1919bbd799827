use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Annotation pipeline stage, attached to errors raised while annotating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Decontextualize,
    ExtractCandidates,
    GenerateQuestions,
    FilterRedundant,
    RoundTripFilter,
    Align,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Decontextualize => "decontextualize",
            Stage::ExtractCandidates => "extract_answer_candidates",
            Stage::GenerateQuestions => "generate_questions",
            Stage::FilterRedundant => "filter_redundant",
            Stage::RoundTripFilter => "round_trip_filter",
            Stage::Align => "align_to_sentences",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: invalid sample: field `{field}`: {message}")]
    Validation {
        line: usize,
        field: String,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("annotation failed at {stage} for sample `{sample_id}`: {message}")]
    Annotation {
        stage: Stage,
        sample_id: String,
        message: String,
    },

    #[error("adapter failure: {0}")]
    Adapter(String),

    #[error("feature extraction failed for image `{image_id}`: {message}")]
    Feature { image_id: String, message: String },

    #[error("concept detection failed for image `{image_id}`: {message}")]
    Concept { image_id: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("could not parse model output: {message}")]
    Output { message: String, recovered: String },

    #[error("data error in sample `{sample_id}`: {message}")]
    Data { sample_id: String, message: String },

    #[error("metric `{metric}` unavailable: {requirement}")]
    Capability { metric: String, requirement: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::Domain(_) => "domain",
            Error::Annotation { .. } => "annotation",
            Error::Adapter(_) => "adapter",
            Error::Feature { .. } => "feature",
            Error::Concept { .. } => "concept",
            Error::Config(_) => "config",
            Error::Output { .. } => "output",
            Error::Data { .. } => "data",
            Error::Capability { .. } => "capability",
        }
    }
}
