//! Plan-conditioned story models: top-down (plan then story in one decode)
//! and iterative (one plan segment and one sentence per step).

pub mod checkpoint;
pub mod decode;
pub mod generate;
pub mod lm;
pub mod serialize;
pub mod tokenizer;
pub mod train;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ImageSequence, StorySample};
use crate::error::{Error, Result};
use crate::nn::Tensors;
use crate::scalar::Scalar;
use crate::vision::{
    concept_string_for, extract_features, ConceptConfig, ConceptDetector, ConceptSet, ImageEncoder, MappingConfig,
    MappingNetwork, TokenEmbedder, VisualPrefix,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, select_checkpoint};
pub use decode::{beam_search, BoundModel, DecodeConfig, Decoded, TextDecoder};
pub use generate::{generate_iterative, generate_topdown, GenerationTrace, StepTrace};
pub use lm::{LanguageModel, LmConfig, LossRow};
pub use serialize::{expand_iterative_samples, parse_step, parse_topdown, serialize_topdown};
pub use tokenizer::Tokenizer;
pub use train::{
    build_rows, train, train_iterative, train_on_rows, train_topdown, TrainConfig, TrainReport, TrainingRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TopDown,
    Iterative,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top_down" | "topdown" | "top-down" => Ok(Mode::TopDown),
            "iterative" => Ok(Mode::Iterative),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Mode,
    pub lm: LmConfig,
    pub mapping: MappingConfig,
    pub seed: u64,
}

/// Frozen image encoder and concept detector.
#[derive(Clone)]
pub struct VisionStack {
    pub encoder: Arc<dyn ImageEncoder>,
    pub detector: Arc<dyn ConceptDetector>,
    pub concepts: ConceptConfig,
}

impl std::fmt::Debug for VisionStack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VisionStack")
            .field("encoder", &self.encoder.fingerprint())
            .field("detector", &self.detector.fingerprint())
            .field("concepts", &self.concepts)
            .finish()
    }
}

/// Frozen-component outputs for one image sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedImages {
    pub features: Vec<Vec<f64>>,
    pub concepts: ConceptSet,
    pub concept_string: String,
}

impl VisionStack {
    pub fn prepare(&self, images: &ImageSequence) -> Result<PreparedImages> {
        let features = extract_features(images, self.encoder.as_ref())?.vectors;
        let (concepts, concept_string) = concept_string_for(images, self.detector.as_ref(), &self.concepts)?;
        Ok(PreparedImages {
            features,
            concepts,
            concept_string,
        })
    }
}

/// Trainable parameters (backbone and mapping network) with their tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StoryModel<T> {
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    pub lm: LanguageModel<T>,
    pub mapping: MappingNetwork<T>,
}

impl<T: Scalar> StoryModel<T> {
    pub fn new(config: ModelConfig, tokenizer: Tokenizer) -> Result<Self> {
        if config.mapping.d_lm != config.lm.d_model {
            return Err(Error::Config(format!(
                "mapping output dim {} != embedding dim {}",
                config.mapping.d_lm, config.lm.d_model
            )));
        }
        if config.lm.window == 0 || config.lm.max_positions == 0 {
            return Err(Error::Config("window and max_positions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let lm = LanguageModel::new(config.lm, tokenizer.len(), &mut rng);
        let mapping = MappingNetwork::new(config.mapping.clone(), &mut rng);
        Ok(Self {
            config,
            tokenizer,
            lm,
            mapping,
        })
    }

    /// Tokenizer over the stories, blueprints and concept strings of a corpus.
    pub fn build_tokenizer(samples: &[StorySample], concept_strings: &[String]) -> Tokenizer {
        let mut texts: Vec<String> = Vec::new();
        for s in samples {
            texts.extend(s.story.sentences.iter().cloned());
            if let Some(bp) = &s.blueprint {
                texts.extend(bp.pairs().map(serialize::serialize_pair));
            }
        }
        texts.extend(concept_strings.iter().cloned());
        Tokenizer::build(texts.iter().map(String::as_str), 1)
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn zeros_like(&self) -> (LanguageModel<T>, MappingNetwork<T>) {
        (self.lm.zeros_like(), self.mapping.zeros_like())
    }

    pub fn concept_ids(&self, concept_string: &str) -> Vec<u32> {
        if concept_string.is_empty() {
            Vec::new()
        } else {
            self.tokenizer.encode(concept_string)
        }
    }

    pub fn features_as(prepared: &PreparedImages) -> Vec<Vec<T>> {
        prepared
            .features
            .iter()
            .map(|v| v.iter().map(|&x| T::of(x)).collect())
            .collect()
    }

    pub fn visual_prefix(&self, prepared: &PreparedImages) -> Result<VisualPrefix<T>> {
        let clues = self.mapping.map_to_clues(&Self::features_as(prepared))?;
        Ok(VisualPrefix {
            clues,
            concept_embeddings: self.embed_text(&prepared.concept_string),
        })
    }

    pub fn bind(&self, prepared: &PreparedImages) -> Result<BoundModel<'_, T>> {
        Ok(BoundModel::new(self, self.visual_prefix(prepared)?.combined()))
    }

    /// Hex digest over the trainable parameters.
    pub fn fingerprint(&self) -> String {
        let mut all = self.lm.fingerprint();
        all.push_str(&self.mapping.fingerprint());
        all
    }
}

impl<T: Scalar> TokenEmbedder<T> for StoryModel<T> {
    fn embed_text(&self, text: &str) -> Vec<Vec<T>> {
        self.concept_ids(text).into_iter().map(|id| self.lm.embed(id)).collect()
    }
}
