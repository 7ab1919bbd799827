//! Visual prefix assembly: clues first, then concept-token embeddings, with
//! no boundary token between the two blocks.

use serde::{Deserialize, Serialize};

use crate::corpus::ImageSequence;
use crate::error::Result;
use crate::scalar::Scalar;

use super::concepts::{build_concept_string, detect_concepts, ConceptDetector, ConceptSet, Shortfall};
use super::encoder::{extract_features, ImageEncoder};
use super::mapping::MappingNetwork;

/// Maps text to rows of a language model's embedding table.
pub trait TokenEmbedder<T> {
    fn embed_text(&self, text: &str) -> Vec<Vec<T>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VisualPrefix<T> {
    pub clues: Vec<Vec<T>>,
    pub concept_embeddings: Vec<Vec<T>>,
}

impl<T: Scalar> VisualPrefix<T> {
    pub fn combined(&self) -> Vec<Vec<T>> {
        self.clues.iter().chain(&self.concept_embeddings).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.clues.len() + self.concept_embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptConfig {
    /// Concepts kept per image; 0 disables the concept block.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub shortfall: Shortfall,
    #[serde(default)]
    pub dedupe_across_images: bool,
}

fn default_k() -> usize {
    5
}

impl Default for ConceptConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            shortfall: Shortfall::Error,
            dedupe_across_images: false,
        }
    }
}

/// Concept string for a sequence, or `""` when concepts are disabled.
pub fn concept_string_for(
    images: &ImageSequence,
    detector: &dyn ConceptDetector,
    cfg: &ConceptConfig,
) -> Result<(ConceptSet, String)> {
    if cfg.k == 0 {
        return Ok((ConceptSet::default(), String::new()));
    }
    let set = detect_concepts(images, detector, cfg.k, cfg.shortfall)?;
    let s = build_concept_string(&set, cfg.dedupe_across_images);
    Ok((set, s))
}

pub fn build_visual_prefix<T: Scalar>(
    images: &ImageSequence,
    encoder: &dyn ImageEncoder,
    net: &MappingNetwork<T>,
    detector: &dyn ConceptDetector,
    embedder: &dyn TokenEmbedder<T>,
    cfg: &ConceptConfig,
) -> Result<VisualPrefix<T>> {
    let features = extract_features(images, encoder)?;
    let feats: Vec<Vec<T>> = features
        .vectors
        .iter()
        .map(|v| v.iter().map(|&x| T::of(x)).collect())
        .collect();
    let clues = net.map_to_clues(&feats)?;
    let (_, concept_string) = concept_string_for(images, detector, cfg)?;
    let concept_embeddings = if concept_string.is_empty() {
        Vec::new()
    } else {
        embedder.embed_text(&concept_string)
    };
    Ok(VisualPrefix {
        clues,
        concept_embeddings,
    })
}
