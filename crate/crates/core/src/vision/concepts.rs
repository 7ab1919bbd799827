//! Concept detection and the concept-token string fed to the embedding
//! layer.
//!
//! Concept string grammar (bit-exact): the concepts of every image, in
//! sequence order and per-image rank order, form one flat list joined by
//! `" ⟨SEP⟩ "`. Image boundaries are not marked; the grouping is kept in the
//! [`ConceptSet`].

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ImageRef, ImageSequence};
use crate::error::{Error, Result};
use crate::scalar::Matrix;

use super::encoder::ImageEncoder;

pub const SEP: &str = "⟨SEP⟩";
pub const CONCEPT_SEPARATOR: &str = " ⟨SEP⟩ ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub concept: String,
    pub confidence: f64,
}

/// Top-K concepts per image, sorted by descending confidence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConceptSet {
    pub per_image: Vec<Vec<Concept>>,
}

impl ConceptSet {
    /// All concept strings, image by image.
    pub fn flattened(&self) -> impl Iterator<Item = &str> {
        self.per_image.iter().flat_map(|v| v.iter().map(|c| c.concept.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.per_image.iter().all(Vec::is_empty)
    }
}

pub trait ConceptDetector: Send + Sync {
    /// Scored concepts for one image, in any order.
    fn detect(&self, image: &ImageRef) -> Result<Vec<(String, f64)>>;

    fn fingerprint(&self) -> String;
}

/// What to do when a detector returns fewer than K concepts for an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shortfall {
    #[default]
    Error,
    /// Keep the available concepts.
    KeepAvailable,
}

/// Top-`k` concepts per image. Ties in confidence break lexicographically.
pub fn detect_concepts(
    images: &ImageSequence,
    detector: &dyn ConceptDetector,
    k: usize,
    shortfall: Shortfall,
) -> Result<ConceptSet> {
    if k == 0 {
        return Err(Error::Domain("K must be at least 1".into()));
    }
    let mut per_image = Vec::with_capacity(images.len());
    for img in &images.images {
        let mut scored = detector.detect(img)?;
        if scored.iter().any(|(_, s)| !s.is_finite()) {
            return Err(Error::Concept {
                image_id: img.id.clone(),
                message: "non-finite confidence".into(),
            });
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if scored.len() < k && shortfall == Shortfall::Error {
            return Err(Error::Concept {
                image_id: img.id.clone(),
                message: format!("detector returned {} concepts, K = {k}", scored.len()),
            });
        }
        per_image.push(
            scored
                .into_iter()
                .take(k)
                .map(|(concept, confidence)| Concept { concept, confidence })
                .collect(),
        );
    }
    Ok(ConceptSet { per_image })
}

/// Flat `" ⟨SEP⟩ "`-joined concept string. With `dedupe`, a concept already
/// emitted for an earlier image is skipped.
pub fn build_concept_string(concepts: &ConceptSet, dedupe: bool) -> String {
    let mut seen = HashSet::new();
    concepts
        .flattened()
        .filter(|c| !dedupe || seen.insert(*c))
        .collect::<Vec<_>>()
        .join(CONCEPT_SEPARATOR)
}

/// Inverse of [`build_concept_string`].
pub fn parse_concept_string(s: &str) -> Vec<String> {
    if s.is_empty() {
        return Vec::new();
    }
    s.split(CONCEPT_SEPARATOR).map(str::to_string).collect()
}

/// Linear concept scorer on top of frozen encoder features:
/// `softmax(temperature * cos(f, prototype_c) + bias_c)`.
#[derive(Clone)]
pub struct PrototypeDetector<E> {
    encoder: E,
    labels: Vec<String>,
    prototypes: Matrix<f64>,
    biases: Vec<f64>,
    temperature: f64,
}

impl<E: ImageEncoder> PrototypeDetector<E> {
    pub fn new(
        encoder: E,
        labels: Vec<String>,
        prototypes: Matrix<f64>,
        biases: Vec<f64>,
        temperature: f64,
    ) -> Result<Self> {
        if prototypes.rows() != labels.len() || biases.len() != labels.len() {
            return Err(Error::Config(
                "detector labels, prototypes and biases differ in length".into(),
            ));
        }
        if prototypes.cols() != encoder.dim() {
            return Err(Error::Config(format!(
                "prototype dim {} != encoder dim {}",
                prototypes.cols(),
                encoder.dim()
            )));
        }
        let mut prototypes = prototypes;
        for r in 0..prototypes.rows() {
            normalize(prototypes.row_mut(r));
        }
        Ok(Self {
            encoder,
            labels,
            prototypes,
            biases,
            temperature,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
    }

    pub fn score_features(&self, features: &[f64]) -> Vec<(String, f64)> {
        let mut f = features.to_vec();
        normalize(&mut f);
        let mut logits = vec![0.0; self.labels.len()];
        self.prototypes.matvec(&f, &mut logits);
        for (l, b) in logits.iter_mut().zip(&self.biases) {
            *l = *l * self.temperature + b;
        }
        crate::scalar::softmax_in_place(&mut logits);
        self.labels.iter().cloned().zip(logits).collect()
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

impl<E: ImageEncoder> ConceptDetector for PrototypeDetector<E> {
    fn detect(&self, image: &ImageRef) -> Result<Vec<(String, f64)>> {
        let f = self.encoder.encode(image).map_err(|e| Error::Concept {
            image_id: image.id.clone(),
            message: e.to_string(),
        })?;
        Ok(self.score_features(&f))
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.encoder.fingerprint().as_bytes());
        for l in &self.labels {
            h.update(l.as_bytes());
            h.update([0]);
        }
        for v in self.prototypes.data().iter().chain(&self.biases) {
            h.update(v.to_le_bytes());
        }
        h.update(self.temperature.to_le_bytes());
        hex::encode(h.finalize())
    }
}

/// Detector outputs computed offline. File format: JSON object
/// `{image_id: [[concept, confidence], ...]}`.
#[derive(Debug, Clone)]
pub struct PrecomputedDetector {
    table: HashMap<String, Vec<(String, f64)>>,
}

impl PrecomputedDetector {
    pub fn new(table: HashMap<String, Vec<(String, f64)>>) -> Self {
        Self { table }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table = serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(Self { table })
    }
}

impl ConceptDetector for PrecomputedDetector {
    fn detect(&self, image: &ImageRef) -> Result<Vec<(String, f64)>> {
        self.table.get(&image.id).cloned().ok_or_else(|| Error::Concept {
            image_id: image.id.clone(),
            message: "no precomputed concepts".into(),
        })
    }

    fn fingerprint(&self) -> String {
        let mut keys: Vec<&String> = self.table.keys().collect();
        keys.sort();
        let mut h = Sha256::new();
        for k in keys {
            h.update(k.as_bytes());
            for (c, s) in &self.table[k] {
                h.update(c.as_bytes());
                h.update(s.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(n: usize) -> ImageSequence {
        ImageSequence {
            sequence_id: "s".into(),
            images: (0..n).map(|i| ImageRef::new(format!("i{i}"), "")).collect(),
        }
    }

    fn stub(scores: &[(&str, f64)]) -> PrecomputedDetector {
        let v: Vec<(String, f64)> = scores.iter().map(|(c, s)| (c.to_string(), *s)).collect();
        PrecomputedDetector::new((0..5).map(|i| (format!("i{i}"), v.clone())).collect())
    }

    fn names(set: &ConceptSet, i: usize) -> Vec<&str> {
        set.per_image[i].iter().map(|c| c.concept.as_str()).collect()
    }

    #[test]
    fn top_k() {
        let d = stub(&[("ball", 0.7), ("dog", 0.9), ("park", 0.8)]);
        let set = detect_concepts(&seq(1), &d, 2, Shortfall::Error).unwrap();
        assert_eq!(names(&set, 0), vec!["dog", "park"]);
    }

    #[test]
    fn lexicographic_tie_break() {
        let d = stub(&[("b", 0.5), ("a", 0.5)]);
        let set = detect_concepts(&seq(1), &d, 1, Shortfall::Error).unwrap();
        assert_eq!(names(&set, 0), vec!["a"]);
    }

    #[test]
    fn shortfall_policy() {
        let d = stub(&[("a", 0.5)]);
        assert!(matches!(
            detect_concepts(&seq(1), &d, 3, Shortfall::Error),
            Err(Error::Concept { .. })
        ));
        let set = detect_concepts(&seq(1), &d, 3, Shortfall::KeepAvailable).unwrap();
        assert_eq!(names(&set, 0), vec!["a"]);
        assert!(detect_concepts(&seq(1), &d, 0, Shortfall::Error).is_err());
    }

    fn set_of(groups: &[&[&str]]) -> ConceptSet {
        ConceptSet {
            per_image: groups
                .iter()
                .map(|g| {
                    g.iter()
                        .map(|c| Concept {
                            concept: c.to_string(),
                            confidence: 0.5,
                        })
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn concept_string_format() {
        let set = set_of(&[&["dog", "park"], &["cat"]]);
        let s = build_concept_string(&set, false);
        assert_eq!(s, "dog ⟨SEP⟩ park ⟨SEP⟩ cat");
        assert_eq!(parse_concept_string(&s), vec!["dog", "park", "cat"]);
        assert_eq!(build_concept_string(&ConceptSet::default(), false), "");
        let dup = set_of(&[&["dog", "park"], &["dog"]]);
        assert_eq!(build_concept_string(&dup, true), "dog ⟨SEP⟩ park");
    }

    proptest! {
        #[test]
        fn concept_string_round_trip(groups in prop::collection::vec(
            prop::collection::vec("[a-z]{1,8}( [a-z]{1,6})?", 0..4), 0..6)) {
            let set = ConceptSet { per_image: groups.iter().map(|g| g.iter().map(|c| Concept {
                concept: c.clone(), confidence: 1.0 }).collect()).collect() };
            let flat: Vec<String> = groups.concat();
            prop_assert_eq!(parse_concept_string(&build_concept_string(&set, false)), flat);
        }
    }
}
