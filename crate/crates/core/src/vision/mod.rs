//! Image sequence to visual prefix: frozen encoder, trainable mapping
//! network, frozen concept detector.

pub mod concepts;
pub mod encoder;
pub mod mapping;
pub mod prefix;

pub use concepts::{
    build_concept_string, detect_concepts, parse_concept_string, Concept, ConceptDetector, ConceptSet,
    PrecomputedDetector, PrototypeDetector, Shortfall,
};
pub use encoder::{extract_features, ImageEncoder, ImageFeatures, PixelProjectionEncoder, PrecomputedEncoder};
pub use mapping::{MappingConfig, MappingMode, MappingNetwork};
pub use prefix::{build_visual_prefix, concept_string_for, ConceptConfig, TokenEmbedder, VisualPrefix};
