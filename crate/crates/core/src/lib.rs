//! Visual storytelling with question-answer blueprints: corpus handling,
//! silver blueprint annotation, a visual prefix for a small language model,
//! top-down and iterative plan-conditioned generation, evaluation metrics
//! and controllable generation.

pub mod annotation;
pub mod control;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod text;
pub mod toy;
pub mod vision;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type StoryModelF32 = model::StoryModel<f32>;
pub type StoryModelF64 = model::StoryModel<f64>;
pub type MappingNetworkF32 = vision::MappingNetwork<f32>;
pub type MappingNetworkF64 = vision::MappingNetwork<f64>;
pub type VisualPrefixF32 = vision::VisualPrefix<f32>;
pub type VisualPrefixF64 = vision::VisualPrefix<f64>;
