//! Run configuration: built-in defaults, then a TOML file, then `--set`
//! overrides, then command flags. Unknown keys at any level are errors.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bpstory::annotation::AnnotationConfig;
use bpstory::control::EntityRule;
use bpstory::metrics::external::CommandMetric;
use bpstory::metrics::MetricConfig;
use bpstory::model::{DecodeConfig, LmConfig, Mode, ModelConfig, TrainConfig, VisionStack};
use bpstory::toy;
use bpstory::vision::{
    ConceptConfig, ConceptDetector, ImageEncoder, MappingConfig, MappingMode, PrecomputedDetector, PrecomputedEncoder,
};
use bpstory::{Error, Result};

/// Directory against which relative paths of precomputed feature and
/// concept tables are resolved.
pub const CACHE_ENV: &str = "BPSTORY_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Worker threads for annotation.
    pub parallelism: usize,
    pub annotation: AnnotationConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub metrics: MetricConfig,
    pub model: ModelSection,
    pub vision: VisionSection,
    pub control: ControlSection,
    pub external_metrics: Option<CommandMetric>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            parallelism: 4,
            annotation: AnnotationConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            metrics: MetricConfig::default(),
            model: ModelSection::default(),
            vision: VisionSection::default(),
            control: ControlSection::default(),
            external_metrics: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub window: usize,
    pub hidden: usize,
    pub max_positions: usize,
    pub mapping_hidden: usize,
    pub mapping_mode: MappingMode,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = toy::toy_model_config(Mode::TopDown);
        Self {
            d_model: t.lm.d_model,
            window: t.lm.window,
            hidden: t.lm.hidden,
            max_positions: t.lm.max_positions,
            mapping_hidden: t.mapping.hidden,
            mapping_mode: t.mapping.mode,
            seed: t.seed,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, mode: Mode, d_img: usize, num_images: usize) -> ModelConfig {
        ModelConfig {
            mode,
            lm: LmConfig {
                d_model: self.d_model,
                window: self.window,
                hidden: self.hidden,
                max_positions: self.max_positions,
            },
            mapping: MappingConfig {
                d_img,
                hidden: self.mapping_hidden,
                d_lm: self.d_model,
                mode: self.mapping_mode,
                num_images,
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// The synthetic world's pixel encoder and prototype detector.
    Toy,
    /// A JSON table computed offline.
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionSection {
    pub encoder: Source,
    pub detector: Source,
    /// `{image_id: [f64]}`, for a precomputed encoder.
    pub features: Option<PathBuf>,
    /// `{image_id: [[concept, score]]}`, for a precomputed detector.
    pub concept_table: Option<PathBuf>,
    /// Feature size and seed of the toy encoder.
    pub dim: usize,
    pub seed: u64,
    pub concepts: ConceptConfig,
}

impl Default for VisionSection {
    fn default() -> Self {
        Self {
            encoder: Source::Toy,
            detector: Source::Toy,
            features: None,
            concept_table: None,
            dim: toy::FEATURE_DIM,
            seed: 3,
            concepts: ConceptConfig::default(),
        }
    }
}

fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("`vision.{key}` is required for a precomputed source")))
}

impl VisionSection {
    pub fn build(&self) -> Result<VisionStack> {
        let toy_detector = toy::toy_detector(self.dim, self.seed)?;
        let encoder: Arc<dyn ImageEncoder> = match self.encoder {
            Source::Toy => Arc::new(toy_detector.encoder().clone()),
            Source::Precomputed => Arc::new(PrecomputedEncoder::from_file(resolve(required(
                &self.features,
                "features",
            )?))?),
        };
        let detector: Arc<dyn ConceptDetector> = match self.detector {
            Source::Toy => Arc::new(toy_detector),
            Source::Precomputed => Arc::new(PrecomputedDetector::from_file(resolve(required(
                &self.concept_table,
                "concept_table",
            )?))?),
        };
        Ok(VisionStack {
            encoder,
            detector,
            concepts: self.concepts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub entity_rule: EntityRule,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `a.b.c=value` as a nested table. The value is parsed as TOML and falls
/// back to a bare string.
fn parse_override(s: &str) -> Result<toml::Table> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let last = parts.pop().expect("non-empty key");
    let mut table = toml::Table::new();
    table.insert(last.to_string(), value);
    for p in parts.into_iter().rev() {
        let mut outer = toml::Table::new();
        outer.insert(p.to_string(), toml::Value::Table(table));
        table = outer;
    }
    Ok(table)
}

pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let mut table = match file {
        Some(path) => {
            let raw = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            toml::from_str::<toml::Table>(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        merge(&mut table, parse_override(o)?);
    }
    let cfg: Config = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    cfg.train.validate()?;
    cfg.decode.validate()?;
    Ok(cfg)
}

/// Hex SHA-256 of the resolved configuration.
pub fn hash(cfg: &Config) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json))
}
