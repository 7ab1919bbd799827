//! Checkpoint directories and validation-based checkpoint selection.
//!
//! Layout: `config.json` (model config), `tokenizer.json`, `weights.json`
//! (backbone and mapping network), `metrics.jsonl` (one line per saved step),
//! and optionally `train_config.json`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::StorySample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vision::MappingNetwork;

use super::lm::LanguageModel;
use super::tokenizer::Tokenizer;
use super::{ModelConfig, StoryModel};

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct Weights<T> {
    scalar: String,
    lm: LanguageModel<T>,
    mapping: MappingNetwork<T>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string(value).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Write the model into `dir` (created if needed) and append `metrics` to
/// the metric log.
pub fn save_checkpoint<T: Scalar>(
    model: &StoryModel<T>,
    dir: impl AsRef<Path>,
    metrics: Option<&serde_json::Value>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("config.json"), &model.config)?;
    write_json(&dir.join("tokenizer.json"), &model.tokenizer)?;
    write_json(
        &dir.join("weights.json"),
        &Weights {
            scalar: std::any::type_name::<T>().to_string(),
            lm: model.lm.clone(),
            mapping: model.mapping.clone(),
        },
    )?;
    if let Some(m) = metrics {
        let path = dir.join("metrics.jsonl");
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{m}").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(dir: impl AsRef<Path>) -> Result<StoryModel<T>> {
    let dir = dir.as_ref();
    let config: ModelConfig = read_json(&dir.join("config.json"))?;
    let tokenizer: Tokenizer = read_json(&dir.join("tokenizer.json"))?;
    let w: Weights<T> = read_json(&dir.join("weights.json"))?;
    if w.lm.vocab_size() != tokenizer.len() {
        return Err(Error::Config(format!(
            "{}: weights cover {} tokens, tokenizer has {}",
            dir.display(),
            w.lm.vocab_size(),
            tokenizer.len()
        )));
    }
    Ok(StoryModel {
        config,
        tokenizer,
        lm: w.lm,
        mapping: w.mapping,
    })
}

/// Index of the checkpoint with the highest mean validation score; ties go
/// to the later checkpoint.
pub fn select_checkpoint<C>(
    checkpoints: &[C],
    validation: &[StorySample],
    mut score: impl FnMut(&C, &StorySample) -> Result<f64>,
) -> Result<usize> {
    if validation.is_empty() {
        return Err(Error::Domain("empty validation set".into()));
    }
    if checkpoints.is_empty() {
        return Err(Error::Domain("no checkpoints".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in checkpoints.iter().enumerate() {
        let mut total = 0.0;
        for s in validation {
            total += score(c, s)?;
        }
        let mean = total / validation.len() as f64;
        log::info!("checkpoint {i}: mean validation score {mean:.4}");
        if mean >= best.1 {
            best = (i, mean);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ImageRef, ImageSequence, Split, Story};

    fn val() -> Vec<StorySample> {
        vec![StorySample {
            image_sequence: ImageSequence {
                sequence_id: "v".into(),
                images: vec![ImageRef::new("i", "")],
            },
            story: Story::new(["x."]),
            blueprint: None,
            split: Split::Validation,
        }]
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_checkpoint(&[0.5], &val(), |c, _| Ok(*c)).unwrap(), 0);
        assert_eq!(select_checkpoint(&[0.3, 0.7], &val(), |c, _| Ok(*c)).unwrap(), 1);
        assert_eq!(select_checkpoint(&[0.7, 0.3], &val(), |c, _| Ok(*c)).unwrap(), 0);
        assert_eq!(select_checkpoint(&[0.5, 0.5], &val(), |c, _| Ok(*c)).unwrap(), 1);
        assert!(matches!(
            select_checkpoint(&[0.5], &[], |c: &f64, _| Ok(*c)),
            Err(Error::Domain(_))
        ));
    }
}
