//! Cross-entropy fine-tuning of the backbone and mapping network.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::StorySample;
use crate::error::{Error, Result};
use crate::nn::{scheduled_lr, Adam, Tensors};
use crate::scalar::Scalar;

use super::lm::{LanguageModel, LossRow};
use super::serialize::{expand_iterative_samples, serialize_topdown};
use super::{Mode, PreparedImages, StoryModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_warmup")]
    pub warmup_ratio: f64,
    #[serde(default = "d_steps")]
    pub max_steps: usize,
    /// When set, overrides `max_steps` with whole passes over the rows.
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    /// Rows longer than this many target tokens are cut (and counted).
    #[serde(default = "d_max_target")]
    pub max_target_tokens: usize,
    #[serde(default = "d_clip")]
    pub grad_clip: Option<f64>,
    /// Train only the mapping network.
    #[serde(default)]
    pub freeze_backbone: bool,
}

fn d_lr() -> f64 {
    3e-5
}
fn d_batch() -> usize {
    64
}
fn d_warmup() -> f64 {
    0.05
}
fn d_steps() -> usize {
    1000
}
fn d_seed() -> u64 {
    42
}
fn d_max_target() -> usize {
    512
}
fn d_clip() -> Option<f64> {
    Some(1.0)
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: d_lr(),
            batch_size: d_batch(),
            warmup_ratio: d_warmup(),
            max_steps: d_steps(),
            epochs: None,
            seed: d_seed(),
            checkpoint_every: None,
            max_target_tokens: d_max_target(),
            grad_clip: d_clip(),
            freeze_backbone: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan()
            || self.learning_rate < 0.0
            || self.batch_size == 0
            || !(0.0..1.0).contains(&self.warmup_ratio)
        {
            return Err(Error::Config(
                "learning_rate must be >= 0, batch_size >= 1, warmup_ratio in [0, 1)".into(),
            ));
        }
        if self.max_target_tokens == 0 || self.checkpoint_every == Some(0) {
            return Err(Error::Config(
                "max_target_tokens and checkpoint_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-token loss of each step's batch, before the update.
    pub loss_curve: Vec<f64>,
    pub steps: usize,
    pub rows: usize,
    pub truncated_rows: usize,
}

/// Called with the step, the model and the loss curve so far.
pub type CheckpointFn<'a, T> = dyn FnMut(usize, &StoryModel<T>, &[f64]) -> Result<()> + 'a;

/// One training row: which prepared sample it conditions on, and its tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingRow {
    pub sample: usize,
    pub row: LossRow,
}

/// Rows for the model's mode. Top-down: one row per sample; iterative: k+1.
pub fn build_rows<T: Scalar>(
    model: &StoryModel<T>,
    samples: &[StorySample],
    max_target_tokens: usize,
) -> Result<(Vec<TrainingRow>, usize)> {
    let mut rows = Vec::new();
    let mut truncated = 0;
    let mut push = |sample: usize, context: &str, target: &str| {
        let ctx = if context.is_empty() {
            Vec::new()
        } else {
            model.tokenizer.encode(context)
        };
        let mut tgt = model.tokenizer.encode(target);
        if tgt.len() > max_target_tokens {
            tgt.truncate(max_target_tokens);
            truncated += 1;
        }
        rows.push(TrainingRow {
            sample,
            row: LossRow::new(&ctx, &tgt),
        });
    };
    for (i, s) in samples.iter().enumerate() {
        match model.mode() {
            Mode::TopDown => {
                let bp = s.blueprint.as_ref().ok_or_else(|| Error::Data {
                    sample_id: s.id().to_string(),
                    message: "no blueprint".into(),
                })?;
                push(i, "", &serialize_topdown(bp, &s.story));
            }
            Mode::Iterative => {
                for step in expand_iterative_samples(s)? {
                    push(i, &step.context, &step.target);
                }
            }
        }
    }
    if truncated > 0 {
        log::warn!("{truncated} training rows truncated to {max_target_tokens} target tokens");
    }
    Ok((rows, truncated))
}

/// Total loss of a batch and its gradient, scaled to the per-token mean.
pub fn batch_gradient<T: Scalar>(
    model: &StoryModel<T>,
    prepared: &[PreparedImages],
    rows: &[&TrainingRow],
    grad_lm: &mut LanguageModel<T>,
    grad_map: &mut crate::vision::MappingNetwork<T>,
) -> Result<f64> {
    let count: usize = rows.iter().map(|r| r.row.num_targets()).sum();
    let scale = T::one() / T::of(count.max(1) as f64);
    let mut total = T::zero();
    for r in rows {
        let p = &prepared[r.sample];
        let (clues, cache) = model.mapping.forward(&StoryModel::<T>::features_as(p))?;
        let concept_ids = model.concept_ids(&p.concept_string);
        let mut prefix = clues;
        let k = prefix.len();
        prefix.extend(concept_ids.iter().map(|&id| model.lm.embed(id)));
        let mut d_prefix = vec![vec![T::zero(); model.lm.config.d_model]; prefix.len()];
        let losses = model
            .lm
            .row_losses(&prefix, &r.row, scale, Some((grad_lm, &mut d_prefix)));
        total += losses.iter().fold(T::zero(), |a, &b| a + b);
        model.mapping.backward(&cache, &d_prefix[..k], grad_map);
        for (&id, d) in concept_ids.iter().zip(&d_prefix[k..]) {
            crate::scalar::axpy(T::one(), d, grad_lm.emb.row_mut(id as usize));
        }
    }
    Ok((total * scale).to_f64().unwrap_or(f64::NAN))
}

/// Fine-tune on the samples. `prepared[i]` holds the frozen-component
/// outputs of `samples[i]`. `on_checkpoint` runs every `checkpoint_every`
/// steps and after the last step.
pub fn train<T: Scalar>(
    model: &mut StoryModel<T>,
    samples: &[StorySample],
    prepared: &[PreparedImages],
    cfg: &TrainConfig,
    on_checkpoint: &mut CheckpointFn<'_, T>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.len() != prepared.len() {
        return Err(Error::Config("one prepared image set per sample required".into()));
    }
    let (rows, truncated_rows) = build_rows(model, samples, cfg.max_target_tokens)?;
    let mut report = train_on_rows(model, &rows, prepared, cfg, on_checkpoint)?;
    report.truncated_rows = truncated_rows;
    Ok(report)
}

/// The optimization loop of [`train`] over prebuilt rows.
pub fn train_on_rows<T: Scalar>(
    model: &mut StoryModel<T>,
    rows: &[TrainingRow],
    prepared: &[PreparedImages],
    cfg: &TrainConfig,
    on_checkpoint: &mut CheckpointFn<'_, T>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if rows.iter().any(|r| r.sample >= prepared.len()) {
        return Err(Error::Config("training row refers to a missing image set".into()));
    }
    if rows.is_empty() {
        return Err(Error::Domain("no training rows".into()));
    }
    let batch = cfg.batch_size.min(rows.len());
    let per_epoch = rows.len().div_ceil(batch);
    let steps = cfg.epochs.map_or(cfg.max_steps, |e| e * per_epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let (mut g_lm, mut g_map) = model.zeros_like();
    let mut adam_lm = Adam::<T>::default();
    let mut adam_map = Adam::<T>::default();
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        let offset = (step % per_epoch) * batch;
        if offset == 0 && batch < rows.len() {
            order.shuffle(&mut rng);
        }
        let picked: Vec<&TrainingRow> = order[offset..(offset + batch).min(rows.len())]
            .iter()
            .map(|&i| &rows[i])
            .collect();
        g_lm.zero();
        g_map.zero();
        let loss = batch_gradient(model, prepared, &picked, &mut g_lm, &mut g_map)?;
        if !loss.is_finite() {
            return Err(Error::Domain(format!("non-finite loss at step {step}")));
        }
        curve.push(loss);
        if let Some(clip) = cfg.grad_clip {
            let norm = (g_lm.sq_norm() + g_map.sq_norm()).sqrt();
            if norm > T::of(clip) {
                let s = T::of(clip) / norm;
                g_lm.scale(s);
                g_map.scale(s);
            }
        }
        let lr = scheduled_lr(cfg.learning_rate, step, steps, cfg.warmup_ratio);
        if !cfg.freeze_backbone {
            adam_lm.step(model.lm.tensors_mut(), g_lm.tensors(), lr);
        }
        adam_map.step(model.mapping.tensors_mut(), g_map.tensors(), lr);
        let done = step + 1;
        if cfg.checkpoint_every.is_some_and(|k| done % k == 0) || done == steps {
            on_checkpoint(done, model, &curve)?;
        }
    }
    Ok(TrainReport {
        loss_curve: curve,
        steps,
        rows: rows.len(),
        truncated_rows: 0,
    })
}

fn require_mode<T: Scalar>(model: &StoryModel<T>, mode: Mode) -> Result<()> {
    if model.mode() != mode {
        return Err(Error::Config(format!(
            "model is in {:?} mode, expected {mode:?}",
            model.mode()
        )));
    }
    Ok(())
}

pub fn train_topdown<T: Scalar>(
    model: &mut StoryModel<T>,
    samples: &[StorySample],
    prepared: &[PreparedImages],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    require_mode(model, Mode::TopDown)?;
    train(model, samples, prepared, cfg, &mut |_, _, _| Ok(()))
}

pub fn train_iterative<T: Scalar>(
    model: &mut StoryModel<T>,
    samples: &[StorySample],
    prepared: &[PreparedImages],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    require_mode(model, Mode::Iterative)?;
    train(model, samples, prepared, cfg, &mut |_, _, _| Ok(()))
}
