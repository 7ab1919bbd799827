//! Trainable mapping from frozen image features to visual clues in the
//! language model's embedding space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, Tensors};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingMode {
    /// The same network applied to each image independently.
    #[default]
    PerImage,
    /// All k features flattened into one input, k clues out.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingConfig {
    pub d_img: usize,
    pub hidden: usize,
    pub d_lm: usize,
    #[serde(default)]
    pub mode: MappingMode,
    /// Sequence length; only used by the joint mode.
    #[serde(default = "default_images")]
    pub num_images: usize,
}

fn default_images() -> usize {
    5
}

/// Two feed-forward layers with `tanh` between: `W2 tanh(W1 f + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MappingNetwork<T> {
    pub config: MappingConfig,
    pub hidden: Dense<T>,
    pub output: Dense<T>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MappingCache<T> {
    inputs: Vec<Vec<T>>,
    hidden: Vec<Vec<T>>,
}

impl<T: Scalar> MappingNetwork<T> {
    pub fn new<R: Rng>(config: MappingConfig, rng: &mut R) -> Self {
        let (i, o) = io_dims(&config);
        Self {
            hidden: Dense::random(i, config.hidden, rng),
            output: Dense::random(config.hidden, o, rng),
            config,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let (i, o) = io_dims(&self.config);
        Self {
            hidden: Dense::zeros(i, self.config.hidden),
            output: Dense::zeros(self.config.hidden, o),
            config: self.config.clone(),
        }
    }

    pub fn d_lm(&self) -> usize {
        self.config.d_lm
    }

    fn check(&self, features: &[Vec<T>]) -> Result<()> {
        if let Some(f) = features.iter().find(|f| f.len() != self.config.d_img) {
            return Err(Error::Config(format!(
                "feature dim {} != mapping input dim {}",
                f.len(),
                self.config.d_img
            )));
        }
        if self.config.mode == MappingMode::Joint && features.len() != self.config.num_images {
            return Err(Error::Config(format!(
                "joint mapping expects {} images, got {}",
                self.config.num_images,
                features.len()
            )));
        }
        Ok(())
    }

    /// k clues of dimension `d_lm`, plus the cache for [`Self::backward`].
    pub fn forward(&self, features: &[Vec<T>]) -> Result<(Vec<Vec<T>>, MappingCache<T>)> {
        self.check(features)?;
        let inputs: Vec<Vec<T>> = match self.config.mode {
            MappingMode::PerImage => features.to_vec(),
            MappingMode::Joint => vec![features.concat()],
        };
        let mut hidden = Vec::with_capacity(inputs.len());
        let mut outs = Vec::with_capacity(inputs.len());
        for x in &inputs {
            let mut h = vec![T::zero(); self.config.hidden];
            self.hidden.forward(x, &mut h);
            h.iter_mut().for_each(|v| *v = v.tanh());
            let mut o = vec![T::zero(); self.output.outputs()];
            self.output.forward(&h, &mut o);
            hidden.push(h);
            outs.push(o);
        }
        let clues = match self.config.mode {
            MappingMode::PerImage => outs,
            MappingMode::Joint => outs[0].chunks(self.config.d_lm).map(<[T]>::to_vec).collect(),
        };
        Ok((clues, MappingCache { inputs, hidden }))
    }

    pub fn map_to_clues(&self, features: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        Ok(self.forward(features)?.0)
    }

    /// Accumulate the gradient of a loss into `grad`, given `d loss / d clue`.
    pub fn backward(&self, cache: &MappingCache<T>, d_clues: &[Vec<T>], grad: &mut Self) {
        let d_outs: Vec<Vec<T>> = match self.config.mode {
            MappingMode::PerImage => d_clues.to_vec(),
            MappingMode::Joint => vec![d_clues.concat()],
        };
        for ((x, h), dy) in cache.inputs.iter().zip(&cache.hidden).zip(&d_outs) {
            let mut dh = vec![T::zero(); h.len()];
            self.output.backward(h, dy, &mut grad.output, Some(&mut dh));
            for (d, &hv) in dh.iter_mut().zip(h) {
                *d *= T::one() - hv * hv;
            }
            self.hidden.backward(x, &dh, &mut grad.hidden, None);
        }
    }
}

fn io_dims(c: &MappingConfig) -> (usize, usize) {
    match c.mode {
        MappingMode::PerImage => (c.d_img, c.d_lm),
        MappingMode::Joint => (c.d_img * c.num_images, c.d_lm * c.num_images),
    }
}

impl<T: Scalar> Tensors<T> for MappingNetwork<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut v = self.hidden.tensors();
        v.extend(self.output.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.hidden.tensors_mut();
        v.extend(self.output.tensors_mut());
        v
    }
}
