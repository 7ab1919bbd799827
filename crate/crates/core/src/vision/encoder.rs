//! Frozen image encoders.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::{ImageRef, ImageSequence};
use crate::error::{Error, Result};
use crate::scalar::Matrix;

/// One feature vector per image, all of the encoder's dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub vectors: Vec<Vec<f64>>,
}

impl ImageFeatures {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

pub trait ImageEncoder: Send + Sync {
    fn dim(&self) -> usize;

    fn encode(&self, image: &ImageRef) -> Result<Vec<f64>>;

    /// Hex digest of the encoder parameters.
    fn fingerprint(&self) -> String;
}

/// Encode every image of the sequence, in order.
pub fn extract_features(images: &ImageSequence, encoder: &dyn ImageEncoder) -> Result<ImageFeatures> {
    let vectors = images
        .images
        .iter()
        .map(|img| encoder.encode(img))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageFeatures { vectors })
}

/// Downsampled pixels through a fixed random projection and `tanh`.
#[derive(Debug, Clone)]
pub struct PixelProjectionEncoder {
    side: u32,
    projection: Matrix<f64>,
    seed: u64,
}

impl PixelProjectionEncoder {
    pub fn new(side: u32, dim: usize, seed: u64) -> Self {
        let inputs = (side * side * 3) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (3.0 / inputs as f64).sqrt() * 4.0;
        Self {
            side,
            projection: Matrix::random(dim, inputs, scale, &mut rng),
            seed,
        }
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Encode an in-memory image.
    pub fn encode_image(&self, img: &image::DynamicImage) -> Vec<f64> {
        let small = image::imageops::resize(
            &img.to_rgb8(),
            self.side,
            self.side,
            image::imageops::FilterType::Triangle,
        );
        let x: Vec<f64> = small
            .pixels()
            .flat_map(|p| p.0)
            .map(|c| c as f64 / 255.0 - 0.5)
            .collect();
        let mut out = vec![0.0; self.projection.rows()];
        self.projection.matvec(&x, &mut out);
        out.iter_mut().for_each(|v| *v = v.tanh());
        out
    }
}

impl ImageEncoder for PixelProjectionEncoder {
    fn dim(&self) -> usize {
        self.projection.rows()
    }

    fn encode(&self, image: &ImageRef) -> Result<Vec<f64>> {
        let img = image::open(&image.uri).map_err(|e| Error::Feature {
            image_id: image.id.clone(),
            message: e.to_string(),
        })?;
        Ok(self.encode_image(&img))
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.side.to_le_bytes());
        h.update((self.projection.rows() as u64).to_le_bytes());
        for v in self.projection.data() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Features computed offline (for example by a large pretrained network),
/// looked up by image id. File format: JSON object `{image_id: [f64, ...]}`.
#[derive(Debug, Clone)]
pub struct PrecomputedEncoder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl PrecomputedEncoder {
    pub fn new(table: HashMap<String, Vec<f64>>) -> Result<Self> {
        let dim = table.values().next().map_or(0, Vec::len);
        if table.values().any(|v| v.len() != dim) {
            return Err(Error::Config("precomputed features have mixed dimensions".into()));
        }
        Ok(Self { dim, table })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: HashMap<String, Vec<f64>> =
            serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::new(table)
    }
}

impl ImageEncoder for PrecomputedEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, image: &ImageRef) -> Result<Vec<f64>> {
        self.table.get(&image.id).cloned().ok_or_else(|| Error::Feature {
            image_id: image.id.clone(),
            message: "no precomputed features".into(),
        })
    }

    fn fingerprint(&self) -> String {
        let mut keys: Vec<&String> = self.table.keys().collect();
        keys.sort();
        let mut h = Sha256::new();
        for k in keys {
            h.update(k.as_bytes());
            for v in &self.table[k] {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
