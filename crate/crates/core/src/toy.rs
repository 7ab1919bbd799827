//! A small synthetic world for tests, demos and smoke runs: ten scenes with
//! five concepts each, generated images whose colour identifies the scene,
//! and short stories in which later sentences refer back with pronouns.

use std::path::Path;
use std::sync::Arc;

use image::{ImageBuffer, Rgb};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ImageRef, ImageSequence, Split, Story, StorySample};
use crate::error::{Error, Result};
use crate::model::{LmConfig, Mode, ModelConfig, TrainConfig, VisionStack};
use crate::scalar::Matrix;
use crate::vision::{ConceptConfig, MappingConfig, MappingMode, PixelProjectionEncoder, PrototypeDetector};

pub const IMAGE_SIDE: u32 = 32;
pub const SCENES_PER_STORY: usize = 5;

pub struct Scene {
    pub place: &'static str,
    pub concepts: [&'static str; 5],
    pub colour: [u8; 3],
    /// `{s}` is the subject.
    pub templates: [&'static str; 2],
}

pub const SCENES: [Scene; 10] = [
    Scene {
        place: "beach",
        concepts: ["beach", "sand", "wave", "shell", "towel"],
        colour: [230, 200, 120],
        templates: [
            "{s} collected a shell near the wave.",
            "{s} folded a towel on the sand.",
        ],
    },
    Scene {
        place: "park",
        concepts: ["park", "tree", "bench", "grass", "ball"],
        colour: [60, 170, 60],
        templates: [
            "{s} kicked a ball across the grass.",
            "{s} rested on a bench under the tree.",
        ],
    },
    Scene {
        place: "market",
        concepts: ["market", "apple", "basket", "stall", "bread"],
        colour: [200, 60, 50],
        templates: [
            "{s} bought an apple at the market.",
            "{s} filled a basket with bread from the stall.",
        ],
    },
    Scene {
        place: "kitchen",
        concepts: ["kitchen", "cake", "oven", "table", "plate"],
        colour: [240, 240, 230],
        templates: [
            "{s} baked a cake in the oven.",
            "{s} placed a plate on the kitchen table.",
        ],
    },
    Scene {
        place: "forest",
        concepts: ["forest", "trail", "deer", "mushroom", "log"],
        colour: [20, 80, 30],
        templates: [
            "{s} followed a trail through the forest.",
            "{s} spotted a deer behind the log.",
        ],
    },
    Scene {
        place: "lake",
        concepts: ["lake", "boat", "duck", "dock", "paddle"],
        colour: [40, 90, 200],
        templates: ["{s} rowed a boat across the lake.", "{s} watched a duck from the dock."],
    },
    Scene {
        place: "city",
        concepts: ["city", "street", "bus", "building", "bridge"],
        colour: [120, 120, 130],
        templates: [
            "{s} crossed the bridge into the city.",
            "{s} waited for the bus on the street.",
        ],
    },
    Scene {
        place: "garden",
        concepts: ["garden", "flower", "fence", "butterfly", "pot"],
        colour: [220, 120, 200],
        templates: [
            "{s} planted a flower in the garden.",
            "{s} painted the fence near a butterfly.",
        ],
    },
    Scene {
        place: "mountain",
        concepts: ["mountain", "snow", "rock", "cabin", "sled"],
        colour: [180, 220, 250],
        templates: [
            "{s} climbed a rock on the mountain.",
            "{s} pulled a sled through the snow.",
        ],
    },
    Scene {
        place: "party",
        concepts: ["party", "balloon", "candle", "gift", "hat"],
        colour: [250, 210, 30],
        templates: [
            "{s} opened a gift at the party.",
            "{s} lighted a candle near the balloon.",
        ],
    },
];

/// Names with the pronoun used for them in this world.
pub const NAMES: [(&str, &str); 10] = [
    ("Anna", "She"),
    ("Ben", "He"),
    ("Clara", "She"),
    ("David", "He"),
    ("Emma", "She"),
    ("Frank", "He"),
    ("Grace", "She"),
    ("Henry", "He"),
    ("Iris", "She"),
    ("Jack", "He"),
];

/// Every concept label, scene by scene.
pub fn concept_labels() -> Vec<String> {
    SCENES
        .iter()
        .flat_map(|s| s.concepts.iter().map(|c| c.to_string()))
        .collect()
}

/// Scene image with per-pixel noise drawn from `rng`; `noise == 0` gives the
/// clean palette image.
pub fn scene_image<R: Rng>(scene: usize, noise: u8, rng: &mut R) -> image::DynamicImage {
    let base = SCENES[scene].colour;
    let img = ImageBuffer::from_fn(IMAGE_SIDE, IMAGE_SIDE, |x, y| {
        // a diagonal stripe keeps images of similar colour apart
        let stripe = if (x + y * (scene as u32 + 1)) % 8 < 2 { 40i16 } else { 0 };
        let mut px = [0u8; 3];
        for (c, b) in px.iter_mut().zip(base) {
            let jitter = if noise == 0 {
                0
            } else {
                rng.gen_range(-(noise as i16)..=noise as i16)
            };
            *c = (b as i16 - stripe + jitter).clamp(0, 255) as u8;
        }
        Rgb(px)
    });
    image::DynamicImage::ImageRgb8(img)
}

pub struct ToyConfig {
    pub stories: usize,
    pub seed: u64,
    pub noise: u8,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            stories: 50,
            seed: 7,
            noise: 12,
        }
    }
}

/// Scenes, name and template choice of one story.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyStory {
    pub scenes: Vec<usize>,
    pub name: usize,
    pub sentences: Vec<String>,
}

pub fn sample_story<R: Rng>(rng: &mut R) -> ToyStory {
    let mut order: Vec<usize> = (0..SCENES.len()).collect();
    order.shuffle(rng);
    order.truncate(SCENES_PER_STORY);
    let name = rng.gen_range(0..NAMES.len());
    let (who, pronoun) = NAMES[name];
    let sentences = order
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let t = SCENES[s].templates[rng.gen_range(0..2)];
            t.replace("{s}", if i == 0 { who } else { pronoun })
        })
        .collect();
    ToyStory {
        scenes: order,
        name,
        sentences,
    }
}

/// Write the images of `cfg.stories` stories under `dir/images` and return
/// the samples. Every fifth story goes to validation. Output is a pure
/// function of the config.
pub fn write_toy_corpus(dir: &Path, cfg: &ToyConfig) -> Result<Vec<StorySample>> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.stories);
    for n in 0..cfg.stories {
        let story = sample_story(&mut rng);
        let id = format!("toy-{n:04}");
        let mut refs = Vec::new();
        for (i, &scene) in story.scenes.iter().enumerate() {
            let image_id = format!("{id}-{i}");
            let path = images.join(format!("{image_id}.png"));
            scene_image(scene, cfg.noise, &mut rng)
                .save(&path)
                .map_err(|e| Error::Feature {
                    image_id: image_id.clone(),
                    message: e.to_string(),
                })?;
            refs.push(ImageRef::new(image_id, path.to_string_lossy()));
        }
        out.push(StorySample {
            image_sequence: ImageSequence {
                sequence_id: id,
                images: refs,
            },
            story: Story::new(story.sentences),
            blueprint: None,
            split: if n % 5 == 4 { Split::Validation } else { Split::Train },
        });
    }
    Ok(out)
}

pub const ENCODER_SIDE: u32 = 8;

/// Frozen encoder and concept detector for the toy world. Each concept's
/// prototype is the encoding of its scene's clean image; a small descending
/// bias orders the five concepts of a scene.
pub fn toy_detector(dim: usize, seed: u64) -> Result<PrototypeDetector<PixelProjectionEncoder>> {
    let encoder = PixelProjectionEncoder::new(ENCODER_SIDE, dim, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut protos = Vec::with_capacity(SCENES.len() * 5 * dim);
    let mut biases = Vec::with_capacity(SCENES.len() * 5);
    for s in 0..SCENES.len() {
        let f = encoder.encode_image(&scene_image(s, 0, &mut rng));
        for j in 0..5 {
            protos.extend_from_slice(&f);
            biases.push(-0.01 * j as f64);
        }
    }
    PrototypeDetector::new(
        encoder,
        concept_labels(),
        Matrix::from_vec(SCENES.len() * 5, dim, protos),
        biases,
        20.0,
    )
}

pub fn toy_vision(dim: usize, seed: u64) -> Result<VisionStack> {
    let detector = toy_detector(dim, seed)?;
    Ok(VisionStack {
        encoder: Arc::new(detector.encoder().clone()),
        detector: Arc::new(detector),
        concepts: ConceptConfig::default(),
    })
}

/// Feature size of [`toy_vision`] as used by the toy configs.
pub const FEATURE_DIM: usize = 16;

/// A backbone large enough to memorize a few dozen toy stories.
pub fn toy_model_config(mode: Mode) -> ModelConfig {
    let d = 32;
    ModelConfig {
        mode,
        lm: LmConfig {
            d_model: d,
            window: 6,
            hidden: 128,
            max_positions: 320,
        },
        mapping: MappingConfig {
            d_img: FEATURE_DIM,
            hidden: 32,
            d_lm: d,
            mode: MappingMode::PerImage,
            num_images: SCENES_PER_STORY,
        },
        seed: 1,
    }
}

/// Full-batch training with a learning rate suited to the toy backbone.
pub fn toy_train_config(steps: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        batch_size: 64,
        max_steps: steps,
        ..TrainConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::ConceptDetector;

    #[test]
    fn stories_use_pronouns_after_the_first_sentence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_story(&mut rng);
        assert_eq!(s.sentences.len(), SCENES_PER_STORY);
        assert!(s.sentences[0].starts_with(NAMES[s.name].0));
        assert!(s.sentences[1..].iter().all(|x| x.starts_with(NAMES[s.name].1)));
    }

    #[test]
    fn detector_recovers_scene_concepts() {
        let det = toy_detector(16, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (s, scene) in SCENES.iter().enumerate() {
            let f = det.encoder().encode_image(&scene_image(s, 12, &mut rng));
            let mut scores = det.score_features(&f);
            scores.sort_by(|a, b| b.1.total_cmp(&a.1));
            let top: Vec<&str> = scores[..5].iter().map(|x| x.0.as_str()).collect();
            assert_eq!(top, scene.concepts, "scene {}", scene.place);
        }
        assert_eq!(det.fingerprint(), toy_detector(16, 3).unwrap().fingerprint());
    }
}
