//! Synthetic caption datasets for desk-scale experiments.
//!
//! Each video is a two-segment frame sequence drawn from per-concept
//! prototype vectors plus Gaussian noise, and its captions are grammar
//! sentences naming the two concepts in order, so a caption is always
//! recoverable from the features.

use crate::dataset::RawVideo;
use crate::error::{Error, Result};
use crate::features::RawFeatures;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const CONCEPT_WORDS: [&str; 12] = [
    "falcon", "otter", "heron", "marmot", "lynx", "badger", "plover", "stoat", "ibex", "vole",
    "raven", "shrew",
];

const TEMPLATES: [[&str; 2]; 4] = [
    ["the ", " watches the "],
    ["a ", " stays near the "],
    ["the ", " follows the "],
    ["a ", " looks at the "],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub videos: usize,
    pub concepts: usize,
    pub feature_dim: usize,
    pub captions_per_video: usize,
    pub noise_scale: f64,
    pub min_frames: usize,
    pub max_frames: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            videos: 16,
            concepts: 4,
            feature_dim: 10,
            captions_per_video: 1,
            noise_scale: 0.05,
            min_frames: 4,
            max_frames: 12,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.videos == 0 || self.concepts == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "videos, concepts and feature dim must all be positive".into(),
            ));
        }
        if self.captions_per_video == 0 {
            return Err(Error::Config("captions per video must be positive".into()));
        }
        if self.min_frames < 2 || self.max_frames < self.min_frames {
            return Err(Error::Config(
                "frame counts must satisfy 2 <= min_frames <= max_frames".into(),
            ));
        }
        Ok(())
    }
}

fn concept_word(k: usize) -> String {
    CONCEPT_WORDS
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("species{k}"))
}

fn caption_for(pair_index: usize, caption_index: usize, subject: usize, object: usize) -> String {
    let [head, middle] = TEMPLATES[(pair_index + caption_index) % TEMPLATES.len()];
    format!(
        "{head}{}{middle}{}",
        concept_word(subject),
        concept_word(object)
    )
}

/// All grammar sentences a (subject, object) pair can produce, for schema
/// checks.
pub fn grammar_sentences(subject: usize, object: usize) -> Vec<String> {
    (0..TEMPLATES.len())
        .map(|t| caption_for(t, 0, subject, object))
        .collect()
}

/// Deterministic synthetic dataset. Video `v` carries the concept pair
/// `(v / concepts, v % concepts) mod concepts^2`, first-half frames near the
/// subject prototype and second-half frames near the object prototype.
pub fn generate_synthetic_dataset(seed: u64, cfg: &SynthConfig) -> Result<Vec<RawVideo>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.feature_dim;

    let prototypes: Vec<Vec<f64>> = (0..cfg.concepts)
        .map(|_| {
            (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let mut videos = Vec::with_capacity(cfg.videos);
    for v in 0..cfg.videos {
        let pair = v % (cfg.concepts * cfg.concepts);
        let subject = pair / cfg.concepts;
        let object = pair % cfg.concepts;

        let frames = rng.gen_range(cfg.min_frames..=cfg.max_frames);
        let first_half = frames.div_ceil(2);
        let mut data = Vec::with_capacity(frames * d);
        for f in 0..frames {
            let proto = if f < first_half {
                &prototypes[subject]
            } else {
                &prototypes[object]
            };
            for &p in proto {
                let noise: f64 = rng.sample(StandardNormal);
                data.push(p + cfg.noise_scale * noise);
            }
        }

        let captions = (0..cfg.captions_per_video)
            .map(|c| caption_for(pair, c, subject, object))
            .collect();

        videos.push(RawVideo {
            video_id: format!("vid{v:04}"),
            features: RawFeatures::new(frames, d, data)?,
            captions,
        });
    }
    Ok(videos)
}
