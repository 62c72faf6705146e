//! Run configuration files: flat `key = value` lines with `#` comments.
//! Unknown keys are rejected; a `profile` key preloads the dimension presets
//! and explicit keys override it regardless of order.

use crate::checkpoint::ModelDims;
use crate::error::{Error, Result};
use crate::reconstructor::Variant;
use crate::train::TrainingConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimsConfig {
    pub embed: usize,
    pub hidden: usize,
    pub frame_budget: usize,
    pub feature_dim: usize,
}

/// Dimension presets: `desk` for tests and experiments, `paper` mirroring the
/// published geometry (word embedding 468, hidden 512, 28 frames, 1536-d
/// features) for documentation and full-scale runs.
pub const DESK_DIMS: DimsConfig = DimsConfig {
    embed: 8,
    hidden: 16,
    frame_budget: 6,
    feature_dim: 10,
};
pub const PAPER_DIMS: DimsConfig = DimsConfig {
    embed: 468,
    hidden: 512,
    frame_budget: 28,
    feature_dim: 1536,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dims: DimsConfig,
    pub train_features: PathBuf,
    pub train_captions: PathBuf,
    pub val_features: PathBuf,
    pub val_captions: PathBuf,
    pub out_dir: PathBuf,
    pub vocab_min_count: usize,
    pub training: TrainingConfig,
}

impl RunConfig {
    pub fn model_dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            vocab,
            embed: self.dims.embed,
            hidden: self.dims.hidden,
            feature_dim: self.dims.feature_dim,
            frame_budget: self.dims.frame_budget,
        }
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run_config(&text)
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut pairs: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, got {raw:?}",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("duplicate key {key:?}")));
        }
    }

    let mut dims = DESK_DIMS;
    if let Some(profile) = pairs.remove("profile") {
        dims = match profile.as_str() {
            "desk" => DESK_DIMS,
            "paper" => PAPER_DIMS,
            other => {
                return Err(Error::Config(format!(
                    "unknown profile {other:?}, expected desk or paper"
                )))
            }
        };
    }

    let mut take = |key: &str| pairs.remove(key);
    fn parse<T: std::str::FromStr>(key: &str, value: String) -> Result<T> {
        value
            .parse()
            .map_err(|_| Error::Config(format!("key {key:?} has invalid value {value:?}")))
    }
    macro_rules! opt {
        ($key:literal, $default:expr) => {
            match take($key) {
                Some(v) => parse($key, v)?,
                None => $default,
            }
        };
    }

    dims.embed = opt!("embed_size", dims.embed);
    dims.hidden = opt!("hidden_size", dims.hidden);
    dims.frame_budget = opt!("frame_budget", dims.frame_budget);
    dims.feature_dim = opt!("feature_dim", dims.feature_dim);

    let variant: Variant = opt!("variant", Variant::None);
    let lambda = match take("lambda") {
        Some(v) => Some(parse::<f64>("lambda", v)?),
        None => None,
    };
    let lambda = match (variant, lambda) {
        (Variant::None, None) => 0.0,
        (Variant::None, Some(l)) => {
            if l != 0.0 {
                return Err(Error::Config(
                    "variant none cannot carry a nonzero lambda".into(),
                ));
            }
            0.0
        }
        (_, Some(l)) => l,
        (v, None) => {
            return Err(Error::Config(format!(
                "variant {v} needs an explicit lambda (recommended: 0.2 global, 0.1 local)"
            )))
        }
    };

    let defaults = TrainingConfig::default();
    let training = TrainingConfig {
        variant,
        lambda,
        batch_size: opt!("batch_size", defaults.batch_size),
        max_epochs: opt!("max_epochs", defaults.max_epochs),
        patience: opt!("patience", defaults.patience),
        seed: opt!("seed", defaults.seed),
        clip_norm: opt!("clip_norm", defaults.clip_norm),
        beam: opt!("beam", defaults.beam),
        max_caption_len: opt!("max_caption_len", defaults.max_caption_len),
        length_normalize: opt!("length_normalize", defaults.length_normalize),
        adadelta: crate::optim::AdaDeltaConfig {
            rho: opt!("adadelta_rho", defaults.adadelta.rho),
            eps: opt!("adadelta_eps", defaults.adadelta.eps),
        },
    };
    training.validate()?;

    let mut path_key = |key: &str| -> Result<PathBuf> {
        take(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
    };
    let config = RunConfig {
        dims,
        train_features: path_key("train_features")?,
        train_captions: path_key("train_captions")?,
        val_features: path_key("val_features")?,
        val_captions: path_key("val_captions")?,
        out_dir: take("out_dir")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs")),
        vocab_min_count: opt!("vocab_min_count", 1),
        training,
    };

    if let Some(unknown) = pairs.keys().next() {
        return Err(Error::Config(format!("unknown key {unknown:?}")));
    }
    Ok(config)
}
