//! Checkpoint persistence: magic `RECN`, format version, a JSON metadata
//! block (config, epochs, metric history, vocabulary, buffer manifest), then
//! the raw little-endian f64 parameter and optimizer buffers. Round-trips are
//! bit-exact, optimizer state included.

use crate::decoder::DecoderDims;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::optim::AdaDeltaState;
use crate::reconstructor::{ReconstructorParams, Variant};
use crate::tensor::Tensor;
use crate::text::Vocabulary;
use crate::train::{EpochStats, TrainingConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RECN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model geometry persisted with the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub frame_budget: usize,
}

impl ModelDims {
    pub fn decoder(&self) -> DecoderDims {
        DecoderDims {
            vocab: self.vocab,
            embed: self.embed,
            hidden: self.hidden,
            feature_dim: self.feature_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub params: ModelParams,
    /// AdaDelta accumulators aligned with `params.visit()` order.
    pub optimizer: Vec<AdaDeltaState>,
    /// Last completed global epoch.
    pub epoch: u64,
    /// Global epoch at which the current stage started.
    pub stage_start: u64,
    /// Per-epoch stats of the current stage.
    pub history: Vec<EpochStats>,
    pub config: TrainingConfig,
    pub dims: ModelDims,
    pub vocab: Vocabulary,
}

impl ModelCheckpoint {
    pub fn fresh(
        params: ModelParams,
        config: TrainingConfig,
        dims: ModelDims,
        vocab: Vocabulary,
    ) -> ModelCheckpoint {
        let optimizer = params
            .visit()
            .iter()
            .map(|(_, t)| AdaDeltaState::zeros_like(t))
            .collect();
        ModelCheckpoint {
            params,
            optimizer,
            epoch: 0,
            stage_start: 0,
            history: Vec::new(),
            config,
            dims,
            vocab,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BufferEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: TrainingConfig,
    dims: ModelDims,
    variant: Variant,
    epoch: u64,
    stage_start: u64,
    history: Vec<EpochStats>,
    vocab: Vec<String>,
    manifest: Vec<BufferEntry>,
}

fn buffers_of(ckpt: &ModelCheckpoint) -> (Vec<BufferEntry>, Vec<&Tensor>) {
    let mut manifest = Vec::new();
    let mut buffers: Vec<&Tensor> = Vec::new();
    for ((name, tensor), state) in ckpt.params.visit().into_iter().zip(&ckpt.optimizer) {
        manifest.push(BufferEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
        });
        buffers.push(tensor);
        manifest.push(BufferEntry {
            name: format!("{name}.accum_grad"),
            shape: state.accum_grad.shape().to_vec(),
        });
        buffers.push(&state.accum_grad);
        manifest.push(BufferEntry {
            name: format!("{name}.accum_update"),
            shape: state.accum_update.shape().to_vec(),
        });
        buffers.push(&state.accum_update);
    }
    (manifest, buffers)
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    let (manifest, buffers) = buffers_of(ckpt);
    let meta = Metadata {
        config: ckpt.config.clone(),
        dims: ckpt.dims,
        variant: ckpt.params.variant(),
        epoch: ckpt.epoch,
        stage_start: ckpt.stage_start,
        history: ckpt.history.clone(),
        vocab: ckpt.vocab.plain_words().to_vec(),
        manifest,
    };
    let meta_bytes = serde_json::to_vec(&meta)?;
    let payload: usize = buffers.iter().map(|t| t.numel() * 8).sum();
    let mut bytes = Vec::with_capacity(16 + meta_bytes.len() + payload);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&meta_bytes);
    for t in buffers {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    crate::util::atomic_write(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: String| Error::CorruptCheckpoint(format!("{}: {}", path.display(), msg));
    if bytes.len() < 16 {
        return Err(fail("shorter than the fixed header".into()));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic, expected RECN".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported format version {version}")));
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + meta_len {
        return Err(fail("metadata block truncated".into()));
    }
    let meta: Metadata =
        serde_json::from_slice(&bytes[16..16 + meta_len]).map_err(|e| fail(e.to_string()))?;

    // rebuild the parameter skeleton (placeholder values, every tensor is
    // overwritten below), then fill the buffers in manifest order
    use rand::SeedableRng;
    let dd = meta.dims.decoder();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let decoder = crate::decoder::DecoderParams::init(dd, &mut rng);
    let reconstructor =
        ReconstructorParams::init(meta.variant, dd.hidden, dd.feature_dim, &mut rng);
    let mut params = ModelParams {
        decoder,
        reconstructor,
    };
    let mut optimizer: Vec<AdaDeltaState> = params
        .visit()
        .iter()
        .map(|(_, t)| AdaDeltaState::zeros_like(t))
        .collect();

    let expected_entries = params.visit().len() * 3;
    if meta.manifest.len() != expected_entries {
        return Err(fail(format!(
            "manifest has {} buffers, expected {}",
            meta.manifest.len(),
            expected_entries
        )));
    }
    let payload: usize = meta
        .manifest
        .iter()
        .map(|b| b.shape.iter().product::<usize>() * 8)
        .sum();
    if bytes.len() != 16 + meta_len + payload {
        return Err(fail(format!(
            "payload is {} bytes, manifest wants {}",
            bytes.len() - 16 - meta_len,
            payload
        )));
    }

    let mut offset = 16 + meta_len;
    let mut read_into = |tensor: &mut Tensor, entry: &BufferEntry| -> Result<()> {
        if tensor.shape() != entry.shape.as_slice() {
            return Err(fail(format!(
                "buffer {} has shape {:?}, model wants {:?}",
                entry.name,
                entry.shape,
                tensor.shape()
            )));
        }
        for v in tensor.data_mut() {
            *v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
            offset += 8;
        }
        Ok(())
    };
    {
        let mut entries = meta.manifest.iter();
        for (i, (name, tensor)) in params.visit_mut().into_iter().enumerate() {
            let param_entry = entries.next().unwrap();
            if param_entry.name != name {
                return Err(Error::CorruptCheckpoint(format!(
                    "{}: manifest names {}, model wants {}",
                    path.display(),
                    param_entry.name,
                    name
                )));
            }
            read_into(tensor, param_entry)?;
            read_into(&mut optimizer[i].accum_grad, entries.next().unwrap())?;
            read_into(&mut optimizer[i].accum_update, entries.next().unwrap())?;
        }
    }

    let vocab = Vocabulary::from_words(meta.vocab)?;
    if vocab.len() != meta.dims.vocab {
        return Err(fail(format!(
            "vocabulary has {} words, dims say {}",
            vocab.len(),
            meta.dims.vocab
        )));
    }
    Ok(ModelCheckpoint {
        params,
        optimizer,
        epoch: meta.epoch,
        stage_start: meta.stage_start,
        history: meta.history,
        config: meta.config,
        dims: meta.dims,
        vocab,
    })
}
