//! Caption datasets: assembly from raw parts, JSON-lines caption files, and
//! deterministic shuffled batching.

use crate::error::{Error, Result};
use crate::features::{sample_frames, FrameFeatureSequence, RawFeatures};
use crate::text::{tokenize, TokenSequence, Vocabulary, PAD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One reference caption, kept both as surface tokens (for metrics) and as
/// encoded ids (for training).
#[derive(Debug, Clone)]
pub struct Caption {
    pub tokens: Vec<String>,
    pub ids: TokenSequence,
}

#[derive(Debug, Clone)]
pub struct VideoEntry {
    pub video_id: String,
    pub features: FrameFeatureSequence,
    pub captions: Vec<Caption>,
}

#[derive(Debug, Clone)]
pub struct CaptionDataset {
    pub split: Split,
    pub entries: Vec<VideoEntry>,
}

impl CaptionDataset {
    pub fn new(split: Split, entries: Vec<VideoEntry>) -> Result<CaptionDataset> {
        let mut seen = HashSet::new();
        let mut dim = None;
        for e in &entries {
            if e.captions.is_empty() {
                return Err(Error::Data(format!("video {} has no captions", e.video_id)));
            }
            if !seen.insert(e.video_id.clone()) {
                return Err(Error::Data(format!("duplicate video id {}", e.video_id)));
            }
            match dim {
                None => dim = Some(e.features.dim()),
                Some(d) if d != e.features.dim() => {
                    return Err(Error::Data(format!(
                        "video {} has feature dim {}, dataset uses {}",
                        e.video_id,
                        e.features.dim(),
                        d
                    )))
                }
                _ => {}
            }
        }
        Ok(CaptionDataset { split, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.features.dim())
    }
}

/// Un-encoded video: raw features plus caption strings, the common currency
/// of the synthetic generator and the file loaders.
#[derive(Debug, Clone)]
pub struct RawVideo {
    pub video_id: String,
    pub features: RawFeatures,
    pub captions: Vec<String>,
}

/// Tokenize captions, sample features to the budget, and encode with `vocab`.
pub fn assemble(
    split: Split,
    videos: &[RawVideo],
    vocab: &Vocabulary,
    frame_budget: usize,
) -> Result<CaptionDataset> {
    let mut entries = Vec::with_capacity(videos.len());
    for v in videos {
        let features = sample_frames(&v.features, frame_budget)?;
        let mut captions = Vec::with_capacity(v.captions.len());
        for text in &v.captions {
            let tokens = tokenize(text)?;
            let ids = vocab.encode(&tokens)?;
            captions.push(Caption { tokens, ids });
        }
        entries.push(VideoEntry {
            video_id: v.video_id.clone(),
            features,
            captions,
        });
    }
    CaptionDataset::new(split, entries)
}

/// Train/validation pair sharing one vocabulary built from the train split.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: CaptionDataset,
    pub val: CaptionDataset,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn build(
        train_videos: &[RawVideo],
        val_videos: &[RawVideo],
        frame_budget: usize,
        min_count: usize,
    ) -> Result<Corpus> {
        let mut token_corpus = Vec::new();
        for v in train_videos {
            for text in &v.captions {
                token_corpus.push(tokenize(text)?);
            }
        }
        let vocab = Vocabulary::build(&token_corpus, min_count)?;
        let train = assemble(Split::Train, train_videos, &vocab, frame_budget)?;
        let val = assemble(Split::Validation, val_videos, &vocab, frame_budget)?;
        Ok(Corpus { train, val, vocab })
    }
}

// ── caption / candidate files (JSON-lines) ──────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub video_id: String,
    pub captions: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub video_id: String,
    pub caption: String,
}

pub fn read_caption_file(path: &Path) -> Result<Vec<CaptionRecord>> {
    read_jsonl(path)
}

pub fn write_caption_file(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_candidate_file(path: &Path) -> Result<Vec<CandidateRecord>> {
    read_jsonl(path)
}

pub fn write_candidate_file(path: &Path, records: &[CandidateRecord]) -> Result<()> {
    write_jsonl(path, records)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{} line {}: {}", path.display(), lineno + 1, e)))?;
        out.push(rec);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut body = String::new();
    for r in records {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    crate::util::atomic_write(path, body.as_bytes())
}

// ── batching ─────────────────────────────────────────────────────────────

/// Index of one training sample: a (video, caption) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub video: usize,
    pub caption: usize,
}

/// Captions right-padded with PAD to the batch max length; the mask marks
/// real (non-PAD) positions and keeps padding out of the loss.
#[derive(Debug, Clone)]
pub struct Batch {
    pub samples: Vec<SampleRef>,
    pub tokens: Vec<Vec<u32>>,
    pub mask: Vec<Vec<bool>>,
}

/// All (video, caption) pairs shuffled by `seed`, in fixed-size batches.
/// Callers derive a fresh seed per epoch for reshuffling.
pub fn batches(dataset: &CaptionDataset, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut refs = Vec::new();
    for (vi, entry) in dataset.entries.iter().enumerate() {
        for ci in 0..entry.captions.len() {
            refs.push(SampleRef {
                video: vi,
                caption: ci,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    refs.shuffle(&mut rng);

    let mut out = Vec::new();
    for chunk in refs.chunks(batch_size) {
        let max_len = chunk
            .iter()
            .map(|s| dataset.entries[s.video].captions[s.caption].ids.len())
            .max()
            .unwrap();
        let mut tokens = Vec::with_capacity(chunk.len());
        let mut mask = Vec::with_capacity(chunk.len());
        for s in chunk {
            let ids = dataset.entries[s.video].captions[s.caption].ids.ids();
            let mut row = ids.to_vec();
            row.resize(max_len, PAD);
            mask.push((0..max_len).map(|j| j < ids.len()).collect());
            tokens.push(row);
        }
        out.push(Batch {
            samples: chunk.to_vec(),
            tokens,
            mask,
        });
    }
    Ok(out)
}
