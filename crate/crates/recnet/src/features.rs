//! Frame feature ingestion: equally spaced sampling, zero padding, and the
//! binary feature file format.
//!
//! Feature file layout, all little-endian: magic `RECF`, version u32, frame
//! count u32, dimension u32, then frames x dim f32 values row-major. Values
//! are widened to f64 on load.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

pub const FEATURE_MAGIC: &[u8; 4] = b"RECF";
pub const FEATURE_VERSION: u32 = 1;

/// Encoder output for one video before sampling: frames x dim, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl RawFeatures {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * dim {
            return Err(Error::Data(format!(
                "feature payload has {} values, expected {}x{}",
                data.len(),
                frames,
                dim
            )));
        }
        Ok(RawFeatures { frames, dim, data })
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Sampled and padded frame features: exactly `budget` rows, rows past
/// `true_length` are zero and masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSequence {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    true_length: usize,
    mask: Vec<bool>,
}

impl FrameFeatureSequence {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn true_length(&self) -> usize {
        self.true_length
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// All rows as a rows x dim tensor.
    pub fn matrix(&self) -> Tensor {
        Tensor::matrix(self.rows, self.dim, self.data.clone()).expect("feature shape")
    }
}

/// Select equally spaced frames when over budget, zero-pad when under.
/// With `k >= budget` the kept indices are round(j*(k-1)/(budget-1)).
pub fn sample_frames(raw: &RawFeatures, budget: usize) -> Result<FrameFeatureSequence> {
    if raw.frames == 0 {
        return Err(Error::Data("video has no frames".into()));
    }
    if budget == 0 {
        return Err(Error::Config("frame budget must be positive".into()));
    }
    let k = raw.frames;
    let d = raw.dim;
    let mut data = vec![0.0; budget * d];
    let true_length;
    if k >= budget {
        true_length = budget;
        for j in 0..budget {
            let idx = if budget == 1 {
                0
            } else {
                ((j as f64) * ((k - 1) as f64) / ((budget - 1) as f64)).round() as usize
            };
            data[j * d..(j + 1) * d].copy_from_slice(raw.frame(idx));
        }
    } else {
        true_length = k;
        data[..k * d].copy_from_slice(&raw.data);
    }
    let mask = (0..budget).map(|i| i < true_length).collect();
    Ok(FrameFeatureSequence {
        rows: budget,
        dim: d,
        data,
        true_length,
        mask,
    })
}

pub fn write_feature_file(path: &Path, features: &RawFeatures) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + features.data.len() * 4);
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(features.frames as u32).to_le_bytes());
    bytes.extend_from_slice(&(features.dim as u32).to_le_bytes());
    for v in &features.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    crate::util::atomic_write(path, &bytes)
}

pub fn read_feature_file(path: &Path) -> Result<RawFeatures> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: &str| Error::Data(format!("{}: {}", path.display(), msg));
    if bytes.len() < 16 {
        return Err(fail("feature file shorter than its header"));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(fail("bad magic, expected RECF"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let frames = word(8) as usize;
    let dim = word(12) as usize;
    let expected = 16 + frames * dim * 4;
    if bytes.len() != expected {
        return Err(fail(&format!(
            "payload is {} bytes, expected {} for {}x{}",
            bytes.len(),
            expected,
            frames,
            dim
        )));
    }
    let mut data = Vec::with_capacity(frames * dim);
    for chunk in bytes[16..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    RawFeatures::new(frames, dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(k: usize, d: usize) -> RawFeatures {
        let data = (0..k * d).map(|i| i as f64).collect();
        RawFeatures::new(k, d, data).unwrap()
    }

    #[test]
    fn exact_fit_is_identity() {
        let r = raw(28, 3);
        let f = sample_frames(&r, 28).unwrap();
        assert_eq!(f.true_length(), 28);
        assert!(f.mask().iter().all(|&m| m));
        for i in 0..28 {
            assert_eq!(f.frame(i), r.frame(i));
        }
    }

    #[test]
    fn short_video_zero_pads() {
        let r = raw(10, 4);
        let f = sample_frames(&r, 28).unwrap();
        assert_eq!(f.rows(), 28);
        assert_eq!(f.true_length(), 10);
        for i in 10..28 {
            assert!(f.frame(i).iter().all(|&v| v == 0.0));
            assert!(!f.mask()[i]);
        }
        assert_eq!(f.frame(9), r.frame(9));
    }

    #[test]
    fn long_video_picks_rounded_indices() {
        // k=55, budget=28: j*54/27 = 2j, so indices 0,2,4,...,54
        let r = raw(55, 2);
        let f = sample_frames(&r, 28).unwrap();
        for j in 0..28 {
            assert_eq!(f.frame(j), r.frame(2 * j), "slot {j}");
        }
    }

    #[test]
    fn empty_video_is_an_error() {
        let r = RawFeatures::new(0, 3, vec![]).unwrap();
        assert!(sample_frames(&r, 28).is_err());
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.recf");
        let r = RawFeatures::new(3, 2, vec![0.5, -1.25, 3.0, 0.0, 7.5, -0.125]).unwrap();
        write_feature_file(&path, &r).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back, r); // all values exactly representable in f32

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_feature_file(&path).is_err());

        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_feature_file(&path).is_err());
    }

    proptest! {
        #[test]
        fn sampled_rows_match_budget_and_mask_counts(
            k in 1usize..80,
            d in 1usize..5,
            budget in 1usize..40,
        ) {
            let r = raw(k, d);
            let f = sample_frames(&r, budget).unwrap();
            prop_assert_eq!(f.rows(), budget);
            let live = f.mask().iter().filter(|&&m| m).count();
            prop_assert_eq!(live, k.min(budget));
            prop_assert_eq!(f.true_length(), k.min(budget));
        }
    }
}
