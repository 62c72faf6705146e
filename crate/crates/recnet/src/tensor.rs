//! Dense row-major tensors over 64-bit reals.
//!
//! Shapes are plain `Vec<usize>`; a scalar is the empty shape. Everything at
//! desk scale is rank 0, 1 or 2, so no broadcasting machinery is provided —
//! the tape has dedicated ops for the few broadcast patterns the model needs.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape(
                "Tensor::new",
                format!(
                    "shape {:?} wants {} values, got {}",
                    shape,
                    numel,
                    data.len()
                ),
            ));
        }
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite tensor values"
        );
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite tensor values"
        );
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// rows x cols matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    /// Number of rows for rank-2 tensors.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns for rank-2 tensors.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Row `i` of a rank-2 tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Transpose of a rank-2 tensor.
    pub fn transposed(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }
}

/// Numerically stabilized softmax over a rank-1 slice with an optional mask.
///
/// Masked positions come out exactly 0. Errors when every position is masked.
pub fn masked_softmax(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(Error::shape(
                "masked_softmax",
                format!("mask length {} vs logits length {}", m.len(), logits.len()),
            ));
        }
    }
    let live = |i: usize| mask.is_none_or(|m| m[i]);
    let mut max = f64::NEG_INFINITY;
    for (i, &x) in logits.iter().enumerate() {
        if live(i) && x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let mut out = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for (i, &x) in logits.iter().enumerate() {
        if live(i) {
            let e = (x - max).exp();
            out[i] = e;
            sum += e;
        }
    }
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Log-probabilities via the same stabilization as [`masked_softmax`].
/// Masked positions get `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let live = |i: usize| mask.is_none_or(|m| m[i]);
    let mut max = f64::NEG_INFINITY;
    for (i, &x) in logits.iter().enumerate() {
        if live(i) && x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let mut sum = 0.0;
    for (i, &x) in logits.iter().enumerate() {
        if live(i) {
            sum += (x - max).exp();
        }
    }
    let log_z = max + sum.ln();
    Ok(logits
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if live(i) {
                x - log_z
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect())
}
