//! Central finite-difference verification of analytic gradients.

use crate::error::Result;

/// A loss evaluation at one point in parameter space.
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Compare the analytic gradient of `loss_fn` at `params` against central
/// finite differences with the given step, returning the max over parameters
/// of |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
///
/// `blocks` partitions the flat vector into the model's parameter tensors;
/// each tensor is scored by the Euclidean magnitude of its difference. With
/// `None` every scalar is its own parameter — a stricter check, but at
/// 64 bits the central stencil carries an absolute noise floor of roughly
/// |loss| * 1e-11, so per-scalar scoring is only meaningful when every true
/// gradient entry sits well above that.
///
/// `loss_fn` must be deterministic; it is called once at the base point for
/// the analytic gradient and twice per parameter entry for the stencil.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[f64],
    blocks: Option<&[usize]>,
    step: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<LossEval>,
{
    let base = loss_fn(params)?;
    assert_eq!(
        base.grad.len(),
        params.len(),
        "gradient length {} does not match parameter count {}",
        base.grad.len(),
        params.len()
    );
    let mut buf = params.to_vec();
    let mut numeric = vec![0.0; buf.len()];
    for i in 0..buf.len() {
        let orig = buf[i];
        buf[i] = orig + step;
        let up = loss_fn(&buf)?.loss;
        buf[i] = orig - step;
        let down = loss_fn(&buf)?.loss;
        buf[i] = orig;
        numeric[i] = (up - down) / (2.0 * step);
    }

    let ones;
    let blocks = match blocks {
        Some(b) => {
            assert_eq!(
                b.iter().sum::<usize>(),
                params.len(),
                "block sizes must cover the parameters"
            );
            b
        }
        None => {
            ones = vec![1usize; params.len()];
            &ones
        }
    };
    let mut max_rel: f64 = 0.0;
    let mut offset = 0;
    for &size in blocks {
        let a = &base.grad[offset..offset + size];
        let n = &numeric[offset..offset + size];
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: f64 = a
            .iter()
            .zip(n)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let denom = norm(a).max(norm(n)).max(1e-12);
        max_rel = max_rel.max(diff / denom);
        offset += size;
    }
    Ok(max_rel)
}
