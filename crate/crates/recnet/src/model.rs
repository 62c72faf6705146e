//! The full captioning model: decoder plus optional reconstructor, the joint
//! per-sample loss, and a finite-difference check over every parameter.

use crate::decoder::{
    nll_nodes, DecoderDims, DecoderParams, DecoderVars, FeatureNodes, TraceNodes,
};
use crate::error::{Error, Result};
use crate::features::{sample_frames, FrameFeatureSequence, RawFeatures};
use crate::gradcheck::{finite_diff_check, LossEval};
use crate::reconstructor::{
    global_loss_nodes, global_nodes, local_loss_nodes, local_nodes, ReconVars, ReconstructorParams,
    Variant,
};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::text::TokenSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub decoder: DecoderParams,
    pub reconstructor: Option<ReconstructorParams>,
}

impl ModelParams {
    pub fn init(dims: DecoderDims, variant: Variant, rng: &mut impl Rng) -> ModelParams {
        let decoder = DecoderParams::init(dims, rng);
        let reconstructor = ReconstructorParams::init(variant, dims.hidden, dims.feature_dim, rng);
        ModelParams {
            decoder,
            reconstructor,
        }
    }

    pub fn variant(&self) -> Variant {
        self.reconstructor
            .as_ref()
            .map_or(Variant::None, |r| r.variant())
    }

    /// Parameters in canonical order: decoder first, then reconstructor.
    pub fn visit(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = self.decoder.visit();
        if let Some(r) = &self.reconstructor {
            out.extend(r.visit());
        }
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = self.decoder.visit_mut();
        if let Some(r) = &mut self.reconstructor {
            out.extend(r.visit_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.visit().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, t) in self.visit() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(
                "load_flat",
                format!(
                    "{} values for {} parameters",
                    flat.len(),
                    self.param_count()
                ),
            ));
        }
        let mut offset = 0;
        for (_, t) in self.visit_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            decoder: self.decoder.register(tape),
            reconstructor: self.reconstructor.as_ref().map(|r| r.register(tape)),
        }
    }

    /// Zero the PAD-row slice of the embedding gradient so row 0 stays
    /// frozen. `grads` must be aligned with `visit` order.
    pub fn zero_frozen_gradients(&self, grads: &mut [Tensor]) {
        let embed = self.decoder.embedding.cols();
        if let Some(g) = grads.first_mut() {
            g.data_mut()[..embed].fill(0.0);
        }
    }
}

pub struct ModelVars {
    pub decoder: DecoderVars,
    pub reconstructor: Option<ReconVars>,
}

impl ModelVars {
    /// Nodes whose adjoints are the parameter gradients, in `visit` order.
    pub fn grad_nodes(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.decoder.grad_nodes().to_vec();
        if let Some(r) = &self.reconstructor {
            out.extend(r.grad_nodes());
        }
        out
    }
}

pub struct SampleLossNodes {
    pub total: NodeId,
    pub nll: NodeId,
    pub rec: Option<NodeId>,
    pub trace: TraceNodes,
}

/// Per-sample joint loss: NLL plus lambda times the reconstruction loss.
/// With lambda = 0 (or no reconstructor) the reconstruction graph is not
/// built at all, so the loss and every gradient bit match a plain NLL pass.
pub fn sample_loss_nodes(
    tape: &mut Tape,
    vars: &ModelVars,
    features: &FrameFeatureSequence,
    caption: &TokenSequence,
    lambda: f64,
) -> Result<SampleLossNodes> {
    if lambda < 0.0 {
        return Err(Error::Config("lambda must be nonnegative".into()));
    }
    let feat = FeatureNodes::register(tape, &vars.decoder, features)?;
    let (nll, trace) = nll_nodes(tape, &vars.decoder, &feat, caption)?;
    let mut rec = None;
    let mut total = nll;
    if lambda > 0.0 {
        if let Some(rvars) = &vars.reconstructor {
            let loss = match rvars {
                ReconVars::Global { .. } => {
                    let nodes = global_nodes(tape, rvars, &trace.hidden)?;
                    global_loss_nodes(tape, features, &nodes.states)?
                }
                ReconVars::Local { .. } => {
                    let nodes = local_nodes(tape, rvars, &trace.hidden, features.rows())?;
                    local_loss_nodes(tape, features, &nodes.states)?
                }
            };
            let weighted = tape.scale(loss, lambda);
            total = tape.add(nll, weighted)?;
            rec = Some(loss);
        }
    }
    Ok(SampleLossNodes {
        total,
        nll,
        rec,
        trace,
    })
}

// ── full-model gradient check ────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub dims: DecoderDims,
    /// frame budget of the random sample
    pub frames: usize,
    /// real (unpadded) frames in the random sample
    pub real_frames: usize,
    /// caption length in real tokens
    pub caption_tokens: usize,
    pub lambda: f64,
    /// weight magnitude for the random model; O(1) weights keep gradients
    /// clear of the finite-difference roundoff floor
    pub weight_scale: f64,
    pub step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            dims: DecoderDims {
                vocab: 20,
                embed: 8,
                hidden: 16,
                feature_dim: 10,
            },
            frames: 6,
            real_frames: 4,
            caption_tokens: 5,
            lambda: 1.0,
            weight_scale: 0.7,
            step: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub variant: Variant,
    pub max_rel_error: f64,
    pub param_count: usize,
    pub loss: f64,
}

/// Build a tiny random model and compare its analytic gradients against
/// central finite differences over every parameter.
pub fn model_gradcheck(
    variant: Variant,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(cfg.dims, variant, &mut rng);
    let scale = cfg.weight_scale / 0.08;
    for (_, t) in params.visit_mut() {
        for v in t.data_mut() {
            *v *= scale;
        }
    }
    let d = cfg.dims.feature_dim;
    let raw: Vec<f64> = (0..cfg.real_frames * d)
        .map(|_| rng.gen_range(-1.5..1.5))
        .collect();
    let features = sample_frames(&RawFeatures::new(cfg.real_frames, d, raw)?, cfg.frames)?;
    let mut ids = vec![crate::text::BOS];
    for _ in 0..cfg.caption_tokens {
        ids.push(rng.gen_range(4..cfg.dims.vocab as u32));
    }
    ids.push(crate::text::EOS);
    let caption = TokenSequence::new(ids, cfg.dims.vocab)?;

    let lambda = if variant == Variant::None {
        0.0
    } else {
        cfg.lambda
    };
    let flat = params.flatten();
    let eval = |p: &[f64]| -> Result<LossEval> {
        let mut model = params.clone();
        model.load_flat(p)?;
        let mut tape = Tape::new();
        let vars = model.register(&mut tape);
        let loss = sample_loss_nodes(&mut tape, &vars, &features, &caption, lambda)?.total;
        tape.backward(loss)?;
        let mut grad = Vec::with_capacity(p.len());
        for id in vars.grad_nodes() {
            grad.extend_from_slice(tape.grad_tensor(id).data());
        }
        Ok(LossEval {
            loss: tape.value(loss).scalar_value(),
            grad,
        })
    };
    let base_loss = eval(&flat)?.loss;
    let blocks: Vec<usize> = params.visit().iter().map(|(_, t)| t.numel()).collect();
    let max_rel_error = finite_diff_check(eval, &flat, Some(&blocks), cfg.step)?;
    Ok(GradCheckReport {
        variant,
        max_rel_error,
        param_count: flat.len(),
        loss: base_loss,
    })
}
