//! Reconstructors: reproduce frame features from decoder hidden states.
//!
//! The global variant feeds every step the current hidden state, its own
//! previous state, and the mean-pooled caption summary, then matches pooled
//! representations. The local variant attends over the decoder hidden states
//! with its previous state as query and reproduces features frame by frame.
//! Reconstructor hidden size equals the feature dimension so states compare
//! directly to frames. Neither variant runs at inference.

use crate::decoder::DecoderTrace;
use crate::error::{Error, Result};
use crate::features::FrameFeatureSequence;
use crate::tape::{lstm_step_nodes, NodeId, Tape};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Numerical floor inside the Euclidean square root; keeps the gradient
/// defined when reconstruction and target coincide.
pub const DIST_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    None,
    Global,
    Local,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::None => "none",
            Variant::Global => "global",
            Variant::Local => "local",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "none" => Ok(Variant::None),
            "global" => Ok(Variant::Global),
            "local" => Ok(Variant::Local),
            other => Err(Error::Config(format!(
                "unknown reconstructor variant {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalParams {
    /// 4*dim x (hidden + dim + hidden): gates over [h_t; z_prev; summary]
    pub lstm_weights: Tensor,
    pub lstm_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalParams {
    /// 4*dim x (hidden + dim): gates over [context; z_prev]
    pub lstm_weights: Tensor,
    pub lstm_bias: Tensor,
    pub attn_state: Tensor,  // hidden x dim, projects the z_prev query
    pub attn_hidden: Tensor, // hidden x hidden, projects each decoder state
    pub attn_bias: Tensor,   // hidden
    pub attn_score: Tensor,  // hidden
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReconstructorParams {
    Global(GlobalParams),
    Local(LocalParams),
}

fn uniform(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-0.08..0.08)).collect();
    Tensor::new(shape, data).expect("init shape")
}

impl ReconstructorParams {
    /// Fresh parameters, uniform in [-0.08, 0.08]. `hidden` is the decoder
    /// hidden size, `dim` the frame feature dimension.
    pub fn init(variant: Variant, hidden: usize, dim: usize, rng: &mut impl Rng) -> Option<Self> {
        match variant {
            Variant::None => None,
            Variant::Global => Some(ReconstructorParams::Global(GlobalParams {
                lstm_weights: uniform(rng, vec![4 * dim, 2 * hidden + dim]),
                lstm_bias: uniform(rng, vec![4 * dim]),
            })),
            Variant::Local => Some(ReconstructorParams::Local(LocalParams {
                lstm_weights: uniform(rng, vec![4 * dim, hidden + dim]),
                lstm_bias: uniform(rng, vec![4 * dim]),
                attn_state: uniform(rng, vec![hidden, dim]),
                attn_hidden: uniform(rng, vec![hidden, hidden]),
                attn_bias: uniform(rng, vec![hidden]),
                attn_score: uniform(rng, vec![hidden]),
            })),
        }
    }

    pub fn variant(&self) -> Variant {
        match self {
            ReconstructorParams::Global(_) => Variant::Global,
            ReconstructorParams::Local(_) => Variant::Local,
        }
    }

    /// Reconstructor state size (equals the feature dimension).
    pub fn state_dim(&self) -> usize {
        match self {
            ReconstructorParams::Global(g) => g.lstm_weights.rows() / 4,
            ReconstructorParams::Local(l) => l.lstm_weights.rows() / 4,
        }
    }

    pub fn visit(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            ReconstructorParams::Global(g) => vec![
                ("recon.lstm_weights", &g.lstm_weights),
                ("recon.lstm_bias", &g.lstm_bias),
            ],
            ReconstructorParams::Local(l) => vec![
                ("recon.lstm_weights", &l.lstm_weights),
                ("recon.lstm_bias", &l.lstm_bias),
                ("recon.attn_state", &l.attn_state),
                ("recon.attn_hidden", &l.attn_hidden),
                ("recon.attn_bias", &l.attn_bias),
                ("recon.attn_score", &l.attn_score),
            ],
        }
    }

    pub fn visit_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            ReconstructorParams::Global(g) => vec![
                ("recon.lstm_weights", &mut g.lstm_weights),
                ("recon.lstm_bias", &mut g.lstm_bias),
            ],
            ReconstructorParams::Local(l) => vec![
                ("recon.lstm_weights", &mut l.lstm_weights),
                ("recon.lstm_bias", &mut l.lstm_bias),
                ("recon.attn_state", &mut l.attn_state),
                ("recon.attn_hidden", &mut l.attn_hidden),
                ("recon.attn_bias", &mut l.attn_bias),
                ("recon.attn_score", &mut l.attn_score),
            ],
        }
    }

    pub fn register(&self, tape: &mut Tape) -> ReconVars {
        match self {
            ReconstructorParams::Global(g) => ReconVars::Global {
                lstm_weights: tape.param(g.lstm_weights.clone()),
                lstm_bias: tape.param(g.lstm_bias.clone()),
                dim: self.state_dim(),
            },
            ReconstructorParams::Local(l) => ReconVars::Local {
                lstm_weights: tape.param(l.lstm_weights.clone()),
                lstm_bias: tape.param(l.lstm_bias.clone()),
                attn_state: tape.param(l.attn_state.clone()),
                attn_hidden: tape.param(l.attn_hidden.clone()),
                attn_bias: tape.param(l.attn_bias.clone()),
                attn_score: tape.param(l.attn_score.clone()),
                dim: self.state_dim(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ReconVars {
    Global {
        lstm_weights: NodeId,
        lstm_bias: NodeId,
        dim: usize,
    },
    Local {
        lstm_weights: NodeId,
        lstm_bias: NodeId,
        attn_state: NodeId,
        attn_hidden: NodeId,
        attn_bias: NodeId,
        attn_score: NodeId,
        dim: usize,
    },
}

impl ReconVars {
    pub fn grad_nodes(&self) -> Vec<NodeId> {
        match self {
            ReconVars::Global {
                lstm_weights,
                lstm_bias,
                ..
            } => vec![*lstm_weights, *lstm_bias],
            ReconVars::Local {
                lstm_weights,
                lstm_bias,
                attn_state,
                attn_hidden,
                attn_bias,
                attn_score,
                ..
            } => vec![
                *lstm_weights,
                *lstm_bias,
                *attn_state,
                *attn_hidden,
                *attn_bias,
                *attn_score,
            ],
        }
    }
}

/// Node-level reconstruction outputs.
pub struct ReconNodes {
    pub states: Vec<NodeId>,
    pub attention: Option<Vec<NodeId>>,
    pub contexts: Option<Vec<NodeId>>,
    pub summary: Option<NodeId>,
}

/// Global recurrence: one step per decoder hidden state, each consuming
/// [h_t; z_prev; mean(H)] with the summary computed once.
pub fn global_nodes(tape: &mut Tape, vars: &ReconVars, hidden: &[NodeId]) -> Result<ReconNodes> {
    let ReconVars::Global {
        lstm_weights,
        lstm_bias,
        dim,
    } = *vars
    else {
        return Err(Error::Config(
            "global reconstruction needs global parameters".into(),
        ));
    };
    if hidden.is_empty() {
        return Err(Error::EmptySupport);
    }
    let summary = tape.mean_vectors(hidden)?;
    let mut memory = tape.constant(Tensor::zeros(vec![dim]));
    let mut state = tape.constant(Tensor::zeros(vec![dim]));
    let mut states = Vec::with_capacity(hidden.len());
    for &h in hidden {
        let gate_input = tape.concat(&[h, state, summary])?;
        let (m, z) = lstm_step_nodes(tape, gate_input, memory, lstm_weights, lstm_bias)?;
        memory = m;
        state = z;
        states.push(z);
    }
    Ok(ReconNodes {
        states,
        attention: None,
        contexts: None,
        summary: Some(summary),
    })
}

/// Local recurrence: one step per frame slot; each step attends over the
/// decoder hidden states with z_prev as query and consumes [context; z_prev].
pub fn local_nodes(
    tape: &mut Tape,
    vars: &ReconVars,
    hidden: &[NodeId],
    frame_budget: usize,
) -> Result<ReconNodes> {
    let ReconVars::Local {
        lstm_weights,
        lstm_bias,
        attn_state,
        attn_hidden,
        attn_bias,
        attn_score,
        dim,
    } = *vars
    else {
        return Err(Error::Config(
            "local reconstruction needs local parameters".into(),
        ));
    };
    if hidden.is_empty() {
        return Err(Error::EmptySupport);
    }
    if frame_budget == 0 {
        return Err(Error::Config("frame budget must be positive".into()));
    }
    let stacked = tape.stack_columns(hidden)?;
    let scores_base = tape.matmul(attn_hidden, stacked)?;
    let mut memory = tape.constant(Tensor::zeros(vec![dim]));
    let mut state = tape.constant(Tensor::zeros(vec![dim]));
    let mut states = Vec::with_capacity(frame_budget);
    let mut attention = Vec::with_capacity(frame_budget);
    let mut contexts = Vec::with_capacity(frame_budget);
    for _ in 0..frame_budget {
        let query = tape.matvec(attn_state, state)?;
        let query = tape.add(query, attn_bias)?;
        let pre = tape.add_column_broadcast(scores_base, query)?;
        let act = tape.tanh(pre);
        let scores = tape.vecmat(attn_score, act)?;
        let weights = tape.masked_softmax(scores, None)?;
        let context = tape.weighted_sum(weights, hidden)?;
        let gate_input = tape.concat(&[context, state])?;
        let (m, z) = lstm_step_nodes(tape, gate_input, memory, lstm_weights, lstm_bias)?;
        memory = m;
        state = z;
        states.push(z);
        attention.push(weights);
        contexts.push(context);
    }
    Ok(ReconNodes {
        states,
        attention: Some(attention),
        contexts: Some(contexts),
        summary: None,
    })
}

/// Pooled distance: || mean of live frames - mean of reconstructed states ||.
pub fn global_loss_nodes(
    tape: &mut Tape,
    features: &FrameFeatureSequence,
    states: &[NodeId],
) -> Result<NodeId> {
    let target = mean_pool_rows(features)?;
    let target = tape.constant(target);
    let pooled = tape.mean_vectors(states)?;
    tape.euclidean(target, pooled, DIST_EPS)
}

/// Mean per-frame distance over the unpadded slots only.
pub fn local_loss_nodes(
    tape: &mut Tape,
    features: &FrameFeatureSequence,
    states: &[NodeId],
) -> Result<NodeId> {
    if states.len() != features.rows() {
        return Err(Error::shape(
            "local_loss",
            format!(
                "{} states for {} frame slots",
                states.len(),
                features.rows()
            ),
        ));
    }
    let live = features.true_length();
    let mut terms = Vec::with_capacity(live);
    for j in 0..live {
        let frame = tape.constant(Tensor::vector(features.frame(j).to_vec()));
        terms.push(tape.euclidean(states[j], frame, DIST_EPS)?);
    }
    let total = tape.sum(&terms)?;
    Ok(tape.scale(total, 1.0 / live as f64))
}

// ── plain-tensor interface ───────────────────────────────────────────────

/// Arithmetic mean of equally sized vectors, masked entries excluded.
pub fn mean_pool(vectors: &[Tensor], mask: Option<&[bool]>) -> Result<Tensor> {
    if let Some(m) = mask {
        if m.len() != vectors.len() {
            return Err(Error::shape(
                "mean_pool",
                format!("mask length {} vs {} vectors", m.len(), vectors.len()),
            ));
        }
    }
    let live = |i: usize| mask.is_none_or(|m| m[i]);
    let mut count = 0usize;
    let mut acc: Option<Vec<f64>> = None;
    for (i, v) in vectors.iter().enumerate() {
        if !live(i) {
            continue;
        }
        match &mut acc {
            None => acc = Some(v.data().to_vec()),
            Some(a) => {
                if a.len() != v.numel() {
                    return Err(Error::shape(
                        "mean_pool",
                        format!(
                            "vector {} has {} values, expected {}",
                            i,
                            v.numel(),
                            a.len()
                        ),
                    ));
                }
                for (x, y) in a.iter_mut().zip(v.data()) {
                    *x += y;
                }
            }
        }
        count += 1;
    }
    let Some(mut a) = acc else {
        return Err(Error::EmptySupport);
    };
    for x in &mut a {
        *x /= count as f64;
    }
    Ok(Tensor::vector(a))
}

fn mean_pool_rows(features: &FrameFeatureSequence) -> Result<Tensor> {
    let rows: Vec<Tensor> = (0..features.rows())
        .map(|i| Tensor::vector(features.frame(i).to_vec()))
        .collect();
    mean_pool(&rows, Some(features.mask()))
}

/// The distance function shared by both losses: sqrt(sum((a-b)^2) + eps).
pub fn distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "distance",
            format!("{} vs {} values", a.len(), b.len()),
        ));
    }
    let mut acc = DIST_EPS;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Value-level reconstruction outputs.
#[derive(Debug, Clone)]
pub struct ReconstructionTrace {
    pub states: Vec<Tensor>,
    /// local: one weight row over the decoder states per frame slot
    pub attention: Option<Vec<Vec<f64>>>,
    /// local: the mixed decoder-state context per frame slot
    pub contexts: Option<Vec<Tensor>>,
    /// global: the caption summary
    pub summary: Option<Tensor>,
}

impl ReconstructionTrace {
    pub(crate) fn from_nodes(tape: &Tape, nodes: &ReconNodes) -> ReconstructionTrace {
        ReconstructionTrace {
            states: nodes
                .states
                .iter()
                .map(|&n| tape.value(n).clone())
                .collect(),
            attention: nodes
                .attention
                .as_ref()
                .map(|a| a.iter().map(|&n| tape.value(n).data().to_vec()).collect()),
            contexts: nodes
                .contexts
                .as_ref()
                .map(|c| c.iter().map(|&n| tape.value(n).clone()).collect()),
            summary: nodes.summary.map(|n| tape.value(n).clone()),
        }
    }
}

fn run_on_scratch_tape(
    trace: &DecoderTrace,
    params: &ReconstructorParams,
    build: impl FnOnce(&mut Tape, &ReconVars, &[NodeId]) -> Result<ReconNodes>,
) -> Result<ReconstructionTrace> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let hidden: Vec<NodeId> = trace
        .hidden
        .iter()
        .map(|h| tape.constant(h.clone()))
        .collect();
    let nodes = build(&mut tape, &vars, &hidden)?;
    Ok(ReconstructionTrace::from_nodes(&tape, &nodes))
}

pub fn reconstruct_global(
    trace: &DecoderTrace,
    params: &ReconstructorParams,
) -> Result<ReconstructionTrace> {
    run_on_scratch_tape(trace, params, global_nodes)
}

pub fn reconstruct_local(
    trace: &DecoderTrace,
    frame_budget: usize,
    params: &ReconstructorParams,
) -> Result<ReconstructionTrace> {
    run_on_scratch_tape(trace, params, |tape, vars, hidden| {
        local_nodes(tape, vars, hidden, frame_budget)
    })
}

/// Distance between the pooled video features and the pooled reconstruction.
pub fn global_loss(features: &FrameFeatureSequence, rec: &ReconstructionTrace) -> Result<f64> {
    let target = mean_pool_rows(features)?;
    let pooled = mean_pool(&rec.states, None)?;
    distance(target.data(), pooled.data())
}

/// Mean distance between reconstructed states and the unpadded frames.
pub fn local_loss(features: &FrameFeatureSequence, rec: &ReconstructionTrace) -> Result<f64> {
    if rec.states.len() != features.rows() {
        return Err(Error::shape(
            "local_loss",
            format!(
                "{} states for {} frame slots",
                rec.states.len(),
                features.rows()
            ),
        ));
    }
    let live = features.true_length();
    let mut acc = 0.0;
    for j in 0..live {
        acc += distance(rec.states[j].data(), features.frame(j))?;
    }
    Ok(acc / live as f64)
}
