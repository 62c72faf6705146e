//! Attention LSTM decoder: temporal attention over frame features, word-by-
//! word LSTM decoding, teacher-forced NLL, and greedy/beam inference.
//!
//! Per step the decoder queries the frame features with its previous hidden
//! state through an additive score, mixes the frames into a context vector,
//! consumes the previous word embedding concatenated with that context, and
//! projects the new hidden state to vocabulary logits.

use crate::error::{Error, Result};
use crate::features::FrameFeatureSequence;
use crate::tape::{lstm_step_nodes, LstmState, NodeId, Tape};
use crate::tensor::{masked_log_softmax, Tensor};
use crate::text::{TokenSequence, BOS, EOS, PAD};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub feature_dim: usize,
}

/// All trainable decoder parameters. The attention space has the same width
/// as the hidden layer; embedding row 0 (PAD) stays pinned at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub embedding: Tensor,    // vocab x embed
    pub lstm_weights: Tensor, // 4*hidden x (embed + feature_dim + hidden)
    pub lstm_bias: Tensor,    // 4*hidden
    pub attn_hidden: Tensor,  // hidden x hidden, projects the query state
    pub attn_feature: Tensor, // hidden x feature_dim, projects each frame
    pub attn_bias: Tensor,    // hidden
    pub attn_score: Tensor,   // hidden
    pub proj_weights: Tensor, // vocab x hidden
    pub proj_bias: Tensor,    // vocab
}

fn uniform(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-0.08..0.08)).collect();
    Tensor::new(shape, data).expect("init shape")
}

impl DecoderParams {
    pub fn init(dims: DecoderDims, rng: &mut impl Rng) -> DecoderParams {
        let DecoderDims {
            vocab,
            embed,
            hidden,
            feature_dim,
        } = dims;
        let mut embedding = uniform(rng, vec![vocab, embed]);
        embedding.data_mut()[..embed].fill(0.0); // PAD row
        DecoderParams {
            embedding,
            lstm_weights: uniform(rng, vec![4 * hidden, embed + feature_dim + hidden]),
            lstm_bias: uniform(rng, vec![4 * hidden]),
            attn_hidden: uniform(rng, vec![hidden, hidden]),
            attn_feature: uniform(rng, vec![hidden, feature_dim]),
            attn_bias: uniform(rng, vec![hidden]),
            attn_score: uniform(rng, vec![hidden]),
            proj_weights: uniform(rng, vec![vocab, hidden]),
            proj_bias: uniform(rng, vec![vocab]),
        }
    }

    pub fn dims(&self) -> DecoderDims {
        DecoderDims {
            vocab: self.embedding.rows(),
            embed: self.embedding.cols(),
            hidden: self.attn_hidden.rows(),
            feature_dim: self.attn_feature.cols(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    /// Parameters in canonical (serialization and optimizer) order.
    pub fn visit(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("decoder.embedding", &self.embedding),
            ("decoder.lstm_weights", &self.lstm_weights),
            ("decoder.lstm_bias", &self.lstm_bias),
            ("decoder.attn_hidden", &self.attn_hidden),
            ("decoder.attn_feature", &self.attn_feature),
            ("decoder.attn_bias", &self.attn_bias),
            ("decoder.attn_score", &self.attn_score),
            ("decoder.proj_weights", &self.proj_weights),
            ("decoder.proj_bias", &self.proj_bias),
        ]
    }

    pub fn visit_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("decoder.embedding", &mut self.embedding),
            ("decoder.lstm_weights", &mut self.lstm_weights),
            ("decoder.lstm_bias", &mut self.lstm_bias),
            ("decoder.attn_hidden", &mut self.attn_hidden),
            ("decoder.attn_feature", &mut self.attn_feature),
            ("decoder.attn_bias", &mut self.attn_bias),
            ("decoder.attn_score", &mut self.attn_score),
            ("decoder.proj_weights", &mut self.proj_weights),
            ("decoder.proj_bias", &mut self.proj_bias),
        ]
    }

    pub fn register(&self, tape: &mut Tape) -> DecoderVars {
        DecoderVars {
            embedding: tape.param(self.embedding.clone()),
            lstm_weights: tape.param(self.lstm_weights.clone()),
            lstm_bias: tape.param(self.lstm_bias.clone()),
            attn_hidden: tape.param(self.attn_hidden.clone()),
            attn_feature: tape.param(self.attn_feature.clone()),
            attn_bias: tape.param(self.attn_bias.clone()),
            attn_score: tape.param(self.attn_score.clone()),
            proj_weights: tape.param(self.proj_weights.clone()),
            proj_bias: tape.param(self.proj_bias.clone()),
            vocab: self.vocab_size(),
            hidden: self.attn_hidden.rows(),
        }
    }
}

/// Tape registration of the decoder parameters.
#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub embedding: NodeId,
    pub lstm_weights: NodeId,
    pub lstm_bias: NodeId,
    pub attn_hidden: NodeId,
    pub attn_feature: NodeId,
    pub attn_bias: NodeId,
    pub attn_score: NodeId,
    pub proj_weights: NodeId,
    pub proj_bias: NodeId,
    vocab: usize,
    hidden: usize,
}

impl DecoderVars {
    pub fn grad_nodes(&self) -> [NodeId; 9] {
        [
            self.embedding,
            self.lstm_weights,
            self.lstm_bias,
            self.attn_hidden,
            self.attn_feature,
            self.attn_bias,
            self.attn_score,
            self.proj_weights,
            self.proj_bias,
        ]
    }
}

/// One sample's frame features as tape constants, with the frame projection
/// hoisted out of the per-step loop (it does not depend on the query).
pub struct FeatureNodes {
    pub matrix: NodeId,
    scores_base: NodeId, // attn_feature . features^T, hidden x frames
    mask: Vec<bool>,
}

impl FeatureNodes {
    pub fn register(
        tape: &mut Tape,
        vars: &DecoderVars,
        features: &FrameFeatureSequence,
    ) -> Result<FeatureNodes> {
        let expected = tape.value(vars.attn_feature).cols();
        if features.dim() != expected {
            return Err(Error::Data(format!(
                "feature dim {} does not match model feature dim {}",
                features.dim(),
                expected
            )));
        }
        if features.true_length() == 0 {
            return Err(Error::EmptySupport);
        }
        let matrix = tape.constant(features.matrix());
        let transposed = tape.constant(features.matrix().transposed());
        let scores_base = tape.matmul(vars.attn_feature, transposed)?;
        Ok(FeatureNodes {
            matrix,
            scores_base,
            mask: features.mask().to_vec(),
        })
    }
}

/// Additive temporal attention: score each frame against the previous hidden
/// state, normalize over unpadded frames, and mix the frames.
pub fn attention_nodes(
    tape: &mut Tape,
    vars: &DecoderVars,
    feat: &FeatureNodes,
    prev_hidden: NodeId,
) -> Result<(NodeId, NodeId)> {
    let query = tape.matvec(vars.attn_hidden, prev_hidden)?;
    let query = tape.add(query, vars.attn_bias)?;
    let pre = tape.add_column_broadcast(feat.scores_base, query)?;
    let act = tape.tanh(pre);
    let scores = tape.vecmat(vars.attn_score, act)?;
    let weights = tape.masked_softmax(scores, Some(&feat.mask))?;
    let context = tape.vecmat(weights, feat.matrix)?;
    Ok((context, weights))
}

pub struct StepNodes {
    pub logits: NodeId,
    pub memory: NodeId,
    pub hidden: NodeId,
    pub context: NodeId,
    pub attention: NodeId,
}

/// One decode step on the tape: embed the previous word, attend, run the
/// LSTM on [embedding; context; previous hidden], project to logits.
pub fn decode_step_nodes(
    tape: &mut Tape,
    vars: &DecoderVars,
    feat: &FeatureNodes,
    prev_token: u32,
    prev_memory: NodeId,
    prev_hidden: NodeId,
) -> Result<StepNodes> {
    if prev_token as usize >= vars.vocab {
        return Err(Error::TokenOutOfRange {
            id: prev_token,
            vocab: vars.vocab,
        });
    }
    let embedded = tape.embed_row(vars.embedding, prev_token as usize)?;
    let (context, attention) = attention_nodes(tape, vars, feat, prev_hidden)?;
    let gate_input = tape.concat(&[embedded, context, prev_hidden])?;
    let (memory, hidden) = lstm_step_nodes(
        tape,
        gate_input,
        prev_memory,
        vars.lstm_weights,
        vars.lstm_bias,
    )?;
    let projected = tape.matvec(vars.proj_weights, hidden)?;
    let logits = tape.add(projected, vars.proj_bias)?;
    Ok(StepNodes {
        logits,
        memory,
        hidden,
        context,
        attention,
    })
}

/// Node-level decode trace; the hidden nodes feed the reconstructor so its
/// loss reaches the decoder parameters through them.
pub struct TraceNodes {
    pub hidden: Vec<NodeId>,
    pub contexts: Vec<NodeId>,
    pub attention: Vec<NodeId>,
    pub logits: Vec<NodeId>,
}

/// Teacher-forced NLL over one caption as a tape node, plus the trace.
pub fn nll_nodes(
    tape: &mut Tape,
    vars: &DecoderVars,
    feat: &FeatureNodes,
    caption: &TokenSequence,
) -> Result<(NodeId, TraceNodes)> {
    let ids = caption.ids();
    let hidden_size = vars.hidden;
    let mut memory = tape.constant(Tensor::zeros(vec![hidden_size]));
    let mut hidden = tape.constant(Tensor::zeros(vec![hidden_size]));
    let mut trace = TraceNodes {
        hidden: Vec::with_capacity(ids.len() - 1),
        contexts: Vec::with_capacity(ids.len() - 1),
        attention: Vec::with_capacity(ids.len() - 1),
        logits: Vec::with_capacity(ids.len() - 1),
    };
    let mut losses = Vec::with_capacity(ids.len() - 1);
    for t in 1..ids.len() {
        let step = decode_step_nodes(tape, vars, feat, ids[t - 1], memory, hidden)?;
        losses.push(tape.cross_entropy(step.logits, ids[t] as usize)?);
        memory = step.memory;
        hidden = step.hidden;
        trace.hidden.push(step.hidden);
        trace.contexts.push(step.context);
        trace.attention.push(step.attention);
        trace.logits.push(step.logits);
    }
    let nll = tape.sum(&losses)?;
    Ok((nll, trace))
}

/// Value-level decode trace.
#[derive(Debug, Clone)]
pub struct DecoderTrace {
    pub hidden: Vec<Tensor>,
    pub contexts: Vec<Tensor>,
    pub attention: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

impl DecoderTrace {
    pub(crate) fn from_nodes(tape: &Tape, nodes: &TraceNodes) -> DecoderTrace {
        DecoderTrace {
            hidden: nodes
                .hidden
                .iter()
                .map(|&n| tape.value(n).clone())
                .collect(),
            contexts: nodes
                .contexts
                .iter()
                .map(|&n| tape.value(n).clone())
                .collect(),
            attention: nodes
                .attention
                .iter()
                .map(|&n| tape.value(n).data().to_vec())
                .collect(),
            logits: nodes
                .logits
                .iter()
                .map(|&n| tape.value(n).data().to_vec())
                .collect(),
        }
    }
}

/// Sum of -log P(token) over every position after BOS, including EOS.
pub fn teacher_forced_nll(
    params: &DecoderParams,
    features: &FrameFeatureSequence,
    caption: &TokenSequence,
) -> Result<(f64, DecoderTrace)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let feat = FeatureNodes::register(&mut tape, &vars, features)?;
    let (nll, trace) = nll_nodes(&mut tape, &vars, &feat, caption)?;
    Ok((
        tape.value(nll).scalar_value(),
        DecoderTrace::from_nodes(&tape, &trace),
    ))
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Tensor,
    pub state: LstmState,
    pub context: Tensor,
    pub attention: Vec<f64>,
}

/// Pure single-step decode on a scratch tape; the building block of
/// [`beam_search`].
pub fn decode_step(
    prev_token: u32,
    state: &LstmState,
    features: &FrameFeatureSequence,
    params: &DecoderParams,
) -> Result<StepOutput> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let feat = FeatureNodes::register(&mut tape, &vars, features)?;
    let memory = tape.constant(state.memory.clone());
    let hidden = tape.constant(state.hidden.clone());
    let step = decode_step_nodes(&mut tape, &vars, &feat, prev_token, memory, hidden)?;
    Ok(StepOutput {
        logits: tape.value(step.logits).clone(),
        state: LstmState {
            memory: tape.value(step.memory).clone(),
            hidden: tape.value(step.hidden).clone(),
        },
        context: tape.value(step.context).clone(),
        attention: tape.value(step.attention).data().to_vec(),
    })
}

/// Convenience wrapper matching the attention contract on plain tensors.
pub fn attention_context(
    prev_hidden: &Tensor,
    features: &FrameFeatureSequence,
    params: &DecoderParams,
) -> Result<(Tensor, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let feat = FeatureNodes::register(&mut tape, &vars, features)?;
    let hidden = tape.constant(prev_hidden.clone());
    let (ctx, weights) = attention_nodes(&mut tape, &vars, &feat, hidden)?;
    Ok((tape.value(ctx).clone(), tape.value(weights).data().to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamOptions {
    pub beam: usize,
    pub max_len: usize,
    /// Divide final hypothesis scores by their length when picking the
    /// winner. Off by default; raw sum of log-probabilities otherwise.
    pub length_normalize: bool,
}

impl Default for BeamOptions {
    fn default() -> Self {
        BeamOptions {
            beam: 5,
            max_len: 30,
            length_normalize: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<u32>,
    score: f64,
    state: LstmState,
    prev: u32,
}

impl Hypothesis {
    fn final_score(&self, normalize: bool) -> f64 {
        if normalize {
            self.score / self.tokens.len().max(1) as f64
        } else {
            self.score
        }
    }
}

/// score desc, then token ids lexicographically asc (lower id wins ties)
fn rank(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Breadth-limited best-first decode. PAD and BOS never appear as candidates;
/// a hypothesis finishes at EOS or at `max_len` generated tokens. The best
/// finished hypothesis is returned as BOS .. EOS ids (EOS appended unscored
/// when the length cap hit first).
pub fn beam_search(
    params: &DecoderParams,
    features: &FrameFeatureSequence,
    opts: &BeamOptions,
) -> Result<TokenSequence> {
    if opts.beam == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let vocab = params.vocab_size();
    let hidden = params.attn_hidden.rows();
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        state: LstmState::zeros(hidden),
        prev: BOS,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..opts.max_len {
        if live.is_empty() {
            break;
        }
        let mut expansions = Vec::new();
        for hyp in &live {
            let out = decode_step(hyp.prev, &hyp.state, features, params)?;
            let log_probs = masked_log_softmax(out.logits.data(), None)?;
            for token in 0..vocab as u32 {
                if token == PAD || token == BOS {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(token);
                expansions.push(Hypothesis {
                    tokens,
                    score: hyp.score + log_probs[token as usize],
                    state: out.state.clone(),
                    prev: token,
                });
            }
        }
        expansions.sort_by(rank);
        live = Vec::with_capacity(opts.beam);
        // the top `beam` expansions survive; EOS ones among them finish
        for e in expansions.into_iter().take(opts.beam) {
            if e.prev == EOS {
                finished.push(e);
            } else {
                live.push(e);
            }
        }
    }
    finished.extend(live); // length-capped hypotheses compete too

    let best = finished
        .into_iter()
        .min_by(|a, b| {
            b.final_score(opts.length_normalize)
                .total_cmp(&a.final_score(opts.length_normalize))
                .then_with(|| a.tokens.cmp(&b.tokens))
        })
        .ok_or(Error::EmptySupport)?;

    let mut ids = vec![BOS];
    ids.extend(&best.tokens);
    if *ids.last().unwrap() != EOS {
        ids.push(EOS);
    }
    TokenSequence::new(ids, vocab)
}
