//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Nodes are appended in creation order, which is a topological order by
//! construction (an op can only reference ids that already exist), so the
//! backward pass is a single reverse sweep. A tape is built per training
//! batch, consumed by one `backward` call, and dropped; it is single-threaded
//! and must not be shared.

use crate::error::{Error, Result};
use crate::tensor::{masked_log_softmax, masked_softmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Dot(NodeId, NodeId),
    /// matrix [r,c] times vector [c] -> [r]
    MatVec {
        matrix: NodeId,
        vector: NodeId,
    },
    /// [m,k] times [k,n] -> [m,n]
    MatMul {
        lhs: NodeId,
        rhs: NodeId,
    },
    /// matrix [r,c] plus column vector [r] broadcast over columns
    AddColumnBroadcast {
        matrix: NodeId,
        column: NodeId,
    },
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// row vector [k] times matrix [k,n] -> [n]
    VecMat {
        vector: NodeId,
        matrix: NodeId,
    },
    MaskedSoftmax {
        input: NodeId,
    },
    Concat(Vec<NodeId>),
    Slice {
        input: NodeId,
        start: usize,
        len: usize,
    },
    EmbedRow {
        table: NodeId,
        index: usize,
    },
    /// n vectors of length r stacked as the columns of an [r,n] matrix
    StackColumns(Vec<NodeId>),
    /// sum_i weights[i] * vectors[i], gradients flow to both
    WeightedSum {
        weights: NodeId,
        vectors: Vec<NodeId>,
    },
    /// elementwise sum of same-shaped tensors
    Sum(Vec<NodeId>),
    /// -log softmax(logits)[target]; softmax cached for the backward pass
    CrossEntropy {
        logits: NodeId,
        target: usize,
        probs: Vec<f64>,
    },
    /// sqrt(sum((a-b)^2) + eps); eps is folded into the stored value
    Euclidean {
        lhs: NodeId,
        rhs: NodeId,
    },
    Reshape(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    adjoints: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Adjoint of `id` from the last `backward` call; `None` when no gradient
    /// flowed to it (unused nodes keep a zero adjoint by definition).
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.adjoints.get(id.0).and_then(|g| g.as_deref())
    }

    /// Adjoint as a tensor, zeros when no gradient reached the node.
    pub fn grad_tensor(&self, id: NodeId) -> Tensor {
        let shape = self.nodes[id.0].value.shape().to_vec();
        match self.grad(id) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("adjoint shape"),
            None => Tensor::zeros(shape),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Leaf that participates in differentiation (model parameters).
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant (inputs, masks, fixed coefficients).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("operands {:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let grad = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), grad))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let grad = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), grad))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let grad = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), grad))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).expect("scale shape");
        let grad = self.needs(a);
        self.push(value, Op::Scale(a, factor), grad)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("dot", a, b)?;
        let v = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        let grad = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b), grad))
    }

    pub fn matvec(&mut self, matrix: NodeId, vector: NodeId) -> Result<NodeId> {
        let m = self.value(matrix);
        let v = self.value(vector);
        if m.shape().len() != 2 || v.shape().len() != 1 || m.cols() != v.numel() {
            return Err(Error::shape(
                "matvec",
                format!("matrix {:?} vs vector {:?}", m.shape(), v.shape()),
            ));
        }
        let (r, c) = (m.rows(), m.cols());
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = m.row(i);
            let mut acc = 0.0;
            for j in 0..c {
                acc += row[j] * v.data()[j];
            }
            out[i] = acc;
        }
        let grad = self.needs(matrix) || self.needs(vector);
        Ok(self.push(Tensor::vector(out), Op::MatVec { matrix, vector }, grad))
    }

    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
            return Err(Error::shape(
                "matmul",
                format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape()),
            ));
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a.data()[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += av * b.data()[p * n + j];
                }
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        let grad = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(value, Op::MatMul { lhs, rhs }, grad))
    }

    pub fn add_column_broadcast(&mut self, matrix: NodeId, column: NodeId) -> Result<NodeId> {
        let m = self.value(matrix);
        let v = self.value(column);
        if m.shape().len() != 2 || v.shape().len() != 1 || m.rows() != v.numel() {
            return Err(Error::shape(
                "add_column_broadcast",
                format!("matrix {:?} vs column {:?}", m.shape(), v.shape()),
            ));
        }
        let (r, c) = (m.rows(), m.cols());
        let mut out = m.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += v.data()[i];
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        let grad = self.needs(matrix) || self.needs(column);
        Ok(self.push(value, Op::AddColumnBroadcast { matrix, column }, grad))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).expect("tanh shape");
        let grad = self.needs(a);
        self.push(value, Op::Tanh(a), grad)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).expect("sigmoid shape");
        let grad = self.needs(a);
        self.push(value, Op::Sigmoid(a), grad)
    }

    pub fn vecmat(&mut self, vector: NodeId, matrix: NodeId) -> Result<NodeId> {
        let v = self.value(vector);
        let m = self.value(matrix);
        if v.shape().len() != 1 || m.shape().len() != 2 || v.numel() != m.rows() {
            return Err(Error::shape(
                "vecmat",
                format!("vector {:?} vs matrix {:?}", v.shape(), m.shape()),
            ));
        }
        let (k, n) = (m.rows(), m.cols());
        let mut out = vec![0.0; n];
        for i in 0..k {
            let vi = v.data()[i];
            if vi == 0.0 {
                continue;
            }
            for j in 0..n {
                out[j] += vi * m.data()[i * n + j];
            }
        }
        let grad = self.needs(vector) || self.needs(matrix);
        Ok(self.push(Tensor::vector(out), Op::VecMat { vector, matrix }, grad))
    }

    pub fn masked_softmax(&mut self, input: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let x = self.value(input);
        if x.shape().len() != 1 {
            return Err(Error::shape(
                "masked_softmax",
                format!("expected rank-1 input, got {:?}", x.shape()),
            ));
        }
        let probs = masked_softmax(x.data(), mask)?;
        let grad = self.needs(input);
        Ok(self.push(Tensor::vector(probs), Op::MaskedSoftmax { input }, grad))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no parts"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(Error::shape(
                    "concat",
                    format!("expected rank-1 parts, got {:?}", t.shape()),
                ));
            }
            data.extend_from_slice(t.data());
        }
        let grad = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), grad))
    }

    pub fn slice(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(input);
        if t.shape().len() != 1 || start + len > t.numel() {
            return Err(Error::shape(
                "slice",
                format!("range {}..{} of {:?}", start, start + len, t.shape()),
            ));
        }
        let data = t.data()[start..start + len].to_vec();
        let grad = self.needs(input);
        Ok(self.push(Tensor::vector(data), Op::Slice { input, start, len }, grad))
    }

    pub fn embed_row(&mut self, table: NodeId, index: usize) -> Result<NodeId> {
        let t = self.value(table);
        if t.shape().len() != 2 || index >= t.rows() {
            return Err(Error::shape(
                "embed_row",
                format!("row {} of {:?}", index, t.shape()),
            ));
        }
        let data = t.row(index).to_vec();
        let grad = self.needs(table);
        Ok(self.push(Tensor::vector(data), Op::EmbedRow { table, index }, grad))
    }

    pub fn stack_columns(&mut self, vectors: &[NodeId]) -> Result<NodeId> {
        if vectors.is_empty() {
            return Err(Error::shape("stack_columns", "no vectors"));
        }
        let r = self.value(vectors[0]).numel();
        for &v in vectors {
            if self.value(v).shape().len() != 1 || self.value(v).numel() != r {
                return Err(Error::shape(
                    "stack_columns",
                    format!("vector {:?}, expected length {}", self.value(v).shape(), r),
                ));
            }
        }
        let n = vectors.len();
        let mut data = vec![0.0; r * n];
        for (i, &v) in vectors.iter().enumerate() {
            for (j, &x) in self.value(v).data().iter().enumerate() {
                data[j * n + i] = x;
            }
        }
        let value = Tensor::matrix(r, n, data)?;
        let grad = vectors.iter().any(|&v| self.needs(v));
        Ok(self.push(value, Op::StackColumns(vectors.to_vec()), grad))
    }

    pub fn weighted_sum(&mut self, weights: NodeId, vectors: &[NodeId]) -> Result<NodeId> {
        let w = self.value(weights);
        if w.shape().len() != 1 || w.numel() != vectors.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights vs {} vectors", w.numel(), vectors.len()),
            ));
        }
        if vectors.is_empty() {
            return Err(Error::shape("weighted_sum", "no vectors"));
        }
        let d = self.value(vectors[0]).numel();
        let mut out = vec![0.0; d];
        for (i, &v) in vectors.iter().enumerate() {
            let t = self.value(v);
            if t.numel() != d || t.shape().len() != 1 {
                return Err(Error::shape(
                    "weighted_sum",
                    format!("vector {} has shape {:?}, expected [{}]", i, t.shape(), d),
                ));
            }
            let wi = self.value(weights).data()[i];
            for (o, &x) in out.iter_mut().zip(t.data()) {
                *o += wi * x;
            }
        }
        let grad = self.needs(weights) || vectors.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::vector(out),
            Op::WeightedSum {
                weights,
                vectors: vectors.to_vec(),
            },
            grad,
        ))
    }

    /// Mean of same-length vectors as a tape node (uniform weighted sum).
    pub fn mean_vectors(&mut self, vectors: &[NodeId]) -> Result<NodeId> {
        if vectors.is_empty() {
            return Err(Error::EmptySupport);
        }
        let w = self.constant(Tensor::vector(vec![
            1.0 / vectors.len() as f64;
            vectors.len()
        ]));
        self.weighted_sum(w, vectors)
    }

    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("sum", "no parts"));
        }
        let shape = self.value(parts[0]).shape().to_vec();
        let mut data = vec![0.0; self.value(parts[0]).numel()];
        for &p in parts {
            if self.value(p).shape() != shape.as_slice() {
                return Err(Error::shape(
                    "sum",
                    format!("part {:?} vs {:?}", self.value(p).shape(), shape),
                ));
            }
            for (o, &x) in data.iter_mut().zip(self.value(p).data()) {
                *o += x;
            }
        }
        let value = Tensor::new(shape, data)?;
        let grad = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::Sum(parts.to_vec()), grad))
    }

    /// -log P(target) under a softmax over `logits`.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let x = self.value(logits);
        if x.shape().len() != 1 || target >= x.numel() {
            return Err(Error::shape(
                "cross_entropy",
                format!("target {} for logits {:?}", target, x.shape()),
            ));
        }
        let log_probs = masked_log_softmax(x.data(), None)?;
        let probs = masked_softmax(x.data(), None)?;
        let loss = -log_probs[target];
        let grad = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            grad,
        ))
    }

    /// Reinterpret a node's data under a new shape with the same element count.
    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = self.value(input);
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} to {:?}", t.shape(), shape),
            ));
        }
        let value = Tensor::new(shape, t.data().to_vec())?;
        let grad = self.needs(input);
        Ok(self.push(value, Op::Reshape(input), grad))
    }

    /// Euclidean distance with a small epsilon inside the square root so the
    /// gradient stays defined when the operands coincide.
    pub fn euclidean(&mut self, lhs: NodeId, rhs: NodeId, eps: f64) -> Result<NodeId> {
        self.check_same_shape("euclidean", lhs, rhs)?;
        let mut acc = eps;
        for (a, b) in self.value(lhs).data().iter().zip(self.value(rhs).data()) {
            let d = a - b;
            acc += d * d;
        }
        let grad = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(Tensor::scalar(acc.sqrt()), Op::Euclidean { lhs, rhs }, grad))
    }

    /// Reverse sweep from a scalar loss. Nodes are visited in exact reverse
    /// topological order; nodes the loss does not depend on keep a zero
    /// (absent) adjoint.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..n).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(d) = adj[idx].take() else { continue };
            self.propagate(idx, &d, &mut adj);
            adj[idx] = Some(d);
        }
        self.adjoints = adj;
        Ok(())
    }

    fn propagate(&self, idx: usize, d: &[f64], adj: &mut [Option<Vec<f64>>]) {
        // Accumulate `count` values produced by `f(i)` into the adjoint of `id`.
        macro_rules! accum {
            ($id:expr, $count:expr, $f:expr) => {{
                let id: NodeId = $id;
                if self.nodes[id.0].needs_grad {
                    let buf = adj[id.0].get_or_insert_with(|| vec![0.0; $count]);
                    let f = $f;
                    for i in 0..$count {
                        buf[i] += f(i);
                    }
                }
            }};
        }
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accum!(*a, d.len(), |i: usize| d[i]);
                accum!(*b, d.len(), |i: usize| d[i]);
            }
            Op::Sub(a, b) => {
                accum!(*a, d.len(), |i: usize| d[i]);
                accum!(*b, d.len(), |i: usize| -d[i]);
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                accum!(*a, d.len(), |i: usize| d[i] * bv[i]);
                accum!(*b, d.len(), |i: usize| d[i] * av[i]);
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                accum!(*a, d.len(), |i: usize| d[i] * f);
            }
            Op::Dot(a, b) => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                accum!(*a, av.len(), |i: usize| d[0] * bv[i]);
                accum!(*b, bv.len(), |i: usize| d[0] * av[i]);
            }
            Op::MatVec { matrix, vector } => {
                let m = &self.nodes[matrix.0].value;
                let v = self.nodes[vector.0].value.data();
                let (r, c) = (m.rows(), m.cols());
                accum!(*matrix, r * c, |i: usize| d[i / c] * v[i % c]);
                accum!(*vector, c, |j: usize| {
                    let mut acc = 0.0;
                    for i in 0..r {
                        acc += d[i] * m.data()[i * c + j];
                    }
                    acc
                });
            }
            Op::MatMul { lhs, rhs } => {
                let a = &self.nodes[lhs.0].value;
                let b = &self.nodes[rhs.0].value;
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                // dA = d . B^T
                accum!(*lhs, m * k, |i: usize| {
                    let (row, p) = (i / k, i % k);
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += d[row * n + j] * b.data()[p * n + j];
                    }
                    acc
                });
                // dB = A^T . d
                accum!(*rhs, k * n, |i: usize| {
                    let (p, j) = (i / n, i % n);
                    let mut acc = 0.0;
                    for row in 0..m {
                        acc += a.data()[row * k + p] * d[row * n + j];
                    }
                    acc
                });
            }
            Op::AddColumnBroadcast { matrix, column } => {
                let (r, c) = {
                    let m = &self.nodes[matrix.0].value;
                    (m.rows(), m.cols())
                };
                accum!(*matrix, r * c, |i: usize| d[i]);
                accum!(*column, r, |i: usize| {
                    let mut acc = 0.0;
                    for j in 0..c {
                        acc += d[i * c + j];
                    }
                    acc
                });
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.data();
                accum!(*a, d.len(), |i: usize| d[i] * (1.0 - y[i] * y[i]));
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.data();
                accum!(*a, d.len(), |i: usize| d[i] * y[i] * (1.0 - y[i]));
            }
            Op::VecMat { vector, matrix } => {
                let v = self.nodes[vector.0].value.data();
                let m = &self.nodes[matrix.0].value;
                let (k, n) = (m.rows(), m.cols());
                accum!(*vector, k, |i: usize| {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += d[j] * m.data()[i * n + j];
                    }
                    acc
                });
                accum!(*matrix, k * n, |i: usize| v[i / n] * d[i % n]);
            }
            Op::MaskedSoftmax { input } => {
                // masked outputs are exactly 0, so the shared formula zeroes them
                let y = self.nodes[idx].value.data();
                let dot: f64 = d.iter().zip(y).map(|(a, b)| a * b).sum();
                accum!(*input, d.len(), |i: usize| y[i] * (d[i] - dot));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.numel();
                    let base = offset;
                    accum!(p, len, |i: usize| d[base + i]);
                    offset += len;
                }
            }
            Op::Slice { input, start, len } => {
                let (start, len) = (*start, *len);
                let total = self.nodes[input.0].value.numel();
                accum!(*input, total, |i: usize| {
                    if i >= start && i < start + len {
                        d[i - start]
                    } else {
                        0.0
                    }
                });
            }
            Op::EmbedRow { table, index } => {
                let cols = self.nodes[table.0].value.cols();
                let rows = self.nodes[table.0].value.rows();
                let row = *index;
                accum!(*table, rows * cols, |i: usize| {
                    if i / cols == row {
                        d[i % cols]
                    } else {
                        0.0
                    }
                });
            }
            Op::StackColumns(vectors) => {
                let n = vectors.len();
                for (i, &v) in vectors.iter().enumerate() {
                    let r = self.nodes[v.0].value.numel();
                    accum!(v, r, |j: usize| d[j * n + i]);
                }
            }
            Op::WeightedSum { weights, vectors } => {
                let w = self.nodes[weights.0].value.data().to_vec();
                accum!(*weights, vectors.len(), |i: usize| {
                    let v = self.nodes[vectors[i].0].value.data();
                    d.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
                });
                for (i, &v) in vectors.iter().enumerate() {
                    let wi = w[i];
                    accum!(v, d.len(), |j: usize| wi * d[j]);
                }
            }
            Op::Sum(parts) => {
                for &p in parts {
                    accum!(p, d.len(), |i: usize| d[i]);
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let t = *target;
                accum!(*logits, probs.len(), |i: usize| {
                    let onehot = if i == t { 1.0 } else { 0.0 };
                    d[0] * (probs[i] - onehot)
                });
            }
            Op::Euclidean { lhs, rhs } => {
                let y = self.nodes[idx].value.scalar_value();
                let a = self.nodes[lhs.0].value.data();
                let b = self.nodes[rhs.0].value.data();
                accum!(*lhs, a.len(), |i: usize| d[0] * (a[i] - b[i]) / y);
                accum!(*rhs, b.len(), |i: usize| -d[0] * (a[i] - b[i]) / y);
            }
            Op::Reshape(a) => {
                accum!(*a, d.len(), |i: usize| d[i]);
            }
        }
    }
}

/// Recurrent cell state: `memory` is the internal cell, `hidden` the output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub memory: Tensor,
    pub hidden: Tensor,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        LstmState {
            memory: Tensor::zeros(vec![hidden_size]),
            hidden: Tensor::zeros(vec![hidden_size]),
        }
    }
}

/// One LSTM step on the tape. `gate_input` is the full concatenated input to
/// the fused weight block (callers decide the concat order, e.g. whether the
/// previous hidden sits last or in the middle). Gate slices come out in the
/// order input, forget, output, candidate.
pub fn lstm_step_nodes(
    tape: &mut Tape,
    gate_input: NodeId,
    prev_memory: NodeId,
    weights: NodeId,
    bias: NodeId,
) -> Result<(NodeId, NodeId)> {
    let hidden_size = tape.value(prev_memory).numel();
    let in_len = tape.value(gate_input).numel();
    let w_shape = tape.value(weights).shape().to_vec();
    if w_shape != [4 * hidden_size, in_len] {
        return Err(Error::shape(
            "lstm_step",
            format!(
                "weights {:?}, expected [{}, {}] for hidden {} and input {}",
                w_shape,
                4 * hidden_size,
                in_len,
                hidden_size,
                in_len
            ),
        ));
    }
    if tape.value(bias).shape() != [4 * hidden_size] {
        return Err(Error::shape(
            "lstm_step",
            format!(
                "bias {:?}, expected [{}]",
                tape.value(bias).shape(),
                4 * hidden_size
            ),
        ));
    }
    let wx = tape.matvec(weights, gate_input)?;
    let pre = tape.add(wx, bias)?;
    let i_raw = tape.slice(pre, 0, hidden_size)?;
    let f_raw = tape.slice(pre, hidden_size, hidden_size)?;
    let o_raw = tape.slice(pre, 2 * hidden_size, hidden_size)?;
    let g_raw = tape.slice(pre, 3 * hidden_size, hidden_size)?;
    let gate_in = tape.sigmoid(i_raw);
    let gate_forget = tape.sigmoid(f_raw);
    let gate_out = tape.sigmoid(o_raw);
    let candidate = tape.tanh(g_raw);
    let keep = tape.mul(gate_forget, prev_memory)?;
    let write = tape.mul(gate_in, candidate)?;
    let memory = tape.add(keep, write)?;
    let mem_act = tape.tanh(memory);
    let hidden = tape.mul(gate_out, mem_act)?;
    Ok((memory, hidden))
}

/// Plain-tensor LSTM step: gates from the concatenation of `input` and the
/// previous hidden, through the same tape computation the models use.
pub fn lstm_step(
    input: &Tensor,
    prev: &LstmState,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<LstmState> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let h_prev = tape.constant(prev.hidden.clone());
    let m_prev = tape.constant(prev.memory.clone());
    let w = tape.constant(weights.clone());
    let b = tape.constant(bias.clone());
    let gate_input = tape.concat(&[x, h_prev])?;
    let (memory, hidden) = lstm_step_nodes(&mut tape, gate_input, m_prev, w, b)?;
    Ok(LstmState {
        memory: tape.value(memory).clone(),
        hidden: tape.value(hidden).clone(),
    })
}
