//! Append-only tape of differentiable operations with eager forward
//! evaluation and reverse-mode backward.
//!
//! Every value in the system — embeddings, belief distributions, rule
//! truthiness — is a node on a tape. Nodes hold `Vec<f64>` values; a
//! scalar is a vector of length 1. Inputs always reference earlier nodes,
//! so the tape is topologically ordered by construction and backward is a
//! single reverse scan.
//!
//! All arithmetic is 64-bit. Evaluation is deterministic: the same build
//! sequence over the same inputs produces bit-identical values and
//! adjoints.

use std::collections::HashMap;

use thiserror::Error;

use super::params::{GradientSet, ParamId, ParameterStore};

/// Ordinal of a node on a tape. Valid iff it is below the tape length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Constant,
    Parameter(ParamId),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Dot,
    CosineSimilarity,
    Softmax,
    MaxReduce,
    Clamp { lo: f64, hi: f64 },
    StopGradient,
    SumReduce,
    /// Concatenates its inputs into one vector.
    Stack,
    /// Reads one component of a vector input.
    Index(usize),
    /// Row-major matrix (first input, rows*cols) times vector (second, cols).
    MatVec { rows: usize, cols: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Parameter(_) => "parameter",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Dot => "dot",
            Op::CosineSimilarity => "cosine_similarity",
            Op::Softmax => "softmax",
            Op::MaxReduce => "max_reduce",
            Op::Clamp { .. } => "clamp",
            Op::StopGradient => "stop_gradient",
            Op::SumReduce => "sum_reduce",
            Op::Stack => "stack",
            Op::Index(_) => "index",
            Op::MatVec { .. } => "matvec",
        }
    }
}

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("node #{0} is out of range (tape has {1} nodes)")]
    InvalidNode(usize, usize),
    #[error("{op}: operand shapes {left} and {right} are incompatible")]
    ShapeMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: domain error on value {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got a vector of length {0}")]
    NonScalarLoss(usize),
    #[error("index {index} out of bounds for vector of length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("stop-gradient override {slot} has length {got}, expected {expected}")]
    OverrideShape {
        slot: usize,
        got: usize,
        expected: usize,
    },
    #[error("builder emitted more stop_gradient nodes than overrides provided ({0})")]
    OverrideExhausted(usize),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Vec<f64>,
}

/// Append-only record of operations with cached forward values.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, NodeId)>,
    param_cache: HashMap<ParamId, NodeId>,
    sg_overrides: Option<Vec<Vec<f64>>>,
    sg_emitted: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replay mode for finite differencing: the k-th `stop_gradient` node
    /// emitted takes the k-th override value instead of its input, so the
    /// perturbed forward pass treats gradient-stopped subterms as
    /// constants — the function backward actually differentiates.
    pub fn with_stop_gradient_overrides(overrides: Vec<Vec<f64>>) -> Self {
        Self {
            sg_overrides: Some(overrides),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of distinct trainable parameters referenced by this tape.
    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Forward value of a scalar node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    /// Forward values of every `stop_gradient` node, in emission order.
    pub fn stop_gradient_values(&self) -> Vec<Vec<f64>> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::StopGradient))
            .map(|n| n.value.clone())
            .collect()
    }

    fn check_input(&self, op: &Op, id: NodeId) -> Result<(), TapeError> {
        if id.0 >= self.nodes.len() {
            return Err(TapeError::InvalidNode(id.0, self.nodes.len()));
        }
        let _ = op;
        Ok(())
    }

    /// Appends a node, computing its forward value eagerly.
    pub fn emit(&mut self, op: Op, inputs: Vec<NodeId>) -> Result<NodeId, TapeError> {
        for &id in &inputs {
            self.check_input(&op, id)?;
        }
        let value = self.forward(&op, &inputs)?;
        if value.iter().any(|v| !v.is_finite()) {
            return Err(TapeError::NonFinite { op: op.name() });
        }
        let id = NodeId(self.nodes.len());
        if let Op::Parameter(pid) = op {
            self.params.push((pid, id));
        }
        self.nodes.push(Node { op, inputs, value });
        Ok(id)
    }

    fn arity(op: &'static str, expected: usize, got: usize) -> TapeError {
        TapeError::Arity { op, expected, got }
    }

    fn forward(&mut self, op: &Op, inputs: &[NodeId]) -> Result<Vec<f64>, TapeError> {
        let val = |id: NodeId| -> &[f64] { &self.nodes[id.0].value };
        let unary = |op: &Op| -> Result<&[f64], TapeError> {
            if inputs.len() != 1 {
                return Err(Self::arity(op.name(), 1, inputs.len()));
            }
            Ok(val(inputs[0]))
        };
        match op {
            // Leaves are emitted via constant()/param(), never through emit().
            Op::Constant | Op::Parameter(_) => {
                unreachable!("leaf ops are emitted via constant()/param()")
            }
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                if inputs.len() != 2 {
                    return Err(Self::arity(op.name(), 2, inputs.len()));
                }
                let (a, b) = (val(inputs[0]), val(inputs[1]));
                broadcast_binary(op, a, b)
            }
            Op::Neg => Ok(unary(op)?.iter().map(|x| -x).collect()),
            Op::Exp => Ok(unary(op)?.iter().map(|x| x.exp()).collect()),
            Op::Log => {
                let a = unary(op)?;
                if let Some(&bad) = a.iter().find(|&&x| x <= 0.0) {
                    return Err(TapeError::Domain {
                        op: "log",
                        value: bad,
                    });
                }
                Ok(a.iter().map(|x| x.ln()).collect())
            }
            Op::Sigmoid => Ok(unary(op)?.iter().map(|x| sigmoid(*x)).collect()),
            Op::Tanh => Ok(unary(op)?.iter().map(|x| x.tanh()).collect()),
            Op::Dot => {
                if inputs.len() != 2 {
                    return Err(Self::arity("dot", 2, inputs.len()));
                }
                let (a, b) = (val(inputs[0]), val(inputs[1]));
                if a.len() != b.len() {
                    return Err(TapeError::ShapeMismatch {
                        op: "dot",
                        left: a.len(),
                        right: b.len(),
                    });
                }
                Ok(vec![dot(a, b)])
            }
            Op::CosineSimilarity => {
                if inputs.len() != 2 {
                    return Err(Self::arity("cosine_similarity", 2, inputs.len()));
                }
                let (a, b) = (val(inputs[0]), val(inputs[1]));
                if a.len() != b.len() {
                    return Err(TapeError::ShapeMismatch {
                        op: "cosine_similarity",
                        left: a.len(),
                        right: b.len(),
                    });
                }
                let (na, nb) = (norm(a), norm(b));
                if na == 0.0 || nb == 0.0 {
                    return Err(TapeError::Domain {
                        op: "cosine_similarity",
                        value: 0.0,
                    });
                }
                Ok(vec![dot(a, b) / (na * nb)])
            }
            Op::Softmax => {
                let a = unary(op)?;
                let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = a.iter().map(|x| (x - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                Ok(exps.iter().map(|e| e / sum).collect())
            }
            Op::MaxReduce => {
                let a = unary(op)?;
                if a.is_empty() {
                    return Err(TapeError::Domain {
                        op: "max_reduce",
                        value: f64::NAN,
                    });
                }
                Ok(vec![a.iter().cloned().fold(f64::NEG_INFINITY, f64::max)])
            }
            Op::Clamp { lo, hi } => Ok(unary(op)?.iter().map(|x| x.clamp(*lo, *hi)).collect()),
            Op::StopGradient => {
                let a = unary(op)?.to_vec();
                if let Some(overrides) = &self.sg_overrides {
                    let slot = self.sg_emitted;
                    let ov = overrides
                        .get(slot)
                        .ok_or(TapeError::OverrideExhausted(slot))?;
                    if ov.len() != a.len() {
                        return Err(TapeError::OverrideShape {
                            slot,
                            got: ov.len(),
                            expected: a.len(),
                        });
                    }
                    self.sg_emitted += 1;
                    return Ok(ov.clone());
                }
                self.sg_emitted += 1;
                Ok(a)
            }
            Op::SumReduce => Ok(vec![unary(op)?.iter().sum()]),
            Op::Stack => {
                if inputs.is_empty() {
                    return Err(Self::arity("stack", 1, 0));
                }
                let mut out = Vec::new();
                for &id in inputs {
                    out.extend_from_slice(&self.nodes[id.0].value);
                }
                Ok(out)
            }
            Op::Index(i) => {
                let a = unary(op)?;
                if *i >= a.len() {
                    return Err(TapeError::IndexOutOfBounds {
                        index: *i,
                        len: a.len(),
                    });
                }
                Ok(vec![a[*i]])
            }
            Op::MatVec { rows, cols } => {
                if inputs.len() != 2 {
                    return Err(Self::arity("matvec", 2, inputs.len()));
                }
                let (w, x) = (val(inputs[0]), val(inputs[1]));
                if w.len() != rows * cols {
                    return Err(TapeError::ShapeMismatch {
                        op: "matvec",
                        left: w.len(),
                        right: rows * cols,
                    });
                }
                if x.len() != *cols {
                    return Err(TapeError::ShapeMismatch {
                        op: "matvec",
                        left: x.len(),
                        right: *cols,
                    });
                }
                let mut out = vec![0.0; *rows];
                for r in 0..*rows {
                    out[r] = dot(&w[r * cols..(r + 1) * cols], x);
                }
                Ok(out)
            }
        }
    }

    // -- leaf emitters ----------------------------------------------------

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Constant,
            inputs: Vec::new(),
            value,
        });
        id
    }

    pub fn scalar_const(&mut self, value: f64) -> NodeId {
        self.constant(vec![value])
    }

    /// Injects a trainable parameter, copying its current value from the
    /// store. Repeated injections of the same parameter reuse one node.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_cache.get(&id) {
            return node;
        }
        let node = NodeId(self.nodes.len());
        self.params.push((id, node));
        self.nodes.push(Node {
            op: Op::Parameter(id),
            inputs: Vec::new(),
            value: store.value(id).to_vec(),
        });
        self.param_cache.insert(id, node);
        node
    }

    // -- op helpers ---------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::Add, vec![a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::Sub, vec![a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::Mul, vec![a, b])
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::Div, vec![a, b])
    }
    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::Neg, vec![a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::Exp, vec![a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::Log, vec![a])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::Sigmoid, vec![a])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::Tanh, vec![a])
    }
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::Dot, vec![a, b])
    }
    pub fn cosine_similarity(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::CosineSimilarity, vec![a, b])
    }
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::Softmax, vec![a])
    }
    pub fn max_reduce(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::MaxReduce, vec![a])
    }
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId, TapeError> {
        self.emit(Op::Clamp { lo, hi }, vec![a])
    }
    pub fn stop_gradient(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::StopGradient, vec![a])
    }
    pub fn sum_reduce(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        self.emit(Op::SumReduce, vec![a])
    }
    pub fn stack(&mut self, parts: Vec<NodeId>) -> Result<NodeId, TapeError> {
        self.emit(Op::Stack, parts)
    }
    pub fn index(&mut self, a: NodeId, i: usize) -> Result<NodeId, TapeError> {
        self.emit(Op::Index(i), vec![a])
    }
    pub fn matvec(
        &mut self,
        w: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    ) -> Result<NodeId, TapeError> {
        self.emit(Op::MatVec { rows, cols }, vec![w, x])
    }

    // -- backward -----------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Nodes unreachable from the
    /// loss keep adjoint 0; the loss's own adjoint is 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TapeError> {
        if loss.0 >= self.nodes.len() {
            return Err(TapeError::InvalidNode(loss.0, self.nodes.len()));
        }
        let loss_val = &self.nodes[loss.0].value;
        if loss_val.len() != 1 {
            return Err(TapeError::NonScalarLoss(loss_val.len()));
        }
        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        adj[loss.0][0] = 1.0;

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if adj[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = adj[idx].clone();
            match &node.op {
                Op::Constant | Op::Parameter(_) | Op::StopGradient => {}
                Op::Add => {
                    accumulate_broadcast(&mut adj, node.inputs[0], &g, 1.0);
                    accumulate_broadcast(&mut adj, node.inputs[1], &g, 1.0);
                }
                Op::Sub => {
                    accumulate_broadcast(&mut adj, node.inputs[0], &g, 1.0);
                    accumulate_broadcast(&mut adj, node.inputs[1], &g, -1.0);
                }
                Op::Mul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let contrib_a = elementwise_scaled(&g, &self.nodes[b.0].value);
                    let contrib_b = elementwise_scaled(&g, &self.nodes[a.0].value);
                    accumulate_broadcast(&mut adj, a, &contrib_a, 1.0);
                    accumulate_broadcast(&mut adj, b, &contrib_b, 1.0);
                }
                Op::Div => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let n = g.len();
                    let mut contrib_a = vec![0.0; n];
                    let mut contrib_b = vec![0.0; n];
                    for i in 0..n {
                        let ai = pick(av, i);
                        let bi = pick(bv, i);
                        contrib_a[i] = g[i] / bi;
                        contrib_b[i] = -g[i] * ai / (bi * bi);
                    }
                    accumulate_broadcast(&mut adj, a, &contrib_a, 1.0);
                    accumulate_broadcast(&mut adj, b, &contrib_b, 1.0);
                }
                Op::Neg => accumulate_broadcast(&mut adj, node.inputs[0], &g, -1.0),
                Op::Exp => {
                    let contrib = elementwise_scaled(&g, &node.value);
                    accumulate(&mut adj, node.inputs[0], &contrib);
                }
                Op::Log => {
                    let av = &self.nodes[node.inputs[0].0].value;
                    let contrib: Vec<f64> = g.iter().zip(av).map(|(gi, ai)| gi / ai).collect();
                    accumulate(&mut adj, node.inputs[0], &contrib);
                }
                Op::Sigmoid => {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gi, s)| gi * s * (1.0 - s))
                        .collect();
                    accumulate(&mut adj, node.inputs[0], &contrib);
                }
                Op::Tanh => {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gi, t)| gi * (1.0 - t * t))
                        .collect();
                    accumulate(&mut adj, node.inputs[0], &contrib);
                }
                Op::Dot => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let gs = g[0];
                    let contrib_a: Vec<f64> =
                        self.nodes[b.0].value.iter().map(|x| gs * x).collect();
                    let contrib_b: Vec<f64> =
                        self.nodes[a.0].value.iter().map(|x| gs * x).collect();
                    accumulate(&mut adj, a, &contrib_a);
                    accumulate(&mut adj, b, &contrib_b);
                }
                Op::CosineSimilarity => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let gs = g[0];
                    let (na, nb) = (norm(av), norm(bv));
                    let cos = node.value[0];
                    let contrib_a: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(ai, bi)| gs * (bi / (na * nb) - cos * ai / (na * na)))
                        .collect();
                    let contrib_b: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(ai, bi)| gs * (ai / (na * nb) - cos * bi / (nb * nb)))
                        .collect();
                    accumulate(&mut adj, a, &contrib_a);
                    accumulate(&mut adj, b, &contrib_b);
                }
                Op::Softmax => {
                    let y = &node.value;
                    let inner: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(gi, yi)| yi * (gi - inner))
                        .collect();
                    accumulate(&mut adj, node.inputs[0], &contrib);
                }
                Op::MaxReduce => {
                    // Subgradient: first-encountered argmax takes the flow.
                    let av = &self.nodes[node.inputs[0].0].value;
                    let max = node.value[0];
                    let arg = av.iter().position(|&x| x == max).unwrap_or(0);
                    adj[node.inputs[0].0][arg] += g[0];
                }
                Op::Clamp { lo, hi } => {
                    let av = &self.nodes[node.inputs[0].0].value;
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(av)
                        .map(|(gi, ai)| if *ai > *lo && *ai < *hi { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, node.inputs[0], &contrib);
                }
                Op::SumReduce => {
                    let input = node.inputs[0];
                    let gs = g[0];
                    for slot in adj[input.0].iter_mut() {
                        *slot += gs;
                    }
                }
                Op::Stack => {
                    let mut offset = 0;
                    for &input in &node.inputs {
                        let len = self.nodes[input.0].value.len();
                        let contrib = &g[offset..offset + len];
                        for (slot, gi) in adj[input.0].iter_mut().zip(contrib) {
                            *slot += gi;
                        }
                        offset += len;
                    }
                }
                Op::Index(i) => {
                    adj[node.inputs[0].0][*i] += g[0];
                }
                Op::MatVec { rows, cols } => {
                    let (w, x) = (node.inputs[0], node.inputs[1]);
                    let wv = self.nodes[w.0].value.clone();
                    let xv = self.nodes[x.0].value.clone();
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..*cols {
                            adj[w.0][r * cols + c] += gr * xv[c];
                            adj[x.0][c] += gr * wv[r * cols + c];
                        }
                    }
                }
            }
        }
        Ok(Gradients { adj })
    }

    /// Adds this tape's parameter adjoints into a dense gradient set.
    pub fn accumulate_param_grads(&self, grads: &Gradients, out: &mut GradientSet) {
        for &(pid, node) in &self.params {
            let adj = &grads.adj[node.0];
            let slot = out.get_mut(pid);
            for (s, a) in slot.iter_mut().zip(adj) {
                *s += a;
            }
        }
    }
}

/// Adjoint values for every node of a tape, indexed by `NodeId`.
pub struct Gradients {
    adj: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn adjoint(&self, id: NodeId) -> &[f64] {
        &self.adj[id.0]
    }

    pub fn scalar_adjoint(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.adj[id.0].len(), 1);
        self.adj[id.0][0]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Broadcast rule shared by add/sub/mul/div: equal lengths elementwise, or
/// one scalar operand applied across the other.
fn broadcast_binary(op: &Op, a: &[f64], b: &[f64]) -> Result<Vec<f64>, TapeError> {
    let n = if a.len() == b.len() {
        a.len()
    } else if a.len() == 1 {
        b.len()
    } else if b.len() == 1 {
        a.len()
    } else {
        return Err(TapeError::ShapeMismatch {
            op: op.name(),
            left: a.len(),
            right: b.len(),
        });
    };
    let mut out = vec![0.0; n];
    for i in 0..n {
        let (x, y) = (pick(a, i), pick(b, i));
        out[i] = match op {
            Op::Add => x + y,
            Op::Sub => x - y,
            Op::Mul => x * y,
            Op::Div => {
                if y == 0.0 {
                    return Err(TapeError::Domain {
                        op: "div",
                        value: 0.0,
                    });
                }
                x / y
            }
            _ => unreachable!(),
        };
    }
    Ok(out)
}

fn pick(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

fn elementwise_scaled(g: &[f64], other: &[f64]) -> Vec<f64> {
    (0..g.len()).map(|i| g[i] * pick(other, i)).collect()
}

/// Adds `sign * contrib` into an input's adjoint, summing when the input
/// was a broadcast scalar.
fn accumulate_broadcast(adj: &mut [Vec<f64>], input: NodeId, contrib: &[f64], sign: f64) {
    let slot = &mut adj[input.0];
    if slot.len() == contrib.len() {
        for (s, c) in slot.iter_mut().zip(contrib) {
            *s += sign * c;
        }
    } else {
        debug_assert_eq!(slot.len(), 1);
        slot[0] += sign * contrib.iter().sum::<f64>();
    }
}

fn accumulate(adj: &mut [Vec<f64>], input: NodeId, contrib: &[f64]) {
    accumulate_broadcast(adj, input, contrib, 1.0);
}
