//! Dense 64-bit tensors and a reverse-mode tape with the handful of
//! primitives the encoder-decoder needs.
//!
//! Every primitive is recorded on a [`Tape`] as it executes; nodes are
//! appended in execution order, so the node list is already topologically
//! sorted and [`Tape::backward`] walks it in reverse. Parameters live in a
//! [`ParamStore`] outside the tape; [`Tape::param`] copies a parameter in
//! and [`Tape::accumulate_param_grads`] writes gradients back.
//!
//! Most primitives treat a tensor as a matrix of `rows x last_dim`.

mod ops;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    /// Row-major matrix.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut Vec<f64> {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Drops the gradient buffer.
    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// `(rows, last_dim)` view; scalars and vectors are a single row.
    pub fn rows_cols(&self) -> (usize, usize) {
        rows_cols(&self.shape)
    }
}

pub(crate) fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        None => (1, 1),
        Some((&last, rest)) => (rest.iter().product(), last),
    }
}

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter tensors with gradient buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// L2 norm over every gradient buffer.
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(Tensor::grad)
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Embedding(Var, Vec<usize>),
    MulConst(Var, Vec<f64>),
    SelectRows(Var, Var, Vec<bool>),
    Stack(Vec<Var>),
    AttnScores(Var, Var),
    AttnContext(Var, Var),
    Nll(Var, Vec<usize>, Vec<f64>),
    Map(Var, Vec<f64>),
    WeightedSum(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of executed primitives for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Differentiable leaf; its gradient is available via [`Tape::grad`]
    /// after [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut value = store.get(id).clone();
        value.grad = None;
        self.push(value, Op::Param(id))
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds this tape's parameter gradients into the store's buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(Some(g))) = (&node.op, self.grads.get(i)) {
                let dst = store.get_mut(*id).grad_mut();
                dst.iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
        }
    }

    /// Reverse sweep from a scalar `loss`, leaving `d loss / d node` for
    /// every node that the loss depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let n = self.nodes.len();
        self.grads = vec![None; n];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            backprop_node(&self.nodes, &mut self.grads, i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

}

fn grad_buf<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> &'a mut Vec<f64> {
    let n = nodes[v.0].value.data.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let val = |v: Var| &nodes[v.0].value;
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Constant | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (n, k) = val(*a).rows_cols();
            let m = val(*b).rows_cols().1;
            // dA += dC * B^T
            ops::gemm(n, m, k, g, (m, 1), &val(*b).data, (1, m), grad_buf(nodes, grads, *a), 1.0);
            // dB += A^T * dC
            ops::gemm(k, n, m, &val(*a).data, (1, k), g, (m, 1), grad_buf(nodes, grads, *b), 1.0);
        }
        Op::Add(a, b) => {
            add_into(grad_buf(nodes, grads, *a), g);
            add_into(grad_buf(nodes, grads, *b), g);
        }
        Op::AddBias(a, bias) => {
            add_into(grad_buf(nodes, grads, *a), g);
            let cols = val(*bias).len();
            let gb = grad_buf(nodes, grads, *bias);
            for row in g.chunks(cols) {
                add_into(gb, row);
            }
        }
        Op::Mul(a, b) => {
            let ga = grad_buf(nodes, grads, *a);
            for ((d, gi), bi) in ga.iter_mut().zip(g).zip(&val(*b).data) {
                *d += gi * bi;
            }
            let gb = grad_buf(nodes, grads, *b);
            for ((d, gi), ai) in gb.iter_mut().zip(g).zip(&val(*a).data) {
                *d += gi * ai;
            }
        }
        Op::Affine(a, scale) => {
            for (d, gi) in grad_buf(nodes, grads, *a).iter_mut().zip(g) {
                *d += scale * gi;
            }
        }
        Op::Concat(parts) => {
            let (rows, total) = out.rows_cols();
            let mut offset = 0;
            for p in parts {
                let w = val(*p).rows_cols().1;
                let gp = grad_buf(nodes, grads, *p);
                for r in 0..rows {
                    let src = &g[r * total + offset..r * total + offset + w];
                    add_into(&mut gp[r * w..(r + 1) * w], src);
                }
                offset += w;
            }
        }
        Op::SliceCols(a, start) => {
            let (rows, w) = out.rows_cols();
            let total = val(*a).rows_cols().1;
            let ga = grad_buf(nodes, grads, *a);
            for r in 0..rows {
                let dst = &mut ga[r * total + start..r * total + start + w];
                add_into(dst, &g[r * w..(r + 1) * w]);
            }
        }
        Op::Sigmoid(a) => {
            let ga = grad_buf(nodes, grads, *a);
            for ((d, gi), yi) in ga.iter_mut().zip(g).zip(&out.data) {
                *d += gi * yi * (1.0 - yi);
            }
        }
        Op::Tanh(a) => {
            let ga = grad_buf(nodes, grads, *a);
            for ((d, gi), yi) in ga.iter_mut().zip(g).zip(&out.data) {
                *d += gi * (1.0 - yi * yi);
            }
        }
        Op::Softmax(a) => {
            let cols = out.rows_cols().1;
            let ga = grad_buf(nodes, grads, *a);
            for ((yr, gr), dr) in out.data.chunks(cols).zip(g.chunks(cols)).zip(ga.chunks_mut(cols)) {
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for ((d, yi), gi) in dr.iter_mut().zip(yr).zip(gr) {
                    *d += yi * (gi - dot);
                }
            }
        }
        Op::Embedding(table, ids) => {
            let cols = val(*table).rows_cols().1;
            let gt = grad_buf(nodes, grads, *table);
            for (r, &id) in ids.iter().enumerate() {
                add_into(&mut gt[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
            }
        }
        Op::MulConst(a, c) | Op::Map(a, c) => {
            let ga = grad_buf(nodes, grads, *a);
            for ((d, gi), ci) in ga.iter_mut().zip(g).zip(c) {
                *d += gi * ci;
            }
        }
        Op::SelectRows(new, old, mask) => {
            let cols = out.rows_cols().1;
            for (take_new, target) in [(true, *new), (false, *old)] {
                let gt = grad_buf(nodes, grads, target);
                for (r, &m) in mask.iter().enumerate() {
                    if m == take_new {
                        add_into(&mut gt[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
        }
        Op::Stack(parts) => {
            // [B, L, H] assembled from L tensors of shape [B, H]
            let (b, l, h) = (out.shape[0], out.shape[1], out.shape[2]);
            for (step, p) in parts.iter().enumerate() {
                let gp = grad_buf(nodes, grads, *p);
                for row in 0..b {
                    let src = &g[(row * l + step) * h..(row * l + step + 1) * h];
                    add_into(&mut gp[row * h..(row + 1) * h], src);
                }
            }
        }
        Op::AttnScores(q, mem) => {
            let m = val(*mem);
            let (b, l, h) = (m.shape[0], m.shape[1], m.shape[2]);
            let gq = grad_buf(nodes, grads, *q);
            for row in 0..b {
                let dst = &mut gq[row * h..(row + 1) * h];
                for pos in 0..l {
                    let gs = g[row * l + pos];
                    let src = &m.data[(row * l + pos) * h..(row * l + pos + 1) * h];
                    for (d, mi) in dst.iter_mut().zip(src) {
                        *d += gs * mi;
                    }
                }
            }
            let qv = &val(*q).data;
            let gm = grad_buf(nodes, grads, *mem);
            for row in 0..b {
                let qr = &qv[row * h..(row + 1) * h];
                for pos in 0..l {
                    let gs = g[row * l + pos];
                    let dst = &mut gm[(row * l + pos) * h..(row * l + pos + 1) * h];
                    for (d, qi) in dst.iter_mut().zip(qr) {
                        *d += gs * qi;
                    }
                }
            }
        }
        Op::AttnContext(a, mem) => {
            let m = val(*mem);
            let (b, l, h) = (m.shape[0], m.shape[1], m.shape[2]);
            let ga = grad_buf(nodes, grads, *a);
            for row in 0..b {
                let gr = &g[row * h..(row + 1) * h];
                for pos in 0..l {
                    let src = &m.data[(row * l + pos) * h..(row * l + pos + 1) * h];
                    ga[row * l + pos] += gr.iter().zip(src).map(|(x, y)| x * y).sum::<f64>();
                }
            }
            let av = &val(*a).data;
            let gm = grad_buf(nodes, grads, *mem);
            for row in 0..b {
                let gr = &g[row * h..(row + 1) * h];
                for pos in 0..l {
                    let w = av[row * l + pos];
                    let dst = &mut gm[(row * l + pos) * h..(row * l + pos + 1) * h];
                    for (d, gi) in dst.iter_mut().zip(gr) {
                        *d += w * gi;
                    }
                }
            }
        }
        Op::Nll(logits, targets, probs) => {
            let cols = val(*logits).rows_cols().1;
            let gl = grad_buf(nodes, grads, *logits);
            for (r, &t) in targets.iter().enumerate() {
                let gr = g[r];
                if gr == 0.0 {
                    continue;
                }
                let dst = &mut gl[r * cols..(r + 1) * cols];
                for (d, p) in dst.iter_mut().zip(&probs[r * cols..(r + 1) * cols]) {
                    *d += gr * p;
                }
                dst[t] -= gr;
            }
        }
        Op::WeightedSum(a, coeffs) => {
            let gs = g[0];
            for (d, c) in grad_buf(nodes, grads, *a).iter_mut().zip(coeffs) {
                *d += gs * c;
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
