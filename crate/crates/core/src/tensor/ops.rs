use rand::Rng;

use super::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `c = beta * c + a * b` for row-major `a: m x k`, `b: k x n`, with
/// explicit (row, col) strides so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
pub(super) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices that cover the strided extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
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

fn softmax_rows(data: &[f64], cols: usize, mask: Option<&[bool]>) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (r, (row, dst)) in data.chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
        let keep = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
        let max = row
            .iter()
            .enumerate()
            .filter(|(j, _)| keep(*j))
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, (d, v)) in dst.iter_mut().zip(row).enumerate() {
            if keep(j) {
                *d = (v - max).exp();
                sum += *d;
            }
        }
        dst.iter_mut().for_each(|d| *d /= sum);
    }
    out
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, self.data(a), (k, 1), self.data(b), (m, 1), &mut out, 0.0);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b)))
    }

    /// Adds a bias vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let cols = self.value(a).rows_cols().1;
        if self.value(bias).len() != cols {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} does not match rows of {:?}", self.shape(bias), self.shape(a)),
            ));
        }
        let b = self.data(bias);
        let data = self
            .data(a)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::AddBias(a, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b)))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let data = self.data(a).iter().map(|x| scale * x + shift).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data, grad: None }, Op::Affine(a, scale))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    /// Concatenation along the last axis; all parts share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "nothing to concatenate"));
        };
        let rows = self.value(first).rows_cols().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).rows_cols();
            if r != rows || self.shape(p).len() != self.shape(first).len() {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", self.shape(first), self.shape(p)),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = self.shape(first).to_vec();
        *shape.last_mut().expect("non-scalar") = total;
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (rows, cols) = self.value(a).rows_cols();
        if start + width > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} out of {cols}", start + width),
            ));
        }
        let data = self
            .data(a)
            .chunks(cols)
            .flat_map(|row| row[start..start + width].iter().copied())
            .collect();
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().expect("non-scalar") = width;
        debug_assert_eq!(rows * width, shape.iter().product::<usize>());
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceCols(a, start)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data, grad: None }, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data, grad: None }, Op::Tanh(a))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let cols = self.value(a).rows_cols().1;
        let data = softmax_rows(self.data(a), cols, None);
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data, grad: None }, Op::Softmax(a))
    }

    /// Row-wise softmax where entries with `mask == false` get zero
    /// probability. Every row needs at least one kept entry.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (rows, cols) = self.value(a).rows_cols();
        if mask.len() != rows * cols {
            return Err(Error::shape("masked_softmax", format!("mask of {} for {rows}x{cols}", mask.len())));
        }
        if mask.chunks(cols).any(|row| !row.iter().any(|&m| m)) {
            return Err(Error::shape("masked_softmax", "a row is fully masked"));
        }
        let data = softmax_rows(self.data(a), cols, Some(mask));
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data, grad: None }, Op::Softmax(a)))
    }

    /// Rows of `table` selected by `ids`: `[V, E] -> [ids.len(), E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.value(table).rows_cols();
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape("embedding", format!("id {bad} outside vocabulary of {vocab}")));
        }
        let src = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            data.extend_from_slice(&src[id * dim..(id + 1) * dim]);
        }
        Ok(self.push(Tensor::new(vec![ids.len(), dim], data)?, Op::Embedding(table, ids.to_vec())))
    }

    /// Elementwise product with a constant of the same length.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(a).len() {
            return Err(Error::shape("mul_const", format!("{} constants for {:?}", c.len(), self.shape(a))));
        }
        let data = self.data(a).iter().zip(&c).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data, grad: None }, Op::MulConst(a, c)))
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1 / (1 - p)`. Identity when not training.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul_const(a, mask)
    }

    /// Row `r` comes from `new` where `take_new[r]`, otherwise from `old`.
    pub fn select_rows(&mut self, new: Var, old: Var, take_new: &[bool]) -> Result<Var> {
        self.same_shape("select_rows", new, old)?;
        let (rows, cols) = self.value(new).rows_cols();
        if take_new.len() != rows {
            return Err(Error::shape("select_rows", format!("{} flags for {rows} rows", take_new.len())));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for (r, &t) in take_new.iter().enumerate() {
            let src = if t { new } else { old };
            data.extend_from_slice(&self.data(src)[r * cols..(r + 1) * cols]);
        }
        let shape = self.shape(new).to_vec();
        Ok(self.push(Tensor { shape, data, grad: None }, Op::SelectRows(new, old, take_new.to_vec())))
    }

    /// Stacks `L` tensors of shape `[B, H]` into `[B, L, H]`.
    pub fn stack(&mut self, steps: &[Var]) -> Result<Var> {
        let Some(&first) = steps.first() else {
            return Err(Error::shape("stack", "nothing to stack"));
        };
        let (b, h) = self.value(first).rows_cols();
        if steps.iter().any(|&s| self.shape(s) != self.shape(first)) {
            return Err(Error::shape("stack", "steps differ in shape"));
        }
        let l = steps.len();
        let mut data = vec![0.0; b * l * h];
        for (step, &s) in steps.iter().enumerate() {
            let src = self.data(s);
            for row in 0..b {
                data[(row * l + step) * h..(row * l + step + 1) * h]
                    .copy_from_slice(&src[row * h..(row + 1) * h]);
            }
        }
        Ok(self.push(Tensor::new(vec![b, l, h], data)?, Op::Stack(steps.to_vec())))
    }

    fn memory_dims(&self, op: &'static str, mem: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(mem) {
            [b, l, h] => Ok((b, l, h)),
            ref s => Err(Error::shape(op, format!("memory must be [B, L, H], got {s:?}"))),
        }
    }

    /// Batched dot products `scores[b, l] = q[b] . mem[b, l]`.
    pub fn attn_scores(&mut self, q: Var, mem: Var) -> Result<Var> {
        let (b, l, h) = self.memory_dims("attn_scores", mem)?;
        if self.shape(q) != [b, h] {
            return Err(Error::shape("attn_scores", format!("query {:?} for memory [{b}, {l}, {h}]", self.shape(q))));
        }
        let (qv, mv) = (self.data(q), self.data(mem));
        let mut data = vec![0.0; b * l];
        for row in 0..b {
            let qr = &qv[row * h..(row + 1) * h];
            for pos in 0..l {
                let m = &mv[(row * l + pos) * h..(row * l + pos + 1) * h];
                data[row * l + pos] = qr.iter().zip(m).map(|(x, y)| x * y).sum();
            }
        }
        Ok(self.push(Tensor::new(vec![b, l], data)?, Op::AttnScores(q, mem)))
    }

    /// Batched weighted sums `ctx[b] = sum_l a[b, l] * mem[b, l]`.
    pub fn attn_context(&mut self, a: Var, mem: Var) -> Result<Var> {
        let (b, l, h) = self.memory_dims("attn_context", mem)?;
        if self.shape(a) != [b, l] {
            return Err(Error::shape("attn_context", format!("weights {:?} for memory [{b}, {l}, {h}]", self.shape(a))));
        }
        let (av, mv) = (self.data(a), self.data(mem));
        let mut data = vec![0.0; b * h];
        for row in 0..b {
            let dst = &mut data[row * h..(row + 1) * h];
            for pos in 0..l {
                let w = av[row * l + pos];
                let m = &mv[(row * l + pos) * h..(row * l + pos + 1) * h];
                for (d, x) in dst.iter_mut().zip(m) {
                    *d += w * x;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![b, h], data)?, Op::AttnContext(a, mem)))
    }

    /// Per-row negative log-likelihood of `targets` under softmax(`logits`).
    ///
    /// Returns the `[N]` loss node and the target probabilities `p_t`,
    /// which equal `exp(-loss)` up to rounding.
    pub fn log_softmax_nll(&mut self, logits: Var, targets: &[usize]) -> Result<(Var, Vec<f64>)> {
        let (rows, cols) = self.value(logits).rows_cols();
        if targets.len() != rows {
            return Err(Error::shape("log_softmax_nll", format!("{} targets for {rows} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::shape("log_softmax_nll", format!("target {bad} outside {cols} classes")));
        }
        let x = self.data(logits);
        let mut probs = vec![0.0; rows * cols];
        let mut losses = Vec::with_capacity(rows);
        let mut p_t = Vec::with_capacity(rows);
        for (r, &t) in targets.iter().enumerate() {
            let row = &x[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            for (d, v) in probs[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *d = (v - log_z).exp();
            }
            let loss = log_z - row[t];
            losses.push(loss);
            p_t.push((-loss).exp());
        }
        let node = self.push(Tensor::new(vec![rows], losses)?, Op::Nll(logits, targets.to_vec(), probs));
        Ok((node, p_t))
    }

    /// Elementwise `f`, where `f` returns `(value, derivative)`.
    pub fn map(&mut self, a: Var, f: impl Fn(f64) -> (f64, f64)) -> Var {
        let (data, deriv): (Vec<f64>, Vec<f64>) = self.data(a).iter().map(|&x| f(x)).unzip();
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data, grad: None }, Op::Map(a, deriv))
    }

    /// Scalar `sum_i coeffs[i] * a[i]`.
    pub fn weighted_sum(&mut self, a: Var, coeffs: Vec<f64>) -> Result<Var> {
        if coeffs.len() != self.value(a).len() {
            return Err(Error::shape("weighted_sum", format!("{} weights for {:?}", coeffs.len(), self.shape(a))));
        }
        let total = self.data(a).iter().zip(&coeffs).map(|(x, c)| x * c).sum();
        Ok(self.push(Tensor::new(vec![1], vec![total])?, Op::WeightedSum(a, coeffs)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        self.weighted_sum(a, vec![1.0; n]).expect("matching length")
    }
}
