//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation in execution order, so the reverse of
//! insertion order is a valid backward traversal. Values are owned by the tape
//! and referenced through copyable [`Var`] handles.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NeuralError;

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Dense real tensor. Every tensor flowing through the tape is a matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NeuralError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NeuralError::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Row-major `rows x cols` matrix. Panics when the length is wrong.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::matrix(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::matrix(rows, cols, vec![value; rows * cols])
    }

    /// A `1 x n` row vector.
    pub fn row(values: &[f64]) -> Self {
        Self::matrix(1, values.len(), values.to_vec())
    }

    pub fn scalar(value: f64) -> Self {
        Self::matrix(1, 1, vec![value])
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    fn dims(&self, op: &str) -> Result<(usize, usize), NeuralError> {
        if self.shape.len() != 2 {
            return Err(NeuralError::ShapeMismatch(format!(
                "{op}: expected a matrix, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::matrix(c, r, out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `b` may be a `1 x cols` row broadcast over the rows of `a`.
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    MeanPool(Var, Axis),
    Concat(Vec<Var>, Axis),
    Transpose(Var),
    SliceCols(Var, usize),
    Reshape(Var),
    Sum(Var),
    NeighborMean(Var, Arc<Vec<Vec<usize>>>),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Operation recorder. One tape per forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    rng: ChaCha8Rng,
    training: bool,
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, &y) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += x * y;
            }
        }
    }
    out
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

impl Tape {
    /// A tape in training mode; `seed` drives dropout masks.
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            training: true,
        }
    }

    /// A tape with dropout disabled.
    pub fn inference() -> Self {
        let mut tape = Self::new(0);
        tape.training = false;
        tape
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var, NeuralError> {
        if !value.is_finite() {
            return Err(NeuralError::NonFiniteValue(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, NeuralError> {
        value.dims("leaf")?;
        self.push(value, Op::Leaf, "leaf")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if it reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn dims(&self, v: Var, op: &str) -> Result<(usize, usize), NeuralError> {
        self.value(v).dims(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (n, k) = self.dims(a, "matmul")?;
        let (k2, m) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(NeuralError::ShapeMismatch(format!("matmul: {n}x{k} by {k2}x{m}")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(Tensor::matrix(n, m, out), Op::MatMul(a, b), "matmul")
    }

    /// Elementwise sum; `b` may also be a single row added to every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims(a, "add")?;
        let (bn, bm) = self.dims(b, "add")?;
        if bm != m || (bn != n && bn != 1) {
            return Err(NeuralError::ShapeMismatch(format!("add: {n}x{m} and {bn}x{bm}")));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = av
            .iter()
            .enumerate()
            .map(|(i, x)| x + if bn == 1 { bv[i % m] } else { bv[i] })
            .collect();
        self.push(Tensor::matrix(n, m, out), Op::Add(a, b), "add")
    }

    /// Adds a constant table (such as a positional code) to `x`.
    pub fn embedding_add(&mut self, x: Var, table: &Tensor) -> Result<Var, NeuralError> {
        let t = self.leaf(table.clone())?;
        if self.value(t).shape() != self.value(x).shape() {
            return Err(NeuralError::ShapeMismatch(format!(
                "embedding_add: {:?} and {:?}",
                self.value(x).shape(),
                table.shape()
            )));
        }
        self.add(x, t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NeuralError::ShapeMismatch(format!(
                "mul: {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let (n, m) = self.dims(a, "mul")?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        self.push(Tensor::matrix(n, m, out), Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NeuralError> {
        let (n, m) = self.dims(a, "scale")?;
        let out = self.value(a).data().iter().map(|x| x * s).collect();
        self.push(Tensor::matrix(n, m, out), Op::Scale(a, s), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims(a, "relu")?;
        let out = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        self.push(Tensor::matrix(n, m, out), Op::Relu(a), "relu")
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims(a, "softmax")?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(m) {
            softmax_row(row);
        }
        self.push(Tensor::matrix(n, m, out), Op::Softmax(a), "softmax")
    }

    /// Row-wise normalization followed by a per-column affine map; `gain` and
    /// `bias` are `1 x cols`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims(x, "layer_norm")?;
        for p in [gain, bias] {
            if self.dims(p, "layer_norm")? != (1, m) {
                return Err(NeuralError::ShapeMismatch(format!(
                    "layer_norm: affine parameters must be 1x{m}"
                )));
            }
        }
        let xv = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut normed = vec![0.0; n * m];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            let row = &xv[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = s;
            for c in 0..m {
                let h = (row[c] - mean) * s;
                normed[r * m + c] = h;
                out[r * m + c] = h * g[c] + b[c];
            }
        }
        self.push(
            Tensor::matrix(n, m, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            },
            "layer_norm",
        )
    }

    /// Inverted dropout; identity outside training or when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var, NeuralError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NeuralError::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(a);
        }
        let (n, m) = self.dims(a, "dropout")?;
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n * m)
            .map(|_| if self.rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = self.value(a).data().iter().zip(&mask).map(|(x, k)| x * k).collect();
        self.push(Tensor::matrix(n, m, out), Op::Dropout(a, mask), "dropout")
    }

    /// Mean over rows (`1 x cols` result) or over columns (`rows x 1`).
    pub fn mean_pool(&mut self, a: Var, axis: Axis) -> Result<Var, NeuralError> {
        let (n, m) = self.dims(a, "mean_pool")?;
        let v = self.value(a).data();
        let out = match axis {
            Axis::Rows => {
                if n == 0 {
                    return Err(NeuralError::EmptyInput("mean_pool over zero rows".into()));
                }
                let mut acc = vec![0.0; m];
                for row in v.chunks(m) {
                    for (o, x) in acc.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                Tensor::matrix(1, m, acc.into_iter().map(|x| x / n as f64).collect())
            }
            Axis::Cols => {
                if m == 0 {
                    return Err(NeuralError::EmptyInput("mean_pool over zero columns".into()));
                }
                Tensor::matrix(n, 1, v.chunks(m).map(|row| row.iter().sum::<f64>() / m as f64).collect())
            }
        };
        self.push(out, Op::MeanPool(a, axis), "mean_pool")
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var, NeuralError> {
        let first = *parts
            .first()
            .ok_or_else(|| NeuralError::EmptyInput("concat of nothing".into()))?;
        let (n0, m0) = self.dims(first, "concat")?;
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let (n, m) = self.dims(p, "concat")?;
            let ok = match axis {
                Axis::Rows => m == m0,
                Axis::Cols => n == n0,
            };
            if !ok {
                return Err(NeuralError::ShapeMismatch(format!("concat: {n0}x{m0} with {n}x{m}")));
            }
            dims.push((n, m));
        }
        let out = match axis {
            Axis::Rows => {
                let rows = dims.iter().map(|d| d.0).sum();
                let data = parts.iter().flat_map(|&p| self.value(p).data().iter().copied()).collect();
                Tensor::matrix(rows, m0, data)
            }
            Axis::Cols => {
                let cols = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(n0 * cols);
                for r in 0..n0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::matrix(n0, cols, data)
            }
        };
        self.push(out, Op::Concat(parts.to_vec(), axis), "concat")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NeuralError> {
        self.dims(a, "transpose")?;
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NeuralError> {
        let (n, m) = self.dims(a, "slice_cols")?;
        if start + len > m {
            return Err(NeuralError::ShapeMismatch(format!(
                "slice_cols: {start}..{} of {m} columns",
                start + len
            )));
        }
        let v = self.value(a);
        let data = (0..n).flat_map(|r| v.row_slice(r)[start..start + len].iter().copied()).collect();
        self.push(Tensor::matrix(n, len, data), Op::SliceCols(a, start), "slice_cols")
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NeuralError> {
        let v = self.value(a);
        if v.len() != rows * cols {
            return Err(NeuralError::ShapeMismatch(format!(
                "reshape: {:?} into {rows}x{cols}",
                v.shape()
            )));
        }
        let out = Tensor::matrix(rows, cols, v.data().to_vec());
        self.push(out, Op::Reshape(a), "reshape")
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(&mut self, a: Var) -> Result<Var, NeuralError> {
        self.dims(a, "sum")?;
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    /// Row `v` of the result is the mean of the rows of `a` listed in
    /// `neighbors[v]`, or zero when that list is empty.
    pub fn neighbor_mean(&mut self, a: Var, neighbors: Arc<Vec<Vec<usize>>>) -> Result<Var, NeuralError> {
        let (n, m) = self.dims(a, "neighbor_mean")?;
        if neighbors.len() != n || neighbors.iter().flatten().any(|&u| u >= n) {
            return Err(NeuralError::ShapeMismatch(format!(
                "neighbor_mean: adjacency for {} nodes, features for {n}",
                neighbors.len()
            )));
        }
        let v = self.value(a);
        let mut out = vec![0.0; n * m];
        for (node, list) in neighbors.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            let w = 1.0 / list.len() as f64;
            let row = &mut out[node * m..(node + 1) * m];
            for &u in list {
                for (o, x) in row.iter_mut().zip(v.row_slice(u)) {
                    *o += w * x;
                }
            }
        }
        self.push(Tensor::matrix(n, m, out), Op::NeighborMean(a, neighbors), "neighbor_mean")
    }

    /// Softmax cross-entropy of a `1 x classes` logit row against `target`.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, target: usize) -> Result<Var, NeuralError> {
        let (n, m) = self.dims(logits, "cross_entropy")?;
        if n != 1 || target >= m {
            return Err(NeuralError::ShapeMismatch(format!(
                "cross_entropy: logits {n}x{m}, target {target}"
            )));
        }
        let mut probs = self.value(logits).data().to_vec();
        softmax_row(&mut probs);
        let z = self.value(logits).data();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - z[target];
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            "cross_entropy",
        )
    }

    fn accumulate(&mut self, v: Var, g: &[f64]) {
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Backpropagates from a `1 x 1` output; previous gradients are discarded.
    pub fn backward(&mut self, output: Var) -> Result<(), NeuralError> {
        if self.value(output).len() != 1 {
            return Err(NeuralError::ShapeMismatch("backward needs a scalar output".into()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let Some(grad) = self.grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &grad);
            self.grads[idx] = Some(grad);
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, g: &[f64]) {
        // Contributions are collected first so the node borrow ends before accumulation.
        let mut contributions: Vec<(Var, Vec<f64>)> = Vec::new();
        let node = &self.nodes[idx];
        let (n, m) = (node.value.rows(), node.value.cols());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = av.cols();
                let ga = matmul_raw(g, bv.transpose().data(), n, m, k);
                let gb = matmul_raw(av.transpose().data(), g, k, n, m);
                contributions.push((*a, ga));
                contributions.push((*b, gb));
            }
            Op::Add(a, b) => {
                contributions.push((*a, g.to_vec()));
                if self.value(*b).rows() == n {
                    contributions.push((*b, g.to_vec()));
                } else {
                    let mut gb = vec![0.0; m];
                    for row in g.chunks(m) {
                        gb.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                    }
                    contributions.push((*b, gb));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                contributions.push((*a, g.iter().zip(bv).map(|(x, y)| x * y).collect()));
                contributions.push((*b, g.iter().zip(av).map(|(x, y)| x * y).collect()));
            }
            Op::Scale(a, s) => contributions.push((*a, g.iter().map(|x| x * s).collect())),
            Op::Relu(a) => {
                let av = self.value(*a).data();
                contributions.push((*a, g.iter().zip(av).map(|(x, &y)| if y > 0.0 { *x } else { 0.0 }).collect()));
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let mut ga = vec![0.0; n * m];
                for r in 0..n {
                    let (yr, gr) = (&y[r * m..(r + 1) * m], &g[r * m..(r + 1) * m]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..m {
                        ga[r * m + c] = yr[c] * (gr[c] - dot);
                    }
                }
                contributions.push((*a, ga));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            } => {
                let gv = self.value(*gain).data();
                let mut gx = vec![0.0; n * m];
                let mut ggain = vec![0.0; m];
                let mut gbias = vec![0.0; m];
                for r in 0..n {
                    let (gr, hr) = (&g[r * m..(r + 1) * m], &normed[r * m..(r + 1) * m]);
                    let dh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let mean_dh = dh.iter().sum::<f64>() / m as f64;
                    let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                    for c in 0..m {
                        gx[r * m + c] = rstd[r] * (dh[c] - mean_dh - hr[c] * mean_dh_h);
                        ggain[c] += gr[c] * hr[c];
                        gbias[c] += gr[c];
                    }
                }
                contributions.push((*x, gx));
                contributions.push((*gain, ggain));
                contributions.push((*bias, gbias));
            }
            Op::Dropout(a, mask) => contributions.push((*a, g.iter().zip(mask).map(|(x, k)| x * k).collect())),
            Op::MeanPool(a, axis) => {
                let (an, am) = (self.value(*a).rows(), self.value(*a).cols());
                let ga = match axis {
                    Axis::Rows => (0..an * am).map(|i| g[i % am] / an as f64).collect(),
                    Axis::Cols => (0..an * am).map(|i| g[i / am] / am as f64).collect(),
                };
                contributions.push((*a, ga));
            }
            Op::Concat(parts, axis) => match axis {
                Axis::Rows => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        contributions.push((p, g[offset..offset + len].to_vec()));
                        offset += len;
                    }
                }
                Axis::Cols => {
                    let mut col = 0;
                    for &p in parts {
                        let pm = self.value(p).cols();
                        let gp = (0..n).flat_map(|r| g[r * m + col..r * m + col + pm].iter().copied()).collect();
                        contributions.push((p, gp));
                        col += pm;
                    }
                }
            },
            Op::Transpose(a) => contributions.push((*a, Tensor::matrix(n, m, g.to_vec()).transpose().into_data())),
            Op::SliceCols(a, start) => {
                let am = self.value(*a).cols();
                let mut ga = vec![0.0; n * am];
                for r in 0..n {
                    ga[r * am + start..r * am + start + m].copy_from_slice(&g[r * m..(r + 1) * m]);
                }
                contributions.push((*a, ga));
            }
            Op::Reshape(a) => contributions.push((*a, g.to_vec())),
            Op::Sum(a) => contributions.push((*a, vec![g[0]; self.value(*a).len()])),
            Op::NeighborMean(a, neighbors) => {
                let mut ga = vec![0.0; n * m];
                for (node_id, list) in neighbors.iter().enumerate() {
                    if list.is_empty() {
                        continue;
                    }
                    let w = 1.0 / list.len() as f64;
                    let gr = &g[node_id * m..(node_id + 1) * m];
                    for &u in list {
                        for (o, x) in ga[u * m..(u + 1) * m].iter_mut().zip(gr) {
                            *o += w * x;
                        }
                    }
                }
                contributions.push((*a, ga));
            }
            Op::CrossEntropy { logits, target, probs } => {
                let mut gl: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                gl[*target] -= g[0];
                contributions.push((*logits, gl));
            }
        }
        for (v, grad) in contributions {
            self.accumulate(v, &grad);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_gradient_examples() {
        let mut tape = Tape::new(0);
        let x = tape.leaf(Tensor::row(&[2.0, -2.0])).unwrap();
        let y = tape.relu(x).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot() {
        let mut tape = Tape::new(0);
        let z = tape.leaf(Tensor::row(&[0.5, -1.0, 2.0])).unwrap();
        let loss = tape.cross_entropy_with_logits(z, 1).unwrap();
        tape.backward(loss).unwrap();
        let mut p = vec![0.5, -1.0, 2.0];
        softmax_row(&mut p);
        p[1] -= 1.0;
        for (a, b) in tape.grad(z).unwrap().iter().zip(&p) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new(0);
        let a = tape.leaf(Tensor::zeros(2, 3)).unwrap();
        let b = tape.leaf(Tensor::zeros(2, 3)).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(NeuralError::ShapeMismatch(_))));
        assert!(matches!(tape.slice_cols(a, 2, 2), Err(NeuralError::ShapeMismatch(_))));
        assert!(matches!(tape.cross_entropy_with_logits(a, 0), Err(NeuralError::ShapeMismatch(_))));
        assert!(tape.dropout(a, 1.0).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut tape = Tape::new(0);
        let a = tape.leaf(Tensor::row(&[f64::MAX])).unwrap();
        assert!(matches!(tape.scale(a, 10.0), Err(NeuralError::NonFiniteValue(_))));
    }

    #[test]
    fn dropout_is_seeded_and_off_at_inference() {
        let run = |seed| {
            let mut tape = Tape::new(seed);
            let x = tape.leaf(Tensor::filled(4, 8, 1.0)).unwrap();
            let y = tape.dropout(x, 0.5).unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(3), run(3));
        assert!(run(3).data().iter().all(|&v| v == 0.0 || v == 2.0));
        let mut tape = Tape::inference();
        let x = tape.leaf(Tensor::filled(2, 2, 1.0)).unwrap();
        let y = tape.dropout(x, 0.5).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn neighbor_mean_of_isolated_node_is_zero() {
        let mut tape = Tape::new(0);
        let x = tape.leaf(Tensor::matrix(3, 1, vec![1.0, 2.0, 4.0])).unwrap();
        let nb = Arc::new(vec![vec![1, 2], vec![0], vec![]]);
        let y = tape.neighbor_mean(x, nb).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 1.0, 0.0]);
    }
}
