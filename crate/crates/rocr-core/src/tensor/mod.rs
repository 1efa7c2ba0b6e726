//! Minimal reverse-mode autodiff over n-dimensional f64 arrays.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Operations
//! append nodes and return [`TensorId`] handles; [`Tape::backward`] walks the
//! nodes in reverse construction order and accumulates gradients, so the
//! summation order is fixed and results are bit-reproducible. Trainable
//! leaves are injected from a [`params::ParamSet`] and their gradients are
//! exported back after the backward pass.
//!
//! Everything is stored row-major in 64-bit floats. Checkpoints round to
//! 32-bit on disk (see [`params`]).

pub mod params;

use crate::error::Error;
use crate::Result;

pub use params::{grad_check, sgd_step, ParamSet};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

/// Pointwise nonlinearity selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    /// Non-trainable input.
    Leaf,
    /// Trainable leaf; gradient exported under this ParamSet key.
    Param(String),
    Add(TensorId, TensorId),
    Mul(TensorId, TensorId),
    MulConst(TensorId, f64),
    Unary(TensorId, Activation),
    Softmax(TensorId),
    /// Flat concatenation along axis 0.
    Concat(Vec<TensorId>),
    /// Contiguous flat range of the parent's data.
    Slice { src: TensorId, start: usize },
    Dot(TensorId, TensorId),
    /// sum_i weights[i] * items[i], every item the same shape.
    WeightedSum {
        weights: TensorId,
        items: Vec<TensorId>,
    },
    Linear {
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
    },
    Conv2d {
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
    },
    MaxPool2x2 { x: TensorId, argmax: Vec<usize> },
    AvgPool2x2 { x: TensorId },
    /// [C,H,W] -> [H*W, 9C]: the zero-padded 3x3 neighborhood of every cell.
    Windows3x3 { x: TensorId },
    /// [C,H,W] -> [W, C*H]: one row per image column.
    ColumnMajor { x: TensorId },
    SumAll(TensorId),
    CrossEntropy { logits: TensorId, target: usize },
    /// Mean binary cross-entropy from logits over entries with mask > 0.
    BceWithLogitsMean {
        logits: TensorId,
        labels: Vec<f64>,
        mask: Vec<f64>,
        count: usize,
    },
    /// Mean smooth-L1 against constant targets over entries with mask > 0.
    SmoothL1Mean {
        pred: TensorId,
        targets: Vec<f64>,
        mask: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
}

/// Record of one forward pass: the operation graph plus, after
/// [`Tape::backward`], a gradient buffer per node.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
    param_nodes: std::collections::HashMap<String, TensorId>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { shape, data, op });
        TensorId(self.nodes.len() - 1)
    }

    /// Non-trainable input tensor.
    pub fn leaf(&mut self, shape: &[usize], data: Vec<f64>) -> Result<TensorId> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf))
    }

    /// Inject a trainable parameter. Repeated calls with the same name reuse
    /// the node, so fan-out gradients accumulate on one leaf.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<TensorId> {
        if let Some(&id) = self.param_nodes.get(name) {
            return Ok(id);
        }
        let p = params
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter {name:?}")))?;
        let id = self.push(p.shape.clone(), p.data.clone(), Op::Param(name.to_string()));
        self.param_nodes.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn len(&self, id: TensorId) -> usize {
        self.nodes[id.0].data.len()
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.len(id), 1);
        self.nodes[id.0].data[0]
    }

    /// Gradient buffer of a node; valid after [`Tape::backward`].
    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.grads[id.0]
    }

    // ---- elementwise and vector ops ------------------------------------

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "mul: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Mul(a, b)))
    }

    pub fn mul_const(&mut self, a: TensorId, c: f64) -> TensorId {
        let data = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::MulConst(a, c))
    }

    pub fn activation(&mut self, a: TensorId, kind: Activation) -> TensorId {
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| match kind {
                Activation::Relu => x.max(0.0),
                Activation::Sigmoid => sigmoid(x),
                Activation::Tanh => x.tanh(),
            })
            .collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::Unary(a, kind))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid_op(&mut self, a: TensorId) -> TensorId {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh_op(&mut self, a: TensorId) -> TensorId {
        self.activation(a, Activation::Tanh)
    }

    /// Numerically stable softmax over a vector (max-subtraction).
    pub fn softmax(&mut self, a: TensorId) -> TensorId {
        let x = &self.nodes[a.0].data;
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let data = exps.iter().map(|e| e / sum).collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::Softmax(a))
    }

    pub fn concat(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::shape("concat of zero tensors"));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|&p| self.len(p)).sum());
        for &p in parts {
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let shape = vec![data.len()];
        Ok(self.push(shape, data, Op::Concat(parts.to_vec())))
    }

    /// Contiguous range [start, start+len) of the parent's flat data,
    /// reshaped to `shape`.
    pub fn slice(&mut self, src: TensorId, start: usize, shape: &[usize]) -> Result<TensorId> {
        let len: usize = shape.iter().product();
        if start + len > self.len(src) {
            return Err(Error::shape(format!(
                "slice [{start}, {}) out of range for length {}",
                start + len,
                self.len(src)
            )));
        }
        let data = self.nodes[src.0].data[start..start + len].to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Slice { src, start }))
    }

    pub fn dot(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.len(a) != self.len(b) {
            return Err(Error::shape(format!(
                "dot: lengths {} vs {}",
                self.len(a),
                self.len(b)
            )));
        }
        let s: f64 = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(vec![1], vec![s], Op::Dot(a, b)))
    }

    /// sum_i weights[i] * items[i]; `weights` is a vector of length
    /// `items.len()`, items share one shape.
    pub fn weighted_sum(&mut self, weights: TensorId, items: &[TensorId]) -> Result<TensorId> {
        if self.len(weights) != items.len() {
            return Err(Error::shape(format!(
                "weighted_sum: {} weights for {} items",
                self.len(weights),
                items.len()
            )));
        }
        if items.is_empty() {
            return Err(Error::shape("weighted_sum of zero items"));
        }
        let dim = self.len(items[0]);
        let mut data = vec![0.0; dim];
        for (i, &it) in items.iter().enumerate() {
            if self.len(it) != dim {
                return Err(Error::shape("weighted_sum: item shapes differ"));
            }
            let wv = self.nodes[weights.0].data[i];
            for (o, v) in data.iter_mut().zip(&self.nodes[it.0].data) {
                *o += wv * v;
            }
        }
        let shape = self.nodes[items[0].0].shape.clone();
        Ok(self.push(
            shape,
            data,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        ))
    }

    /// weight [m,n] · x [n] + bias [m].
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: Option<TensorId>) -> Result<TensorId> {
        let (ws, xs) = (self.shape(w), self.shape(x));
        if ws.len() != 2 || xs.iter().product::<usize>() != ws[1] {
            return Err(Error::shape(format!(
                "linear: weight {ws:?} against input {xs:?}"
            )));
        }
        let (m, n) = (ws[0], ws[1]);
        if let Some(bi) = b {
            if self.len(bi) != m {
                return Err(Error::shape(format!(
                    "linear: bias length {} for {} outputs",
                    self.len(bi),
                    m
                )));
            }
        }
        let mut data = vec![0.0; m];
        {
            let wd = &self.nodes[w.0].data;
            let xd = &self.nodes[x.0].data;
            for i in 0..m {
                let row = &wd[i * n..(i + 1) * n];
                let mut acc = 0.0;
                for (a, b) in row.iter().zip(xd) {
                    acc += a * b;
                }
                data[i] = acc;
            }
            if let Some(bi) = b {
                let bd = &self.nodes[bi.0].data;
                for i in 0..m {
                    data[i] += bd[i];
                }
            }
        }
        Ok(self.push(vec![m], data, Op::Linear { x, w, b }))
    }

    // ---- spatial ops ----------------------------------------------------

    /// Cross-correlation of x [C_in,H,W] with kernels [C_out,C_in,kh,kw]
    /// plus bias [C_out]; zero padding.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d: input {xs:?} kernels {ws:?} (want [C,H,W] and [Co,Ci,kh,kw])"
            )));
        }
        let (cin, h, wid) = (xs[0], xs[1], xs[2]);
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wcin != cin {
            return Err(Error::shape(format!(
                "conv2d: kernel expects {wcin} input channels, input has {cin}"
            )));
        }
        if self.len(b) != cout {
            return Err(Error::shape(format!(
                "conv2d: bias length {} for {cout} output channels",
                self.len(b)
            )));
        }
        if stride == 0 || kh == 0 || kw == 0 {
            return Err(Error::shape("conv2d: zero stride or kernel dim"));
        }
        if h + 2 * pad < kh || wid + 2 * pad < kw {
            return Err(Error::shape(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                wid + 2 * pad
            )));
        }
        let h_out = (h + 2 * pad - kh) / stride + 1;
        let w_out = (wid + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; cout * h_out * w_out];
        {
            let xd = &self.nodes[x.0].data;
            let wd = &self.nodes[w.0].data;
            let bd = &self.nodes[b.0].data;
            for co in 0..cout {
                let out_c = &mut out[co * h_out * w_out..(co + 1) * h_out * w_out];
                out_c.fill(bd[co]);
                for ci in 0..cin {
                    let x_c = &xd[ci * h * wid..(ci + 1) * h * wid];
                    let w_c = &wd[(co * cin + ci) * kh * kw..(co * cin + ci + 1) * kh * kw];
                    for ky in 0..kh {
                        for oy in 0..h_out {
                            let iy = (oy * stride + ky) as i64 - pad as i64;
                            if iy < 0 || iy >= h as i64 {
                                continue;
                            }
                            let x_row = &x_c[iy as usize * wid..(iy as usize + 1) * wid];
                            let out_row = &mut out_c[oy * w_out..(oy + 1) * w_out];
                            for kx in 0..kw {
                                let wv = w_c[ky * kw + kx];
                                if wv == 0.0 {
                                    continue;
                                }
                                // valid ox range: 0 <= ox*stride + kx - pad < wid
                                let off = kx as i64 - pad as i64;
                                for ox in 0..w_out {
                                    let ix = ox as i64 * stride as i64 + off;
                                    if ix < 0 || ix >= wid as i64 {
                                        continue;
                                    }
                                    out_row[ox] += wv * x_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            vec![cout, h_out, w_out],
            out,
            Op::Conv2d { x, w, b, stride, pad },
        ))
    }

    /// 2x2 max pool, stride 2, floor semantics on odd dims.
    pub fn max_pool_2x2(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape(format!("max_pool_2x2: input {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(Error::shape(format!("max_pool_2x2: input {h}x{w} too small")));
        }
        let mut out = vec![0.0; c * ho * wo];
        let mut argmax = vec![0usize; c * ho * wo];
        let xd = &self.nodes[x.0].data;
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ci * h * w + (oy * 2 + dy) * w + ox * 2 + dx;
                            if xd[i] > best {
                                best = xd[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = ci * ho * wo + oy * wo + ox;
                    out[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
        Ok(self.push(vec![c, ho, wo], out, Op::MaxPool2x2 { x, argmax }))
    }

    /// 2x2 average pool, stride 2, floor semantics on odd dims.
    pub fn avg_pool_2x2(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape(format!("avg_pool_2x2: input {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(Error::shape(format!("avg_pool_2x2: input {h}x{w} too small")));
        }
        let mut out = vec![0.0; c * ho * wo];
        let xd = &self.nodes[x.0].data;
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            s += xd[ci * h * w + (oy * 2 + dy) * w + ox * 2 + dx];
                        }
                    }
                    out[ci * ho * wo + oy * wo + ox] = s * 0.25;
                }
            }
        }
        Ok(self.push(vec![c, ho, wo], out, Op::AvgPool2x2 { x }))
    }

    /// For every cell of a [C,H,W] map, its zero-padded 3x3 neighborhood
    /// flattened to a row: output [H*W, 9C], row r*W+c, column ci*9+ky*3+kx.
    pub fn windows_3x3(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape(format!("windows_3x3: input {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let mut out = vec![0.0; h * w * 9 * c];
        let xd = &self.nodes[x.0].data;
        let row_len = 9 * c;
        for r in 0..h {
            for col in 0..w {
                let base = (r * w + col) * row_len;
                for ci in 0..c {
                    for ky in 0..3 {
                        let iy = r as i64 + ky as i64 - 1;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = col as i64 + kx as i64 - 1;
                            if ix < 0 || ix >= w as i64 {
                                continue;
                            }
                            out[base + ci * 9 + ky * 3 + kx] =
                                xd[ci * h * w + iy as usize * w + ix as usize];
                        }
                    }
                }
            }
        }
        Ok(self.push(vec![h * w, row_len], out, Op::Windows3x3 { x }))
    }

    /// [C,H,W] -> [W, C*H]: row j holds column j of the map, channel-major.
    pub fn column_major(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape(format!("column_major: input {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let mut out = vec![0.0; w * c * h];
        let xd = &self.nodes[x.0].data;
        for j in 0..w {
            for ci in 0..c {
                for r in 0..h {
                    out[j * c * h + ci * h + r] = xd[ci * h * w + r * w + j];
                }
            }
        }
        Ok(self.push(vec![w, c * h], out, Op::ColumnMajor { x }))
    }

    // ---- reductions and losses -------------------------------------------

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        self.push(vec![1], vec![s], Op::SumAll(x))
    }

    /// -log softmax(logits)[target].
    pub fn cross_entropy(&mut self, logits: TensorId, target: usize) -> Result<TensorId> {
        let n = self.len(logits);
        if target >= n {
            return Err(Error::Invalid(format!(
                "cross_entropy: target {target} out of range for {n} classes"
            )));
        }
        let x = &self.nodes[logits.0].data;
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let loss = lse - x[target];
        Ok(self.push(vec![1], vec![loss], Op::CrossEntropy { logits, target }))
    }

    /// Mean of the stable BCE-from-logits over entries with mask > 0;
    /// defined as 0 when the mask is empty.
    pub fn bce_with_logits_mean(
        &mut self,
        logits: TensorId,
        labels: Vec<f64>,
        mask: Vec<f64>,
    ) -> Result<TensorId> {
        let n = self.len(logits);
        if labels.len() != n || mask.len() != n {
            return Err(Error::shape(format!(
                "bce: logits {n}, labels {}, mask {}",
                labels.len(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m > 0.0).count();
        let mut total = 0.0;
        if count > 0 {
            let z = &self.nodes[logits.0].data;
            for i in 0..n {
                if mask[i] > 0.0 {
                    total += z[i].max(0.0) - z[i] * labels[i] + (1.0 + (-z[i].abs()).exp()).ln();
                }
            }
            total /= count as f64;
        }
        Ok(self.push(
            vec![1],
            vec![total],
            Op::BceWithLogitsMean {
                logits,
                labels,
                mask,
                count,
            },
        ))
    }

    /// Mean smooth-L1 (quadratic below 1, linear above) against constant
    /// targets, over entries with mask > 0; 0 when the mask is empty.
    pub fn smooth_l1_mean(
        &mut self,
        pred: TensorId,
        targets: Vec<f64>,
        mask: Vec<f64>,
    ) -> Result<TensorId> {
        let n = self.len(pred);
        if targets.len() != n || mask.len() != n {
            return Err(Error::shape(format!(
                "smooth_l1: pred {n}, targets {}, mask {}",
                targets.len(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m > 0.0).count();
        let mut total = 0.0;
        if count > 0 {
            let p = &self.nodes[pred.0].data;
            for i in 0..n {
                if mask[i] > 0.0 {
                    let d = p[i] - targets[i];
                    total += if d.abs() < 1.0 {
                        0.5 * d * d
                    } else {
                        d.abs() - 0.5
                    };
                }
            }
            total /= count as f64;
        }
        Ok(self.push(
            vec![1],
            vec![total],
            Op::SmoothL1Mean {
                pred,
                targets,
                mask,
                count,
            },
        ))
    }

    // ---- composites -------------------------------------------------------

    /// One LSTM cell step. `w` is [4u, d+u] with gate rows ordered
    /// (input, forget, cell, output); `b` is [4u].
    ///
    /// c' = sigmoid(f) * c + sigmoid(i) * tanh(g); h' = sigmoid(o) * tanh(c').
    pub fn lstm_step(
        &mut self,
        x: TensorId,
        h: TensorId,
        c: TensorId,
        w: TensorId,
        b: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        let u = self.len(h);
        if self.len(c) != u {
            return Err(Error::shape(format!(
                "lstm_step: h has {u} units, c has {}",
                self.len(c)
            )));
        }
        let ws = self.shape(w);
        if ws.len() != 2 || ws[0] != 4 * u || ws[1] != self.len(x) + u {
            return Err(Error::shape(format!(
                "lstm_step: weight {ws:?} for input {} + hidden {u}",
                self.len(x)
            )));
        }
        let xi = self.concat(&[x, h])?;
        let z = self.linear(xi, w, Some(b))?;
        let i_gate = self.slice(z, 0, &[u])?;
        let f_gate = self.slice(z, u, &[u])?;
        let g_gate = self.slice(z, 2 * u, &[u])?;
        let o_gate = self.slice(z, 3 * u, &[u])?;
        let i = self.sigmoid_op(i_gate);
        let f = self.sigmoid_op(f_gate);
        let g = self.tanh_op(g_gate);
        let o = self.sigmoid_op(o_gate);
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_new = self.add(fc, ig)?;
        let tc = self.tanh_op(c_new);
        let h_new = self.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse pass from a scalar loss. Gradients accumulate (+=) across
    /// fan-out, visiting nodes in reverse construction order.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.len(loss) != 1 {
            return Err(Error::Invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = self.nodes.iter().map(|n| vec![0.0; n.data.len()]).collect();
        self.grads[loss.0][0] = 1.0;

        for id in (0..=loss.0).rev() {
            let g = std::mem::take(&mut self.grads[id]);
            let nodes = &self.nodes;
            let node = &nodes[id];
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::Add(a, b) => {
                    for (d, gv) in self.grads[a.0].iter_mut().zip(&g) {
                        *d += gv;
                    }
                    for (d, gv) in self.grads[b.0].iter_mut().zip(&g) {
                        *d += gv;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        self.grads[a.0][i] += g[i] * nodes[b.0].data[i];
                    }
                    for i in 0..g.len() {
                        self.grads[b.0][i] += g[i] * nodes[a.0].data[i];
                    }
                }
                Op::MulConst(a, c) => {
                    for (d, gv) in self.grads[a.0].iter_mut().zip(&g) {
                        *d += gv * c;
                    }
                }
                Op::Unary(a, kind) => {
                    let y = &node.data;
                    let x = &nodes[a.0].data;
                    let da = &mut self.grads[a.0];
                    match kind {
                        Activation::Relu => {
                            for i in 0..g.len() {
                                if x[i] > 0.0 {
                                    da[i] += g[i];
                                }
                            }
                        }
                        Activation::Sigmoid => {
                            for i in 0..g.len() {
                                da[i] += g[i] * y[i] * (1.0 - y[i]);
                            }
                        }
                        Activation::Tanh => {
                            for i in 0..g.len() {
                                da[i] += g[i] * (1.0 - y[i] * y[i]);
                            }
                        }
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.data;
                    let dot: f64 = g.iter().zip(y).map(|(gv, yv)| gv * yv).sum();
                    let da = &mut self.grads[a.0];
                    for i in 0..g.len() {
                        da[i] += y[i] * (g[i] - dot);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = nodes[p.0].data.len();
                        for (d, gv) in self.grads[p.0].iter_mut().zip(&g[off..off + len]) {
                            *d += gv;
                        }
                        off += len;
                    }
                }
                Op::Slice { src, start } => {
                    for (d, gv) in self.grads[src.0][*start..*start + g.len()]
                        .iter_mut()
                        .zip(&g)
                    {
                        *d += gv;
                    }
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    let gv = g[0];
                    for i in 0..nodes[a.0].data.len() {
                        self.grads[a.0][i] += gv * nodes[b.0].data[i];
                    }
                    for i in 0..nodes[b.0].data.len() {
                        self.grads[b.0][i] += gv * nodes[a.0].data[i];
                    }
                }
                Op::WeightedSum { weights, items } => {
                    for (i, &it) in items.iter().enumerate() {
                        let wv = nodes[weights.0].data[i];
                        let mut dw = 0.0;
                        for j in 0..g.len() {
                            dw += g[j] * nodes[it.0].data[j];
                            self.grads[it.0][j] += wv * g[j];
                        }
                        self.grads[weights.0][i] += dw;
                    }
                }
                Op::Linear { x, w, b } => {
                    let ws = &nodes[w.0].shape;
                    let (m, n) = (ws[0], ws[1]);
                    let xd = &nodes[x.0].data;
                    let wd = &nodes[w.0].data;
                    {
                        let dw = &mut self.grads[w.0];
                        for i in 0..m {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &mut dw[i * n..(i + 1) * n];
                            for j in 0..n {
                                row[j] += gi * xd[j];
                            }
                        }
                    }
                    {
                        let dx = &mut self.grads[x.0];
                        for i in 0..m {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &wd[i * n..(i + 1) * n];
                            for j in 0..n {
                                dx[j] += gi * row[j];
                            }
                        }
                    }
                    if let Some(bi) = b {
                        for (d, gv) in self.grads[bi.0].iter_mut().zip(&g) {
                            *d += gv;
                        }
                    }
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let (stride, pad) = (*stride, *pad);
                    let xs = &nodes[x.0].shape;
                    let ws = &nodes[w.0].shape;
                    let (cin, h, wid) = (xs[0], xs[1], xs[2]);
                    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
                    let h_out = node.shape[1];
                    let w_out = node.shape[2];
                    let xd = &nodes[x.0].data;
                    let wd = &nodes[w.0].data;
                    {
                        let db = &mut self.grads[b.0];
                        for co in 0..cout {
                            db[co] += g[co * h_out * w_out..(co + 1) * h_out * w_out]
                                .iter()
                                .sum::<f64>();
                        }
                    }
                    for co in 0..cout {
                        let g_c = &g[co * h_out * w_out..(co + 1) * h_out * w_out];
                        for ci in 0..cin {
                            let x_c = &xd[ci * h * wid..(ci + 1) * h * wid];
                            let w_base = (co * cin + ci) * kh * kw;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let off_x = kx as i64 - pad as i64;
                                    let mut dw_acc = 0.0;
                                    for oy in 0..h_out {
                                        let iy = (oy * stride + ky) as i64 - pad as i64;
                                        if iy < 0 || iy >= h as i64 {
                                            continue;
                                        }
                                        let x_row =
                                            &x_c[iy as usize * wid..(iy as usize + 1) * wid];
                                        let g_row = &g_c[oy * w_out..(oy + 1) * w_out];
                                        for ox in 0..w_out {
                                            let ix = ox as i64 * stride as i64 + off_x;
                                            if ix < 0 || ix >= wid as i64 {
                                                continue;
                                            }
                                            dw_acc += g_row[ox] * x_row[ix as usize];
                                        }
                                    }
                                    self.grads[w.0][w_base + ky * kw + kx] += dw_acc;
                                }
                            }
                        }
                    }
                    {
                        let dx = &mut self.grads[x.0];
                        for co in 0..cout {
                            let g_c = &g[co * h_out * w_out..(co + 1) * h_out * w_out];
                            for ci in 0..cin {
                                let dx_c = &mut dx[ci * h * wid..(ci + 1) * h * wid];
                                let w_c =
                                    &wd[(co * cin + ci) * kh * kw..(co * cin + ci + 1) * kh * kw];
                                for ky in 0..kh {
                                    for oy in 0..h_out {
                                        let iy = (oy * stride + ky) as i64 - pad as i64;
                                        if iy < 0 || iy >= h as i64 {
                                            continue;
                                        }
                                        let dx_row = &mut dx_c
                                            [iy as usize * wid..(iy as usize + 1) * wid];
                                        let g_row = &g_c[oy * w_out..(oy + 1) * w_out];
                                        for kx in 0..kw {
                                            let wv = w_c[ky * kw + kx];
                                            if wv == 0.0 {
                                                continue;
                                            }
                                            let off = kx as i64 - pad as i64;
                                            for ox in 0..w_out {
                                                let ix = ox as i64 * stride as i64 + off;
                                                if ix < 0 || ix >= wid as i64 {
                                                    continue;
                                                }
                                                dx_row[ix as usize] += wv * g_row[ox];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::MaxPool2x2 { x, argmax } => {
                    let dx = &mut self.grads[x.0];
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += g[o];
                    }
                }
                Op::AvgPool2x2 { x } => {
                    let xs = &nodes[x.0].shape;
                    let (c, h, w) = (xs[0], xs[1], xs[2]);
                    let (ho, wo) = (node.shape[1], node.shape[2]);
                    let dx = &mut self.grads[x.0];
                    for ci in 0..c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let gv = g[ci * ho * wo + oy * wo + ox] * 0.25;
                                for dy in 0..2 {
                                    for dxi in 0..2 {
                                        dx[ci * h * w + (oy * 2 + dy) * w + ox * 2 + dxi] += gv;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Windows3x3 { x } => {
                    let xs = &nodes[x.0].shape;
                    let (c, h, w) = (xs[0], xs[1], xs[2]);
                    let row_len = 9 * c;
                    let dx = &mut self.grads[x.0];
                    for r in 0..h {
                        for col in 0..w {
                            let base = (r * w + col) * row_len;
                            for ci in 0..c {
                                for ky in 0..3 {
                                    let iy = r as i64 + ky as i64 - 1;
                                    if iy < 0 || iy >= h as i64 {
                                        continue;
                                    }
                                    for kx in 0..3 {
                                        let ix = col as i64 + kx as i64 - 1;
                                        if ix < 0 || ix >= w as i64 {
                                            continue;
                                        }
                                        dx[ci * h * w + iy as usize * w + ix as usize] +=
                                            g[base + ci * 9 + ky * 3 + kx];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::ColumnMajor { x } => {
                    let xs = &nodes[x.0].shape;
                    let (c, h, w) = (xs[0], xs[1], xs[2]);
                    let dx = &mut self.grads[x.0];
                    for j in 0..w {
                        for ci in 0..c {
                            for r in 0..h {
                                dx[ci * h * w + r * w + j] += g[j * c * h + ci * h + r];
                            }
                        }
                    }
                }
                Op::SumAll(x) => {
                    for d in self.grads[x.0].iter_mut() {
                        *d += g[0];
                    }
                }
                Op::CrossEntropy { logits, target } => {
                    let z = &nodes[logits.0].data;
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
                    let dl = &mut self.grads[logits.0];
                    for i in 0..z.len() {
                        let p = (z[i] - m).exp() / sum;
                        let delta = if i == *target { 1.0 } else { 0.0 };
                        dl[i] += g[0] * (p - delta);
                    }
                }
                Op::BceWithLogitsMean {
                    logits,
                    labels,
                    mask,
                    count,
                } => {
                    if *count > 0 {
                        let z = &nodes[logits.0].data;
                        let scale = g[0] / *count as f64;
                        let dl = &mut self.grads[logits.0];
                        for i in 0..z.len() {
                            if mask[i] > 0.0 {
                                dl[i] += scale * (sigmoid(z[i]) - labels[i]);
                            }
                        }
                    }
                }
                Op::SmoothL1Mean {
                    pred,
                    targets,
                    mask,
                    count,
                } => {
                    if *count > 0 {
                        let p = &nodes[pred.0].data;
                        let scale = g[0] / *count as f64;
                        let dp = &mut self.grads[pred.0];
                        for i in 0..p.len() {
                            if mask[i] > 0.0 {
                                let d = p[i] - targets[i];
                                dp[i] += scale * d.clamp(-1.0, 1.0);
                            }
                        }
                    }
                }
            }
            self.grads[id] = g;
        }
        Ok(())
    }

    /// After backward: accumulate this tape's parameter gradients into the
    /// ParamSet (+=). Leaves without a Param op are untouched.
    pub fn export_grads(&self, params: &mut ParamSet) {
        for (name, &id) in &self.param_nodes {
            if let Some(p) = params.get_mut(name) {
                let src = &self.grads[id.0];
                let dst = p.grad.get_or_insert_with(|| vec![0.0; src.len()]);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }

    /// Analytic gradient per parameter name; valid after backward.
    pub fn param_grads(&self) -> std::collections::BTreeMap<String, Vec<f64>> {
        self.param_nodes
            .iter()
            .map(|(name, &id)| (name.clone(), self.grads[id.0].clone()))
            .collect()
    }
}
