use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels as k;
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Operation kinds with their attributes.
#[derive(Clone, Debug)]
pub enum OpKind {
    /// a[m,k] · b[k,n]
    MatMul,
    /// a[b,m,k] · b[b,k,n], per batch entry
    BatchedMatMul,
    /// x[N,Cin,T,V] * w[Cout,Cin,K] + b[Cout], 1-D convolution along T
    Conv1dTime { stride: usize, pad: usize },
    /// a + b, rhs broadcast over leading/size-1 axes
    Add,
    /// a ⊙ b, rhs broadcast
    Mul,
    Relu,
    Sigmoid,
    /// Softmax over the last dim; optional second input is a 0/1 mask
    /// (broadcastable) applied as an additive -1e30 before exponentiation,
    /// so masked positions get exactly zero weight.
    Softmax,
    /// Over the last dim: (x - mean) * rstd * gamma + beta
    LayerNorm { eps: f64 },
    /// Per-channel (axis 1) normalization. With `use_batch_stats` the
    /// statistics are computed from the input (differentiable); otherwise
    /// two extra inputs supply fixed mean and variance.
    BatchNorm { eps: f64, use_batch_stats: bool },
    MeanAxes { axes: Vec<usize> },
    SumAxes { axes: Vec<usize> },
    Concat { axis: usize },
    /// x[..,in] · w[in,out] + b[out]
    Linear,
    Permute { perm: Vec<usize> },
    Reshape { shape: Vec<usize> },
    Scale { c: f64 },
    AddScalar { c: f64 },
    SumAll,
    MeanAll,
    /// Gather rows (axis 0) by index.
    SelectRows { indices: Vec<usize> },
    /// Mean over rows of -log softmax(logits)[label]; logits [N,K].
    CrossEntropy { labels: Vec<usize> },
    /// Mean elementwise binary cross entropy on sigmoid(logits);
    /// inputs: logits, targets (same shape, targets not differentiated).
    BceWithLogits,
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::BatchedMatMul => "batched_matmul",
            OpKind::Conv1dTime { .. } => "conv1d_time",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm { .. } => "layernorm",
            OpKind::BatchNorm { .. } => "batchnorm",
            OpKind::MeanAxes { .. } => "mean_axes",
            OpKind::SumAxes { .. } => "sum_axes",
            OpKind::Concat { .. } => "concat",
            OpKind::Linear => "linear",
            OpKind::Permute { .. } => "permute",
            OpKind::Reshape { .. } => "reshape",
            OpKind::Scale { .. } => "scale",
            OpKind::AddScalar { .. } => "add_scalar",
            OpKind::SumAll => "sum_all",
            OpKind::MeanAll => "mean_all",
            OpKind::SelectRows { .. } => "select_rows",
            OpKind::CrossEntropy { .. } => "cross_entropy",
            OpKind::BceWithLogits => "bce_with_logits",
        }
    }

    /// Input positions that receive gradients. Everything else (masks,
    /// fixed statistics, targets) is treated as a constant.
    fn differentiable_inputs(&self, n_inputs: usize) -> usize {
        match self {
            OpKind::Softmax => 1,
            OpKind::BatchNorm {
                use_batch_stats: false,
                ..
            } => 3,
            OpKind::BceWithLogits => 1,
            _ => n_inputs,
        }
    }
}

/// Multiply-accumulate counts per op family, accumulated at op execution.
/// One MAC is counted as one FLOP; normalization, activations, pooling and
/// elementwise work are excluded. The convention is fixed so reported
/// numbers are comparable across configurations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlopCounts {
    pub matmul: u64,
    pub batched_matmul: u64,
    pub conv: u64,
    pub linear: u64,
}

impl FlopCounts {
    pub fn total(&self) -> u64 {
        self.matmul + self.batched_matmul + self.conv + self.linear
    }

    /// Attention score/apply MACs: batched matmuls are used only there.
    pub fn attention(&self) -> u64 {
        self.batched_matmul
    }
}

struct Record {
    kind: OpKind,
    inputs: Vec<Var>,
    out: Var,
    saved: Vec<Vec<f64>>,
}

/// Wengert tape: ordered record of executed ops with the values needed for
/// the backward sweep. A tape is confined to one thread of execution;
/// parallelism happens inside the kernels and across independent tapes.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    records: Vec<Record>,
    backward_done: bool,
    flops: FlopCounts,
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

    pub fn flops(&self) -> FlopCounts {
        self.flops
    }

    /// Inserts a value as a leaf; `requires_grad` is taken from the tensor.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_node(t.clone())
    }

    pub fn leaf_from(
        &mut self,
        shape: impl Into<Vec<usize>>,
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<Var> {
        let t = Tensor::from_vec(shape, data)?.with_requires_grad(requires_grad);
        Ok(self.push_node(t))
    }

    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Var> {
        self.leaf_from(shape, data, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push_node(Tensor::scalar(v))
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].data()
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].numel()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad()
    }

    fn push_node(&mut self, t: Tensor) -> Var {
        self.nodes.push(t);
        Var(self.nodes.len() - 1)
    }

    // ── generic forward ──────────────────────────────────────────────────

    /// Executes an op, recording it when any differentiable input requires
    /// gradients.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        // Reshape shares the input buffer instead of copying.
        if let OpKind::Reshape { shape } = &kind {
            let x = one(inputs).ok_or_else(|| Error::Shape {
                op: kind.name(),
                detail: format!("expected 1 input, got {}", inputs.len()),
            })?;
            let numel: usize = shape.iter().product();
            if numel != self.numel(x) {
                return Err(self.shape_err(&kind, inputs, "element count mismatch"));
            }
            let data = self.nodes[x.0].data_arc();
            let requires = self.nodes[x.0].requires_grad();
            let out = self.push_node(Tensor::from_arc(shape.clone(), data, requires));
            if requires {
                self.records.push(Record {
                    kind,
                    inputs: inputs.to_vec(),
                    out,
                    saved: vec![],
                });
            }
            return Ok(out);
        }
        let (shape, data, saved) = self.compute(&kind, inputs)?;
        let n_diff = kind.differentiable_inputs(inputs.len());
        let requires_grad = inputs[..n_diff.min(inputs.len())]
            .iter()
            .any(|v| self.nodes[v.0].requires_grad());
        let out = self.push_node(
            Tensor::from_arc(shape, Arc::new(data), requires_grad),
        );
        if requires_grad {
            self.records.push(Record {
                kind,
                inputs: inputs.to_vec(),
                out,
                saved,
            });
        }
        Ok(out)
    }

    fn shape_err(&self, kind: &OpKind, inputs: &[Var], detail: &str) -> Error {
        let shapes: Vec<Vec<usize>> = inputs.iter().map(|v| self.shape(*v).to_vec()).collect();
        Error::Shape {
            op: kind.name(),
            detail: format!("{detail}; input shapes {shapes:?}"),
        }
    }

    #[allow(clippy::type_complexity)]
    fn compute(
        &mut self,
        kind: &OpKind,
        inputs: &[Var],
    ) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>)> {
        let arity_err = |want: &str| -> Error {
            Error::Shape {
                op: kind.name(),
                detail: format!("expected {want} inputs, got {}", inputs.len()),
            }
        };
        match kind {
            OpKind::MatMul => {
                let [a, b] = two(inputs).ok_or_else(|| arity_err("2"))?;
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                    return Err(self.shape_err(kind, inputs, "need [m,k]·[k,n]"));
                }
                let (m, kk, n) = (sa[0], sa[1], sb[1]);
                self.flops.matmul += (m * kk * n) as u64;
                let out = k::matmul(self.data(a), self.data(b), m, kk, n);
                Ok((vec![m, n], out, vec![]))
            }
            OpKind::BatchedMatMul => {
                let [a, b] = two(inputs).ok_or_else(|| arity_err("2"))?;
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
                    return Err(self.shape_err(kind, inputs, "need [b,m,k]·[b,k,n]"));
                }
                let (bt, m, kk, n) = (sa[0], sa[1], sa[2], sb[2]);
                self.flops.batched_matmul += (bt * m * kk * n) as u64;
                let out = k::batched_matmul(self.data(a), self.data(b), bt, m, kk, n);
                Ok((vec![bt, m, n], out, vec![]))
            }
            OpKind::Conv1dTime { stride, pad } => {
                let [x, w, b] = three(inputs).ok_or_else(|| arity_err("3"))?;
                let sx = self.shape(x).to_vec();
                let sw = self.shape(w).to_vec();
                let sb = self.shape(b).to_vec();
                if sx.len() != 4 || sw.len() != 3 || sb.len() != 1 {
                    return Err(self.shape_err(kind, inputs, "need x[N,C,T,V], w[Co,Ci,K], b[Co]"));
                }
                let (n, cin, t, v) = (sx[0], sx[1], sx[2], sx[3]);
                let (cout, wcin, kk) = (sw[0], sw[1], sw[2]);
                if wcin != cin || sb[0] != cout {
                    return Err(self.shape_err(kind, inputs, "channel mismatch"));
                }
                if *stride == 0 || t + 2 * pad < kk {
                    return Err(self.shape_err(kind, inputs, "kernel larger than padded input"));
                }
                let to = k::conv_out_len(t, kk, *stride, *pad);
                self.flops.conv += (n * cout * to * v * cin * kk) as u64;
                let out = k::conv1d_time(
                    self.data(x),
                    self.data(w),
                    self.data(b),
                    n,
                    cin,
                    t,
                    v,
                    cout,
                    kk,
                    *stride,
                    *pad,
                );
                Ok((vec![n, cout, to, v], out, vec![]))
            }
            OpKind::Add | OpKind::Mul => {
                let [a, b] = two(inputs).ok_or_else(|| arity_err("2"))?;
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let strides = k::broadcast_strides(&sa, &sb)
                    .ok_or_else(|| self.shape_err(kind, inputs, "rhs not broadcastable to lhs"))?;
                let out = if matches!(kind, OpKind::Add) {
                    k::zip_broadcast(self.data(a), &sa, self.data(b), &strides, |x, y| x + y)
                } else {
                    k::zip_broadcast(self.data(a), &sa, self.data(b), &strides, |x, y| x * y)
                };
                Ok((sa, out, vec![]))
            }
            OpKind::Relu => {
                let x = one(inputs).ok_or_else(|| arity_err("1"))?;
                let out = k::map_unary(self.data(x), |v| if v > 0.0 { v } else { 0.0 });
                Ok((self.shape(x).to_vec(), out, vec![]))
            }
            OpKind::Sigmoid => {
                let x = one(inputs).ok_or_else(|| arity_err("1"))?;
                let out = k::map_unary(self.data(x), sigmoid);
                Ok((self.shape(x).to_vec(), out, vec![]))
            }
            OpKind::Softmax => {
                if inputs.is_empty() || inputs.len() > 2 {
                    return Err(arity_err("1 or 2"));
                }
                let x = inputs[0];
                let sx = self.shape(x).to_vec();
                let mask_strides = if inputs.len() == 2 {
                    let sm = self.shape(inputs[1]).to_vec();
                    Some(k::broadcast_strides(&sx, &sm).ok_or_else(|| {
                        self.shape_err(kind, inputs, "mask not broadcastable to scores")
                    })?)
                } else {
                    None
                };
                let mut out = vec![0.0; self.numel(x)];
                let mask = mask_strides
                    .as_ref()
                    .map(|ms| (self.data(inputs[1]), ms.as_slice()));
                k::softmax_rows(self.data(x), &sx, mask, &mut out);
                Ok((sx, out, vec![]))
            }
            OpKind::LayerNorm { eps } => {
                let [x, gamma, beta] = three(inputs).ok_or_else(|| arity_err("3"))?;
                let sx = self.shape(x).to_vec();
                let c = *sx.last().ok_or_else(|| {
                    self.shape_err(kind, inputs, "input must have at least 1 dim")
                })?;
                if self.shape(gamma) != [c] || self.shape(beta) != [c] {
                    return Err(self.shape_err(kind, inputs, "gamma/beta must be [C]"));
                }
                let rows = self.numel(x) / c;
                let mut out = vec![0.0; self.numel(x)];
                let mut mean = vec![0.0; rows];
                let mut rstd = vec![0.0; rows];
                k::layernorm_rows(
                    self.data(x),
                    c,
                    *eps,
                    self.data(gamma),
                    self.data(beta),
                    &mut out,
                    &mut mean,
                    &mut rstd,
                );
                Ok((sx, out, vec![mean, rstd]))
            }
            OpKind::BatchNorm {
                eps,
                use_batch_stats,
            } => self.compute_batchnorm(kind, inputs, *eps, *use_batch_stats),
            OpKind::MeanAxes { axes } | OpKind::SumAxes { axes } => {
                let x = one(inputs).ok_or_else(|| arity_err("1"))?;
                let sx = self.shape(x).to_vec();
                self.check_axes(kind, inputs, axes, sx.len())?;
                let mean = matches!(kind, OpKind::MeanAxes { .. });
                let out = k::reduce_axes(self.data(x), &sx, axes, mean);
                let out_shape: Vec<usize> = (0..sx.len())
                    .filter(|d| !axes.contains(d))
                    .map(|d| sx[d])
                    .collect();
                Ok((out_shape, out, vec![]))
            }
            OpKind::Concat { axis } => {
                if inputs.is_empty() {
                    return Err(arity_err("at least 1"));
                }
                let s0 = self.shape(inputs[0]).to_vec();
                if *axis >= s0.len() {
                    return Err(self.shape_err(kind, inputs, "axis out of range"));
                }
                let mut axis_total = 0;
                for v in inputs {
                    let s = self.shape(*v);
                    if s.len() != s0.len()
                        || s.iter()
                            .zip(&s0)
                            .enumerate()
                            .any(|(d, (a, b))| d != *axis && a != b)
                    {
                        return Err(self.shape_err(kind, inputs, "shapes differ off the axis"));
                    }
                    axis_total += s[*axis];
                }
                let tail: usize = s0[axis + 1..].iter().product();
                let outer: usize = s0[..*axis].iter().product();
                let mut out_shape = s0.clone();
                out_shape[*axis] = axis_total;
                let mut out = Vec::with_capacity(outer * axis_total * tail);
                for o in 0..outer {
                    for v in inputs {
                        let s = self.shape(*v);
                        let inner = s[*axis] * tail;
                        let d = self.data(*v);
                        out.extend_from_slice(&d[o * inner..(o + 1) * inner]);
                    }
                }
                Ok((out_shape, out, vec![]))
            }
            OpKind::Linear => {
                let [x, w, b] = three(inputs).ok_or_else(|| arity_err("3"))?;
                let sx = self.shape(x).to_vec();
                let sw = self.shape(w).to_vec();
                let sb = self.shape(b).to_vec();
                let input_dim = *sx.last().unwrap_or(&0);
                if sx.is_empty() || sw.len() != 2 || sw[0] != input_dim || sb != [sw[1]] {
                    return Err(self.shape_err(kind, inputs, "need x[..,in], w[in,out], b[out]"));
                }
                let (cin, cout) = (sw[0], sw[1]);
                let rows = self.numel(x) / cin;
                self.flops.linear += (rows * cin * cout) as u64;
                let mut out = k::matmul(self.data(x), self.data(w), rows, cin, cout);
                let bias = self.data(b);
                k::for_each_chunk(&mut out, cout, |_, row| {
                    for (o, &bv) in row.iter_mut().zip(bias) {
                        *o += bv;
                    }
                });
                let mut out_shape = sx;
                *out_shape.last_mut().unwrap() = cout;
                Ok((out_shape, out, vec![]))
            }
            OpKind::Permute { perm } => {
                let x = one(inputs).ok_or_else(|| arity_err("1"))?;
                let sx = self.shape(x).to_vec();
                let mut seen = vec![false; sx.len()];
                if perm.len() != sx.len()
                    || perm.iter().any(|&d| d >= sx.len() || std::mem::replace(&mut seen[d], true))
                {
                    return Err(self.shape_err(kind, inputs, "perm is not a permutation"));
                }
                let out = k::permute(self.data(x), &sx, perm);
                let out_shape: Vec<usize> = perm.iter().map(|&d| sx[d]).collect();
                Ok((out_shape, out, vec![]))
            }
            OpKind::Reshape { .. } => unreachable!("handled in apply"),
            OpKind::Scale { c } => {
                let x = one(inputs).ok_or_else(|| arity_err("1"))?;
                let out = k::map_unary(self.data(x), |v| v * c);
                Ok((self.shape(x).to_vec(), out, vec![]))
            }
            OpKind::AddScalar { c } => {
                let x = one(inputs).ok_or_else(|| arity_err("1"))?;
                let out = k::map_unary(self.data(x), |v| v + c);
                Ok((self.shape(x).to_vec(), out, vec![]))
            }
            OpKind::SumAll | OpKind::MeanAll => {
                let x = one(inputs).ok_or_else(|| arity_err("1"))?;
                let sum: f64 = self.data(x).iter().sum();
                let v = if matches!(kind, OpKind::MeanAll) {
                    sum / self.numel(x) as f64
                } else {
                    sum
                };
                Ok((vec![], vec![v], vec![]))
            }
            OpKind::SelectRows { indices } => {
                let x = one(inputs).ok_or_else(|| arity_err("1"))?;
                let sx = self.shape(x).to_vec();
                if sx.is_empty() {
                    return Err(self.shape_err(kind, inputs, "input must have rows"));
                }
                let rows = sx[0];
                if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
                    return Err(self.shape_err(
                        kind,
                        inputs,
                        &format!("index {bad} out of range for {rows} rows"),
                    ));
                }
                let row_len: usize = sx[1..].iter().product();
                let mut out = Vec::with_capacity(indices.len() * row_len);
                let d = self.data(x);
                for &i in indices {
                    out.extend_from_slice(&d[i * row_len..(i + 1) * row_len]);
                }
                let mut out_shape = sx;
                out_shape[0] = indices.len();
                Ok((out_shape, out, vec![]))
            }
            OpKind::CrossEntropy { labels } => {
                let x = one(inputs).ok_or_else(|| arity_err("1"))?;
                let sx = self.shape(x).to_vec();
                if sx.len() != 2 || labels.len() != sx[0] {
                    return Err(self.shape_err(kind, inputs, "need logits [N,K] and N labels"));
                }
                let (n, kk) = (sx[0], sx[1]);
                if let Some(&bad) = labels.iter().find(|&&l| l >= kk) {
                    return Err(Error::arg(format!(
                        "cross_entropy: label {bad} out of range for {kk} classes"
                    )));
                }
                let d = self.data(x);
                let mut probs = vec![0.0; n * kk];
                let mut total = 0.0;
                for r in 0..n {
                    let row = &d[r * kk..(r + 1) * kk];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                    for (j, &z) in row.iter().enumerate() {
                        probs[r * kk + j] = (z - lse).exp();
                    }
                    total += lse - row[labels[r]];
                }
                Ok((vec![], vec![total / n as f64], vec![probs]))
            }
            OpKind::BceWithLogits => {
                let [z, t] = two(inputs).ok_or_else(|| arity_err("2"))?;
                if self.shape(z) != self.shape(t) {
                    return Err(self.shape_err(kind, inputs, "logits/targets shape mismatch"));
                }
                let (zd, td) = (self.data(z), self.data(t));
                let mut total = 0.0;
                for (&zv, &tv) in zd.iter().zip(td) {
                    total += zv.max(0.0) - zv * tv + (-zv.abs()).exp().ln_1p();
                }
                Ok((vec![], vec![total / zd.len() as f64], vec![]))
            }
        }
    }

    fn check_axes(
        &self,
        kind: &OpKind,
        inputs: &[Var],
        axes: &[usize],
        rank: usize,
    ) -> Result<()> {
        let mut seen = vec![false; rank];
        for &a in axes {
            if a >= rank || std::mem::replace(&mut seen[a], true) {
                return Err(self.shape_err(kind, inputs, "axes must be unique and in range"));
            }
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn compute_batchnorm(
        &mut self,
        kind: &OpKind,
        inputs: &[Var],
        eps: f64,
        use_batch_stats: bool,
    ) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>)> {
        let want = if use_batch_stats { 3 } else { 5 };
        if inputs.len() != want {
            return Err(self.shape_err(kind, inputs, "wrong input count"));
        }
        let x = inputs[0];
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(self.shape_err(kind, inputs, "input must have a channel axis"));
        }
        let c = sx[1];
        for extra in &inputs[1..] {
            if self.shape(*extra) != [c] {
                return Err(self.shape_err(kind, inputs, "per-channel params must be [C]"));
            }
        }
        let d = self.data(x).to_vec();
        let n0 = sx[0];
        let tail: usize = sx[2..].iter().product::<usize>().max(1);
        let m = (n0 * tail) as f64;
        let (mean, var) = if use_batch_stats {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for (cc, mv) in mean.iter_mut().enumerate() {
                let mut acc = 0.0;
                for n in 0..n0 {
                    let base = (n * c + cc) * tail;
                    acc += d[base..base + tail].iter().sum::<f64>();
                }
                *mv = acc / m;
            }
            for (cc, vv) in var.iter_mut().enumerate() {
                let mu = mean[cc];
                let mut acc = 0.0;
                for n in 0..n0 {
                    let base = (n * c + cc) * tail;
                    acc += d[base..base + tail].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>();
                }
                *vv = acc / m;
            }
            (mean, var)
        } else {
            (self.data(inputs[3]).to_vec(), self.data(inputs[4]).to_vec())
        };
        let gamma = self.data(inputs[1]).to_vec();
        let beta = self.data(inputs[2]).to_vec();
        let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; d.len()];
        k::for_each_chunk(&mut out, tail, |offset, chunk| {
            let cc = (offset / tail) % c;
            let (mu, rs, ga, be) = (mean[cc], rstd[cc], gamma[cc], beta[cc]);
            for (j, o) in chunk.iter_mut().enumerate() {
                *o = (d[offset + j] - mu) * rs * ga + be;
            }
        });
        // saved: mean, rstd, var (var only consumed by the caller for
        // running-statistics updates)
        Ok((sx, out, vec![mean, rstd, var]))
    }

    // ── ergonomic wrappers ───────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn batched_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::BatchedMatMul, &[a, b])
    }

    pub fn conv1d_time(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        self.apply(OpKind::Conv1dTime { stride, pad }, &[x, w, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Softmax, &[x])
    }

    pub fn softmax_masked(&mut self, x: Var, mask: Var) -> Result<Var> {
        self.apply(OpKind::Softmax, &[x, mask])
    }

    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.apply(OpKind::LayerNorm { eps }, &[x, gamma, beta])
    }

    /// Layer normalization without learned affine (gamma 1, beta 0).
    pub fn layernorm_plain(&mut self, x: Var, eps: f64) -> Result<Var> {
        let c = *self.shape(x).last().unwrap_or(&1);
        let gamma = self.constant(vec![c], vec![1.0; c])?;
        let beta = self.constant(vec![c], vec![0.0; c])?;
        self.layernorm(x, gamma, beta, eps)
    }

    /// Batch-statistics normalization. Also returns the per-channel batch
    /// mean and (biased) variance so callers can update running statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let out = self.apply(
            OpKind::BatchNorm {
                eps,
                use_batch_stats: true,
            },
            &[x, gamma, beta],
        )?;
        // stats were saved by compute; for unrecorded (no-grad) executions
        // recompute from the record-free path
        if let Some(rec) = self.records.last() {
            if rec.out == out {
                return Ok((out, rec.saved[0].clone(), rec.saved[2].clone()));
            }
        }
        let sx = self.shape(x).to_vec();
        let c = sx[1];
        let tail: usize = sx[2..].iter().product::<usize>().max(1);
        let n0 = sx[0];
        let m = (n0 * tail) as f64;
        let d = self.data(x);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for cc in 0..c {
            let mut acc = 0.0;
            for n in 0..n0 {
                let base = (n * c + cc) * tail;
                acc += d[base..base + tail].iter().sum::<f64>();
            }
            mean[cc] = acc / m;
        }
        for cc in 0..c {
            let mu = mean[cc];
            let mut acc = 0.0;
            for n in 0..n0 {
                let base = (n * c + cc) * tail;
                acc += d[base..base + tail].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>();
            }
            var[cc] = acc / m;
        }
        Ok((out, mean, var))
    }

    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Var,
        var: Var,
        eps: f64,
    ) -> Result<Var> {
        self.apply(
            OpKind::BatchNorm {
                eps,
                use_batch_stats: false,
            },
            &[x, gamma, beta, mean, var],
        )
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.apply(OpKind::MeanAxes { axes: axes.to_vec() }, &[x])
    }

    pub fn sum_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.apply(OpKind::SumAxes { axes: axes.to_vec() }, &[x])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        self.apply(OpKind::Concat { axis }, inputs)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Linear, &[x, w, b])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        self.apply(OpKind::Permute { perm: perm.to_vec() }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(OpKind::Reshape { shape: shape.to_vec() }, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Scale { c }, &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::AddScalar { c }, &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::SumAll, &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::MeanAll, &[x])
    }

    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        self.apply(
            OpKind::SelectRows {
                indices: indices.to_vec(),
            },
            &[x],
        )
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.apply(
            OpKind::CrossEntropy {
                labels: labels.to_vec(),
            },
            &[logits],
        )
    }

    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        self.apply(OpKind::BceWithLogits, &[logits, targets])
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Fills `grad` on every node that
    /// requires gradients (leaves included). Calling it twice without
    /// [`Tape::reset_grads`] is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::RepeatedBackward);
        }
        if self.numel(loss) != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        self.nodes[loss.0].set_grad(Some(vec![1.0]));
        let records = std::mem::take(&mut self.records);
        for rec in records.iter().rev() {
            let gout = match self.nodes[rec.out.0].grad() {
                Some(g) => g.to_vec(),
                None => continue,
            };
            let grads = self.backward_op(rec, &gout);
            for (slot, grad) in grads.into_iter().enumerate() {
                if let Some(g) = grad {
                    let v = rec.inputs[slot];
                    if self.nodes[v.0].requires_grad() {
                        self.nodes[v.0].accumulate_grad(&g);
                    }
                }
            }
        }
        self.records = records;
        self.backward_done = true;
        Ok(())
    }

    /// Clears all gradients so another backward pass may run.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.set_grad(None);
        }
        self.backward_done = false;
    }

    fn backward_op(&self, rec: &Record, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let input_shape = |i: usize| self.shape(rec.inputs[i]).to_vec();
        let input_data = |i: usize| self.data(rec.inputs[i]);
        let needs = |i: usize| self.nodes[rec.inputs[i].0].requires_grad();
        let out_data = self.data(rec.out);
        match &rec.kind {
            OpKind::MatMul => {
                let (sa, sb) = (input_shape(0), input_shape(1));
                let (m, kk, n) = (sa[0], sa[1], sb[1]);
                let da = needs(0).then(|| k::matmul_bt(g, input_data(1), m, n, kk));
                let db = needs(1).then(|| k::matmul_at(input_data(0), g, m, kk, n));
                vec![da, db]
            }
            OpKind::BatchedMatMul => {
                let (sa, sb) = (input_shape(0), input_shape(1));
                let (bt, m, kk, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (a, b) = (input_data(0), input_data(1));
                let da = needs(0).then(|| {
                    let mut out = vec![0.0; bt * m * kk];
                    k::for_each_chunk(&mut out, m * kk, |offset, c| {
                        let i = offset / (m * kk);
                        let r = k::matmul_bt(
                            &g[i * m * n..(i + 1) * m * n],
                            &b[i * kk * n..(i + 1) * kk * n],
                            m,
                            n,
                            kk,
                        );
                        c.copy_from_slice(&r);
                    });
                    out
                });
                let db = needs(1).then(|| {
                    let mut out = vec![0.0; bt * kk * n];
                    k::for_each_chunk(&mut out, kk * n, |offset, c| {
                        let i = offset / (kk * n);
                        let r = k::matmul_at(
                            &a[i * m * kk..(i + 1) * m * kk],
                            &g[i * m * n..(i + 1) * m * n],
                            m,
                            kk,
                            n,
                        );
                        c.copy_from_slice(&r);
                    });
                    out
                });
                vec![da, db]
            }
            OpKind::Conv1dTime { stride, pad } => {
                let sx = input_shape(0);
                let sw = input_shape(1);
                let (n, cin, t, v) = (sx[0], sx[1], sx[2], sx[3]);
                let (cout, kk) = (sw[0], sw[2]);
                let (dx, dw, db) = k::conv1d_time_backward(
                    input_data(0),
                    input_data(1),
                    g,
                    n,
                    cin,
                    t,
                    v,
                    cout,
                    kk,
                    *stride,
                    *pad,
                );
                vec![
                    needs(0).then_some(dx),
                    needs(1).then_some(dw),
                    needs(2).then_some(db),
                ]
            }
            OpKind::Add => {
                let (sa, sb) = (input_shape(0), input_shape(1));
                let da = needs(0).then(|| g.to_vec());
                let db = needs(1).then(|| {
                    let strides = k::broadcast_strides(&sa, &sb).unwrap();
                    let mut out = vec![0.0; sb.iter().product::<usize>().max(1)];
                    k::reduce_into_rhs(g, &sa, &strides, &mut out);
                    out
                });
                vec![da, db]
            }
            OpKind::Mul => {
                let (sa, sb) = (input_shape(0), input_shape(1));
                let strides = k::broadcast_strides(&sa, &sb).unwrap();
                let da = needs(0).then(|| {
                    k::zip_broadcast(g, &sa, input_data(1), &strides, |gv, bv| gv * bv)
                });
                let db = needs(1).then(|| {
                    let ga = k::map_binary_same(g, input_data(0), |gv, av| gv * av);
                    let mut out = vec![0.0; sb.iter().product::<usize>().max(1)];
                    k::reduce_into_rhs(&ga, &sa, &strides, &mut out);
                    out
                });
                vec![da, db]
            }
            OpKind::Relu => {
                let x = input_data(0);
                vec![needs(0).then(|| {
                    k::map_binary_same(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })
                })]
            }
            OpKind::Sigmoid => {
                vec![needs(0).then(|| {
                    k::map_binary_same(g, out_data, |gv, yv| gv * yv * (1.0 - yv))
                })]
            }
            OpKind::Softmax => {
                let last = *self.shape(rec.out).last().unwrap_or(&1);
                let dx = needs(0).then(|| {
                    let mut out = vec![0.0; g.len()];
                    k::softmax_backward(out_data, g, last.max(1), &mut out);
                    out
                });
                let mut grads = vec![dx];
                if rec.inputs.len() == 2 {
                    grads.push(None);
                }
                grads
            }
            OpKind::LayerNorm { .. } => {
                let sx = input_shape(0);
                let c = *sx.last().unwrap();
                let rows = g.len() / c;
                let x = input_data(0);
                let gamma = input_data(1);
                let (mean, rstd) = (&rec.saved[0], &rec.saved[1]);
                let dx = needs(0).then(|| {
                    let mut out = vec![0.0; g.len()];
                    k::for_each_chunk(&mut out, c, |offset, chunk| {
                        let r = offset / c;
                        let (mu, rs) = (mean[r], rstd[r]);
                        let mut m_gg = 0.0;
                        let mut m_ggx = 0.0;
                        for j in 0..c {
                            let xh = (x[offset + j] - mu) * rs;
                            let gg = g[offset + j] * gamma[j];
                            m_gg += gg;
                            m_ggx += gg * xh;
                        }
                        m_gg /= c as f64;
                        m_ggx /= c as f64;
                        for (j, o) in chunk.iter_mut().enumerate() {
                            let xh = (x[offset + j] - mu) * rs;
                            let gg = g[offset + j] * gamma[j];
                            *o = (gg - m_gg - xh * m_ggx) * rs;
                        }
                    });
                    out
                });
                let dgamma = needs(1).then(|| {
                    let mut out = vec![0.0; c];
                    for r in 0..rows {
                        let (mu, rs) = (mean[r], rstd[r]);
                        for (j, o) in out.iter_mut().enumerate() {
                            let xh = (x[r * c + j] - mu) * rs;
                            *o += g[r * c + j] * xh;
                        }
                    }
                    out
                });
                let dbeta = needs(2).then(|| {
                    let mut out = vec![0.0; c];
                    for r in 0..rows {
                        for (j, o) in out.iter_mut().enumerate() {
                            *o += g[r * c + j];
                        }
                    }
                    out
                });
                vec![dx, dgamma, dbeta]
            }
            OpKind::BatchNorm {
                use_batch_stats, ..
            } => self.backward_batchnorm(rec, g, *use_batch_stats),
            OpKind::MeanAxes { axes } | OpKind::SumAxes { axes } => {
                let sx = input_shape(0);
                let mean = matches!(rec.kind, OpKind::MeanAxes { .. });
                vec![needs(0).then(|| k::reduce_axes_backward(g, &sx, axes, mean))]
            }
            OpKind::Concat { axis } => {
                let s_out = self.shape(rec.out).to_vec();
                let tail: usize = s_out[axis + 1..].iter().product();
                let outer: usize = s_out[..*axis].iter().product();
                let total_inner = s_out[*axis] * tail;
                let mut offsets = Vec::with_capacity(rec.inputs.len());
                let mut acc = 0;
                for (i, _) in rec.inputs.iter().enumerate() {
                    let inner = input_shape(i)[*axis] * tail;
                    offsets.push((acc, inner));
                    acc += inner;
                }
                rec.inputs
                    .iter()
                    .enumerate()
                    .map(|(i, _)| {
                        needs(i).then(|| {
                            let (off, inner) = offsets[i];
                            let mut out = vec![0.0; outer * inner];
                            for o in 0..outer {
                                out[o * inner..(o + 1) * inner].copy_from_slice(
                                    &g[o * total_inner + off..o * total_inner + off + inner],
                                );
                            }
                            out
                        })
                    })
                    .collect()
            }
            OpKind::Linear => {
                let sw = input_shape(1);
                let (cin, cout) = (sw[0], sw[1]);
                let rows = g.len() / cout;
                let x = input_data(0);
                let dx = needs(0).then(|| k::matmul_bt(g, input_data(1), rows, cout, cin));
                let dw = needs(1).then(|| k::matmul_at(x, g, rows, cin, cout));
                let db = needs(2).then(|| {
                    let mut out = vec![0.0; cout];
                    for r in 0..rows {
                        for (j, o) in out.iter_mut().enumerate() {
                            *o += g[r * cout + j];
                        }
                    }
                    out
                });
                vec![dx, dw, db]
            }
            OpKind::Permute { perm } => {
                let s_out = self.shape(rec.out).to_vec();
                let mut inv = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![needs(0).then(|| k::permute(g, &s_out, &inv))]
            }
            OpKind::Reshape { .. } => vec![needs(0).then(|| g.to_vec())],
            OpKind::Scale { c } => vec![needs(0).then(|| k::map_unary(g, |v| v * c))],
            OpKind::AddScalar { .. } => vec![needs(0).then(|| g.to_vec())],
            OpKind::SumAll => {
                let n = self.numel(rec.inputs[0]);
                vec![needs(0).then(|| vec![g[0]; n])]
            }
            OpKind::MeanAll => {
                let n = self.numel(rec.inputs[0]);
                vec![needs(0).then(|| vec![g[0] / n as f64; n])]
            }
            OpKind::SelectRows { indices } => {
                let sx = input_shape(0);
                let row_len: usize = sx[1..].iter().product();
                vec![needs(0).then(|| {
                    let mut out = vec![0.0; sx.iter().product::<usize>().max(1)];
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..row_len {
                            out[i * row_len + j] += g[r * row_len + j];
                        }
                    }
                    out
                })]
            }
            OpKind::CrossEntropy { labels } => {
                let sx = input_shape(0);
                let (n, kk) = (sx[0], sx[1]);
                let probs = &rec.saved[0];
                vec![needs(0).then(|| {
                    let scale = g[0] / n as f64;
                    let mut out = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        out[r * kk + l] -= 1.0;
                    }
                    for v in out.iter_mut() {
                        *v *= scale;
                    }
                    out
                })]
            }
            OpKind::BceWithLogits => {
                let z = input_data(0);
                let t = input_data(1);
                let scale = g[0] / z.len() as f64;
                vec![
                    needs(0).then(|| {
                        z.iter()
                            .zip(t)
                            .map(|(&zv, &tv)| (sigmoid(zv) - tv) * scale)
                            .collect()
                    }),
                    None,
                ]
            }
        }
    }

    fn backward_batchnorm(
        &self,
        rec: &Record,
        g: &[f64],
        use_batch_stats: bool,
    ) -> Vec<Option<Vec<f64>>> {
        let needs = |i: usize| self.nodes[rec.inputs[i].0].requires_grad();
        let sx = self.shape(rec.inputs[0]).to_vec();
        let c = sx[1];
        let n0 = sx[0];
        let tail: usize = sx[2..].iter().product::<usize>().max(1);
        let m = (n0 * tail) as f64;
        let x = self.data(rec.inputs[0]);
        let gamma = self.data(rec.inputs[1]);
        let (mean, rstd) = (&rec.saved[0], &rec.saved[1]);
        // per-channel sums of g and g*xhat
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for n in 0..n0 {
            for cc in 0..c {
                let base = (n * c + cc) * tail;
                let (mu, rs) = (mean[cc], rstd[cc]);
                for j in 0..tail {
                    let xh = (x[base + j] - mu) * rs;
                    sum_g[cc] += g[base + j];
                    sum_gx[cc] += g[base + j] * xh;
                }
            }
        }
        let dx = needs(0).then(|| {
            let mut out = vec![0.0; x.len()];
            k::for_each_chunk(&mut out, tail, |offset, chunk| {
                let cc = (offset / tail) % c;
                let (mu, rs, ga) = (mean[cc], rstd[cc], gamma[cc]);
                for (j, o) in chunk.iter_mut().enumerate() {
                    let gv = g[offset + j];
                    if use_batch_stats {
                        let xh = (x[offset + j] - mu) * rs;
                        *o = ga * rs * (gv - sum_g[cc] / m - xh * sum_gx[cc] / m);
                    } else {
                        *o = ga * rs * gv;
                    }
                }
            });
            out
        });
        let dgamma = needs(1).then(|| sum_gx.clone());
        let dbeta = needs(2).then(|| sum_g.clone());
        let mut grads = vec![dx, dgamma, dbeta];
        if !use_batch_stats {
            grads.push(None);
            grads.push(None);
        }
        grads
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn one(inputs: &[Var]) -> Option<Var> {
    (inputs.len() == 1).then(|| inputs[0])
}

fn two(inputs: &[Var]) -> Option<[Var; 2]> {
    (inputs.len() == 2).then(|| [inputs[0], inputs[1]])
}

fn three(inputs: &[Var]) -> Option<[Var; 3]> {
    (inputs.len() == 3).then(|| [inputs[0], inputs[1], inputs[2]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_scores_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.data(y), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn matmul_identity_returns_input() {
        let mut tape = Tape::new();
        let eye = tape
            .constant(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let a_data = vec![2.0, -1.0, 0.5, 3.0, 4.0, -2.0, 7.0, 0.0, 1.0];
        let a = tape.constant(vec![3, 3], a_data.clone()).unwrap();
        let y = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.data(y), a_data.as_slice());
    }

    #[test]
    fn layernorm_rows_standardized() {
        let mut tape = Tape::new();
        // large variance so the eps contribution stays below 1e-9
        let x = tape
            .constant(vec![2, 4], vec![100.0, -300.0, 500.0, -700.0, 900.0, 0.0, -900.0, 40.0])
            .unwrap();
        let y = tape.layernorm_plain(x, 1e-5).unwrap();
        let d = tape.data(y);
        for row in d.chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "row var {var}");
        }
    }

    #[test]
    fn masked_softmax_zeroes_and_renormalizes() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let mask = tape.constant(vec![2, 3], vec![1.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let y = tape.softmax_masked(x, mask).unwrap();
        let d = tape.data(y);
        assert_eq!(d[1], 0.0);
        for row in d.chunks(3) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![5], vec![1.0, 2.0, 3.0, 4.0, 5.0], true).unwrap();
        let loss = tape.sum_all(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 5]);
    }

    #[test]
    fn dot_with_self_gradient_is_2x() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![3], vec![0.5, -2.0, 3.0], true).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, -4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![2], vec![1.0, 2.0], true).unwrap();
        let loss = tape.sum_all(x).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::RepeatedBackward)));
        tape.reset_grads();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![2], vec![1.0, 2.0], true).unwrap();
        let y = tape.relu(x).unwrap();
        match tape.backward(y) {
            Err(Error::NonScalarLoss { shape }) => assert_eq!(shape, vec![2]),
            other => panic!("expected NonScalarLoss, got {other:?}"),
        }
    }

    #[test]
    fn shape_error_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(vec![4, 5], vec![0.0; 20]).unwrap();
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::new();
        let logits = tape.constant(vec![2, 4], vec![0.7; 8]).unwrap();
        let loss = tape.cross_entropy(logits, &[1, 3]).unwrap();
        assert!((tape.data(loss)[0] - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::new();
        let logits = tape.constant(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(tape.cross_entropy(logits, &[3]).is_err());
    }

    #[test]
    fn bce_zero_logits_is_ln2() {
        let mut tape = Tape::new();
        let z = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let t = tape.constant(vec![2, 3], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let loss = tape.bce_with_logits(z, t).unwrap();
        assert!((tape.data(loss)[0] - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ops_are_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape
                .constant(vec![4, 8], (0..32).map(|i| (i as f64 * 0.37).sin()).collect())
                .unwrap();
            let w = tape
                .constant(vec![8, 8], (0..64).map(|i| (i as f64 * 0.11).cos()).collect())
                .unwrap();
            let b = tape.constant(vec![8], vec![0.01; 8]).unwrap();
            let h = tape.linear(x, w, b).unwrap();
            let h = tape.relu(h).unwrap();
            let s = tape.softmax(h).unwrap();
            tape.data(s).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn flop_meter_counts_macs() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(vec![3, 4], vec![0.0; 12]).unwrap();
        tape.matmul(a, b).unwrap();
        assert_eq!(tape.flops().matmul, 24);
        assert_eq!(tape.flops().total(), 24);
    }
}
