//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Graph`] holding its output value and
//! whatever it needs for the backward pass. [`Graph::backward`] walks the tape
//! once in reverse, hands back gradients for every leaf that asked for one, and
//! clears the tape. Node order is insertion order, so inputs always precede
//! their consumers.

use std::collections::HashMap;

use super::linalg::{gemm, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{contract_err, dim_err, Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    generation: u64,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Dense { input: Var, weight: Var, bias: Var },
    Conv2d { input: Var, kernel: Var, geom: ConvGeom, cols: Vec<f64> },
    ChannelBias { input: Var, bias: Var },
    Relu { input: Var },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    GlobalAvgPool { input: Var },
    Reshape { input: Var },
    LogSoftmax { input: Var },
    Scale { input: Var, factor: f64 },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Sum { input: Var },
    Nll { input: Var, labels: Vec<usize> },
    SoftTargetKl { input: Var, target_log_probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, keyed by leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    by_leaf: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.by_leaf.get(&var).map(Vec::as_slice)
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.by_leaf.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

/// Recording tape. One graph per training step.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    generation: u64,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every recorded node. Outstanding [`Var`]s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.generation += 1;
    }

    /// Records a leaf holding a copy of `tensor`; it receives a gradient in
    /// [`Graph::backward`] iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        let value = Tensor {
            shape: tensor.shape.clone(),
            data: tensor.data.clone(),
            grad: None,
            requires_grad,
        };
        self.push_unchecked(Op::Leaf, value, requires_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        self.push_unchecked(Op::Leaf, tensor, false)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor> {
        self.check(var)?;
        Ok(&self.nodes[var.index].value)
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.generation != self.generation || var.index >= self.nodes.len() {
            return Err(contract_err!("stale or foreign graph handle {var:?}"));
        }
        Ok(())
    }

    fn node(&self, var: Var) -> Result<&Node> {
        self.check(var)?;
        Ok(&self.nodes[var.index])
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var {
            index: self.nodes.len() - 1,
            generation: self.generation,
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, inputs: &[Var]) -> Result<Var> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite forward value {} at index {i} of {}",
                data[i],
                op_name(&op)
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        let value = Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        };
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    /// `out[b,o] = Σ_i input[b,i]·weight[i,o] + bias[o]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (&self.node(input)?.value, &self.node(weight)?.value, &self.node(bias)?.value);
        let (&[batch, fan_in], &[w_in, fan_out], &[b_out]) = (x.shape(), w.shape(), b.shape()) else {
            return Err(dim_err!(
                "dense expects [batch,in]·[in,out]+[out], got {:?}·{:?}+{:?}",
                x.shape(),
                w.shape(),
                b.shape()
            ));
        };
        if fan_in != w_in || fan_out != b_out {
            return Err(dim_err!(
                "dense shapes do not conform: {:?}·{:?}+{:?}",
                x.shape(),
                w.shape(),
                b.shape()
            ));
        }
        let mut out = Vec::with_capacity(batch * fan_out);
        for _ in 0..batch {
            out.extend_from_slice(b.data());
        }
        gemm(batch, fan_in, fan_out, x.data(), w.data(), 1.0, &mut out);
        self.push(Op::Dense { input, weight, bias }, vec![batch, fan_out], out, &[input, weight, bias])
    }

    /// Cross-correlation of `[batch,cin,h,w]` with `[cout,cin,kh,kw]`, zero padding.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (x, k) = (&self.node(input)?.value, &self.node(kernel)?.value);
        let (&[batch, cin, h, w], &[cout, kcin, kh, kw]) = (x.shape(), k.shape()) else {
            return Err(dim_err!(
                "conv2d expects rank-4 input and kernel, got {:?} and {:?}",
                x.shape(),
                k.shape()
            ));
        };
        if stride == 0 {
            return Err(dim_err!("conv2d stride must be at least 1"));
        }
        if kcin != cin {
            return Err(dim_err!("conv2d kernel expects {kcin} input channels, input has {cin}"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(dim_err!("conv2d kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"));
        }
        let (span_h, span_w) = (h + 2 * pad - kh, w + 2 * pad - kw);
        if span_h % stride != 0 || span_w % stride != 0 {
            return Err(dim_err!(
                "conv2d output extent not integral: ({h}+2·{pad}-{kh})/{stride} or ({w}+2·{pad}-{kw})/{stride}"
            ));
        }
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh: span_h / stride + 1,
            ow: span_w / stride + 1,
            stride,
            pad,
        };
        let cols = im2col(x.data(), &geom);
        let rows = batch * geom.oh * geom.ow;
        let patch = cin * kh * kw;
        let mut out_mat = vec![0.0; rows * cout];
        gemm_nt(rows, patch, cout, &cols, k.data(), 0.0, &mut out_mat);
        let plane = geom.oh * geom.ow;
        let mut out = vec![0.0; batch * cout * plane];
        for b in 0..batch {
            for p in 0..plane {
                let row = &out_mat[(b * plane + p) * cout..][..cout];
                for (o, v) in row.iter().enumerate() {
                    out[(b * cout + o) * plane + p] = *v;
                }
            }
        }
        self.push(
            Op::Conv2d { input, kernel, geom, cols },
            vec![batch, cout, geom.oh, geom.ow],
            out,
            &[input, kernel],
        )
    }

    /// Adds `bias[c]` to every element of channel `c` of a `[batch,c,...]` tensor.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (x, b) = (&self.node(input)?.value, &self.node(bias)?.value);
        if x.rank() < 2 || b.shape() != [x.shape()[1]] {
            return Err(dim_err!("channel bias {:?} does not fit input {:?}", b.shape(), x.shape()));
        }
        let channels = x.shape()[1];
        let plane: usize = x.shape()[2..].iter().product();
        let mut out = x.data().to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let add = b.data()[i % channels];
            chunk.iter_mut().for_each(|v| *v += add);
        }
        let shape = x.shape().to_vec();
        self.push(Op::ChannelBias { input, bias }, shape, out, &[input, bias])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = &self.node(input)?.value;
        let out = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = x.shape().to_vec();
        self.push(Op::Relu { input }, shape, out, &[input])
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let x = &self.node(input)?.value;
        let &[batch, channels, h, w] = x.shape() else {
            return Err(dim_err!("maxpool2x2 expects rank-4 input, got {:?}", x.shape()));
        };
        if h < 2 || w < 2 {
            return Err(dim_err!("maxpool2x2 needs spatial extent ≥ 2, got {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(batch * channels * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        let data = x.data();
        for bc in 0..batch * channels {
            let base = bc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        self.push(Op::MaxPool2 { input, argmax }, vec![batch, channels, oh, ow], out, &[input])
    }

    /// Mean over the spatial extent: `[batch,c,h,w] → [batch,c]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = &self.node(input)?.value;
        let &[batch, channels, h, w] = x.shape() else {
            return Err(dim_err!("global_avg_pool expects rank-4 input, got {:?}", x.shape()));
        };
        let plane = h * w;
        let out = x
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        self.push(Op::GlobalAvgPool { input }, vec![batch, channels], out, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let x = &self.node(input)?.value;
        let reshaped = x.reshape(shape)?;
        self.push(Op::Reshape { input }, reshaped.shape, reshaped.data, &[input])
    }

    /// `[batch, ...] → [batch, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.node(input)?.value.shape().to_vec();
        let Some((&batch, rest)) = shape.split_first() else {
            return Err(dim_err!("cannot flatten a scalar"));
        };
        self.reshape(input, &[batch, rest.iter().product()])
    }

    /// Row-wise log-softmax of a rank-2 tensor, stabilised by max subtraction.
    pub fn log_softmax(&mut self, input: Var) -> Result<Var> {
        let x = &self.node(input)?.value;
        if x.rank() != 2 {
            return Err(dim_err!("log_softmax expects rank 2, got {:?}", x.shape()));
        }
        let out = log_softmax_rows(x.data(), x.shape()[1]);
        let shape = x.shape().to_vec();
        self.push(Op::LogSoftmax { input }, shape, out, &[input])
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let x = &self.node(input)?.value;
        let out = x.data().iter().map(|v| v * factor).collect();
        let shape = x.shape().to_vec();
        self.push(Op::Scale { input, factor }, shape, out, &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        if x.shape() != y.shape() {
            return Err(dim_err!("add of {:?} and {:?}", x.shape(), y.shape()));
        }
        let out = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let shape = x.shape().to_vec();
        self.push(Op::Add { a, b }, shape, out, &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        if x.shape() != y.shape() {
            return Err(dim_err!("mul of {:?} and {:?}", x.shape(), y.shape()));
        }
        let out = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let shape = x.shape().to_vec();
        self.push(Op::Mul { a, b }, shape, out, &[a, b])
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let total = self.node(input)?.value.data().iter().sum();
        self.push(Op::Sum { input }, Vec::new(), vec![total], &[input])
    }

    /// `-(1/batch) Σ_b log_probs[b, labels[b]]`.
    pub fn nll_mean(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var> {
        let x = &self.node(log_probs)?.value;
        let &[batch, classes] = x.shape() else {
            return Err(dim_err!("nll expects [batch, classes], got {:?}", x.shape()));
        };
        if labels.len() != batch {
            return Err(dim_err!("{} labels for a batch of {batch}", labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(contract_err!("label {bad} outside [0, {classes})"));
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(b, &y)| x.data()[b * classes + y])
            .sum();
        let value = -total / batch as f64;
        self.push(
            Op::Nll { input: log_probs, labels: labels.to_vec() },
            Vec::new(),
            vec![value],
            &[log_probs],
        )
    }

    /// `(1/batch) Σ_b Σ_j exp(t[b,j])·(t[b,j] − s[b,j])` for fixed target
    /// log-probabilities `t` and recorded log-probabilities `s`.
    pub fn soft_target_kl(&mut self, log_probs: Var, target_log_probs: &Tensor) -> Result<Var> {
        let s = &self.node(log_probs)?.value;
        if s.rank() != 2 || s.shape() != target_log_probs.shape() {
            return Err(dim_err!(
                "KL between {:?} and {:?}",
                target_log_probs.shape(),
                s.shape()
            ));
        }
        let batch = s.shape()[0];
        let total: f64 = target_log_probs
            .data()
            .iter()
            .zip(s.data())
            .map(|(&t, &q)| t.exp() * (t - q))
            .sum();
        let value = total / batch as f64;
        self.push(
            Op::SoftTargetKl {
                input: log_probs,
                target_log_probs: target_log_probs.data().to_vec(),
            },
            Vec::new(),
            vec![value],
            &[log_probs],
        )
    }

    /// Reverse pass from a single-element `loss`. Returns the gradient of every
    /// leaf recorded with `requires_grad`, then clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.nodes[loss.index].value.numel() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.index].value.shape()
            ));
        }
        let generation = self.generation;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.index] = Some(vec![1.0]);

        let mut out = Gradients::default();
        for index in (0..=loss.index).rev() {
            let node = &self.nodes[index];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[index].take() else {
                if matches!(node.op, Op::Leaf) {
                    out.by_leaf.insert(Var { index, generation }, vec![0.0; node.value.numel()]);
                }
                continue;
            };
            if let Some(i) = upstream.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} at index {i} flowing into {}",
                    upstream[i],
                    op_name(&node.op)
                )));
            }
            if matches!(node.op, Op::Leaf) {
                out.by_leaf.insert(Var { index, generation }, upstream);
                continue;
            }
            self.propagate(index, &upstream, &mut grads);
        }
        // leaves recorded after the loss cannot influence it
        for (index, node) in self.nodes.iter().enumerate().skip(loss.index + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                out.by_leaf.insert(Var { index, generation }, vec![0.0; node.value.numel()]);
            }
        }
        self.clear();
        Ok(out)
    }

    fn propagate(&self, index: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[index];
        let wants = |v: Var| self.nodes[v.index].requires_grad;
        let val = |v: Var| &self.nodes[v.index].value;
        match &node.op {
            Op::Leaf => {}
            Op::Dense { input, weight, bias } => {
                let (x, w) = (val(*input), val(*weight));
                let (batch, fan_in, fan_out) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                if wants(*input) {
                    let g = accum(grads, *input, batch * fan_in);
                    gemm_nt(batch, fan_out, fan_in, dy, w.data(), 1.0, g);
                }
                if wants(*weight) {
                    let g = accum(grads, *weight, fan_in * fan_out);
                    gemm_tn(fan_in, batch, fan_out, x.data(), dy, 1.0, g);
                }
                if wants(*bias) {
                    let g = accum(grads, *bias, fan_out);
                    for row in dy.chunks(fan_out) {
                        g.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Conv2d { input, kernel, geom, cols } => {
                let plane = geom.oh * geom.ow;
                let rows = geom.batch * plane;
                let patch = geom.cin * geom.kh * geom.kw;
                let mut dy_mat = vec![0.0; rows * geom.cout];
                for b in 0..geom.batch {
                    for o in 0..geom.cout {
                        let src = &dy[(b * geom.cout + o) * plane..][..plane];
                        for (p, v) in src.iter().enumerate() {
                            dy_mat[(b * plane + p) * geom.cout + o] = *v;
                        }
                    }
                }
                if wants(*kernel) {
                    let g = accum(grads, *kernel, geom.cout * patch);
                    gemm_tn(geom.cout, rows, patch, &dy_mat, cols, 1.0, g);
                }
                if wants(*input) {
                    let mut dcols = vec![0.0; rows * patch];
                    gemm(rows, geom.cout, patch, &dy_mat, val(*kernel).data(), 0.0, &mut dcols);
                    let g = accum(grads, *input, geom.batch * geom.cin * geom.h * geom.w);
                    col2im_add(&dcols, geom, g);
                }
            }
            Op::ChannelBias { input, bias } => {
                let x = val(*input);
                let channels = x.shape()[1];
                let plane: usize = x.shape()[2..].iter().product();
                if wants(*input) {
                    add_into(accum(grads, *input, dy.len()), dy);
                }
                if wants(*bias) {
                    let g = accum(grads, *bias, channels);
                    for (i, chunk) in dy.chunks(plane).enumerate() {
                        g[i % channels] += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::Relu { input } => {
                let x = val(*input);
                let g = accum(grads, *input, dy.len());
                for ((g, d), v) in g.iter_mut().zip(dy).zip(x.data()) {
                    if *v > 0.0 {
                        *g += d;
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let g = accum(grads, *input, val(*input).numel());
                for (d, &src) in dy.iter().zip(argmax) {
                    g[src] += d;
                }
            }
            Op::GlobalAvgPool { input } => {
                let x = val(*input);
                let plane = x.shape()[2] * x.shape()[3];
                let g = accum(grads, *input, x.numel());
                for (chunk, d) in g.chunks_mut(plane).zip(dy) {
                    let share = d / plane as f64;
                    chunk.iter_mut().for_each(|v| *v += share);
                }
            }
            Op::Reshape { input } => add_into(accum(grads, *input, dy.len()), dy),
            Op::LogSoftmax { input } => {
                let y = &node.value;
                let classes = y.shape()[1];
                let g = accum(grads, *input, dy.len());
                for ((gr, dr), yr) in g.chunks_mut(classes).zip(dy.chunks(classes)).zip(y.data().chunks(classes)) {
                    let total: f64 = dr.iter().sum();
                    for ((g, d), lp) in gr.iter_mut().zip(dr).zip(yr) {
                        *g += d - lp.exp() * total;
                    }
                }
            }
            Op::Scale { input, factor } => {
                let g = accum(grads, *input, dy.len());
                g.iter_mut().zip(dy).for_each(|(g, d)| *g += d * factor);
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if wants(v) {
                        add_into(accum(grads, v, dy.len()), dy);
                    }
                }
            }
            Op::Mul { a, b } => {
                if wants(*a) {
                    let other = val(*b).data();
                    let g = accum(grads, *a, dy.len());
                    for ((g, d), o) in g.iter_mut().zip(dy).zip(other) {
                        *g += d * o;
                    }
                }
                if wants(*b) {
                    let other = val(*a).data();
                    let g = accum(grads, *b, dy.len());
                    for ((g, d), o) in g.iter_mut().zip(dy).zip(other) {
                        *g += d * o;
                    }
                }
            }
            Op::Sum { input } => {
                let g = accum(grads, *input, val(*input).numel());
                g.iter_mut().for_each(|v| *v += dy[0]);
            }
            Op::Nll { input, labels } => {
                let x = val(*input);
                let classes = x.shape()[1];
                let share = -dy[0] / labels.len() as f64;
                let g = accum(grads, *input, x.numel());
                for (b, &y) in labels.iter().enumerate() {
                    g[b * classes + y] += share;
                }
            }
            Op::SoftTargetKl { input, target_log_probs } => {
                let batch = val(*input).shape()[0];
                let scale = -dy[0] / batch as f64;
                let g = accum(grads, *input, target_log_probs.len());
                for (g, t) in g.iter_mut().zip(target_log_probs) {
                    *g += scale * t.exp();
                }
            }
        }
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut [f64] {
    grads[var.index].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Dense { .. } => "dense",
        Op::Conv2d { .. } => "conv2d",
        Op::ChannelBias { .. } => "channel_bias",
        Op::Relu { .. } => "relu",
        Op::MaxPool2 { .. } => "maxpool2x2",
        Op::GlobalAvgPool { .. } => "global_avg_pool",
        Op::Reshape { .. } => "reshape",
        Op::LogSoftmax { .. } => "log_softmax",
        Op::Scale { .. } => "scale",
        Op::Add { .. } => "add",
        Op::Mul { .. } => "mul",
        Op::Sum { .. } => "sum",
        Op::Nll { .. } => "nll",
        Op::SoftTargetKl { .. } => "kl",
    }
}

/// Row-wise log-softmax over rows of width `classes`.
pub(crate) fn log_softmax_rows(data: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    out
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let patch = g.cin * g.kh * g.kw;
    let mut cols = vec![0.0; g.batch * g.oh * g.ow * patch];
    let mut row = 0;
    for b in 0..g.batch {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * patch..][..patch];
                let mut col = 0;
                for c in 0..g.cin {
                    let plane = &x[(b * g.cin + c) * g.h * g.w..][..g.h * g.w];
                    for ky in 0..g.kh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        for kx in 0..g.kw {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                dst[col] = plane[iy as usize * g.w + ix as usize];
                            }
                            col += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im_add(dcols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let patch = g.cin * g.kh * g.kw;
    let mut row = 0;
    for b in 0..g.batch {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &dcols[row * patch..][..patch];
                let mut col = 0;
                for c in 0..g.cin {
                    let base = (b * g.cin + c) * g.h * g.w;
                    for ky in 0..g.kh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        for kx in 0..g.kw {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                dx[base + iy as usize * g.w + ix as usize] += src[col];
                            }
                            col += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}
