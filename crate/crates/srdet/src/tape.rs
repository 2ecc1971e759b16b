//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every forward op appends a node; nodes are in topological order by
//! construction, so `backward` is a single reverse sweep that visits each
//! node exactly once. Gradients accumulate over fan-out.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Elementwise function applied by [`Tape::pointwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointwiseFn {
    LeakyRelu(f64),
    Sigmoid,
    Exp,
    Log,
    Square,
    Abs,
    /// Huber-style: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
    SmoothL1,
}

impl PointwiseFn {
    fn apply(&self, x: f64) -> f64 {
        match *self {
            PointwiseFn::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            PointwiseFn::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            PointwiseFn::Exp => x.exp(),
            PointwiseFn::Log => x.ln(),
            PointwiseFn::Square => x * x,
            PointwiseFn::Abs => x.abs(),
            PointwiseFn::SmoothL1 => {
                if x.abs() < 1.0 {
                    0.5 * x * x
                } else {
                    x.abs() - 0.5
                }
            }
        }
    }

    fn derivative(&self, x: f64, y: f64) -> f64 {
        match *self {
            PointwiseFn::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            PointwiseFn::Sigmoid => y * (1.0 - y),
            PointwiseFn::Exp => y,
            PointwiseFn::Log => 1.0 / x,
            PointwiseFn::Square => 2.0 * x,
            PointwiseFn::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            PointwiseFn::SmoothL1 => {
                if x.abs() < 1.0 {
                    x
                } else if x > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            PointwiseFn::LeakyRelu(_) => "leaky_relu",
            PointwiseFn::Sigmoid => "sigmoid",
            PointwiseFn::Exp => "exp",
            PointwiseFn::Log => "log",
            PointwiseFn::Square => "square",
            PointwiseFn::Abs => "abs",
            PointwiseFn::SmoothL1 => "smooth_l1",
        }
    }
}

/// Reduction applied by [`Tape::reduce`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReduceFn {
    Sum,
    Mean,
    L1Norm,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    },
    Pointwise {
        input: NodeId,
        f: PointwiseFn,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    AddScalar {
        input: NodeId,
    },
    Reduce {
        input: NodeId,
        f: ReduceFn,
    },
    PixelShuffle {
        input: NodeId,
        r: usize,
    },
    ConcatChannels {
        inputs: Vec<NodeId>,
    },
    Clamp {
        input: NodeId,
        lo: f64,
        hi: f64,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Reshape {
        input: NodeId,
    },
    Gather {
        input: NodeId,
        index: usize,
    },
    LogSumExp {
        input: NodeId,
    },
    /// Max pooling of a feature-map region into a fixed grid; argmax flat
    /// indices recorded at forward time, `None` for empty bins.
    RoiMaxPool {
        input: NodeId,
        argmax: Vec<Option<usize>>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Pointwise { f, .. } => f.name(),
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Reduce { .. } => "reduce",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::ConcatChannels { .. } => "concat_channels",
            Op::Clamp { .. } => "clamp",
            Op::Linear { .. } => "linear",
            Op::Reshape { .. } => "reshape",
            Op::Gather { .. } => "gather",
            Op::LogSumExp { .. } => "log_sum_exp",
            Op::RoiMaxPool { .. } => "roi_max_pool",
        }
    }
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Recorded forward computation; replayed in reverse by [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient of the last `backward` loss with respect to node `id`.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id].grad.as_deref()
    }

    /// Name of the op that produced the first non-finite value on the tape,
    /// scanning in execution order.
    pub fn first_non_finite_op(&self) -> Option<&'static str> {
        self.nodes
            .iter()
            .find(|n| !n.value.all_finite())
            .map(|n| n.op.name())
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Insert an external tensor; it participates in gradients iff
    /// `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(t.clone(), t.requires_grad, Op::Leaf)
    }

    /// Insert a constant (no gradient).
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, false, Op::Leaf)
    }

    // ---- forward ops -----------------------------------------------------

    /// 2-D cross-correlation: input (C_in,H,W), kernel (C_out,C_in,kH,kW),
    /// bias (C_out), zero padding.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let x = &self.nodes[input].value;
        let k = &self.nodes[kernel].value;
        let b = &self.nodes[bias].value;
        if x.rank() != 3 || k.rank() != 4 || b.rank() != 1 {
            return Err(Error::Shape(format!(
                "conv2d expects ranks (3,4,1), got ({},{},{})",
                x.rank(),
                k.rank(),
                b.rank()
            )));
        }
        let (c_in, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
        let (c_out, kc, kh, kw) = (k.shape[0], k.shape[1], k.shape[2], k.shape[3]);
        if kc != c_in {
            return Err(Error::Shape(format!(
                "conv2d kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if b.shape[0] != c_out {
            return Err(Error::Shape(format!(
                "conv2d bias has {} channels, kernel produces {c_out}",
                b.shape[0]
            )));
        }
        if stride == 0 {
            return Err(Error::Domain("conv2d stride must be positive".into()));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::Shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let mut out = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            for y in 0..oh {
                for xw in 0..ow {
                    let mut acc = b.data[co];
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            let iy = (y * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            for kx in 0..kw {
                                let ix = (xw * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x.data[(ci * h + iy) * w + ix as usize]
                                    * k.data[((co * c_in + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[(co * oh + y) * ow + xw] = acc;
                }
            }
        }
        let needs = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            Tensor::new(vec![c_out, oh, ow], out)?,
            needs,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
        ))
    }

    pub fn pointwise(&mut self, input: NodeId, f: PointwiseFn) -> Result<NodeId> {
        let x = &self.nodes[input].value;
        if f == PointwiseFn::Log {
            if let Some(i) = x.data.iter().position(|&v| v <= 0.0) {
                return Err(Error::Domain(format!(
                    "log of non-positive value {} at index {i}",
                    x.data[i]
                )));
            }
        }
        let data: Vec<f64> = x.data.iter().map(|&v| f.apply(v)).collect();
        let value = Tensor {
            shape: x.shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        let needs = self.needs(input);
        Ok(self.push(value, needs, Op::Pointwise { input, f }))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op_name: &str) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        let ta = &self.nodes[a].value;
        let tb = &self.nodes[b].value;
        if ta.shape != tb.shape {
            return Err(Error::Shape(format!(
                "{op_name}: shapes {:?} and {:?} differ",
                ta.shape, tb.shape
            )));
        }
        Ok((ta.shape.clone(), ta.data.clone(), tb.data.clone()))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (shape, da, db) = self.binary(a, b, "add")?;
        let data = da.iter().zip(&db).map(|(x, y)| x + y).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, needs, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (shape, da, db) = self.binary(a, b, "sub")?;
        let data = da.iter().zip(&db).map(|(x, y)| x - y).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, needs, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (shape, da, db) = self.binary(a, b, "mul")?;
        let data = da.iter().zip(&db).map(|(x, y)| x * y).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, needs, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let x = &self.nodes[input].value;
        let value = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| v * factor).collect(),
            requires_grad: false,
            grad: None,
        };
        let needs = self.needs(input);
        self.push(value, needs, Op::Scale { input, factor })
    }

    pub fn add_scalar(&mut self, input: NodeId, value: f64) -> NodeId {
        let x = &self.nodes[input].value;
        let t = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| v + value).collect(),
            requires_grad: false,
            grad: None,
        };
        let needs = self.needs(input);
        self.push(t, needs, Op::AddScalar { input })
    }

    /// Full reduction to a rank-0 scalar.
    pub fn reduce(&mut self, input: NodeId, f: ReduceFn) -> Result<NodeId> {
        let x = &self.nodes[input].value;
        if x.is_empty() {
            return Err(Error::Domain("reduce of empty tensor".into()));
        }
        let v = match f {
            ReduceFn::Sum => x.data.iter().sum(),
            ReduceFn::Mean => x.data.iter().sum::<f64>() / x.len() as f64,
            ReduceFn::L1Norm => x.data.iter().map(|v| v.abs()).sum(),
        };
        let needs = self.needs(input);
        Ok(self.push(Tensor::scalar(v), needs, Op::Reduce { input, f }))
    }

    /// Sub-pixel rearrangement (r^2 C, H, W) -> (C, rH, rW).
    pub fn pixel_shuffle(&mut self, input: NodeId, r: usize) -> Result<NodeId> {
        let x = &self.nodes[input].value;
        if x.rank() != 3 {
            return Err(Error::Shape(format!(
                "pixel_shuffle expects rank 3, got {}",
                x.rank()
            )));
        }
        if r == 0 {
            return Err(Error::Domain("pixel_shuffle factor must be positive".into()));
        }
        let (c_in, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
        if c_in % (r * r) != 0 {
            return Err(Error::Shape(format!(
                "pixel_shuffle: {c_in} channels not divisible by {}",
                r * r
            )));
        }
        let c = c_in / (r * r);
        let (oh, ow) = (h * r, w * r);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let ic = ch * r * r + dy * r + dx;
                    for y in 0..h {
                        for xw in 0..w {
                            out[(ch * oh + y * r + dy) * ow + xw * r + dx] =
                                x.data[(ic * h + y) * w + xw];
                        }
                    }
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(
            Tensor::new(vec![c, oh, ow], out)?,
            needs,
            Op::PixelShuffle { input, r },
        ))
    }

    /// Concatenate rank-3 tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Shape("concat_channels of no inputs".into()));
        }
        let (h, w) = {
            let first = &self.nodes[inputs[0]].value;
            if first.rank() != 3 {
                return Err(Error::Shape("concat_channels expects rank-3 inputs".into()));
            }
            (first.shape[1], first.shape[2])
        };
        let mut c_total = 0;
        for &id in inputs {
            let t = &self.nodes[id].value;
            if t.rank() != 3 || t.shape[1] != h || t.shape[2] != w {
                return Err(Error::Shape(format!(
                    "concat_channels: incompatible shape {:?}",
                    t.shape
                )));
            }
            c_total += t.shape[0];
        }
        let mut data = Vec::with_capacity(c_total * h * w);
        for &id in inputs {
            data.extend_from_slice(&self.nodes[id].value.data);
        }
        let needs = inputs.iter().any(|&id| self.needs(id));
        Ok(self.push(
            Tensor::new(vec![c_total, h, w], data)?,
            needs,
            Op::ConcatChannels {
                inputs: inputs.to_vec(),
            },
        ))
    }

    /// Hard clamp; gradient is zero outside [lo, hi].
    pub fn clamp(&mut self, input: NodeId, lo: f64, hi: f64) -> NodeId {
        let x = &self.nodes[input].value;
        let t = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| v.clamp(lo, hi)).collect(),
            requires_grad: false,
            grad: None,
        };
        let needs = self.needs(input);
        self.push(t, needs, Op::Clamp { input, lo, hi })
    }

    /// Fully-connected layer: input (n), weight (m,n), bias (m) -> (m).
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = &self.nodes[input].value;
        let w = &self.nodes[weight].value;
        let b = &self.nodes[bias].value;
        if x.rank() != 1 || w.rank() != 2 || b.rank() != 1 {
            return Err(Error::Shape(format!(
                "linear expects ranks (1,2,1), got ({},{},{})",
                x.rank(),
                w.rank(),
                b.rank()
            )));
        }
        let (m, n) = (w.shape[0], w.shape[1]);
        if x.shape[0] != n || b.shape[0] != m {
            return Err(Error::Shape(format!(
                "linear: weight {:?} incompatible with input {:?} / bias {:?}",
                w.shape, x.shape, b.shape
            )));
        }
        let mut out = vec![0.0; m];
        for i in 0..m {
            let mut acc = b.data[i];
            let row = &w.data[i * n..(i + 1) * n];
            for j in 0..n {
                acc += row[j] * x.data[j];
            }
            out[i] = acc;
        }
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            Tensor::new(vec![m], out)?,
            needs,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let x = &self.nodes[input].value;
        let n: usize = shape.iter().product();
        if n != x.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {shape:?} changes element count",
                x.shape
            )));
        }
        let t = Tensor {
            shape,
            data: x.data.clone(),
            requires_grad: false,
            grad: None,
        };
        let needs = self.needs(input);
        Ok(self.push(t, needs, Op::Reshape { input }))
    }

    /// Pick a single element (flat index) as a scalar.
    pub fn gather(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let x = &self.nodes[input].value;
        if index >= x.len() {
            return Err(Error::Domain(format!(
                "gather index {index} out of bounds for {} elements",
                x.len()
            )));
        }
        let v = x.data[index];
        let needs = self.needs(input);
        Ok(self.push(Tensor::scalar(v), needs, Op::Gather { input, index }))
    }

    /// Numerically stable log(sum(exp(x))) over all elements.
    pub fn log_sum_exp(&mut self, input: NodeId) -> Result<NodeId> {
        let x = &self.nodes[input].value;
        if x.is_empty() {
            return Err(Error::Domain("log_sum_exp of empty tensor".into()));
        }
        let m = x.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = x.data.iter().map(|&v| (v - m).exp()).sum();
        let v = m + s.ln();
        let needs = self.needs(input);
        Ok(self.push(Tensor::scalar(v), needs, Op::LogSumExp { input }))
    }

    /// Max-pool an integer cell region [x0,x1)x[y0,y1) of a (C,Hf,Wf) map
    /// into a (C,pool,pool) grid. Bin edges are floor/ceil of the fractional
    /// split; empty bins yield 0 and receive no gradient.
    pub fn roi_max_pool(
        &mut self,
        input: NodeId,
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        pool: usize,
    ) -> Result<NodeId> {
        let t = &self.nodes[input].value;
        if t.rank() != 3 {
            return Err(Error::Shape("roi_max_pool expects rank-3 features".into()));
        }
        let (c, hf, wf) = (t.shape[0], t.shape[1], t.shape[2]);
        if x1 > wf || y1 > hf || x0 >= x1 || y0 >= y1 {
            return Err(Error::Domain(format!(
                "roi_max_pool region [{x0},{x1})x[{y0},{y1}) invalid for {wf}x{hf} map"
            )));
        }
        if pool == 0 {
            return Err(Error::Domain("pool size must be positive".into()));
        }
        let (rw, rh) = ((x1 - x0) as f64, (y1 - y0) as f64);
        let mut out = vec![0.0; c * pool * pool];
        let mut argmax: Vec<Option<usize>> = vec![None; c * pool * pool];
        for ch in 0..c {
            for by in 0..pool {
                let ys = y0 + (by as f64 * rh / pool as f64).floor() as usize;
                let ye = y0 + ((by + 1) as f64 * rh / pool as f64).ceil() as usize;
                for bx in 0..pool {
                    let xs = x0 + (bx as f64 * rw / pool as f64).floor() as usize;
                    let xe = x0 + ((bx + 1) as f64 * rw / pool as f64).ceil() as usize;
                    let mut best: Option<(f64, usize)> = None;
                    for y in ys..ye.min(hf) {
                        for x in xs..xe.min(wf) {
                            let idx = (ch * hf + y) * wf + x;
                            let v = t.data[idx];
                            if best.map_or(true, |(bv, _)| v > bv) {
                                best = Some((v, idx));
                            }
                        }
                    }
                    let o = (ch * pool + by) * pool + bx;
                    if let Some((v, idx)) = best {
                        out[o] = v;
                        argmax[o] = Some(idx);
                    }
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(
            Tensor::new(vec![c, pool, pool], out)?,
            needs,
            Op::RoiMaxPool { input, argmax },
        ))
    }

    // ---- backward --------------------------------------------------------

    fn accumulate(&mut self, id: NodeId, contrib: &[f64]) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let len = self.nodes[id].value.len();
        let g = self.nodes[id].grad.get_or_insert_with(|| vec![0.0; len]);
        for (gi, ci) in g.iter_mut().zip(contrib) {
            *gi += ci;
        }
    }

    /// Populate gradients of `loss` with respect to every `requires_grad`
    /// leaf (and intermediate) on the tape. `loss` must be scalar.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss].value.is_scalar() {
            return Err(Error::Domain(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].value.shape
            )));
        }
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[loss].grad = Some(vec![1.0]);
        for id in (0..self.nodes.len()).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let gout = self.nodes[id].grad.clone().unwrap();
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let x = self.nodes[input].value.clone();
                    let k = self.nodes[kernel].value.clone();
                    let (c_in, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
                    let (c_out, _, kh, kw) = (k.shape[0], k.shape[1], k.shape[2], k.shape[3]);
                    let out_shape = self.nodes[id].value.shape.clone();
                    let (oh, ow) = (out_shape[1], out_shape[2]);
                    let mut dx = vec![0.0; x.len()];
                    let mut dk = vec![0.0; k.len()];
                    let mut db = vec![0.0; c_out];
                    for co in 0..c_out {
                        for y in 0..oh {
                            for xw in 0..ow {
                                let g = gout[(co * oh + y) * ow + xw];
                                if g == 0.0 {
                                    continue;
                                }
                                db[co] += g;
                                for ci in 0..c_in {
                                    for ky in 0..kh {
                                        let iy = (y * stride + ky) as isize - padding as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        let iy = iy as usize;
                                        for kx in 0..kw {
                                            let ix =
                                                (xw * stride + kx) as isize - padding as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            let ix = ix as usize;
                                            let xi = (ci * h + iy) * w + ix;
                                            let ki = ((co * c_in + ci) * kh + ky) * kw + kx;
                                            dk[ki] += g * x.data[xi];
                                            dx[xi] += g * k.data[ki];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(input, &dx);
                    self.accumulate(kernel, &dk);
                    self.accumulate(bias, &db);
                }
                Op::Pointwise { input, f } => {
                    let contrib: Vec<f64> = {
                        let x = &self.nodes[input].value;
                        let y = &self.nodes[id].value;
                        x.data
                            .iter()
                            .zip(&y.data)
                            .zip(&gout)
                            .map(|((&xi, &yi), &g)| g * f.derivative(xi, yi))
                            .collect()
                    };
                    self.accumulate(input, &contrib);
                }
                Op::Add { a, b } => {
                    self.accumulate(a, &gout);
                    self.accumulate(b, &gout);
                }
                Op::Sub { a, b } => {
                    self.accumulate(a, &gout);
                    let neg: Vec<f64> = gout.iter().map(|g| -g).collect();
                    self.accumulate(b, &neg);
                }
                Op::Mul { a, b } => {
                    let ga: Vec<f64> = self.nodes[b]
                        .value
                        .data
                        .iter()
                        .zip(&gout)
                        .map(|(&v, &g)| g * v)
                        .collect();
                    let gb: Vec<f64> = self.nodes[a]
                        .value
                        .data
                        .iter()
                        .zip(&gout)
                        .map(|(&v, &g)| g * v)
                        .collect();
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                }
                Op::Scale { input, factor } => {
                    let contrib: Vec<f64> = gout.iter().map(|g| g * factor).collect();
                    self.accumulate(input, &contrib);
                }
                Op::AddScalar { input } => {
                    self.accumulate(input, &gout);
                }
                Op::Reduce { input, f } => {
                    let g = gout[0];
                    let contrib: Vec<f64> = {
                        let x = &self.nodes[input].value;
                        match f {
                            ReduceFn::Sum => vec![g; x.len()],
                            ReduceFn::Mean => vec![g / x.len() as f64; x.len()],
                            ReduceFn::L1Norm => x
                                .data
                                .iter()
                                .map(|&v| {
                                    if v > 0.0 {
                                        g
                                    } else if v < 0.0 {
                                        -g
                                    } else {
                                        0.0
                                    }
                                })
                                .collect(),
                        }
                    };
                    self.accumulate(input, &contrib);
                }
                Op::PixelShuffle { input, r } => {
                    let contrib: Vec<f64> = {
                        let x = &self.nodes[input].value;
                        let (c_in, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
                        let c = c_in / (r * r);
                        let (oh, ow) = (h * r, w * r);
                        let mut dx = vec![0.0; x.len()];
                        for ch in 0..c {
                            for dy in 0..r {
                                for dx_ in 0..r {
                                    let ic = ch * r * r + dy * r + dx_;
                                    for y in 0..h {
                                        for xw in 0..w {
                                            dx[(ic * h + y) * w + xw] += gout
                                                [(ch * oh + y * r + dy) * ow + xw * r + dx_];
                                        }
                                    }
                                }
                            }
                        }
                        dx
                    };
                    self.accumulate(input, &contrib);
                }
                Op::ConcatChannels { inputs } => {
                    let mut offset = 0;
                    for inp in inputs {
                        let n = self.nodes[inp].value.len();
                        let slice = gout[offset..offset + n].to_vec();
                        self.accumulate(inp, &slice);
                        offset += n;
                    }
                }
                Op::Clamp { input, lo, hi } => {
                    let contrib: Vec<f64> = {
                        let x = &self.nodes[input].value;
                        x.data
                            .iter()
                            .zip(&gout)
                            .map(|(&v, &g)| if v >= lo && v <= hi { g } else { 0.0 })
                            .collect()
                    };
                    self.accumulate(input, &contrib);
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let x = self.nodes[input].value.clone();
                    let w = self.nodes[weight].value.clone();
                    let (m, n) = (w.shape[0], w.shape[1]);
                    let mut dx = vec![0.0; n];
                    let mut dw = vec![0.0; m * n];
                    for i in 0..m {
                        let g = gout[i];
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            dx[j] += g * w.data[i * n + j];
                            dw[i * n + j] += g * x.data[j];
                        }
                    }
                    self.accumulate(input, &dx);
                    self.accumulate(weight, &dw);
                    self.accumulate(bias, &gout);
                }
                Op::Reshape { input } => {
                    self.accumulate(input, &gout);
                }
                Op::Gather { input, index } => {
                    let mut contrib = vec![0.0; self.nodes[input].value.len()];
                    contrib[index] = gout[0];
                    self.accumulate(input, &contrib);
                }
                Op::LogSumExp { input } => {
                    let g = gout[0];
                    let contrib: Vec<f64> = {
                        let x = &self.nodes[input].value;
                        let lse = self.nodes[id].value.item();
                        x.data.iter().map(|&v| g * (v - lse).exp()).collect()
                    };
                    self.accumulate(input, &contrib);
                }
                Op::RoiMaxPool { input, argmax } => {
                    let mut contrib = vec![0.0; self.nodes[input].value.len()];
                    for (o, slot) in argmax.iter().enumerate() {
                        if let Some(idx) = slot {
                            contrib[*idx] += gout[o];
                        }
                    }
                    self.accumulate(input, &contrib);
                }
            }
        }
        Ok(())
    }
}
