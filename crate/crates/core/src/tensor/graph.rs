//! Append-only operation record with reverse-mode gradient propagation.
//!
//! Every op validates shapes, computes its value eagerly, and pushes a node
//! that remembers its inputs plus whatever the backward rule needs. Inputs
//! always precede the node that consumes them, so a single reverse sweep over
//! the node list is a valid topological order.

use super::kernels::{self, ConvGeom};
use super::{shape_str, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial padding rule for [`Graph::conv2d`]. Stride is always 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that preserves height and width. Odd kernels pad
    /// `(k - 1) / 2` on both sides; even kernels put the extra row and
    /// column at the bottom and right.
    Same,
    Valid,
}

/// Discriminant of a recorded op, for structural audits of a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    MaxPool2,
    Upsample2,
    Concat,
    Narrow,
    Add,
    Sub,
    Hadamard,
    MulBroadcast,
    Sigmoid,
    Tanh,
    Relu,
    Scale,
    Sum,
    Mean,
    BatchNorm,
    Bce,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2 {
        x: Var,
        planes: usize,
        h: usize,
        w: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    /// `x * w` where `w`'s shape is a suffix of `x`'s shape.
    MulBroadcast {
        x: Var,
        w: Var,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Bce {
        pred: Var,
        target: Vec<T>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool2 { .. } => OpKind::MaxPool2,
            Op::Upsample2 { .. } => OpKind::Upsample2,
            Op::Concat { .. } => OpKind::Concat,
            Op::Narrow { .. } => OpKind::Narrow,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::MulBroadcast { .. } => OpKind::MulBroadcast,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Relu(_) => OpKind::Relu,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Bce { .. } => OpKind::Bce,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                x, kernel, bias, ..
            } => {
                let mut v = vec![*x, *kernel];
                v.extend(bias);
                v
            }
            Op::MaxPool2 { x, .. }
            | Op::Upsample2 { x, .. }
            | Op::Narrow { x, .. }
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::Bce { pred, .. } => vec![*pred],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Hadamard(a, b) => vec![*a, *b],
            Op::MulBroadcast { x, w } => vec![*x, *w],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Batch statistics measured by a train-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance, as used for normalization.
    pub var: Vec<T>,
    /// Number of values pooled per channel.
    pub count: usize,
}

/// Recorded computation graph for one forward/backward pass.
pub struct Graph<T: Real = f64> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits an image tensor into `(batch, channels, height, width)`.
fn image_dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(Error::dim(format!(
            "{what} expects [C,H,W] or [B,C,H,W], got {}",
            shape_str(shape)
        ))),
    }
}

fn with_spatial(shape: &[usize], c: usize, h: usize, w: usize) -> Vec<usize> {
    let mut out = shape[..shape.len() - 3].to_vec();
    out.extend([c, h, w]);
    out
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient after [`Graph::backward`]; `None` when `v` does
    /// not influence the loss or does not require gradients.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// Number of recorded nodes of a given kind.
    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    /// Clears gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        let requires_grad = op
            .inputs()
            .iter()
            .any(|i| self.nodes[i.0].requires_grad);
        debug_assert!(op.inputs().iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf whose gradient is collected by `backward`.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shape {} vs {}",
                shape_str(self.shape(a)),
                shape_str(self.shape(b))
            )));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        self.push(op, value)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(va.shape(), data).expect("shape checked");
        self.push(op, value)
    }

    /// Stride-1 cross-correlation plus per-output-channel bias.
    ///
    /// `x` is `[C_in,H,W]` or `[B,C_in,H,W]`; `kernel` is `[C_out,C_in,kH,kW]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, padding: Padding) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (batch, c_in, h, w) = image_dims(&xs, "conv2d input")?;
        let ks = self.shape(kernel).to_vec();
        let [c_out, kc, kh, kw] = ks[..] else {
            return Err(Error::dim(format!(
                "conv2d kernel must be [C_out,C_in,kH,kW], got {}",
                shape_str(&ks)
            )));
        };
        if kc != c_in {
            return Err(Error::dim(format!(
                "conv2d kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::dim(format!(
                    "conv2d bias must be [{c_out}], got {}",
                    shape_str(self.shape(b))
                )));
            }
        }
        let (pad_top, pad_left, h_out, w_out) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, h, w),
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::dim(format!(
                        "valid conv2d kernel {kh}x{kw} larger than input {h}x{w}"
                    )));
                }
                (0, 0, h - kh + 1, w - kw + 1)
            }
        };
        let geom = ConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            pad_top,
            pad_left,
            h_out,
            w_out,
        };
        let data = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_vec(&with_spatial(&xs, c_out, h_out, w_out), data)?;
        Ok(self.push(
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
            },
            value,
        ))
    }

    /// 2x2 max pooling with stride 2.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (b, c, h, w) = image_dims(&xs, "maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!(
                "maxpool2 needs even extents, got {h}x{w}"
            )));
        }
        let (data, argmax) = kernels::maxpool2_forward(b * c, h, w, self.value(x).data());
        let value = Tensor::from_vec(&with_spatial(&xs, c, h / 2, w / 2), data)?;
        Ok(self.push(Op::MaxPool2 { x, argmax }, value))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (b, c, h, w) = image_dims(&xs, "upsample2")?;
        let data = kernels::upsample2_forward(b * c, h, w, self.value(x).data());
        let value = Tensor::from_vec(&with_spatial(&xs, c, 2 * h, 2 * w), data)?;
        Ok(self.push(
            Op::Upsample2 {
                x,
                planes: b * c,
                h,
                w,
            },
            value,
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::usage("concat of zero tensors"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!(
                    "concat along axis {axis}: {} vs {}",
                    shape_str(&base),
                    shape_str(s)
                )));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::from_vec(&shape, data)?;
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            value,
        ))
    }

    /// Channel-wise concatenation of image tensors (`[C,H,W]` or `[B,C,H,W]`).
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::usage("concat of zero tensors"))?;
        let rank = self.shape(first).len();
        if !(rank == 3 || rank == 4) {
            return Err(Error::dim(format!(
                "concat_channels expects image tensors, got rank {rank}"
            )));
        }
        self.concat(inputs, rank - 3)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || len == 0 || start + len > xs[axis] {
            return Err(Error::dim(format!(
                "narrow({axis}, {start}, {len}) out of range for {}",
                shape_str(&xs)
            )));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * xs[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let value = Tensor::from_vec(&shape, data)?;
        Ok(self.push(Op::Narrow { x, axis, start }, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.binary(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.binary(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "hadamard")?;
        Ok(self.binary(a, b, Op::Hadamard(a, b), |x, y| x * y))
    }

    /// Elementwise product where `w` is broadcast over the leading extents of
    /// `x` (its shape must be a suffix of `x`'s shape).
    pub fn mul_broadcast(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.len() > xs.len() || xs[xs.len() - ws.len()..] != *ws {
            return Err(Error::dim(format!(
                "cannot broadcast {} over {}",
                shape_str(ws),
                shape_str(xs)
            )));
        }
        let wv = self.value(w).data();
        let n = wv.len();
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(wv).map(|(&a, &b)| a * b))
            .collect();
        let value = Tensor::from_vec(self.shape(x), data)?;
        Ok(self.push(Op::MulBroadcast { x, w }, value))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let n = T::from_usize(v.numel()).expect("count");
        self.push(Op::Mean(x), Tensor::scalar(s / n))
    }

    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x);
        let [b, c, h, w] = xs[..] else {
            return Err(Error::dim(format!(
                "batchnorm expects [B,C,H,W], got {}",
                shape_str(xs)
            )));
        };
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(p) != [c] {
                return Err(Error::dim(format!(
                    "batchnorm {name} must be [{c}], got {}",
                    shape_str(self.shape(p))
                )));
            }
        }
        Ok((b, c, h * w))
    }

    /// Train-mode batch normalization: per-channel statistics over
    /// `(batch, height, width)`, then the affine `gamma * xhat + beta`.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        let (b, c, plane) = self.bn_dims(x, gamma, beta)?;
        if b < 2 {
            return Err(Error::usage(format!(
                "train-mode batchnorm needs a batch of at least 2, got {b}"
            )));
        }
        let xv = self.value(x).data();
        let n = b * plane;
        let nt = T::from_usize(n).expect("count");
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                s = xv[off..off + plane].iter().fold(s, |acc, &v| acc + v);
            }
            let m = s / nt;
            let mut sq = T::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                sq = xv[off..off + plane].iter().fold(sq, |acc, &v| acc + (v - m) * (v - m));
            }
            mean[ch] = m;
            var[ch] = sq / nt;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let stats = BatchStats {
            mean: mean.clone(),
            var,
            count: n,
        };
        let var = self.bn_apply(x, gamma, beta, &mean, inv_std, true)?;
        Ok((var, stats))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (_, c, _) = self.bn_dims(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::dim(format!(
                "batchnorm running statistics must have {c} channels"
            )));
        }
        let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, mean, inv_std, false)
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: Vec<T>,
        train: bool,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (c, plane) = (xs[1], xs[2] * xs[3]);
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for (idx, chunk) in xv.chunks(plane).enumerate() {
            let ch = idx % c;
            for &v in chunk {
                let h = (v - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(g[ch] * h + be[ch]);
            }
        }
        let value = Tensor::from_vec(&xs, out)?;
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            value,
        ))
    }

    /// Mean binary cross-entropy. Predictions are clamped to
    /// `[1e-7, 1 - 1e-7]`; the gradient is zero outside that band.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::dim(format!(
                "bce: prediction {} vs target {}",
                shape_str(self.shape(pred)),
                shape_str(target.shape())
            )));
        }
        if let Some(bad) = target
            .data()
            .iter()
            .find(|&&y| y != T::zero() && y != T::one())
        {
            return Err(Error::usage(format!(
                "bce target must be binary, found {bad:?}"
            )));
        }
        let (lo, hi) = bce_band::<T>();
        let n = T::from_usize(target.numel()).expect("count");
        let total = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .fold(T::zero(), |acc, (&p, &y)| {
                let p = p.max(lo).min(hi);
                acc - (y * p.ln() + (T::one() - y) * (T::one() - p).ln())
            });
        Ok(self.push(
            Op::Bce {
                pred,
                target: target.data().to_vec(),
            },
            Tensor::scalar(total / n),
        ))
    }

    /// Propagates `d loss / d node` to every ancestor that requires a
    /// gradient. Gradients accumulate across fan-out.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::usage(
                "backward already ran on this graph; call zero_grad first",
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {}",
                shape_str(self.shape(loss))
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for i in (0..=loss.0).rev() {
            let (lower, upper) = self.grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            backprop(&self.nodes, node, g.data(), lower);
        }
        Ok(())
    }
}

pub(crate) fn bce_band<T: Real>() -> (T, T) {
    let lo = T::from_f64_lossy(1e-7);
    (lo, T::one() - lo)
}

/// Zero-initialised gradient slot for `v`, or `None` when `v` is not
/// differentiated.
fn slot<'a, T: Real>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
    v: Var,
) -> Option<&'a mut [T]> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(
        grads[v.0]
            .get_or_insert_with(|| Tensor::zeros(node.value.shape()))
            .data_mut(),
    )
}

fn acc_map<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    g: &[T],
    f: impl Fn(usize, T) -> T,
) {
    if let Some(d) = slot(nodes, grads, v) {
        for (i, (d, &gi)) in d.iter_mut().zip(g).enumerate() {
            *d = *d + f(i, gi);
        }
    }
}

fn backprop<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Tensor<T>>]) {
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            x,
            kernel,
            bias,
            geom,
        } => {
            // Only one input slot can be borrowed mutably at a time, so
            // compute into scratch buffers and add afterwards.
            let xv = nodes[x.0].value.data();
            let kv = nodes[kernel.0].value.data();
            let mut dx = nodes[x.0].requires_grad.then(|| vec![T::zero(); xv.len()]);
            let mut dk = nodes[kernel.0]
                .requires_grad
                .then(|| vec![T::zero(); kv.len()]);
            let mut db = bias
                .filter(|b| nodes[b.0].requires_grad)
                .map(|_| vec![T::zero(); geom.c_out]);
            kernels::conv2d_backward(
                geom,
                xv,
                kv,
                g,
                dx.as_deref_mut(),
                dk.as_deref_mut(),
                db.as_deref_mut(),
            );
            for (v, buf) in [(Some(*x), dx), (Some(*kernel), dk), (*bias, db)] {
                if let (Some(v), Some(buf)) = (v, buf) {
                    acc_map(nodes, grads, v, &buf, |_, d| d);
                }
            }
        }
        Op::MaxPool2 { x, argmax } => {
            if let Some(d) = slot(nodes, grads, *x) {
                for (&src, &gi) in argmax.iter().zip(g) {
                    d[src] = d[src] + gi;
                }
            }
        }
        Op::Upsample2 { x, planes, h, w } => {
            if let Some(d) = slot(nodes, grads, *x) {
                kernels::upsample2_backward(*planes, *h, *w, g, d);
            }
        }
        Op::Concat { inputs, axis } => {
            let shape = node.value.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis] * inner;
            let mut offset = 0;
            for &v in inputs {
                let chunk = nodes[v.0].value.shape()[*axis] * inner;
                if let Some(d) = slot(nodes, grads, v) {
                    for o in 0..outer {
                        let src = &g[o * total + offset..o * total + offset + chunk];
                        for (d, &s) in d[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                offset += chunk;
            }
        }
        Op::Narrow { x, axis, start } => {
            let xs = nodes[x.0].value.shape();
            let len = node.value.shape()[*axis];
            let outer: usize = xs[..*axis].iter().product();
            let inner: usize = xs[axis + 1..].iter().product();
            if let Some(d) = slot(nodes, grads, *x) {
                for o in 0..outer {
                    let base = (o * xs[*axis] + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    for (d, &s) in d[base..base + len * inner].iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
        Op::Add(a, b) => {
            acc_map(nodes, grads, *a, g, |_, d| d);
            acc_map(nodes, grads, *b, g, |_, d| d);
        }
        Op::Sub(a, b) => {
            acc_map(nodes, grads, *a, g, |_, d| d);
            acc_map(nodes, grads, *b, g, |_, d| -d);
        }
        Op::Hadamard(a, b) => {
            let av = nodes[a.0].value.data();
            let bv = nodes[b.0].value.data();
            acc_map(nodes, grads, *a, g, |i, d| d * bv[i]);
            acc_map(nodes, grads, *b, g, |i, d| d * av[i]);
        }
        Op::MulBroadcast { x, w } => {
            let xv = nodes[x.0].value.data();
            let wv = nodes[w.0].value.data();
            let n = wv.len();
            acc_map(nodes, grads, *x, g, |i, d| d * wv[i % n]);
            if let Some(dw) = slot(nodes, grads, *w) {
                for (i, (&gi, &xi)) in g.iter().zip(xv).enumerate() {
                    dw[i % n] = dw[i % n] + gi * xi;
                }
            }
        }
        Op::Sigmoid(x) => acc_map(nodes, grads, *x, g, |i, d| d * out[i] * (T::one() - out[i])),
        Op::Tanh(x) => acc_map(nodes, grads, *x, g, |i, d| d * (T::one() - out[i] * out[i])),
        Op::Relu(x) => acc_map(nodes, grads, *x, g, |i, d| {
            if out[i] > T::zero() {
                d
            } else {
                T::zero()
            }
        }),
        Op::Scale(x, f) => acc_map(nodes, grads, *x, g, |_, d| d * *f),
        Op::Sum(x) => {
            let g0 = g[0];
            if let Some(d) = slot(nodes, grads, *x) {
                d.iter_mut().for_each(|d| *d = *d + g0);
            }
        }
        Op::Mean(x) => {
            let n = T::from_usize(nodes[x.0].value.numel()).expect("count");
            let g0 = g[0] / n;
            if let Some(d) = slot(nodes, grads, *x) {
                d.iter_mut().for_each(|d| *d = *d + g0);
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let xs = nodes[x.0].value.shape();
            let (b, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
            let gv = nodes[gamma.0].value.data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for (idx, (gc, hc)) in g.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
                let ch = idx % c;
                for (&gi, &hi) in gc.iter().zip(hc) {
                    sum_g[ch] = sum_g[ch] + gi;
                    sum_gx[ch] = sum_gx[ch] + gi * hi;
                }
            }
            if let Some(d) = slot(nodes, grads, *gamma) {
                for ch in 0..c {
                    d[ch] = d[ch] + sum_gx[ch];
                }
            }
            if let Some(d) = slot(nodes, grads, *beta) {
                for ch in 0..c {
                    d[ch] = d[ch] + sum_g[ch];
                }
            }
            if let Some(d) = slot(nodes, grads, *x) {
                let n = T::from_usize(b * plane).expect("count");
                for (idx, (dc, (gc, hc))) in d
                    .chunks_mut(plane)
                    .zip(g.chunks(plane).zip(xhat.chunks(plane)))
                    .enumerate()
                {
                    let ch = idx % c;
                    let k = gv[ch] * inv_std[ch];
                    for (di, (&gi, &hi)) in dc.iter_mut().zip(gc.iter().zip(hc)) {
                        let v = if *train {
                            k * (gi - sum_g[ch] / n - hi * sum_gx[ch] / n)
                        } else {
                            k * gi
                        };
                        *di = *di + v;
                    }
                }
            }
        }
        Op::Bce { pred, target } => {
            let pv = nodes[pred.0].value.data();
            let (lo, hi) = bce_band::<T>();
            let scale = g[0] / T::from_usize(target.len()).expect("count");
            if let Some(d) = slot(nodes, grads, *pred) {
                for ((d, &p), &y) in d.iter_mut().zip(pv).zip(target) {
                    if p >= lo && p <= hi {
                        let dp = -(y / p) + (T::one() - y) / (T::one() - p);
                        *d = *d + scale * dp;
                    }
                }
            }
        }
    }
}
