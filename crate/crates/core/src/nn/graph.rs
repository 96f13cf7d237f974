//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation eagerly; [`Graph::backward`] walks the
//! tape in reverse. Nodes only receive gradients when some ancestor is a
//! parameter leaf, so constant inputs cost nothing in the backward pass.

use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// An operation whose forward value is computed by the caller and whose
/// backward pass is supplied here. Loss functions plug in through this.
pub trait CustomOp<T: Scalar> {
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Add(Var, Var),
    Concat(Vec<Var>),
    MaxPool2(Var, Vec<u32>),
    UpNearest(Var, usize),
    UpBilinear(Var, usize),
    SpaceToDepth(Var, usize),
    Shift(Var),
    Clamp01(Var),
    Softmax(Var),
    WeightedSum(Vec<(Var, T)>),
    Custom(Vec<Var>, Box<dyn CustomOp<T>>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Batch statistics observed by a training-mode normalization layer.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Default)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A constant leaf; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf (model parameter or probed input).
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let value = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(value, Op::Conv { x, w, b, geom }, tracked))
    }

    /// Per-channel normalization. With `running = None` the batch statistics
    /// are used (and returned); otherwise the supplied mean/variance are.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::Shape(format!("batch norm over {c} channels with mismatched affine")));
        }
        let hw = h * w;
        let m = T::of((n * hw) as f64);
        let (mean, var) = match running {
            Some((rm, rv)) => (rm.to_vec(), rv.to_vec()),
            None => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        s += xv.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum();
                    }
                    let mu = s / m;
                    let mut q = T::zero();
                    for b in 0..n {
                        for &v in &xv.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                            q += (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = q / m;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let mut xhat = Tensor::zeros(xv.shape());
        let mut out = Tensor::zeros(xv.shape());
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        for b in 0..n {
            for ch in 0..c {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    let xh = (xv.data()[i] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[i] = xh;
                    out.data_mut()[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let batch_stats = running.is_none();
        let stats = batch_stats.then(|| BatchStats { mean, var });
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            tracked,
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let t = self.tracked(x);
        self.push(value, Op::Relu(x), t)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of(slope);
        let value = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        let t = self.tracked(x);
        self.push(value, Op::LeakyRelu(x, s), t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), t))
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let (n, _, h, w) = self.value(parts[0]).dims4();
        let mut total_c = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4();
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat {:?} with {:?}",
                    self.value(parts[0]).shape(),
                    self.value(p).shape()
                )));
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut out = Tensor::zeros(&[n, total_c, h, w]);
        for b in 0..n {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                let pc = pv.shape()[1];
                let src = &pv.data()[b * pc * hw..(b + 1) * pc * hw];
                out.data_mut()[(b * total_c + off) * hw..(b * total_c + off + pc) * hw].copy_from_slice(src);
                off += pc;
            }
        }
        let t = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), t))
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (value, arg) = kernels::max_pool2(self.value(x));
        let t = self.tracked(x);
        self.push(value, Op::MaxPool2(x, arg), t)
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Var {
        let value = kernels::upsample_nearest(self.value(x), factor);
        let t = self.tracked(x);
        self.push(value, Op::UpNearest(x, factor), t)
    }

    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Var {
        let value = kernels::upsample_bilinear(self.value(x), factor);
        let t = self.tracked(x);
        self.push(value, Op::UpBilinear(x, factor), t)
    }

    pub fn space_to_depth(&mut self, x: Var, block: usize) -> Result<Var> {
        let value = kernels::space_to_depth(self.value(x), block)?;
        let t = self.tracked(x);
        Ok(self.push(value, Op::SpaceToDepth(x, block), t))
    }

    /// Adds a constant per-channel offset.
    pub fn shift_channels(&mut self, x: Var, offset: &[T]) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        if offset.len() != c {
            return Err(Error::Shape(format!("{} offsets for {c} channels", offset.len())));
        }
        let mut value = xv.clone();
        let hw = h * w;
        for b in 0..n {
            for (ch, &o) in offset.iter().enumerate() {
                for v in &mut value.data_mut()[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                    *v += o;
                }
            }
        }
        let t = self.tracked(x);
        Ok(self.push(value, Op::Shift(x), t))
    }

    pub fn clamp01(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()).min(T::one()));
        let t = self.tracked(x);
        self.push(value, Op::Clamp01(x), t)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let value = kernels::softmax_channels(self.value(x));
        let t = self.tracked(x);
        self.push(value, Op::Softmax(x), t)
    }

    /// `Σ wᵢ·xᵢ` over equally shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let shape = self.value(terms[0].0).shape().to_vec();
        let mut value = Tensor::zeros(&shape);
        let mut typed = Vec::with_capacity(terms.len());
        for &(v, wgt) in terms {
            let tv = self.value(v);
            if tv.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("weighted_sum {:?} vs {shape:?}", tv.shape())));
            }
            let wgt = T::of(wgt);
            for (o, &x) in value.data_mut().iter_mut().zip(tv.data()) {
                *o += wgt * x;
            }
            typed.push((v, wgt));
        }
        let t = terms.iter().any(|&(v, _)| self.tracked(v));
        Ok(self.push(value, Op::WeightedSum(typed), t))
    }

    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let t = inputs.iter().any(|&v| self.tracked(v));
        self.push(value, Op::Custom(inputs.to_vec(), op), t)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(self.value(loss).len(), 1, "backward() needs a scalar loss");
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.input_grads(node, &g);
            grads[i] = Some(g);
            for (v, dg) in contributions {
                if !self.tracked(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&dg),
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        Grads { grads }
    }

    fn input_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let cg = kernels::conv2d_backward(self.value(*x), self.value(*w), g, *geom, self.tracked(*x));
                if let Some(dx) = cg.dx {
                    out.push((*x, dx));
                }
                out.push((*w, cg.dweight));
                if let Some(b) = b {
                    out.push((*b, cg.dbias));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, h, w) = xhat.dims4();
                let hw = h * w;
                let m = T::of((n * hw) as f64);
                let gm = self.value(*gamma).data();
                let mut dgamma = Tensor::zeros(&[c]);
                let mut dbeta = Tensor::zeros(&[c]);
                for b in 0..n {
                    for ch in 0..c {
                        for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                            dgamma.data_mut()[ch] += g.data()[i] * xhat.data()[i];
                            dbeta.data_mut()[ch] += g.data()[i];
                        }
                    }
                }
                if self.tracked(*x) {
                    let mut dx = Tensor::zeros(xhat.shape());
                    for b in 0..n {
                        for ch in 0..c {
                            let k = gm[ch] * inv_std[ch];
                            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                                dx.data_mut()[i] = if *batch_stats {
                                    k * (g.data()[i]
                                        - dbeta.data()[ch] / m
                                        - xhat.data()[i] * dgamma.data()[ch] / m)
                                } else {
                                    k * g.data()[i]
                                };
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                out.push((*x, dx));
            }
            Op::LeakyRelu(x, s) => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    if v <= T::zero() {
                        *d *= *s;
                    }
                }
                out.push((*x, dx));
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Concat(parts) => {
                let (n, total_c, h, w) = g.dims4();
                let hw = h * w;
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if self.tracked(p) {
                        let mut d = Tensor::zeros(&[n, pc, h, w]);
                        for b in 0..n {
                            d.data_mut()[b * pc * hw..(b + 1) * pc * hw]
                                .copy_from_slice(&g.data()[(b * total_c + off) * hw..(b * total_c + off + pc) * hw]);
                        }
                        out.push((p, d));
                    }
                    off += pc;
                }
            }
            Op::MaxPool2(x, arg) => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (o, &a) in arg.iter().enumerate() {
                    dx.data_mut()[a as usize] += g.data()[o];
                }
                out.push((*x, dx));
            }
            Op::UpNearest(x, f) => out.push((*x, kernels::upsample_nearest_backward(g, *f))),
            Op::UpBilinear(x, f) => out.push((*x, kernels::upsample_bilinear_backward(g, *f))),
            Op::SpaceToDepth(x, b) => {
                let c = self.value(*x).shape()[1];
                out.push((*x, kernels::space_to_depth_backward(g, *b, c)));
            }
            Op::Shift(x) => out.push((*x, g.clone())),
            Op::Clamp01(x) => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    if v < T::zero() || v > T::one() {
                        *d = T::zero();
                    }
                }
                out.push((*x, dx));
            }
            Op::Softmax(x) => out.push((*x, kernels::softmax_channels_backward(&node.value, g))),
            Op::WeightedSum(terms) => {
                for &(v, wgt) in terms {
                    out.push((v, g.map(|d| d * wgt)));
                }
            }
            Op::Custom(inputs, op) => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                for (v, d) in inputs.iter().zip(op.backward(&values, &node.value, g)) {
                    if let Some(d) = d {
                        out.push((*v, d));
                    }
                }
            }
        }
        out
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}
