//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only arena of [`TensorNode`]s. Every operation
//! pushes a node recording its inputs, so node order is already a valid
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Nodes whose inputs do not require gradients are still evaluated but are
//! skipped during the sweep.

pub mod kernels;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use kernels::ConvGeom;

/// Floor applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-7;
/// Added to the per-instance variance before the inverse square root.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Linear,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Pow(Var, u32),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, T),
    Softmax(Var),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    ConvTranspose2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    InstanceNorm { input: Var, gain: Var, shift: Var, normalized: Vec<T>, inv_std: Vec<T> },
    GlobalAvgPool(Var),
    Dense { input: Var, weight: Var, bias: Var },
    Sum(Var),
    Mean(Var),
    L1Mean(Var, Var),
    SquaredErrorToConst(Var, T),
    CrossEntropy { target: Tensor<T>, probs: Var },
    Select(Var, usize),
    SumAxis0(Var),
    ConcatChannels(Var, Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | L1Mean(a, b) | ConcatChannels(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Pow(a, _) | Tanh(a) | Sigmoid(a) | LeakyRelu(a, _)
            | Softmax(a) | GlobalAvgPool(a) | Sum(a) | Mean(a) | SquaredErrorToConst(a, _)
            | Select(a, _) | SumAxis0(a) => vec![*a],
            Conv2d { input, weight, bias, .. } | ConvTranspose2d { input, weight, bias, .. } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            InstanceNorm { input, gain, shift, .. } => vec![*input, *gain, *shift],
            Dense { input, weight, bias } => vec![*input, *weight, *bias],
            CrossEntropy { probs, .. } => vec![*probs],
        }
    }
}

/// A value in the graph together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct TensorNode<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

impl<T: Real> TensorNode<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<TensorNode<T>>,
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &TensorNode<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.grad = None);
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(TensorNode { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, rg, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(va.shape(), data).expect("shape checked by caller");
        self.push_op(out, op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).map(f);
        self.push_op(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    /// Element-wise `a^q` for `q >= 1`.
    pub fn pow(&mut self, a: Var, q: u32) -> Result<Var> {
        if q == 0 {
            return Err(Error::InvalidArgument(
                "power exponent must be >= 1; the constant term lives in the bias".into(),
            ));
        }
        if q == 1 {
            // Keep a node so gradients still flow through a distinct record.
            return Ok(self.unary(a, |x| x, Op::Pow(a, 1)));
        }
        Ok(self.unary(a, |x| x.powi(q as i32), Op::Pow(a, q)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { x * slope }, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, T::zero())
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Linear => a,
            Activation::Tanh => self.tanh(a),
            Activation::Relu => self.relu(a),
            Activation::LeakyRelu(s) => self.leaky_relu(a, T::lit(s)),
            Activation::Sigmoid => self.sigmoid(a),
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let cols = *v.shape().last().ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x = *x / s);
        }
        let out = Tensor::from_vec(v.shape(), out)?;
        Ok(self.push_op(out, Op::Softmax(a)))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(weight), stride, pad)?;
        self.check_bias("conv2d", bias, geom.cout)?;
        let mut y = kernels::conv_forward(self.value(input).data(), self.value(weight).data(), &geom);
        if let Some(b) = bias {
            kernels::add_channel_bias(&mut y, self.value(b).data(), geom.cout, geom.oh * geom.ow);
        }
        let out = Tensor::from_vec(&geom.output_shape(), y)?;
        Ok(self.push_op(out, Op::Conv2d { input, weight, bias, geom }))
    }

    /// Transposed convolution with weights laid out `[c_in, c_out, kh, kw]`.
    /// Output extent is `(h - 1) * stride - 2 * pad + k + output_pad`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let geom =
            ConvGeom::transposed(self.shape(input), self.shape(weight), stride, pad, output_pad)?;
        self.check_bias("conv_transpose2d", bias, geom.cin)?;
        let mut y = vec![T::zero(); geom.input_len()];
        kernels::conv_backward_input(self.value(input).data(), self.value(weight).data(), &geom, &mut y);
        if let Some(b) = bias {
            kernels::add_channel_bias(&mut y, self.value(b).data(), geom.cin, geom.h * geom.w);
        }
        let out = Tensor::from_vec(&geom.input_shape(), y)?;
        Ok(self.push_op(out, Op::ConvTranspose2d { input, weight, bias, geom }))
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = bias {
            if self.shape(b) != [channels] {
                return Err(Error::shape(
                    op,
                    format!("bias shape {:?}, expected [{channels}]", self.shape(b)),
                ));
            }
        }
        Ok(())
    }

    /// Per-sample, per-channel normalization followed by a per-channel affine map.
    pub fn instance_norm(&mut self, input: Var, gain: Var, shift: Var) -> Result<Var> {
        let (n, c, h, w) = kernels::nchw("instance_norm", self.shape(input))?;
        for (name, v) in [("gain", gain), ("shift", shift)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(
                    "instance_norm",
                    format!("{name} shape {:?}, expected [{c}]", self.shape(v)),
                ));
            }
        }
        let plane = h * w;
        let eps = T::lit(NORM_EPS);
        let m = T::from_usize(plane).unwrap();
        let x = self.value(input).data();
        let g = self.value(gain).data();
        let s = self.value(shift).data();
        let mut normalized = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); n * c];
        let mut y = vec![T::zero(); x.len()];
        for (i, chunk) in x.chunks(plane).enumerate() {
            let mean = chunk.iter().copied().sum::<T>() / m;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            let ch = i % c;
            for (j, &v) in chunk.iter().enumerate() {
                let xh = (v - mean) * inv;
                normalized[i * plane + j] = xh;
                y[i * plane + j] = g[ch] * xh + s[ch];
            }
        }
        let out = Tensor::from_vec(&[n, c, h, w], y)?;
        Ok(self.push_op(out, Op::InstanceNorm { input, gain, shift, normalized, inv_std }))
    }

    /// `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = kernels::nchw("global_avg_pool", self.shape(input))?;
        let m = T::from_usize(h * w).unwrap();
        let data = self
            .value(input)
            .data()
            .chunks(h * w)
            .map(|ch| ch.iter().copied().sum::<T>() / m)
            .collect();
        let out = Tensor::from_vec(&[n, c], data)?;
        Ok(self.push_op(out, Op::GlobalAvgPool(input)))
    }

    /// `y = x · Wᵀ + b` with `x: [n, in]`, `W: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, fin) = match *self.shape(input) {
            [n, f] => (n, f),
            _ => return Err(Error::shape("dense", format!("input {:?}", self.shape(input)))),
        };
        let fout = match *self.shape(weight) {
            [o, i] if i == fin => o,
            _ => {
                return Err(Error::shape(
                    "dense",
                    format!("weight {:?} for input {:?}", self.shape(weight), self.shape(input)),
                ))
            }
        };
        if self.shape(bias) != [fout] {
            return Err(Error::shape("dense", format!("bias {:?}", self.shape(bias))));
        }
        let mut y = vec![T::zero(); n * fout];
        for row in y.chunks_mut(fout) {
            row.copy_from_slice(self.value(bias).data());
        }
        T::gemm(
            n,
            fin,
            fout,
            T::one(),
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            T::one(),
            &mut y,
        );
        let out = Tensor::from_vec(&[n, fout], y)?;
        Ok(self.push_op(out, Op::Dense { input, weight, bias }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push_op(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().copied().sum::<T>() / T::from_usize(v.numel()).unwrap();
        self.push_op(Tensor::scalar(s), Op::Mean(a))
    }

    /// Mean absolute difference.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1_mean", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let s = va.data().iter().zip(vb.data()).map(|(&x, &y)| (x - y).abs()).sum::<T>()
            / T::from_usize(va.numel()).unwrap();
        Ok(self.push_op(Tensor::scalar(s), Op::L1Mean(a, b)))
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Mean of `(a - target)^2` against a constant-filled tensor of `a`'s shape.
    pub fn mse_to_const(&mut self, a: Var, target: T) -> Var {
        let v = self.value(a);
        let s = v.data().iter().map(|&x| (x - target) * (x - target)).sum::<T>()
            / T::from_usize(v.numel()).unwrap();
        self.push_op(Tensor::scalar(s), Op::SquaredErrorToConst(a, target))
    }

    /// Batch mean of `-Σ_i c_i log(max(p_i, floor))` for one-hot rows `c`.
    pub fn cross_entropy(&mut self, target: &Tensor<T>, probs: Var) -> Result<Var> {
        let p = self.value(probs);
        if p.shape() != target.shape() || p.ndim() == 0 {
            return Err(Error::shape(
                "cross_entropy",
                format!("target {:?} vs probs {:?}", target.shape(), p.shape()),
            ));
        }
        let cols = *p.shape().last().unwrap();
        let rows = p.numel() / cols;
        let tol = T::lit(1e-6);
        for row in target.data().chunks(cols) {
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol {
                return Err(Error::NotOneHot { sum: s.to_f64().unwrap_or(f64::NAN) });
            }
        }
        let floor = T::lit(PROB_FLOOR);
        let total: T = target
            .data()
            .iter()
            .zip(p.data())
            .map(|(&c, &q)| if c == T::zero() { T::zero() } else { -c * q.max(floor).ln() })
            .sum();
        let out = Tensor::scalar(total / T::from_usize(rows).unwrap());
        Ok(self.push_op(out, Op::CrossEntropy { target: target.clone(), probs }))
    }

    /// Sub-tensor at `index` of the leading axis.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let out = self.value(a).index_axis0(index)?;
        Ok(self.push_op(out, Op::Select(a, index)))
    }

    /// Sum over the leading axis.
    pub fn sum_axis0(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (&lead, rest) =
            v.shape().split_first().ok_or_else(|| Error::shape("sum_axis0", "scalar input"))?;
        let stride: usize = rest.iter().product();
        let mut out = vec![T::zero(); stride];
        for i in 0..lead {
            add_into(&mut out, &v.data()[i * stride..(i + 1) * stride]);
        }
        let out = Tensor::from_vec(rest, out)?;
        Ok(self.push_op(out, Op::SumAxis0(a)))
    }

    /// Concatenates two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = kernels::nchw("concat_channels", self.shape(a))?;
        let (nb, cb, hb, wb) = kernels::nchw("concat_channels", self.shape(b))?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (sa + sb));
        for i in 0..n {
            out.extend_from_slice(&self.value(a).data()[i * sa..(i + 1) * sa]);
            out.extend_from_slice(&self.value(b).data()[i * sb..(i + 1) * sb]);
        }
        let out = Tensor::from_vec(&[n, ca + cb, h, w], out)?;
        Ok(self.push_op(out, Op::ConcatChannels(a, b)))
    }

    /// Accumulates `∂root/∂v` into every node that requires a gradient.
    /// Calling it twice without [`Graph::zero_grad`] doubles the gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got shape {:?}", self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => add_into(acc.data_mut(), &g),
                None => node.grad = Some(Tensor::from_vec(node.value.shape(), g)?),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = node.value.data();
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(&self.nodes, grads, $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(d) = slot!(*a) {
                    add_into(d, g);
                }
                if let Some(d) = slot!(*b) {
                    add_into(d, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = slot!(*a) {
                    add_into(d, g);
                }
                if let Some(d) = slot!(*b) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = slot!(*a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * vb[k];
                    }
                }
                if let Some(d) = slot!(*b) {
                    for k in 0..d.len() {
                        d[k] += g[k] * va[k];
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(d) = slot!(*a) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *s);
                }
            }
            Op::AddScalar(a) => {
                if let Some(d) = slot!(*a) {
                    add_into(d, g);
                }
            }
            Op::Pow(a, q) => {
                let x = self.value(*a).data();
                if let Some(d) = slot!(*a) {
                    let qt = T::from_u32(*q).unwrap();
                    for k in 0..d.len() {
                        let dv = if *q == 1 { T::one() } else { qt * x[k].powi(*q as i32 - 1) };
                        d[k] += g[k] * dv;
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(d) = slot!(*a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * (T::one() - val[k] * val[k]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(d) = slot!(*a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * val[k] * (T::one() - val[k]);
                    }
                }
            }
            Op::LeakyRelu(a, s) => {
                let x = self.value(*a).data();
                if let Some(d) = slot!(*a) {
                    for k in 0..d.len() {
                        d[k] += if x[k] > T::zero() { g[k] } else { g[k] * *s };
                    }
                }
            }
            Op::Softmax(a) => {
                let cols = *node.value.shape().last().unwrap();
                if let Some(d) = slot!(*a) {
                    for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(val.chunks(cols)) {
                        let dot: T = gr.iter().zip(yr).map(|(&g, &y)| g * y).sum();
                        for k in 0..cols {
                            dr[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                }
            }
            Op::Conv2d { input, weight, bias, geom } => {
                if let Some(d) = slot!(*input) {
                    kernels::conv_backward_input(g, self.value(*weight).data(), geom, d);
                }
                if let Some(d) = slot!(*weight) {
                    kernels::conv_backward_weight(self.value(*input).data(), g, geom, d);
                }
                if let Some(d) = bias.and_then(|b| slot!(b)) {
                    kernels::channel_sum_add(g, geom.cout, geom.oh * geom.ow, d);
                }
            }
            Op::ConvTranspose2d { input, weight, bias, geom } => {
                if let Some(d) = slot!(*input) {
                    let y = kernels::conv_forward(g, self.value(*weight).data(), geom);
                    add_into(d, &y);
                }
                if let Some(d) = slot!(*weight) {
                    kernels::conv_backward_weight(g, self.value(*input).data(), geom, d);
                }
                if let Some(d) = bias.and_then(|b| slot!(b)) {
                    kernels::channel_sum_add(g, geom.cin, geom.h * geom.w, d);
                }
            }
            Op::InstanceNorm { input, gain, shift, normalized, inv_std } => {
                let c = self.shape(*input)[1];
                let plane = normalized.len() / inv_std.len();
                let m = T::from_usize(plane).unwrap();
                let gv = self.value(*gain).data();
                if let Some(d) = slot!(*input) {
                    for (i, &inv) in inv_std.iter().enumerate() {
                        let r = i * plane..(i + 1) * plane;
                        let gain_c = gv[i % c];
                        let (gs, xh) = (&g[r.clone()], &normalized[r.clone()]);
                        let sum_g: T = gs.iter().copied().sum::<T>() * gain_c;
                        let sum_gx: T = gs.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * gain_c;
                        let dr = &mut d[r];
                        for k in 0..plane {
                            dr[k] += inv / m * (m * gs[k] * gain_c - sum_g - xh[k] * sum_gx);
                        }
                    }
                }
                if let Some(d) = slot!(*gain) {
                    for (i, (gs, xh)) in g.chunks(plane).zip(normalized.chunks(plane)).enumerate() {
                        d[i % c] += gs.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
                if let Some(d) = slot!(*shift) {
                    kernels::channel_sum_add(g, c, plane, d);
                }
            }
            Op::GlobalAvgPool(a) => {
                let s = self.shape(*a);
                let plane = s[2] * s[3];
                let m = T::from_usize(plane).unwrap();
                if let Some(d) = slot!(*a) {
                    for (k, chunk) in d.chunks_mut(plane).enumerate() {
                        let v = g[k] / m;
                        chunk.iter_mut().for_each(|x| *x += v);
                    }
                }
            }
            Op::Dense { input, weight, bias } => {
                let (n, fin) = (self.shape(*input)[0], self.shape(*input)[1]);
                let fout = self.shape(*weight)[0];
                if let Some(d) = slot!(*input) {
                    T::gemm(n, fout, fin, T::one(), g, false, self.value(*weight).data(), false, T::one(), d);
                }
                if let Some(d) = slot!(*weight) {
                    T::gemm(fout, n, fin, T::one(), g, true, self.value(*input).data(), false, T::one(), d);
                }
                if let Some(d) = slot!(*bias) {
                    for row in g.chunks(fout) {
                        add_into(d, row);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(d) = slot!(*a) {
                    d.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(d) = slot!(*a) {
                    let v = g[0] / T::from_usize(d.len()).unwrap();
                    d.iter_mut().for_each(|x| *x += v);
                }
            }
            Op::L1Mean(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let scale = g[0] / T::from_usize(va.len()).unwrap();
                let sign = |k: usize| -> T {
                    let diff = va[k] - vb[k];
                    if diff > T::zero() {
                        scale
                    } else if diff < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                };
                if let Some(d) = slot!(*a) {
                    for k in 0..d.len() {
                        d[k] += sign(k);
                    }
                }
                if let Some(d) = slot!(*b) {
                    for k in 0..d.len() {
                        d[k] -= sign(k);
                    }
                }
            }
            Op::SquaredErrorToConst(a, t) => {
                let x = self.value(*a).data();
                if let Some(d) = slot!(*a) {
                    let scale = T::lit(2.0) * g[0] / T::from_usize(x.len()).unwrap();
                    for k in 0..d.len() {
                        d[k] += scale * (x[k] - *t);
                    }
                }
            }
            Op::CrossEntropy { target, probs } => {
                let p = self.value(*probs);
                let cols = *p.shape().last().unwrap();
                let rows = T::from_usize(p.numel() / cols).unwrap();
                let floor = T::lit(PROB_FLOOR);
                if let Some(d) = slot!(*probs) {
                    for (k, (&c, &q)) in target.data().iter().zip(p.data()).enumerate() {
                        if c != T::zero() && q > floor {
                            d[k] -= g[0] * c / (q * rows);
                        }
                    }
                }
            }
            Op::Select(a, index) => {
                if let Some(d) = slot!(*a) {
                    let stride = g.len();
                    add_into(&mut d[index * stride..(index + 1) * stride], g);
                }
            }
            Op::SumAxis0(a) => {
                if let Some(d) = slot!(*a) {
                    for chunk in d.chunks_mut(g.len()) {
                        add_into(chunk, g);
                    }
                }
            }
            Op::ConcatChannels(a, b) => {
                let n = self.shape(*a)[0];
                let sa = self.value(*a).numel() / n;
                let sb = self.value(*b).numel() / n;
                if let Some(d) = slot!(*a) {
                    for i in 0..n {
                        let off = i * (sa + sb);
                        add_into(&mut d[i * sa..(i + 1) * sa], &g[off..off + sa]);
                    }
                }
                if let Some(d) = slot!(*b) {
                    for i in 0..n {
                        let off = i * (sa + sb) + sa;
                        add_into(&mut d[i * sb..(i + 1) * sb], &g[off..off + sb]);
                    }
                }
            }
        }
    }
}

/// Accumulation buffer for `v`, or `None` if `v` needs no gradient.
fn grad_slot<'a, T: Real>(
    nodes: &[TensorNode<T>],
    grads: &'a mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
}

fn sigmoid<T: Real>(x: T) -> T {
    // Exponent clamped so neither branch overflows.
    let lim = T::lit(60.0);
    let x = x.max(-lim).min(lim);
    T::one() / (T::one() + (-x).exp())
}
