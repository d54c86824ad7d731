//! Recording graph for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so node ids are already a
//! topological order and `backward` walks them once in reverse.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::kernels::{self, ConvGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics mode for [`Graph::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    /// Normalise by batch statistics.
    Train { eps: T },
    /// Normalise by fixed (running) statistics.
    Eval { mean: &'a [T], var: &'a [T], eps: T },
}

/// Per-channel batch mean and unbiased variance observed by a train-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        geom: ConvGeometry,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        x_hat: Tensor<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(NodeId),
    MaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(NodeId),
    NarrowChannels(NodeId),
    ConcatChannels(Vec<NodeId>),
    Reshape(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sum(NodeId),
    Mean(NodeId),
    Softmax(NodeId),
    Entropy(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single recording tape. Not shared across threads; each pass builds its own.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let geom = ConvGeometry::infer(
            self.value(input).shape(),
            self.value(weight).shape(),
            stride,
            padding,
        )?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geom.filters] {
                return Err(Error::shape(
                    "conv2d bias",
                    self.value(b).shape(),
                    &[geom.filters],
                ));
            }
        }
        let out = kernels::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            &geom,
        );
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn linear(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        let [_, d] = self.value(input).dims2("linear")?;
        let [o, wd] = self.value(weight).dims2("linear")?;
        if d != wd {
            return Err(Error::shape(
                "linear",
                self.value(input).shape(),
                self.value(weight).shape(),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [o] {
                return Err(Error::shape("linear bias", self.value(b).shape(), &[o]));
            }
        }
        let out = kernels::linear_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
        );
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    /// Per-channel batch normalisation over axis 1 of an `[N, C, ...]` input.
    /// In train mode the observed batch statistics are returned so the caller
    /// can update its running estimates.
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BnMode<'_, T>,
    ) -> Result<(NodeId, Option<BatchStats<T>>)> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::invalid_shape(
                "batch_norm",
                format!("rank {} input", shape.len()),
            ));
        }
        let c = shape[1];
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(Error::shape("batch_norm", &shape, self.value(p).shape()));
            }
        }
        let (stats, eps) = match mode {
            BnMode::Train { eps } => {
                let m: usize = shape[0] * shape[2..].iter().product::<usize>();
                if m == 0 {
                    return Err(Error::invalid_shape("batch_norm", "empty batch"));
                }
                (None, eps)
            }
            BnMode::Eval { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape(
                        "batch_norm stats",
                        &[c],
                        &[mean.len(), var.len()],
                    ));
                }
                (Some((mean, var)), eps)
            }
        };
        if eps <= T::zero() {
            return Err(Error::InvalidArgument(
                "batch_norm: eps must be positive".into(),
            ));
        }
        let fwd = kernels::batch_norm_forward(
            self.value(input),
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            eps,
        );
        let batch_stats = stats.is_none();
        let observed = batch_stats.then(|| BatchStats {
            mean: fwd.batch_mean.clone(),
            var: fwd.batch_var.clone(),
        });
        let rg = self.rg(&[input, gamma, beta]);
        let id = self.push(
            fwd.output,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                x_hat: fwd.x_hat,
                inv_std: fwd.inv_std,
                batch_stats,
            },
            rg,
        );
        Ok((id, observed))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).map(|x| x.max(T::zero()));
        let rg = self.rg(&[input]);
        self.push(out, Op::Relu(input), rg)
    }

    /// Non-overlapping `size × size` max pooling.
    pub fn max_pool(&mut self, input: NodeId, size: usize) -> Result<NodeId> {
        let (out, argmax) = kernels::max_pool_forward(self.value(input), size)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::MaxPool { input, argmax }, rg))
    }

    /// Mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let [n, c, h, w] = self.value(input).dims4("global_avg_pool")?;
        let plane = h * w;
        let inv = T::one() / T::from_usize_lossy(plane);
        let data = self
            .value(input)
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![n, c], data)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::GlobalAvgPool(input), rg))
    }

    /// The first `len` channels of an `[N, C, ...]` tensor.
    pub fn narrow_channels(&mut self, input: NodeId, len: usize) -> Result<NodeId> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() < 2 || len == 0 || len > shape[1] {
            return Err(Error::invalid_shape(
                "narrow_channels",
                format!("cannot take {len} channels of {shape:?}"),
            ));
        }
        let inner: usize = shape[2..].iter().product();
        let (c, n) = (shape[1], shape[0]);
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(n * len * inner);
        for b in 0..n {
            data.extend_from_slice(&src[b * c * inner..][..len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[1] = len;
        let out = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::NarrowChannels(input), rg))
    }

    /// Concatenates along axis 1, in the given order.
    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        if inputs.len() == 1 {
            return Ok(*first);
        }
        let s0 = self.value(*first).shape().to_vec();
        let inner: usize = s0[2..].iter().product();
        let mut total = 0;
        for &id in inputs {
            let s = self.value(id).shape();
            if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                return Err(Error::shape("concat_channels", &s0, s));
            }
            total += s[1];
        }
        let n = s0[0];
        let mut data = Vec::with_capacity(n * total * inner);
        for b in 0..n {
            for &id in inputs {
                let v = self.value(id);
                let c = v.shape()[1];
                data.extend_from_slice(&v.data()[b * c * inner..][..c * inner]);
            }
        }
        let mut shape = s0;
        shape[1] = total;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(inputs);
        Ok(self.push(out, Op::ConcatChannels(inputs.to_vec()), rg))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(input).clone().reshape(shape)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Reshape(input), rg))
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        let s = self.value(input).shape();
        let n = s[0];
        let d = s[1..].iter().product();
        self.reshape(input, &[n, d])
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / T::from_usize_lossy(v.numel()));
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    /// Row-wise softmax of `[N, K]` logits.
    pub fn softmax(&mut self, logits: NodeId) -> Result<NodeId> {
        self.value(logits).dims2("softmax")?;
        let out = kernels::softmax_rows(self.value(logits));
        let rg = self.rg(&[logits]);
        Ok(self.push(out, Op::Softmax(logits), rg))
    }

    /// Row-wise Shannon entropy (natural log) of `[N, K]` probabilities, with `0 ln 0 = 0`.
    pub fn entropy(&mut self, probs: NodeId) -> Result<NodeId> {
        let [_, k] = self.value(probs).dims2("entropy")?;
        let p = self.value(probs);
        if let Some(&bad) = p.data().iter().find(|&&x| x < T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "entropy: negative probability {bad}"
            )));
        }
        let tol = T::lit(1e-5);
        for row in p.data().chunks(k) {
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol {
                return Err(Error::InvalidArgument(format!("entropy: row sums to {s}")));
            }
        }
        let data: Vec<T> = p
            .data()
            .chunks(k)
            .map(|row| {
                -row.iter()
                    .filter(|&&x| x > T::zero())
                    .map(|&x| x * x.ln())
                    .sum::<T>()
            })
            .collect();
        let out = Tensor::new(vec![data.len()], data)?;
        let rg = self.rg(&[probs]);
        Ok(self.push(out, Op::Entropy(probs), rg))
    }

    /// Per-sample cross-entropy `-ln softmax(logits)[label]`, shape `[N]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let [n, k] = self.value(logits).dims2("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::shape("softmax_cross_entropy", &[n], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::InvalidArgument(format!(
                "softmax_cross_entropy: label {bad} out of range for {k} classes"
            )));
        }
        let z = self.value(logits);
        let lse = kernels::log_sum_exp_rows(z);
        let data: Vec<T> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| lse[i] - z.data()[i * k + y])
            .collect();
        let probs = kernels::softmax_rows(z);
        let out = Tensor::new(vec![n], data)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node it depends on.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let node = &self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(Error::invalid_shape(
                "backward",
                format!("loss must be a scalar, got {:?}", node.value.shape()),
            ));
        }
        if !node.requires_grad {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(node.value.shape()));

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &dy, &mut grads)?;
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        node: &Node<T>,
        dy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let mut acc = |id: NodeId, g: Tensor<T>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    dy,
                    geom,
                    needs(*input),
                );
                if let Some(dx) = dx {
                    acc(*input, dx);
                }
                acc(*weight, dw);
                if let Some(b) = bias {
                    acc(*b, db);
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, d) = (x.shape()[0], x.shape()[1]);
                let o = w.shape()[0];
                let dyd = dy.data();
                if needs(*input) {
                    let mut dx = vec![T::zero(); n * d];
                    for i in 0..n {
                        for j in 0..o {
                            let g = dyd[i * o + j];
                            if g == T::zero() {
                                continue;
                            }
                            let wr = &w.data()[j * d..(j + 1) * d];
                            for (a, &wv) in dx[i * d..(i + 1) * d].iter_mut().zip(wr) {
                                *a += g * wv;
                            }
                        }
                    }
                    acc(*input, Tensor::new(vec![n, d], dx)?);
                }
                let mut dw = vec![T::zero(); o * d];
                for i in 0..n {
                    let xr = &x.data()[i * d..(i + 1) * d];
                    for j in 0..o {
                        let g = dyd[i * o + j];
                        for (a, &xv) in dw[j * d..(j + 1) * d].iter_mut().zip(xr) {
                            *a += g * xv;
                        }
                    }
                }
                acc(*weight, Tensor::new(vec![o, d], dw)?);
                if let Some(b) = bias {
                    let mut db = vec![T::zero(); o];
                    for i in 0..n {
                        for j in 0..o {
                            db[j] += dyd[i * o + j];
                        }
                    }
                    acc(*b, Tensor::new(vec![o], db)?);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                x_hat,
                inv_std,
                batch_stats,
            } => {
                let (dx, dg, db) = kernels::batch_norm_backward(
                    dy,
                    x_hat,
                    self.value(*gamma).data(),
                    inv_std,
                    *batch_stats,
                );
                acc(*input, dx);
                let c = dg.len();
                acc(*gamma, Tensor::new(vec![c], dg)?);
                acc(*beta, Tensor::new(vec![c], db)?);
            }
            Op::Relu(input) => {
                let x = self.value(*input);
                let data = x
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
                    .collect();
                acc(*input, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::MaxPool { input, argmax } => {
                let x = self.value(*input);
                let mut dx = vec![T::zero(); x.numel()];
                for (&src, &g) in argmax.iter().zip(dy.data()) {
                    dx[src] += g;
                }
                acc(*input, Tensor::new(x.shape().to_vec(), dx)?);
            }
            Op::GlobalAvgPool(input) => {
                let x = self.value(*input);
                let plane = x.shape()[2] * x.shape()[3];
                let inv = T::one() / T::from_usize_lossy(plane);
                let mut dx = Vec::with_capacity(x.numel());
                for &g in dy.data() {
                    dx.extend(std::iter::repeat_n(g * inv, plane));
                }
                acc(*input, Tensor::new(x.shape().to_vec(), dx)?);
            }
            Op::NarrowChannels(input) => {
                let x = self.value(*input);
                let (n, c) = (x.shape()[0], x.shape()[1]);
                let inner: usize = x.shape()[2..].iter().product();
                let len = dy.shape()[1];
                let mut dx = vec![T::zero(); x.numel()];
                for b in 0..n {
                    dx[b * c * inner..][..len * inner]
                        .copy_from_slice(&dy.data()[b * len * inner..][..len * inner]);
                }
                acc(*input, Tensor::new(x.shape().to_vec(), dx)?);
            }
            Op::ConcatChannels(inputs) => {
                let (n, total) = (dy.shape()[0], dy.shape()[1]);
                let inner: usize = dy.shape()[2..].iter().product();
                let mut offset = 0;
                for &id in inputs {
                    let shape = self.value(id).shape().to_vec();
                    let c = shape[1];
                    if needs(id) {
                        let mut part = Vec::with_capacity(n * c * inner);
                        for b in 0..n {
                            part.extend_from_slice(
                                &dy.data()[(b * total + offset) * inner..][..c * inner],
                            );
                        }
                        acc(id, Tensor::new(shape, part)?);
                    }
                    offset += c;
                }
            }
            Op::Reshape(input) => {
                let shape = self.value(*input).shape().to_vec();
                acc(*input, dy.clone().reshape(&shape)?);
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = vb
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&y, &g)| y * g)
                    .collect();
                let db = va
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&x, &g)| x * g)
                    .collect();
                acc(*a, Tensor::new(va.shape().to_vec(), da)?);
                acc(*b, Tensor::new(vb.shape().to_vec(), db)?);
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(*a, dy.map(|g| g * c));
            }
            Op::Sum(a) => {
                let g = dy.item();
                acc(*a, Tensor::full(self.value(*a).shape(), g));
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let g = dy.item() / T::from_usize_lossy(v.numel());
                acc(*a, Tensor::full(v.shape(), g));
            }
            Op::Softmax(logits) => {
                let p = &node.value;
                let k = p.shape()[1];
                let mut dx = Vec::with_capacity(p.numel());
                for (prow, grow) in p.data().chunks(k).zip(dy.data().chunks(k)) {
                    let dot: T = prow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    dx.extend(prow.iter().zip(grow).map(|(&pv, &g)| pv * (g - dot)));
                }
                acc(*logits, Tensor::new(p.shape().to_vec(), dx)?);
            }
            Op::Entropy(probs) => {
                let p = self.value(*probs);
                let k = p.shape()[1];
                let mut dx = Vec::with_capacity(p.numel());
                for (row, &g) in p.data().chunks(k).zip(dy.data()) {
                    // d(-p ln p)/dp = -(ln p + 1); taken as 0 at p = 0.
                    dx.extend(row.iter().map(|&pv| {
                        if pv > T::zero() {
                            -(pv.ln() + T::one()) * g
                        } else {
                            T::zero()
                        }
                    }));
                }
                acc(*probs, Tensor::new(p.shape().to_vec(), dx)?);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = probs.shape()[1];
                let mut dx = probs.data().to_vec();
                for (i, (&y, &g)) in labels.iter().zip(dy.data()).enumerate() {
                    let row = &mut dx[i * k..(i + 1) * k];
                    row[y] -= T::one();
                    for v in row.iter_mut() {
                        *v *= g;
                    }
                }
                acc(*logits, Tensor::new(probs.shape().to_vec(), dx)?);
            }
        }
        Ok(())
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of node `id`, if the loss depends on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, with exact zeros when the loss does not depend on it.
    pub fn wrt(&self, id: NodeId, graph: &Graph<T>) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(id).shape()))
    }
}
