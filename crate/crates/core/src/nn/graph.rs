//! Tape-based reverse-mode autodiff.
//!
//! Every op appends a node holding its forward value; nodes are in
//! topological order by construction, so `backward` is one reverse sweep.
//! Gradients are fresh per call to [`Graph::backward`]; nothing accumulates
//! across calls.

use thiserror::Error;

use super::kernels::{self, ConvDims};
use super::tensor::{ShapeError, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: NodeId, dims: ConvDims },
    Relu(NodeId),
    MaxPool2 { x: NodeId, arg: Vec<u32> },
    Reshape(NodeId),
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Sigmoid(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Square(NodeId),
    Log(NodeId),
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Sum(NodeId),
    Mean(NodeId),
    SliceRows { x: NodeId, start: usize },
    Matmul(NodeId, NodeId),
    NegSqDists(NodeId, NodeId),
    SqDist(NodeId, NodeId),
    Ccl(NodeId),
    SoftmaxCe { logits: NodeId, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that needs them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros shaped like `like` when unreachable.
    pub fn get_or_zeros(&self, id: NodeId, like: &[usize]) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(like))
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> GraphError {
    ShapeError::Mismatch { op, left: a.shape().to_vec(), right: b.shape().to_vec() }.into()
}

fn rank(op: &'static str, t: &Tensor, expected: usize) -> Result<(), GraphError> {
    if t.shape().len() != expected {
        return Err(ShapeError::Rank { op, expected, shape: t.shape().to_vec() }.into());
    }
    Ok(())
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// A trainable leaf; its gradient is reported by `backward`.
    pub fn param(&mut self, t: &Tensor) -> NodeId {
        self.nodes.push(Node { value: t.clone(), op: Op::Leaf, needs_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: false });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Same-padded stride-1 convolution: `[B,C,H,W] * [O,C,k,k] + [O]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        rank("conv2d", xv, 4)?;
        rank("conv2d", wv, 4)?;
        let (xs, ws) = (xv.shape(), wv.shape());
        if ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0 || bv.shape() != [ws[0]] {
            return Err(mismatch("conv2d", xv, wv));
        }
        let dims = ConvDims { channels: xs[1], height: xs[2], width: xs[3], out_channels: ws[0], kernel: ws[2] };
        let out = kernels::conv2d_forward(xv.data(), xs[0], dims, wv.data(), bv.data());
        let value = Tensor::new(vec![xs[0], ws[0], xs[2], xs[3]], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, dims }, &[x, w, b]))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), kernels::relu(v.data())).expect("same shape");
        self.push(value, Op::Relu(x), &[x])
    }

    /// 2x2 max pooling over the last two axes, floor division for odd sizes.
    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let v = self.value(x);
        rank("maxpool2", v, 4)?;
        let s = v.shape();
        let (out, arg) = kernels::maxpool2_forward(v.data(), s[0] * s[1], s[2], s[3]);
        let value = Tensor::new(vec![s[0], s[1], s[2] / 2, s[3] / 2], out)?;
        Ok(self.push(value, Op::MaxPool2 { x, arg }, &[x]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// `[B, in] -> [B, out]` with `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        rank("linear", xv, 2)?;
        rank("linear", wv, 2)?;
        let (batch, inp) = (xv.shape()[0], xv.shape()[1]);
        if wv.shape()[1] != inp || bv.shape() != [wv.shape()[0]] {
            return Err(mismatch("linear", xv, wv));
        }
        let out = kernels::linear_forward(xv.data(), batch, inp, wv.data(), bv.data());
        let value = Tensor::new(vec![batch, wv.shape()[0]], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    fn map(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect()).expect("same shape");
        self.push(value, op, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        self.map(x, Op::Scale(x, k), |a| a * k)
    }

    pub fn add_scalar(&mut self, x: NodeId, k: f64) -> NodeId {
        self.map(x, Op::AddScalar(x), |a| a + k)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Square(x), |a| a * a)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Log(x), f64::ln)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.map(x, Op::Clamp { x, lo, hi }, |a| a.clamp(lo, hi))
    }

    fn zip(&mut self, a: NodeId, b: NodeId, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.zip(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.zip(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.zip(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId, GraphError> {
        let v = self.value(x);
        if start > end || end > v.shape()[0] {
            return Err(ShapeError::Mismatch { op: "slice_rows", left: v.shape().to_vec(), right: vec![start, end] }.into());
        }
        let value = v.rows(start, end);
        Ok(self.push(value, Op::SliceRows { x, start }, &[x]))
    }

    /// `[m, k] @ [k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        rank("matmul", av, 2)?;
        rank("matmul", bv, 2)?;
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        if bv.shape()[0] != k {
            return Err(mismatch("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, 1.0, av.data(), (k, 1), bv.data(), (n, 1), 0.0, &mut out, (n, 1));
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::Matmul(a, b), &[a, b]))
    }

    /// `out[i, j] = -|q_i - p_j|^2` for `q: [Q, D]`, `p: [N, D]`.
    pub fn neg_sq_dists(&mut self, q: NodeId, p: NodeId) -> Result<NodeId, GraphError> {
        let (qv, pv) = (self.value(q), self.value(p));
        rank("neg_sq_dists", qv, 2)?;
        rank("neg_sq_dists", pv, 2)?;
        let d = qv.shape()[1];
        if pv.shape()[1] != d {
            return Err(mismatch("neg_sq_dists", qv, pv));
        }
        let (nq, np) = (qv.shape()[0], pv.shape()[0]);
        let mut out = Vec::with_capacity(nq * np);
        for qi in qv.data().chunks(d) {
            for pj in pv.data().chunks(d) {
                out.push(-qi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
            }
        }
        let value = Tensor::new(vec![nq, np], out)?;
        Ok(self.push(value, Op::NegSqDists(q, p), &[q, p]))
    }

    /// Scalar `sum((a - b)^2)`.
    pub fn sq_dist(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.numel() != bv.numel() {
            return Err(mismatch("sq_dist", av, bv));
        }
        let s = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(self.push(Tensor::scalar(s), Op::SqDist(a, b), &[a, b]))
    }

    /// Completeness-contrast loss over the flattened scores of `x`; see
    /// [`crate::pretrain::ccl`].
    pub fn ccl(&mut self, x: NodeId) -> NodeId {
        let s = crate::pretrain::ccl_value(self.value(x).data());
        self.push(Tensor::scalar(s), Op::Ccl(x), &[x])
    }

    /// Mean softmax cross-entropy of `logits: [B, N]` against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, GraphError> {
        let v = self.value(logits);
        rank("softmax_cross_entropy", v, 2)?;
        let (b, n) = (v.shape()[0], v.shape()[1]);
        if labels.len() != b || labels.iter().any(|&l| l >= n) {
            return Err(ShapeError::Mismatch { op: "softmax_cross_entropy", left: v.shape().to_vec(), right: vec![labels.len()] }.into());
        }
        let mut probs = Vec::with_capacity(b * n);
        let mut loss = 0.0;
        for (row, &label) in v.data().chunks(n).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&a| (a - max).exp()).sum();
            loss -= row[label] - max - z.ln();
            probs.extend(row.iter().map(|&a| (a - max).exp() / z));
        }
        let value = Tensor::scalar(loss / b as f64);
        Ok(self.push(value, Op::SoftmaxCe { logits, labels: labels.to_vec(), probs }, &[logits]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GraphError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(GraphError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0]).expect("scalar"));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (idx, g) in grads.iter_mut().enumerate() {
            if !self.nodes[idx].needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |id: NodeId, data: Vec<f64>| {
            if !self.needs(id) {
                return;
            }
            let shape = self.value(id).shape();
            match &mut grads[id.0] {
                Some(t) => t.data_mut().iter_mut().zip(&data).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape")),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, dims } => {
                let xv = self.value(*x);
                let r = kernels::conv2d_backward(
                    xv.data(),
                    xv.shape()[0],
                    *dims,
                    self.value(*w).data(),
                    gd,
                    self.needs(*x),
                );
                if let Some(dx) = r.dx {
                    acc(*x, dx);
                }
                acc(*w, r.dweight);
                acc(*b, r.dbias);
            }
            Op::Relu(x) => {
                let d = self.value(*x).data().iter().zip(gd).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
                acc(*x, d);
            }
            Op::MaxPool2 { x, arg } => {
                let mut d = vec![0.0; self.value(*x).numel()];
                for (&i, &gv) in arg.iter().zip(gd) {
                    d[i as usize] += gv;
                }
                acc(*x, d);
            }
            Op::Reshape(x) => acc(*x, gd.to_vec()),
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, inp) = (xv.shape()[0], xv.shape()[1]);
                let out = wv.shape()[0];
                if self.needs(*x) {
                    let mut dx = vec![0.0; batch * inp];
                    kernels::gemm(batch, out, inp, 1.0, gd, (out, 1), wv.data(), (inp, 1), 0.0, &mut dx, (inp, 1));
                    acc(*x, dx);
                }
                let mut dw = vec![0.0; out * inp];
                kernels::gemm(out, batch, inp, 1.0, gd, (1, out), xv.data(), (inp, 1), 0.0, &mut dw, (inp, 1));
                acc(*w, dw);
                let mut db = vec![0.0; out];
                for row in gd.chunks(out) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                acc(*b, db);
            }
            Op::Sigmoid(x) => {
                let d = node.value.data().iter().zip(gd).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                acc(*x, d);
            }
            Op::Add(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, gd.iter().zip(bv).map(|(g, y)| g * y).collect());
                acc(*b, gd.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            Op::Scale(x, k) => acc(*x, gd.iter().map(|v| v * k).collect()),
            Op::AddScalar(x) => acc(*x, gd.to_vec()),
            Op::Square(x) => {
                acc(*x, self.value(*x).data().iter().zip(gd).map(|(v, g)| 2.0 * v * g).collect());
            }
            Op::Log(x) => acc(*x, self.value(*x).data().iter().zip(gd).map(|(v, g)| g / v).collect()),
            Op::Clamp { x, lo, hi } => {
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &g)| if v >= *lo && v <= *hi { g } else { 0.0 })
                    .collect();
                acc(*x, d);
            }
            Op::Sum(x) => acc(*x, vec![gd[0]; self.value(*x).numel()]),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                acc(*x, vec![gd[0] / n as f64; n]);
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let stride: usize = xv.shape()[1..].iter().product();
                let mut d = vec![0.0; xv.numel()];
                d[start * stride..start * stride + gd.len()].copy_from_slice(gd);
                acc(*x, d);
            }
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(m, n, k, 1.0, gd, (n, 1), bv.data(), (1, n), 0.0, &mut da, (k, 1));
                    acc(*a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(k, m, n, 1.0, av.data(), (1, k), gd, (n, 1), 0.0, &mut db, (n, 1));
                    acc(*b, db);
                }
            }
            Op::NegSqDists(q, p) => {
                let (qv, pv) = (self.value(*q), self.value(*p));
                let d = qv.shape()[1];
                let np = pv.shape()[0];
                let mut dq = vec![0.0; qv.numel()];
                let mut dp = vec![0.0; pv.numel()];
                for (i, qi) in qv.data().chunks(d).enumerate() {
                    for (j, pj) in pv.data().chunks(d).enumerate() {
                        let gij = gd[i * np + j];
                        for t in 0..d {
                            let diff = qi[t] - pj[t];
                            dq[i * d + t] -= 2.0 * gij * diff;
                            dp[j * d + t] += 2.0 * gij * diff;
                        }
                    }
                }
                acc(*q, dq);
                acc(*p, dp);
            }
            Op::SqDist(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da: Vec<f64> = av.iter().zip(bv).map(|(x, y)| 2.0 * gd[0] * (x - y)).collect();
                acc(*b, da.iter().map(|v| -v).collect());
                acc(*a, da);
            }
            Op::Ccl(x) => {
                let d = crate::pretrain::ccl_grad(self.value(*x).data()).into_iter().map(|v| v * gd[0]).collect();
                acc(*x, d);
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let n = self.value(*logits).shape()[1];
                let b = labels.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * gd[0] / b).collect();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * n + l] -= gd[0] / b;
                }
                acc(*logits, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative_at_three() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::scalar(3.0));
        let y = g.square(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_loss_has_zero_parameter_gradient() {
        let mut g = Graph::new();
        let w = g.param(&Tensor::from_vec(vec![1.0, 2.0]));
        let c = g.constant(Tensor::scalar(5.0));
        let loss = g.square(c);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get_or_zeros(w, &[2]).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let w = g.param(&Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(GraphError::NonScalarLoss(_))));
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::scalar(2.0));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 5.0);
    }
}
