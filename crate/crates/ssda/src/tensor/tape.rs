//! Reverse-mode tape over dense tensors.
//!
//! Operations append nodes in topological order; [`Tape::backward`] walks the
//! node list in reverse once, accumulating gradients additively so fan-out is
//! handled for free. The tape is confined to one thread and records every
//! intermediate value, which keeps the backward pass recomputation-free.

use super::ops;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// The differentiable operation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Matmul,
    Add,
    Sub,
    ElementwiseMul,
    Sigmoid,
    Relu,
    SoftmaxRows,
    MeanRows,
    SumAll,
    Square,
    LogClamped,
}

#[derive(Debug, Clone)]
enum Rule {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    // `broadcast` marks a rank-1 rhs replicated over the rows of a rank-2 lhs.
    Add { a: NodeId, b: NodeId, broadcast: bool },
    Sub { a: NodeId, b: NodeId, broadcast: bool },
    Mul { a: NodeId, b: NodeId, broadcast: bool },
    Sigmoid { x: NodeId },
    Relu { x: NodeId },
    SoftmaxRows { x: NodeId },
    MeanRows { x: NodeId },
    SumAll { x: NodeId },
    Square { x: NodeId },
    LogClamped { x: NodeId },
    Scale { x: NodeId, c: f64 },
}

#[derive(Debug)]
struct Node {
    rule: Rule,
    value: Tensor,
    grad: Vec<f64>,
    requires_grad: bool,
}

/// Records operations during the forward pass; replays them for gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    completed: bool,
    check_finite: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Enable per-op non-finite detection (debug mode; slows the forward pass).
    pub fn with_finite_checks(mut self) -> Self {
        self.check_finite = true;
        self
    }

    /// Record a trainable leaf.
    pub fn var(&mut self, t: &Tensor) -> NodeId {
        self.push(Rule::Leaf, t.clone(), true)
    }

    /// Record a non-trainable leaf.
    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.push(Rule::Leaf, t.clone(), false)
    }

    /// Record a leaf honoring the tensor's own `requires_grad` flag.
    pub fn input(&mut self, t: &Tensor) -> NodeId {
        if t.requires_grad() {
            self.var(t)
        } else {
            self.constant(t)
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gradient of the last backward pass w.r.t. the given node.
    pub fn grad(&self, id: NodeId) -> Result<&[f64]> {
        if !self.completed {
            return Err(Error::contract("grad read before backward"));
        }
        Ok(&self.nodes[id.0].grad)
    }

    /// Copy a node's gradient into a tensor's grad slot.
    pub fn write_grad_into(&self, id: NodeId, t: &mut Tensor) -> Result<()> {
        let g = self.grad(id)?.to_vec();
        t.set_grad(g)
    }

    /// Zero all gradients and re-arm the tape for another backward pass.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            for g in &mut node.grad {
                *g = 0.0;
            }
        }
        self.completed = false;
    }

    fn push(&mut self, rule: Rule, value: Tensor, requires_grad: bool) -> NodeId {
        let grad = if requires_grad {
            vec![0.0; value.len()]
        } else {
            Vec::new()
        };
        self.nodes.push(Node {
            rule,
            value,
            grad,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn finite_check(&self, id: NodeId, op: &'static str) -> Result<NodeId> {
        if self.check_finite {
            let v = &self.nodes[id.0].value;
            if let Some(pos) = v.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "{op} produced {} at flat index {pos}",
                    v.data()[pos]
                )));
            }
        }
        Ok(id)
    }

    /// Dispatch by op kind; the named methods below are the ergonomic surface.
    pub fn apply(&mut self, op: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let arity = |want: usize| -> Result<()> {
            if inputs.len() != want {
                Err(Error::contract(format!(
                    "{op:?} takes {want} inputs, got {}",
                    inputs.len()
                )))
            } else {
                Ok(())
            }
        };
        match op {
            OpKind::Matmul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            OpKind::ElementwiseMul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Sigmoid => {
                arity(1)?;
                self.sigmoid(inputs[0])
            }
            OpKind::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            OpKind::SoftmaxRows => {
                arity(1)?;
                self.softmax_rows(inputs[0])
            }
            OpKind::MeanRows => {
                arity(1)?;
                self.mean_rows(inputs[0])
            }
            OpKind::SumAll => {
                arity(1)?;
                self.sum_all(inputs[0])
            }
            OpKind::Square => {
                arity(1)?;
                self.square(inputs[0])
            }
            OpKind::LogClamped => {
                arity(1)?;
                self.log_clamped(inputs[0])
            }
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.nodes[a.0].value.dims2()?;
        let (k2, n) = self.nodes[b.0].value.dims2()?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("[{m}x{k}] @ [{k2}x{n}]: inner dims differ"),
            ));
        }
        let data = ops::matmul(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        let rg = self.needs_grad(&[a, b]);
        let id = self.push(Rule::Matmul { a, b }, value, rg);
        self.finite_check(id, "matmul")
    }

    /// Shapes must match, or rhs may be rank-1 of width equal to a rank-2
    /// lhs's trailing dim (broadcast over the leading batch dim).
    fn broadcast_layout(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<bool> {
        let sa = self.nodes[a.0].value.shape();
        let sb = self.nodes[b.0].value.shape();
        if sa == sb {
            return Ok(false);
        }
        if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            return Ok(true);
        }
        Err(Error::shape(op, format!("{sa:?} vs {sb:?}")))
    }

    fn binary_elementwise(
        &mut self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        rule: impl Fn(bool) -> Rule,
    ) -> Result<NodeId> {
        let broadcast = self.broadcast_layout(op, a, b)?;
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data: Vec<f64> = if broadcast {
            let (_, d) = va.dims2()?;
            va.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, vb.data()[i % d]))
                .collect()
        } else {
            va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[a, b]);
        let id = self.push(rule(broadcast), value, rg);
        self.finite_check(id, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("add", a, b, |x, y| x + y, |broadcast| Rule::Add {
            a,
            b,
            broadcast,
        })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, |broadcast| Rule::Sub {
            a,
            b,
            broadcast,
        })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("elementwise_mul", a, b, |x, y| x * y, |broadcast| {
            Rule::Mul { a, b, broadcast }
        })
    }

    fn unary(
        &mut self,
        op: &'static str,
        x: NodeId,
        f: impl Fn(f64) -> f64,
        rule: Rule,
    ) -> Result<NodeId> {
        let vx = &self.nodes[x.0].value;
        let data: Vec<f64> = vx.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[x]);
        let id = self.push(rule, value, rg);
        self.finite_check(id, op)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("sigmoid", x, |v| 1.0 / (1.0 + (-v).exp()), Rule::Sigmoid { x })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("relu", x, |v| v.max(0.0), Rule::Relu { x })
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("square", x, |v| v * v, Rule::Square { x })
    }

    /// log(max(x, 1e-12)); total on all of R.
    pub fn log_clamped(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("log_clamped", x, ops::log_clamped, Rule::LogClamped { x })
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.nodes[x.0].value.dims2()?;
        let mut data = vec![0.0; rows * cols];
        ops::softmax_rows(self.nodes[x.0].value.data(), rows, cols, &mut data);
        let value = Tensor::new(vec![rows, cols], data)?;
        let rg = self.needs_grad(&[x]);
        let id = self.push(Rule::SoftmaxRows { x }, value, rg);
        self.finite_check(id, "softmax_rows")
    }

    /// Column means of a [n, d] matrix: the batch centroid, shape [d].
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, d) = self.nodes[x.0].value.dims2()?;
        let xs = self.nodes[x.0].value.data();
        let mut data = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                data[j] += xs[i * d + j];
            }
        }
        for v in &mut data {
            *v /= n as f64;
        }
        let value = Tensor::new(vec![d], data)?;
        let rg = self.needs_grad(&[x]);
        let id = self.push(Rule::MeanRows { x }, value, rg);
        self.finite_check(id, "mean_rows")
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        let value = Tensor::scalar(s);
        let rg = self.needs_grad(&[x]);
        let id = self.push(Rule::SumAll { x }, value, rg);
        self.finite_check(id, "sum_all")
    }

    /// Multiply by a compile-time-known scalar constant.
    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary("scale", x, |v| c * v, Rule::Scale { x, c })
    }

    /// Reverse pass from a scalar loss; each node visited exactly once.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.completed {
            return Err(Error::contract(
                "backward called twice without reset_grads",
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("loss node not on this tape"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got {} elements",
                self.nodes[loss.0].value.len()
            )));
        }
        self.completed = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i);
        }
        Ok(())
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Scatter node i's gradient into its inputs.
    fn propagate(&mut self, i: usize) {
        let rule = self.nodes[i].rule.clone();
        match rule {
            Rule::Leaf => {}
            Rule::Matmul { a, b } => {
                let (m, k) = self.nodes[a.0].value.dims2().unwrap();
                let n = self.nodes[b.0].value.shape()[1];
                if self.rg(a) {
                    // dA += G @ B^T
                    let bt = ops::transpose(self.nodes[b.0].value.data(), k, n);
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    ops::matmul_acc(&g, &bt, m, n, k, &mut self.nodes[a.0].grad);
                    self.nodes[i].grad = g;
                }
                if self.rg(b) {
                    // dB += A^T @ G
                    let at = ops::transpose(self.nodes[a.0].value.data(), m, k);
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    ops::matmul_acc(&at, &g, k, m, n, &mut self.nodes[b.0].grad);
                    self.nodes[i].grad = g;
                }
            }
            Rule::Add { a, b, broadcast } => {
                if self.rg(a) {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    for (ga, &gi) in self.nodes[a.0].grad.iter_mut().zip(&g) {
                        *ga += gi;
                    }
                    self.nodes[i].grad = g;
                }
                if self.rg(b) {
                    self.scatter_rhs(i, b, broadcast, 1.0);
                }
            }
            Rule::Sub { a, b, broadcast } => {
                if self.rg(a) {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    for (ga, &gi) in self.nodes[a.0].grad.iter_mut().zip(&g) {
                        *ga += gi;
                    }
                    self.nodes[i].grad = g;
                }
                if self.rg(b) {
                    self.scatter_rhs(i, b, broadcast, -1.0);
                }
            }
            Rule::Mul { a, b, broadcast } => {
                let d = if broadcast {
                    self.nodes[b.0].value.len()
                } else {
                    0
                };
                if self.rg(a) {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let vb = std::mem::take(&mut self.nodes[b.0].value);
                    for (idx, (ga, &gi)) in self.nodes[a.0].grad.iter_mut().zip(&g).enumerate() {
                        let bv = if broadcast {
                            vb.data()[idx % d]
                        } else {
                            vb.data()[idx]
                        };
                        *ga += gi * bv;
                    }
                    self.nodes[b.0].value = vb;
                    self.nodes[i].grad = g;
                }
                if self.rg(b) {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let va = std::mem::take(&mut self.nodes[a.0].value);
                    if broadcast {
                        for (idx, &gi) in g.iter().enumerate() {
                            self.nodes[b.0].grad[idx % d] += gi * va.data()[idx];
                        }
                    } else {
                        for (idx, (gb, &gi)) in
                            self.nodes[b.0].grad.iter_mut().zip(&g).enumerate()
                        {
                            *gb += gi * va.data()[idx];
                        }
                    }
                    self.nodes[a.0].value = va;
                    self.nodes[i].grad = g;
                }
            }
            Rule::Sigmoid { x } => {
                if self.rg(x) {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let y = std::mem::take(&mut self.nodes[i].value);
                    for (idx, (gx, &gi)) in self.nodes[x.0].grad.iter_mut().zip(&g).enumerate() {
                        let yv = y.data()[idx];
                        *gx += gi * yv * (1.0 - yv);
                    }
                    self.nodes[i].value = y;
                    self.nodes[i].grad = g;
                }
            }
            Rule::Relu { x } => {
                if self.rg(x) {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let vx = std::mem::take(&mut self.nodes[x.0].value);
                    for (idx, (gx, &gi)) in self.nodes[x.0].grad.iter_mut().zip(&g).enumerate() {
                        if vx.data()[idx] > 0.0 {
                            *gx += gi;
                        }
                    }
                    self.nodes[x.0].value = vx;
                    self.nodes[i].grad = g;
                }
            }
            Rule::SoftmaxRows { x } => {
                if self.rg(x) {
                    let (rows, cols) = self.nodes[i].value.dims2().unwrap();
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let y = std::mem::take(&mut self.nodes[i].value);
                    for r in 0..rows {
                        let yr = &y.data()[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                        let gx = &mut self.nodes[x.0].grad[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            gx[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                    self.nodes[i].value = y;
                    self.nodes[i].grad = g;
                }
            }
            Rule::MeanRows { x } => {
                if self.rg(x) {
                    let (n, d) = self.nodes[x.0].value.dims2().unwrap();
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let inv = 1.0 / n as f64;
                    for row in 0..n {
                        let gx = &mut self.nodes[x.0].grad[row * d..(row + 1) * d];
                        for j in 0..d {
                            gx[j] += g[j] * inv;
                        }
                    }
                    self.nodes[i].grad = g;
                }
            }
            Rule::SumAll { x } => {
                if self.rg(x) {
                    let gi = self.nodes[i].grad[0];
                    for gx in &mut self.nodes[x.0].grad {
                        *gx += gi;
                    }
                }
            }
            Rule::Square { x } => {
                if self.rg(x) {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let vx = std::mem::take(&mut self.nodes[x.0].value);
                    for (idx, (gx, &gi)) in self.nodes[x.0].grad.iter_mut().zip(&g).enumerate() {
                        *gx += gi * 2.0 * vx.data()[idx];
                    }
                    self.nodes[x.0].value = vx;
                    self.nodes[i].grad = g;
                }
            }
            Rule::LogClamped { x } => {
                if self.rg(x) {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let vx = std::mem::take(&mut self.nodes[x.0].value);
                    for (idx, (gx, &gi)) in self.nodes[x.0].grad.iter_mut().zip(&g).enumerate() {
                        let xv = vx.data()[idx];
                        if xv > ops::LOG_EPS {
                            *gx += gi / xv;
                        }
                    }
                    self.nodes[x.0].value = vx;
                    self.nodes[i].grad = g;
                }
            }
            Rule::Scale { x, c } => {
                if self.rg(x) {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    for (gx, &gi) in self.nodes[x.0].grad.iter_mut().zip(&g) {
                        *gx += c * gi;
                    }
                    self.nodes[i].grad = g;
                }
            }
        }
    }

    /// Add s * G into the rhs of a binary op, column-summing when broadcast.
    fn scatter_rhs(&mut self, i: usize, b: NodeId, broadcast: bool, s: f64) {
        let g = std::mem::take(&mut self.nodes[i].grad);
        if broadcast {
            let d = self.nodes[b.0].value.len();
            for (idx, &gi) in g.iter().enumerate() {
                self.nodes[b.0].grad[idx % d] += s * gi;
            }
        } else {
            for (gb, &gi) in self.nodes[b.0].grad.iter_mut().zip(&g) {
                *gb += s * gi;
            }
        }
        self.nodes[i].grad = g;
    }
}

// Default for Tensor so std::mem::take works inside propagate.
impl Default for Tensor {
    fn default() -> Self {
        Tensor::scalar(0.0)
    }
}
