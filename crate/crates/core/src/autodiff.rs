//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only tape: every operation evaluates eagerly when
//! it is recorded, so node order is already a topological order and the
//! backward pass is a single reverse sweep. Graphs are meant to be rebuilt
//! for every mini-batch.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    ClampMin(Var, f32),
    Log1mexp(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, or `None` for constants and
    /// nodes the root does not depend on.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// `log(1 - e^{-a})` for `a > 0` without cancellation at either end.
pub(crate) fn log1mexp(a: f64) -> f64 {
    if a <= std::f64::consts::LN_2 {
        (-(-a).exp_m1()).ln()
    } else {
        (-(-a).exp()).ln_1p()
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable leaf (inputs, labels, noise).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of `root`. Values are computed as nodes are recorded, so this
    /// only hands back the cached root tensor.
    pub fn forward(&self, root: Var) -> &Tensor {
        self.value(root)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, name: &'static str, value: Tensor, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(op, value, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = crate::tensor::matmul(self.value(a), self.value(b))?;
        self.record(Op::MatMul(a, b), "matmul", value, &[a, b])
    }

    /// Adds a bias vector of width `n` to every row of a `(rows, n)` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.shape().len() != 2 || bv.shape() != [xv.shape()[1]] {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let n = bv.len();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.record(Op::AddBias(x, bias), "add_bias", out, &[x, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.record(Op::Add(a, b), "add", value, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.record(Op::Sub(a, b), "sub", value, &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.record(Op::Mul(a, b), "mul", value, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var> {
        let value = self.value(a).map(|x| x * c);
        self.record(Op::Scale(a, c), "scale", value, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Result<Var> {
        let value = self.value(a).map(|x| x + c);
        self.record(Op::AddScalar(a), "add_scalar", value, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.record(Op::Relu(a), "relu", value, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.record(Op::Sigmoid(a), "sigmoid", value, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f32::exp);
        self.record(Op::Exp(a), "exp", value, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f32::ln);
        self.record(Op::Log(a), "log", value, &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x * x);
        self.record(Op::Square(a), "square", value, &[a])
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum_f64() as f32);
        self.record(Op::SumAll(a), "sum", value, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar((t.sum_f64() / t.len() as f64) as f32);
        self.record(Op::MeanAll(a), "mean", value, &[a])
    }

    /// Reduces a `(rows, cols)` matrix to a length-`rows` vector of row sums.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(Error::shape("sum_rows", t.shape(), &[0, 0]));
        }
        let data = (0..t.rows())
            .map(|i| t.row(i).iter().map(|&v| v as f64).sum::<f64>() as f32)
            .collect();
        self.record(Op::SumRows(a), "sum_rows", Tensor::vector(data), &[a])
    }

    /// `max(a, floor)`; the gradient is zero wherever the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f32) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(floor));
        self.record(Op::ClampMin(a, floor), "clamp_min", value, &[a])
    }

    /// Elementwise `log(1 - e^{-a})`; requires every element to be positive.
    pub fn log1mexp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if let Some(bad) = t.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain(format!("log1mexp needs a > 0, got {bad}")));
        }
        let value = t.map(|x| log1mexp(x as f64) as f32);
        self.record(Op::Log1mexp(a), "log1mexp", value, &[a])
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(a) {
                    let da = self.slot(grads, a);
                    gemm(m, n, k, g.data(), false, bv.data(), true, da.data_mut(), true);
                }
                if self.wants(b) {
                    let db = self.slot(grads, b);
                    gemm(k, m, n, av.data(), true, g.data(), false, db.data_mut(), true);
                }
            }
            Op::AddBias(x, bias) => {
                if self.wants(x) {
                    self.slot(grads, x).add_assign(g);
                }
                if self.wants(bias) {
                    let n = self.value(bias).len();
                    let mut col = vec![0.0f64; n];
                    for row in g.data().chunks(n.max(1)) {
                        for (c, &v) in col.iter_mut().zip(row) {
                            *c += v as f64;
                        }
                    }
                    let db = self.slot(grads, bias);
                    for (d, c) in db.data_mut().iter_mut().zip(col) {
                        *d += c as f32;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(v) {
                        self.slot(grads, v).add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(a) {
                    self.slot(grads, a).add_assign(g);
                }
                if self.wants(b) {
                    self.accumulate(grads, b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, g.zip_map(self.value(b), |gv, bv| gv * bv));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, g.zip_map(self.value(a), |gv, av| gv * av));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, a, g.map(|v| v * c)),
            Op::AddScalar(a) => self.slot(grads, a).add_assign(g),
            Op::Relu(a) => {
                let x = self.value(a);
                self.accumulate(grads, a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }))
            }
            Op::Sigmoid(a) => self.accumulate(grads, a, g.zip_map(y, |gv, s| gv * s * (1.0 - s))),
            Op::Exp(a) => self.accumulate(grads, a, g.zip_map(y, |gv, e| gv * e)),
            Op::Log(a) => {
                let x = self.value(a);
                self.accumulate(grads, a, g.zip_map(x, |gv, xv| gv / xv))
            }
            Op::Square(a) => {
                let x = self.value(a);
                self.accumulate(grads, a, g.zip_map(x, |gv, xv| 2.0 * gv * xv))
            }
            Op::SumAll(a) => {
                let shape = self.value(a).shape().to_vec();
                self.accumulate(grads, a, Tensor::full(&shape, g.item()))
            }
            Op::MeanAll(a) => {
                let t = self.value(a);
                let v = (g.item() as f64 / t.len() as f64) as f32;
                let shape = t.shape().to_vec();
                self.accumulate(grads, a, Tensor::full(&shape, v))
            }
            Op::SumRows(a) => {
                let cols = self.value(a).cols();
                let da = self.slot(grads, a);
                for (row, &gv) in da.data_mut().chunks_mut(cols.max(1)).zip(g.data()) {
                    for d in row {
                        *d += gv;
                    }
                }
            }
            Op::ClampMin(a, floor) => {
                let x = self.value(a);
                self.accumulate(grads, a, g.zip_map(x, |gv, xv| if xv > floor { gv } else { 0.0 }))
            }
            Op::Log1mexp(a) => {
                let x = self.value(a);
                let d = g.zip_map(x, |gv, xv| (gv as f64 / (xv as f64).exp_m1()) as f32);
                self.accumulate(grads, a, d)
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }
}
