//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward evaluation as a node in
//! topological order. [`Tape::backward`] walks the nodes in reverse and
//! accumulates vector-Jacobian products into the tracked leaves. Tapes are
//! cheap and single-use: callers build a fresh one per evaluation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{self, sigmoid, softplus, Activation, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    /// `[m×n] + [n]` added to every row.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var, f64),
    Act(Var, Activation),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Abs(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Gather(Var, Vec<usize>),
    Max(Var),
    Min(Var),
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Arc<Tensor>,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` did not influence the output.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::raw(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, tracked: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A shared input, differentiable only when `track` is set.
    pub fn shared(&mut self, value: &Arc<Tensor>, track: bool) -> Var {
        self.nodes.push(Node {
            op: if track { Op::Leaf } else { Op::Constant },
            value: Arc::clone(value),
            tracked: track,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    fn unary(&mut self, op: Op, a: Var, value: Tensor) -> Var {
        let tracked = self.tracked(&[a]);
        self.push(op, value, tracked)
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, value: Tensor) -> Var {
        let tracked = self.tracked(&[a, b]);
        self.push(op, value, tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.binary(Op::MatMul(a, b), a, b, v))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let (rows, cols) = x.as_matrix_dims();
        if b.len() != cols {
            return Err(Error::dim(
                "add_bias",
                format!("{:?} + {:?}", x.shape(), b.shape()),
            ));
        }
        let mut out = x.data().to_vec();
        for r in 0..rows {
            for (o, bv) in out[r * cols..(r + 1) * cols].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let v = Tensor::raw(x.shape().to_vec(), out).check_finite("add_bias")?;
        Ok(self.binary(Op::AddBias(a, bias), a, bias, v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.binary(Op::Add(a, b), a, b, v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.binary(Op::Sub(a, b), a, b, v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.binary(Op::Mul(a, b), a, b, v))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c)?;
        Ok(self.unary(Op::Scale(a, c), a, v))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c)?;
        Ok(self.unary(Op::Offset(a, c), a, v))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let v = tensor::activation(self.value(a), kind)?;
        Ok(self.unary(Op::Act(a, kind), a, v))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(softplus)?;
        Ok(self.unary(Op::Softplus(a), a, v))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp)?;
        Ok(self.unary(Op::Exp(a), a, v))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::ln)?;
        Ok(self.unary(Op::Log(a), a, v))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x)?;
        Ok(self.unary(Op::Square(a), a, v))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::abs)?;
        Ok(self.unary(Op::Abs(a), a, v))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = tensor::softmax(self.value(a))?;
        Ok(self.unary(Op::Softmax(a), a, v))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = tensor::log_softmax(self.value(a))?;
        Ok(self.unary(Op::LogSoftmax(a), a, v))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum())?;
        Ok(self.unary(Op::Sum(a), a, v))
    }

    /// Selects flat entries of `a` into a vector.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if indices.is_empty() {
            return Err(Error::dim("gather", "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::dim(
                "gather",
                format!("index {bad} out of range for {:?}", x.shape()),
            ));
        }
        let v = Tensor::raw(
            vec![indices.len()],
            indices.iter().map(|&i| x.data()[i]).collect(),
        );
        Ok(self.unary(Op::Gather(a, indices.to_vec()), a, v))
    }

    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        self.gather(a, &[i])
    }

    /// Maximum entry; the gradient flows to the first maximiser.
    pub fn max(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).data()[first_extreme(self.value(a), true)])?;
        Ok(self.unary(Op::Max(a), a, v))
    }

    /// Minimum entry; the gradient flows to the first minimiser.
    pub fn min(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).data()[first_extreme(self.value(a), false)])?;
        Ok(self.unary(Op::Min(a), a, v))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.unary(Op::Reshape(a), a, v))
    }

    /// Reverse accumulation from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if !out.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        // Only leaves keep their gradients meaningful to callers, but intermediate
        // values are retained so `wrt` works on any node.
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, contrib: Vec<f64>) {
        if !self.nodes[var.0].tracked {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contrib) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.as_matrix_dims();
                let n = bv.shape()[1];
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aval = av.data()[i * k + p];
                            if aval == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += aval * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::AddBias(a, bias) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.to_vec());
                }
                if self.wants(*bias) {
                    let cols = self.value(*bias).len();
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.iter().zip(av).map(|(g, a)| g * a).collect());
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.iter().map(|v| v * c).collect()),
            Op::Offset(a, _) | Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Act(a, kind) => {
                let x = self.value(*a).data();
                let d = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(g, (&x, &y))| g * kind.derivative(x, y))
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                let d = g.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = g.iter().zip(y).map(|(g, y)| g * y).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let d = g.iter().zip(x).map(|(g, x)| g / x).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                let d = g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        if x > 0.0 {
                            *g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Softmax(a) => {
                let (_, cols) = node.value.as_matrix_dims();
                let mut d = vec![0.0; y.len()];
                for ((drow, grow), yrow) in
                    d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = y * (g - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LogSoftmax(a) => {
                let (_, cols) = node.value.as_matrix_dims();
                let mut d = vec![0.0; y.len()];
                for ((drow, grow), yrow) in
                    d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols))
                {
                    let total: f64 = grow.iter().sum();
                    for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = g - y.exp() * total;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Gather(a, indices) => {
                let mut d = vec![0.0; self.value(*a).len()];
                for (&i, gv) in indices.iter().zip(g) {
                    d[i] += gv;
                }
                self.accumulate(grads, *a, d);
            }
            Op::Max(a) | Op::Min(a) => {
                let is_max = matches!(node.op, Op::Max(_));
                let x = self.value(*a);
                let mut d = vec![0.0; x.len()];
                d[first_extreme(x, is_max)] = g[0];
                self.accumulate(grads, *a, d);
            }
        }
    }

    /// Recomputes every node from the recorded leaves and constants.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut fresh = Tape::new();
        for node in &self.nodes {
            let value = (*node.value).clone();
            match &node.op {
                Op::Leaf => {
                    fresh.leaf(value);
                }
                Op::Constant => {
                    fresh.constant(value);
                }
                Op::MatMul(a, b) => {
                    fresh.matmul(*a, *b)?;
                }
                Op::AddBias(a, b) => {
                    fresh.add_bias(*a, *b)?;
                }
                Op::Add(a, b) => {
                    fresh.add(*a, *b)?;
                }
                Op::Sub(a, b) => {
                    fresh.sub(*a, *b)?;
                }
                Op::Mul(a, b) => {
                    fresh.mul(*a, *b)?;
                }
                Op::Scale(a, c) => {
                    fresh.scale(*a, *c)?;
                }
                Op::Offset(a, c) => {
                    fresh.offset(*a, *c)?;
                }
                Op::Act(a, k) => {
                    fresh.activation(*a, *k)?;
                }
                Op::Softplus(a) => {
                    fresh.softplus(*a)?;
                }
                Op::Exp(a) => {
                    fresh.exp(*a)?;
                }
                Op::Log(a) => {
                    fresh.log(*a)?;
                }
                Op::Square(a) => {
                    fresh.square(*a)?;
                }
                Op::Abs(a) => {
                    fresh.abs(*a)?;
                }
                Op::Softmax(a) => {
                    fresh.softmax(*a)?;
                }
                Op::LogSoftmax(a) => {
                    fresh.log_softmax(*a)?;
                }
                Op::Sum(a) => {
                    fresh.sum(*a)?;
                }
                Op::Gather(a, idx) => {
                    fresh.gather(*a, idx)?;
                }
                Op::Max(a) => {
                    fresh.max(*a)?;
                }
                Op::Min(a) => {
                    fresh.min(*a)?;
                }
                Op::Reshape(a) => {
                    let shape = node.value.shape().to_vec();
                    fresh.reshape(*a, shape)?;
                }
            }
        }
        Ok(fresh
            .nodes
            .into_iter()
            .map(|n| (*n.value).clone())
            .collect())
    }

    /// Values of every node in recording order.
    pub fn values(&self) -> Vec<Tensor> {
        self.nodes.iter().map(|n| (*n.value).clone()).collect()
    }
}

fn first_extreme(x: &Tensor, is_max: bool) -> usize {
    let d = x.data();
    let mut best = 0;
    for i in 1..d.len() {
        if (is_max && d[i] > d[best]) || (!is_max && d[i] < d[best]) {
            best = i;
        }
    }
    best
}

/// Central-difference gradient `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for each coordinate.
pub fn finite_difference_gradient<F>(mut f: F, at: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step h must be positive, got {h}")));
    }
    let mut out = Vec::with_capacity(at.len());
    let mut probe = at.data().to_vec();
    for i in 0..at.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&Tensor::new(at.shape().to_vec(), probe.clone())?)?;
        probe[i] = orig - h;
        let down = f(&Tensor::new(at.shape().to_vec(), probe.clone())?)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Tensor::new(at.shape().to_vec(), out)
}

/// Largest elementwise `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}
