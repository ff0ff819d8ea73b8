//! Minimal tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Tape`] as they execute, so the tape is
//! topologically ordered by construction. [`Tape::backward`] walks it in
//! reverse, accumulating adjoints by summation, and returns gradients for
//! every leaf created with [`Tape::leaf`]. Constants created with
//! [`Tape::constant`] take part in the forward pass only.
//!
//! Shapes are explicit: elementwise operations require equal shapes, except
//! that an operand holding a single value is broadcast against the other.
//!
//! ```
//! use gridgauntlet::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

use crate::error::{Error, Result};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; shape.iter().product()],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            values: vec![1.0; shape.iter().product()],
        }
    }

    /// Zero-dimensional tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            values: vec![value],
        }
    }

    /// `rows × cols` matrix from row-major values.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// The single value of a one-element tensor.
    ///
    /// # Panics
    ///
    /// Panics if the tensor holds more than one value.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Some((r, c)),
            _ => None,
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the tape's leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, if it is a leaf of the differentiated tape.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    LeftScalar,
    RightScalar,
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Records an input that needs no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite value",
                op_name(&op)
            )));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(op, value, needs_grad))
    }

    fn broadcast(&self, a: Var, b: Var, what: &str) -> Result<Broadcast> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape == tb.shape {
            Ok(Broadcast::Same)
        } else if ta.is_scalar() {
            Ok(Broadcast::LeftScalar)
        } else if tb.is_scalar() {
            Ok(Broadcast::RightScalar)
        } else {
            Err(Error::Shape(format!(
                "{what}: incompatible shapes {:?} and {:?}",
                ta.shape, tb.shape
            )))
        }
    }

    fn elementwise(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let mode = self.broadcast(a, b, op_name(&op))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let value = match mode {
            Broadcast::Same => Tensor {
                shape: ta.shape.clone(),
                values: ta.values.iter().zip(&tb.values).map(|(&x, &y)| f(x, y)).collect(),
            },
            Broadcast::LeftScalar => {
                let x = ta.values[0];
                tb.map(|y| f(x, y))
            }
            Broadcast::RightScalar => {
                let y = tb.values[0];
                ta.map(|x| f(x, y))
            }
        };
        self.record(op, value, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Multiplication by a fixed factor.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * factor);
        self.record(Op::Scale(a, factor), value, &[a])
    }

    /// Matrix product of `m×k` and `k×n` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let dims = ta.dims2().zip(tb.dims2());
        let Some(((m, k), (k2, n))) = dims.filter(|((_, k), (k2, _))| k == k2) else {
            return Err(Error::Shape(format!(
                "matmul: incompatible shapes {:?} and {:?}",
                ta.shape, tb.shape
            )));
        };
        debug_assert_eq!(k, k2);
        let values = matmul_nn(&ta.values, &tb.values, m, k, n);
        self.record(
            Op::MatMul(a, b),
            Tensor {
                shape: vec![m, n],
                values,
            },
            &[a, b],
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.record(Op::Tanh(a), value, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.record(Op::Sigmoid(a), value, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::abs);
        self.record(Op::Abs(a), value, &[a])
    }

    /// Mean over all entries, as a zero-dimensional tensor.
    pub fn reduce_mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::Shape("reduce_mean of an empty tensor".into()));
        }
        let mean = t.values.iter().sum::<f64>() / t.numel() as f64;
        self.record(Op::Mean(a), Tensor::scalar(mean), &[a])
    }

    /// Reverse pass from a single-valued `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a single-valued loss, got shape {:?}",
                root.value.shape
            )));
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(Tensor {
            shape: root.value.shape.clone(),
            values: vec![1.0],
        });

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(upstream) = adjoints[i].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut adjoints);
        }

        let mut grads = vec![None; self.nodes.len()];
        for (i, adj) in adjoints.into_iter().enumerate() {
            if !matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = adj.unwrap_or_else(|| Tensor::zeros(&self.nodes[i].value.shape));
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for leaf {i}")));
            }
            grads[i] = Some(g);
        }
        // Leaves recorded after the loss do not influence it.
        for (i, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(Tensor::zeros(&node.value.shape));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, up: &Tensor, adjoints: &mut [Option<Tensor>]) {
        match node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate_broadcast(a, b, up, adjoints, |_, _| (1.0, 1.0));
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(a, b, up, adjoints, |_, _| (1.0, -1.0));
            }
            Op::Mul(a, b) => {
                self.accumulate_broadcast(a, b, up, adjoints, |x, y| (y, x));
            }
            Op::Scale(a, factor) => {
                self.accumulate(a, up.map(|g| g * factor), adjoints);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k) = ta.dims2().expect("matmul operand is 2-d");
                let n = tb.shape[1];
                if self.nodes[a.0].needs_grad {
                    let values = matmul_nt(&up.values, &tb.values, m, n, k);
                    self.accumulate(a, Tensor { shape: vec![m, k], values }, adjoints);
                }
                if self.nodes[b.0].needs_grad {
                    let values = matmul_tn(&ta.values, &up.values, m, k, n);
                    self.accumulate(b, Tensor { shape: vec![k, n], values }, adjoints);
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let values = up
                    .values
                    .iter()
                    .zip(&y.values)
                    .map(|(g, t)| g * (1.0 - t * t))
                    .collect();
                self.accumulate(a, Tensor { shape: y.shape.clone(), values }, adjoints);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let values = up
                    .values
                    .iter()
                    .zip(&y.values)
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                self.accumulate(a, Tensor { shape: y.shape.clone(), values }, adjoints);
            }
            Op::Abs(a) => {
                let x = self.value(a);
                let values = up
                    .values
                    .iter()
                    .zip(&x.values)
                    .map(|(g, v)| g * sign(*v))
                    .collect();
                self.accumulate(a, Tensor { shape: x.shape.clone(), values }, adjoints);
            }
            Op::Mean(a) => {
                let x = self.value(a);
                let g = up.values[0] / x.numel() as f64;
                self.accumulate(
                    a,
                    Tensor {
                        shape: x.shape.clone(),
                        values: vec![g; x.numel()],
                    },
                    adjoints,
                );
            }
        }
    }

    /// Routes an elementwise upstream gradient to both operands, summing the
    /// contribution of a broadcast scalar. `partials(x, y)` returns
    /// `(∂f/∂x, ∂f/∂y)` at one element.
    fn accumulate_broadcast(
        &self,
        a: Var,
        b: Var,
        up: &Tensor,
        adjoints: &mut [Option<Tensor>],
        partials: impl Fn(f64, f64) -> (f64, f64),
    ) {
        let (ta, tb) = (self.value(a), self.value(b));
        let mode = if ta.shape == tb.shape {
            Broadcast::Same
        } else if ta.is_scalar() {
            Broadcast::LeftScalar
        } else {
            Broadcast::RightScalar
        };
        let n = up.numel();
        let at = |t: &Tensor, i: usize| if t.numel() == 1 { t.values[0] } else { t.values[i] };
        let mut ga = vec![0.0; ta.numel()];
        let mut gb = vec![0.0; tb.numel()];
        for i in 0..n {
            let (da, db) = partials(at(ta, i), at(tb, i));
            let g = up.values[i];
            match mode {
                Broadcast::Same => {
                    ga[i] += g * da;
                    gb[i] += g * db;
                }
                Broadcast::LeftScalar => {
                    ga[0] += g * da;
                    gb[i] += g * db;
                }
                Broadcast::RightScalar => {
                    ga[i] += g * da;
                    gb[0] += g * db;
                }
            }
        }
        if self.nodes[a.0].needs_grad {
            self.accumulate(a, Tensor { shape: ta.shape.clone(), values: ga }, adjoints);
        }
        if self.nodes[b.0].needs_grad {
            self.accumulate(b, Tensor { shape: tb.shape.clone(), values: gb }, adjoints);
        }
    }

    fn accumulate(&self, target: Var, grad: Tensor, adjoints: &mut [Option<Tensor>]) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut adjoints[target.0] {
            Some(existing) => {
                for (e, g) in existing.values.iter_mut().zip(grad.values) {
                    *e += g;
                }
            }
            slot @ None => *slot = Some(grad),
        }
    }
}

/// `sign(x)` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Constant => "constant",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::MatMul(..) => "matmul",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::Abs(..) => "abs",
        Op::Mean(..) => "reduce_mean",
    }
}

/// `C = A·B` with `A: m×k`, `B: k×n`.
fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            for (cij, bpj) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cij += aip * bpj;
            }
        }
    }
    c
}

/// `C = A·Bᵀ` with `A: m×n`, `B: k×n`, giving `m×k`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `C = Aᵀ·B` with `A: m×k`, `B: m×n`, giving `k×n`.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            for (cpj, bij) in c[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *cpj += aip * bij;
            }
        }
    }
    c
}
