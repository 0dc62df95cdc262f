//! Dense f64 tensors and a reverse-mode autodiff tape.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles during one
//! forward pass. [`Tape::backward`] walks the recorded nodes in reverse and
//! returns a [`Gradients`] map. The primitive set is deliberately small:
//! matmul, add, mul, sigmoid, tanh, exp, log, sum, concat, slice, dot,
//! scalar-mul, softmax and cross-entropy. Everything else (subtraction,
//! division, square roots) is composed from those.
//!
//! ```
//! use divattn_core::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
//! let loss = x.dot(x).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
//! ```

use std::cell::RefCell;
use std::fmt;

use crate::error::{Error, Result};

/// Row-major dense array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![1.0; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a `rows × cols` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    /// Row `i` of a matrix (or the whole buffer of a vector when `i == 0`).
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.cols();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// Numerically stable softmax of a non-empty slice.
pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::shape("softmax", "empty axis"));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let out: Vec<f64> = exps.into_iter().map(|e| e / total).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "softmax" });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    ScalarMul { scalar: usize, x: usize },
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Sum(usize),
    Dot(usize, usize),
    Concat(Vec<usize>),
    Slice { src: usize, start: usize },
    Softmax(usize),
    CrossEntropy { logits: usize, label: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
///
/// A tape is single-threaded; independent forward passes each get their own.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, true)
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, false)
    }

    fn push_node(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, op_name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push_node(value, op, requires_grad))
    }

    fn check_same(&self, a: Var<'_>, b: Var<'_>) {
        assert!(
            std::ptr::eq(a.tape, self) && std::ptr::eq(b.tape, self),
            "vars from different tapes"
        );
    }

    /// Concatenates the flattened inputs into one vector.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let nodes = self.nodes.borrow();
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(nodes[p.id].value.data());
        }
        drop(nodes);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = Tensor::vector(data);
        self.push("concat", value, Op::Concat(ids.clone()), &ids)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack<'t>(&'t self, rows: &[Var<'t>]) -> Result<Var<'t>> {
        let nodes = self.nodes.borrow();
        let cols = rows.first().map_or(0, |r| nodes[r.id].value.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let v = &nodes[r.id].value;
            if v.len() != cols {
                return Err(Error::shape(
                    "stack",
                    format!("row of length {} in a {cols}-column stack", v.len()),
                ));
            }
            data.extend_from_slice(v.data());
        }
        drop(nodes);
        let ids: Vec<usize> = rows.iter().map(|p| p.id).collect();
        let value = Tensor::matrix(rows.len(), cols, data)?;
        self.push("stack", value, Op::Concat(ids.clone()), &ids)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", nodes[loss.id].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let want = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = if bv.shape().len() == 1 { 1 } else { bv.shape()[1] };
                    if want(*a) {
                        let da = slot(&mut grads, *a, av.len());
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * bv.data()[p * n + j];
                                }
                                da[i * k + p] += acc;
                            }
                        }
                    }
                    if want(*b) {
                        let db = slot(&mut grads, *b, bv.len());
                        for i in 0..m {
                            for p in 0..k {
                                let a_ip = av.data()[i * k + p];
                                for j in 0..n {
                                    db[p * n + j] += a_ip * g[i * n + j];
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for &p in [a, b] {
                        if want(p) {
                            let d = slot(&mut grads, p, g.len());
                            d.iter_mut().zip(&g).for_each(|(d, g)| *d += g);
                        }
                    }
                }
                Op::Mul(a, b) | Op::Dot(a, b) => {
                    let scalar_out = matches!(node.op, Op::Dot(..));
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    let gi = |i: usize| if scalar_out { g[0] } else { g[i] };
                    if want(*a) {
                        let d = slot(&mut grads, *a, av.len());
                        for i in 0..d.len() {
                            d[i] += gi(i) * bv[i];
                        }
                    }
                    if want(*b) {
                        let d = slot(&mut grads, *b, bv.len());
                        for i in 0..d.len() {
                            d[i] += gi(i) * av[i];
                        }
                    }
                }
                Op::ScalarMul { scalar, x } => {
                    let s = nodes[*scalar].value.data()[0];
                    let xv = nodes[*x].value.data();
                    if want(*scalar) {
                        let ds: f64 = g.iter().zip(xv).map(|(g, x)| g * x).sum();
                        slot(&mut grads, *scalar, 1)[0] += ds;
                    }
                    if want(*x) {
                        let d = slot(&mut grads, *x, xv.len());
                        d.iter_mut().zip(&g).for_each(|(d, g)| *d += s * g);
                    }
                }
                Op::Scale(x, c) => {
                    let d = slot(&mut grads, *x, g.len());
                    d.iter_mut().zip(&g).for_each(|(d, g)| *d += c * g);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let d = slot(&mut grads, *x, g.len());
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let d = slot(&mut grads, *x, g.len());
                    for i in 0..d.len() {
                        d[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Exp(x) => {
                    let y = node.value.data();
                    let d = slot(&mut grads, *x, g.len());
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i];
                    }
                }
                Op::Log(x) => {
                    let xv = nodes[*x].value.data();
                    let d = slot(&mut grads, *x, g.len());
                    for i in 0..d.len() {
                        d[i] += g[i] / xv[i];
                    }
                }
                Op::Sum(x) => {
                    let len = nodes[*x].value.len();
                    let d = slot(&mut grads, *x, len);
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p].value.len();
                        if want(p) {
                            let d = slot(&mut grads, p, len);
                            d.iter_mut().zip(&g[offset..offset + len]).for_each(|(d, g)| *d += g);
                        }
                        offset += len;
                    }
                }
                Op::Slice { src, start } => {
                    let len = nodes[*src].value.len();
                    let d = slot(&mut grads, *src, len);
                    d[*start..*start + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, g)| *d += g);
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let gy: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    let d = slot(&mut grads, *x, g.len());
                    for i in 0..d.len() {
                        d[i] += y[i] * (g[i] - gy);
                    }
                }
                Op::CrossEntropy { logits, label } => {
                    let z = nodes[*logits].value.data();
                    let p = softmax(z)?;
                    let d = slot(&mut grads, *logits, z.len());
                    for i in 0..d.len() {
                        let target = if i == *label { 1.0 } else { 0.0 };
                        d[i] += g[0] * (p[i] - target);
                    }
                }
            }
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|data| Tensor {
                    shape: nodes[id].value.shape().to_vec(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

/// Gradients of a scalar loss with respect to every node that influenced it.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(v.tape.nodes.borrow()[v.id].value.shape()),
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Borrowing accessor for the node's value.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn item(&self) -> f64 {
        self.with_value(|v| v.data()[0])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|v| v.shape().to_vec())
    }

    pub fn len(&self) -> usize {
        self.with_value(Tensor::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn unary(self, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let value = self.with_value(|v| v.map(f));
        self.tape.push(name, value, op, &[self.id])
    }

    fn same_shape(self, other: Var<'t>, name: &'static str) -> Result<()> {
        self.tape.check_same(self, other);
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::shape(name, format!("{a:?} vs {b:?}")));
        }
        Ok(())
    }

    /// Matrix product `[m×k] · [k×n]`; a 1-D right operand is treated as `k×1`
    /// and yields a length-`m` vector.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same(self, other);
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        let b = &nodes[other.id].value;
        if a.shape().len() != 2 || b.shape().is_empty() || b.shape().len() > 2 {
            return Err(Error::shape(
                "matmul",
                format!("unsupported ranks {:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let vector_rhs = b.shape().len() == 1;
        let (bk, n) = if vector_rhs {
            (b.shape()[0], 1)
        } else {
            (b.shape()[0], b.shape()[1])
        };
        if k != bk {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a.data()[i * k..(i + 1) * k];
            for (p, &aip) in arow.iter().enumerate() {
                let brow = &b.data()[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        drop(nodes);
        let shape = if vector_rhs { vec![m] } else { vec![m, n] };
        let value = Tensor { shape, data: out };
        self.tape
            .push("matmul", value, Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "add")?;
        let value = self.binary_values(other, |a, b| a + b);
        self.tape
            .push("add", value, Op::Add(self.id, other.id), &[self.id, other.id])
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "mul")?;
        let value = self.binary_values(other, |a, b| a * b);
        self.tape
            .push("mul", value, Op::Mul(self.id, other.id), &[self.id, other.id])
    }

    fn binary_values(self, other: Var<'t>, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        let b = &nodes[other.id].value;
        Tensor {
            shape: a.shape().to_vec(),
            data: a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    /// Inner product of two equal-length tensors, as a scalar.
    pub fn dot(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same(self, other);
        if self.len() != other.len() {
            return Err(Error::shape(
                "dot",
                format!("lengths {} and {}", self.len(), other.len()),
            ));
        }
        let value =
            self.with_value(|a| other.with_value(|b| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>()));
        self.tape.push(
            "dot",
            Tensor::scalar(value),
            Op::Dot(self.id, other.id),
            &[self.id, other.id],
        )
    }

    /// Multiplies `self` by a single-element variable.
    pub fn scalar_mul(self, scalar: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same(self, scalar);
        if scalar.len() != 1 {
            return Err(Error::shape(
                "scalar_mul",
                format!("scalar operand has {} elements", scalar.len()),
            ));
        }
        let s = scalar.item();
        let value = self.with_value(|v| v.map(|x| s * x));
        self.tape.push(
            "scalar_mul",
            value,
            Op::ScalarMul {
                scalar: scalar.id,
                x: self.id,
            },
            &[scalar.id, self.id],
        )
    }

    /// Multiplies by a constant.
    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.id, c), |x| c * x)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary("tanh", Op::Tanh(self.id), f64::tanh)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary("log", Op::Log(self.id), f64::ln)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(self) -> Result<Var<'t>> {
        let value = self.with_value(|v| v.data().iter().sum::<f64>());
        self.tape
            .push("sum", Tensor::scalar(value), Op::Sum(self.id), &[self.id])
    }

    /// Contiguous slice of the flattened buffer, reshaped to `shape`.
    pub fn slice(self, start: usize, shape: &[usize]) -> Result<Var<'t>> {
        let len: usize = shape.iter().product();
        let value = self.with_value(|v| {
            if start + len > v.len() {
                return Err(Error::shape(
                    "slice",
                    format!("range {start}..{} out of {}", start + len, v.len()),
                ));
            }
            Ok(Tensor {
                shape: shape.to_vec(),
                data: v.data()[start..start + len].to_vec(),
            })
        })?;
        self.tape
            .push("slice", value, Op::Slice { src: self.id, start }, &[self.id])
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(self, i: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 2 || i >= shape[0] {
            return Err(Error::shape("row", format!("row {i} of {shape:?}")));
        }
        self.slice(i * shape[1], &[shape[1]])
    }

    /// Element `i` of the flattened buffer, as a scalar.
    pub fn at(self, i: usize) -> Result<Var<'t>> {
        self.slice(i, &[])
    }

    /// Softmax over a non-empty vector.
    pub fn softmax(self) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 1 {
            return Err(Error::shape("softmax", format!("expected a vector, got {shape:?}")));
        }
        let data = self.with_value(|v| softmax(v.data()))?;
        self.tape
            .push("softmax", Tensor::vector(data), Op::Softmax(self.id), &[self.id])
    }

    /// `-log softmax(self)[label]` for a logit vector.
    pub fn cross_entropy(self, label: usize) -> Result<Var<'t>> {
        let loss = self.with_value(|z| {
            if label >= z.len() {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("label {label} out of {} classes", z.len()),
                ));
            }
            let max = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.data().iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            Ok(lse - z.data()[label])
        })?;
        self.tape.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy { logits: self.id, label },
            &[self.id],
        )
    }

    // Composed helpers.

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.add(other.scale(-1.0)?)
    }

    /// Adds a constant to every entry.
    pub fn add_const(self, c: f64) -> Result<Var<'t>> {
        let shape = self.shape();
        let mut k = Tensor::zeros(&shape);
        k.data_mut().iter_mut().for_each(|x| *x = c);
        let k = self.tape.constant(k);
        self.add(k)
    }

    /// `1/x` for strictly positive entries, as `exp(-log x)`.
    pub fn recip(self) -> Result<Var<'t>> {
        self.log()?.scale(-1.0)?.exp()
    }

    /// `sqrt(x)` for strictly positive entries, as `exp(log(x)/2)`.
    pub fn sqrt(self) -> Result<Var<'t>> {
        self.log()?.scale(0.5)?.exp()
    }
}
