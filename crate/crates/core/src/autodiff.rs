//! Dense `f64` tensors with a dynamic reverse-mode tape.
//!
//! A [`Tape`] is an arena of values. Every operation appends its result; when
//! any input requires a gradient, the operation and its inputs are recorded so
//! [`Tape::backward`] can propagate adjoints in reverse insertion order. Inputs
//! always precede outputs, so insertion order is a topological order.
//!
//! Binary elementwise ops broadcast with right-aligned (numpy) semantics.
//! Reductions accumulate strictly left to right, which makes forward values and
//! gradients bit-reproducible for a given sequence of operations.
//!
//! Subgradient convention: `relu'(0) = max0'(0) = 0`.

use crate::error::{Error, Result};

/// A dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        match self.shape.as_slice() {
            [_, cols] if *cols > 0 => self.data.chunks(*cols).map(<[f64]>::to_vec).collect(),
            _ => vec![self.data.clone()],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch {
                op: "from_rows",
                lhs: vec![rows.len(), cols],
                rhs: rows.iter().map(Vec::len).collect(),
            });
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        })
    }
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable primitive set.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    /// `(m×k)·(k×n)`.
    MatMul,
    Exp,
    Log,
    /// Power with a constant exponent.
    Pow(f64),
    Relu,
    Softplus,
    /// Sum of all elements to a scalar.
    Sum,
    /// Mean of all elements to a scalar.
    Mean,
    /// Sum along one axis, removing it.
    SumAxis(usize),
    /// Mean along one axis, removing it.
    MeanAxis(usize),
    /// `max(0, x)`; numerically identical to [`Primitive::Relu`].
    Max0,
    Reshape(Vec<usize>),
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::MatMul => "matmul",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Pow(_) => "pow",
            Primitive::Relu => "relu",
            Primitive::Softplus => "softplus",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SumAxis(_) => "sum_axis",
            Primitive::MeanAxis(_) => "mean_axis",
            Primitive::Max0 => "max0",
            Primitive::Reshape(_) => "reshape",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div | Primitive::MatMul => 2,
            _ => 1,
        }
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    /// `None` for leaves and for results that nothing differentiable flows into.
    op: Option<(Primitive, Vec<Var>)>,
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Single-writer record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of values stored on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of operations that carry a backward rule.
    pub fn recorded_ops(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_some()).count()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check(&self, v: Var) -> Result<&Tensor> {
        self.nodes.get(v.0).map(|n| &n.value).ok_or(Error::ForeignVar)
    }

    /// Evaluates `op` on `inputs`, recording it when any input requires a gradient.
    pub fn apply(&mut self, op: Primitive, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != op.arity() {
            return Err(Error::Arity {
                op: op.name(),
                expected: op.arity(),
                got: inputs.len(),
            });
        }
        let args: Vec<&Tensor> = inputs.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let value = forward(&op, &args)?;
        if cfg!(debug_assertions) && value.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op: requires_grad.then(|| (op, inputs.to_vec())),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Div, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var> {
        self.apply(Primitive::Pow(p), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn max0(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Max0, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softplus, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::SumAxis(axis), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::MeanAxis(axis), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::Reshape(shape), &[a])
    }

    /// `a · c` for a constant scalar `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = self.scalar(c);
        self.mul(a, c)
    }

    /// `a + c` for a constant scalar `c`.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = self.scalar(c);
        self.add(a, c)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Does not mutate the tape, so calling it repeatedly returns identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        if root.len() != 1 {
            return Err(Error::NonScalarLoss(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some((op, inputs)) = &node.op else { continue };
            let Some(g) = grads[i].take() else { continue };
            let (lower, upper) = grads.split_at_mut(i);
            backward_op(self, op, inputs, &node.value, &g, lower);
            upper[0] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                g.filter(|_| node.requires_grad).map(|data| Tensor {
                    shape: node.value.shape.clone(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar loss with respect to every reachable differentiable value.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// The gradient, or zeros shaped like `v` when it is unreachable from the loss.
    pub fn get_or_zeros(&self, v: Var, tape: &Tape) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v).to_vec()))
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for k in 0..rank {
        let da = if k + a.len() >= rank { a[k + a.len() - rank] } else { 1 };
        let db = if k + b.len() >= rank { b[k + b.len() - rank] } else { 1 };
        out[k] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` expressed in the index space of `out`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for k in (0..shape.len()).rev() {
        let ok = k + rank - shape.len();
        if shape[k] != 1 {
            strides[ok] = acc;
        }
        acc *= shape[k];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` in row-major output order.
fn for_each_broadcast(a: &[usize], b: &[usize], out: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if a == out && b == out {
        for i in 0..n {
            f(i, i, i);
        }
        return;
    }
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for k in (0..rank).rev() {
            idx[k] += 1;
            ia += sa[k];
            ib += sb[k];
            if idx[k] < out[k] {
                break;
            }
            ia -= sa[k] * out[k];
            ib -= sb[k] * out[k];
            idx[k] = 0;
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Axis {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k1], [k2, n]) if k1 == k2 => Ok((*m, *k1, *n)),
        _ => Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        }),
    }
}

fn unary(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&x| f(x)).collect(),
    }
}

fn forward(op: &Primitive, args: &[&Tensor]) -> Result<Tensor> {
    let a = args[0];
    Ok(match op {
        Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => {
            let b = args[1];
            let shape = broadcast_shape(op.name(), &a.shape, &b.shape)?;
            if matches!(op, Primitive::Div) && b.data.contains(&0.0) {
                return Err(Error::DivisionByZero);
            }
            let n = shape.iter().product();
            let mut data = vec![0.0; n];
            let f: fn(f64, f64) -> f64 = match op {
                Primitive::Add => |x, y| x + y,
                Primitive::Sub => |x, y| x - y,
                Primitive::Mul => |x, y| x * y,
                _ => |x, y| x / y,
            };
            for_each_broadcast(&a.shape, &b.shape, &shape, |o, ia, ib| {
                data[o] = f(a.data[ia], b.data[ib]);
            });
            Tensor { shape, data }
        }
        Primitive::MatMul => {
            let b = args[1];
            let (m, k, n) = matmul_dims(&a.shape, &b.shape)?;
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                let row = &mut data[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a.data[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &b.data[p * n..(p + 1) * n];
                    for (c, &bv) in row.iter_mut().zip(brow) {
                        *c += aip * bv;
                    }
                }
            }
            Tensor {
                shape: vec![m, n],
                data,
            }
        }
        Primitive::Exp => unary(a, f64::exp),
        Primitive::Log => unary(a, f64::ln),
        Primitive::Pow(p) => {
            let p = *p;
            if p.fract() == 0.0 && p.abs() < i32::MAX as f64 {
                unary(a, |x| x.powi(p as i32))
            } else {
                unary(a, |x| x.powf(p))
            }
        }
        Primitive::Relu | Primitive::Max0 => unary(a, |x| if x > 0.0 { x } else { 0.0 }),
        Primitive::Softplus => unary(a, softplus),
        Primitive::Sum => Tensor::scalar(a.data.iter().fold(0.0, |s, &x| s + x)),
        Primitive::Mean => {
            if a.data.is_empty() {
                return Err(Error::ShapeMismatch {
                    op: "mean",
                    lhs: a.shape.clone(),
                    rhs: vec![],
                });
            }
            Tensor::scalar(a.data.iter().fold(0.0, |s, &x| s + x) / a.data.len() as f64)
        }
        Primitive::SumAxis(axis) | Primitive::MeanAxis(axis) => {
            let (outer, len, inner) = axis_split(&a.shape, *axis)?;
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                let dst = &mut data[o * inner..(o + 1) * inner];
                for k in 0..len {
                    let src = &a.data[(o * len + k) * inner..(o * len + k + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            if matches!(op, Primitive::MeanAxis(_)) {
                if len == 0 {
                    return Err(Error::Axis {
                        axis: *axis,
                        rank: a.shape.len(),
                    });
                }
                let n = len as f64;
                data.iter_mut().for_each(|d| *d /= n);
            }
            let mut shape = a.shape.clone();
            shape.remove(*axis);
            Tensor { shape, data }
        }
        Primitive::Reshape(shape) => {
            if shape.iter().product::<usize>() != a.len() {
                return Err(Error::ShapeMismatch {
                    op: "reshape",
                    lhs: a.shape.clone(),
                    rhs: shape.clone(),
                });
            }
            Tensor {
                shape: shape.clone(),
                data: a.data.clone(),
            }
        }
    })
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

/// Adds the contribution of one node to its inputs' adjoints.
fn backward_op(
    tape: &Tape,
    op: &Primitive,
    inputs: &[Var],
    out: &Tensor,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let a_var = inputs[0];
    let a = &tape.nodes[a_var.0].value;
    let need_a = tape.nodes[a_var.0].requires_grad;
    match op {
        Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => {
            let b_var = inputs[1];
            let b = &tape.nodes[b_var.0].value;
            let need_b = tape.nodes[b_var.0].requires_grad;
            // a and b may be the same variable; take each adjoint separately.
            if need_a {
                let mut ga = grads[a_var.0].take().unwrap_or_else(|| vec![0.0; a.len()]);
                for_each_broadcast(&a.shape, &b.shape, &out.shape, |o, ia, ib| {
                    ga[ia] += match op {
                        Primitive::Add | Primitive::Sub => g[o],
                        Primitive::Mul => g[o] * b.data[ib],
                        _ => g[o] / b.data[ib],
                    };
                });
                grads[a_var.0] = Some(ga);
            }
            if need_b {
                let mut gb = grads[b_var.0].take().unwrap_or_else(|| vec![0.0; b.len()]);
                for_each_broadcast(&a.shape, &b.shape, &out.shape, |o, ia, ib| {
                    gb[ib] += match op {
                        Primitive::Add => g[o],
                        Primitive::Sub => -g[o],
                        Primitive::Mul => g[o] * a.data[ia],
                        _ => -g[o] * a.data[ia] / (b.data[ib] * b.data[ib]),
                    };
                });
                grads[b_var.0] = Some(gb);
            }
        }
        Primitive::MatMul => {
            let b_var = inputs[1];
            let b = &tape.nodes[b_var.0].value;
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            if need_a {
                let mut ga = grads[a_var.0].take().unwrap_or_else(|| vec![0.0; a.len()]);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &b.data[p * n..(p + 1) * n];
                        let dot = grow.iter().zip(brow).fold(0.0, |s, (x, y)| s + x * y);
                        ga[i * k + p] += dot;
                    }
                }
                grads[a_var.0] = Some(ga);
            }
            if tape.nodes[b_var.0].requires_grad {
                let gb = accumulate(&mut grads[b_var.0], b.len());
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = a.data[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (d, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += aip * gv;
                        }
                    }
                }
            }
        }
        _ if !need_a => {}
        Primitive::Exp => {
            let ga = accumulate(&mut grads[a_var.0], a.len());
            for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(&out.data) {
                *d += gv * y;
            }
        }
        Primitive::Log => {
            let ga = accumulate(&mut grads[a_var.0], a.len());
            for ((d, &gv), &x) in ga.iter_mut().zip(g).zip(&a.data) {
                *d += gv / x;
            }
        }
        Primitive::Pow(p) => {
            let p = *p;
            let ga = accumulate(&mut grads[a_var.0], a.len());
            for ((d, &gv), &x) in ga.iter_mut().zip(g).zip(&a.data) {
                let dx = if p == 2.0 {
                    2.0 * x
                } else if p == 1.0 {
                    1.0
                } else {
                    p * x.powf(p - 1.0)
                };
                *d += gv * dx;
            }
        }
        Primitive::Relu | Primitive::Max0 => {
            let ga = accumulate(&mut grads[a_var.0], a.len());
            for ((d, &gv), &x) in ga.iter_mut().zip(g).zip(&a.data) {
                if x > 0.0 {
                    *d += gv;
                }
            }
        }
        Primitive::Softplus => {
            let ga = accumulate(&mut grads[a_var.0], a.len());
            for ((d, &gv), &x) in ga.iter_mut().zip(g).zip(&a.data) {
                *d += gv * sigmoid(x);
            }
        }
        Primitive::Sum | Primitive::Mean => {
            let scale = if matches!(op, Primitive::Mean) {
                1.0 / a.len() as f64
            } else {
                1.0
            };
            let ga = accumulate(&mut grads[a_var.0], a.len());
            let gv = g[0] * scale;
            ga.iter_mut().for_each(|d| *d += gv);
        }
        Primitive::SumAxis(axis) | Primitive::MeanAxis(axis) => {
            let (outer, len, inner) = axis_split(&a.shape, *axis).expect("validated in forward");
            let scale = if matches!(op, Primitive::MeanAxis(_)) {
                1.0 / len as f64
            } else {
                1.0
            };
            let ga = accumulate(&mut grads[a_var.0], a.len());
            for o in 0..outer {
                let src = &g[o * inner..(o + 1) * inner];
                for k in 0..len {
                    let dst = &mut ga[(o * len + k) * inner..(o * len + k + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s * scale;
                    }
                }
            }
        }
        Primitive::Reshape(_) => {
            let ga = accumulate(&mut grads[a_var.0], a.len());
            for (d, &gv) in ga.iter_mut().zip(g) {
                *d += gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_grad(f: impl Fn(&mut Tape, Var) -> Result<Var>, x: f64) -> (f64, f64) {
        let mut tape = Tape::new();
        let v = tape.param(Tensor::scalar(x));
        let y = f(&mut tape, v).unwrap();
        let g = tape.backward(y).unwrap();
        (tape.value(y).item().unwrap(), g.get(v).unwrap().item().unwrap())
    }

    #[test]
    fn scalar_examples() {
        assert!((softplus(-5.0) - 0.006_715_348_489_118_068).abs() < 1e-17);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-3.2));
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).item(), Some(0.0));
        let z = tape.scalar(0.0);
        let e = tape.exp(z).unwrap();
        assert_eq!(tape.value(e).item(), Some(1.0));

        let (v, g) = scalar_grad(|t, x| t.mul(x, x), 3.0);
        assert_eq!((v, g), (9.0, 6.0));
        let (_, g) = scalar_grad(|t, x| t.softplus(x), 0.0);
        assert_eq!(g, 0.5);
    }

    #[test]
    fn kink_subgradients_are_zero() {
        assert_eq!(scalar_grad(|t, x| t.relu(x), 0.0).1, 0.0);
        assert_eq!(scalar_grad(|t, x| t.max0(x), 0.0).1, 0.0);
    }

    #[test]
    fn shape_mismatch_and_div_zero_are_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![4]));
        assert!(matches!(tape.add(a, b), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(tape.matmul(a, a), Err(Error::ShapeMismatch { .. })));
        let one = tape.scalar(1.0);
        let zero = tape.scalar(0.0);
        assert!(matches!(tape.div(one, zero), Err(Error::DivisionByZero)));
        assert!(matches!(tape.sum_axis(a, 2), Err(Error::Axis { .. })));
        assert!(matches!(tape.reshape(a, vec![5]), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(
            tape.apply(Primitive::Add, &[a]),
            Err(Error::Arity { .. })
        ));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(vec![2]));
        assert!(matches!(tape.backward(a), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn broadcasting_reduces_gradients() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.param(Tensor::from_vec(vec![10., 20., 30.]));
        let c = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[10., 40., 90., 40., 100., 180.]);
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[5., 7., 9.]);
        assert_eq!(g.get(a).unwrap().data(), &[10., 20., 30., 10., 20., 30.]);
    }

    #[test]
    fn column_broadcast() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::new(vec![2, 1], vec![1., 2.]).unwrap());
        let b = tape.param(Tensor::new(vec![1, 3], vec![1., 2., 3.]).unwrap());
        let c = tape.sub(a, b).unwrap();
        assert_eq!(tape.shape(c), &[2, 3]);
        assert_eq!(tape.value(c).data(), &[0., -1., -2., 1., 0., -1.]);
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[3., 3.]);
        assert_eq!(g.get(b).unwrap().data(), &[-2., -2., -2.]);
    }

    #[test]
    fn axis_reductions() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let s0 = tape.sum_axis(a, 0).unwrap();
        assert_eq!(tape.value(s0).data(), &[5., 7., 9.]);
        let m1 = tape.mean_axis(a, 1).unwrap();
        assert_eq!(tape.value(m1).data(), &[2., 5.]);
        assert_eq!(tape.shape(m1), &[2]);
        let l = tape.sum(m1).unwrap();
        let g = tape.backward(l).unwrap();
        for v in g.get(a).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_values() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = tape.param(Tensor::new(vec![2, 1], vec![5., 6.]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[17., 39.]);
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[5., 6., 5., 6.]);
        assert_eq!(g.get(b).unwrap().data(), &[4., 6.]);
    }

    #[test]
    fn constants_are_not_recorded() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = tape.exp(a).unwrap();
        assert!(!tape.requires_grad(b));
        assert_eq!(tape.recorded_ops(), 0);
        let p = tape.param(Tensor::scalar(2.0));
        let c = tape.mul(b, p).unwrap();
        assert!(tape.requires_grad(c));
        assert_eq!(tape.recorded_ops(), 1);
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(a).is_none());
        let expect = 1f64.exp() + 2f64.exp();
        assert!((g.get(p).unwrap().item().unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn same_var_on_both_sides() {
        let (_, g) = scalar_grad(|t, x| t.div(x, x), 1.7);
        assert!(g.abs() < 1e-15);
        let (_, g) = scalar_grad(|t, x| t.sub(x, x), 1.7);
        assert_eq!(g, 0.0);
    }

    #[cfg(debug_assertions)]
    #[test]
    fn non_finite_detected_in_debug() {
        let mut tape = Tape::new();
        let a = tape.scalar(-1.0);
        assert!(matches!(tape.log(a), Err(Error::NonFinite("log"))));
    }

    #[test]
    fn tensor_rows_round_trip() {
        let t = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(Tensor::from_rows(&t.rows()).unwrap(), t);
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
