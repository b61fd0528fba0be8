//! Wengert-list reverse-mode differentiation.
//!
//! Every operation appends a node holding its value; [`Tape::backward`] walks
//! the list in reverse and accumulates adjoints. Nodes that do not depend on a
//! parameter are never visited on the way back.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{Gradients, ParamSet};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(usize),
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    ConvTranspose {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: (usize, usize, usize),
    },
    Relu(Var),
    Reshape(Var),
    LogSoftmax(Var, usize),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    SumRows(Var, usize),
    Pick(Var, Vec<usize>, usize),
    Square(Var),
    PosPart(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_names: Vec<String>,
    param_shapes: Vec<Vec<usize>>,
    param_vars: Vec<Option<Var>>,
}

impl<T: Real> Tape<T> {
    /// A tape whose parameter leaves come from `params`.
    pub fn for_params(params: &ParamSet<T>) -> Self {
        Self {
            nodes: Vec::new(),
            param_names: params.names().to_vec(),
            param_shapes: params.iter().map(|(_, t)| t.shape().to_vec()).collect(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_names: Vec::new(),
            param_shapes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf for block `id` of the set this tape was created for. Repeated calls reuse the leaf.
    pub fn param(&mut self, params: &ParamSet<T>, id: usize) -> Var {
        assert_eq!(
            params.names(),
            self.param_names.as_slice(),
            "tape bound to a different parameter layout"
        );
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Param(id), true);
        self.param_vars[id] = Some(v);
        v
    }

    pub fn param_named(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        let id = params.id(name)?;
        Ok(self.param(params, id))
    }

    /// Copy of `v`'s value with no gradient path back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let bias = b.map(|b| self.value(b).clone());
        let (out, geom, cols) = kernels::conv2d_forward(self.value(x), self.value(k), bias.as_ref(), stride)?;
        let needs = self.needs(x) || self.needs(k) || b.is_some_and(|b| self.needs(b));
        let cols = if self.needs(k) { cols } else { Vec::new() };
        Ok(self.push(out, Op::Conv2d { x, k, b, geom, cols }, needs))
    }

    pub fn conv_transpose(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let bias = b.map(|b| self.value(b).clone());
        let (out, geom) = kernels::conv_transpose_forward(self.value(x), self.value(k), bias.as_ref(), stride)?;
        let needs = self.needs(x) || self.needs(k) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::ConvTranspose { x, k, b, geom }, needs))
    }

    /// `[n, ...] · [in, out] + b`; trailing input axes are flattened.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let dims = kernels::dense_dims(self.value(x).shape(), self.value(w).shape())?;
        let bias = b.map(|b| self.value(b).clone());
        let out = kernels::dense_forward(&self.value(x).reshape(&[dims.0, dims.1])?, self.value(w), bias.as_ref())?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Dense { x, w, b, dims }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.needs(x);
        self.push(out, Op::Relu(x), needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), needs))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let cols = *value.shape().last().unwrap();
        let out = Tensor::new(value.shape().to_vec(), kernels::log_softmax_rows(value.data(), cols)).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::LogSoftmax(x, cols), needs)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::exp);
        let needs = self.needs(x);
        self.push(out, Op::Exp(x), needs)
    }

    fn binary(&mut self, a: Var, b: Var, op_name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let needs = self.needs(x);
        self.push(out, Op::Scale(x, c), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(out, Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_usize(self.value(x).len()).unwrap();
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Sum over the last axis of a `[rows, cols]` value.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let cols = *value.shape().last().unwrap();
        let data: Vec<T> = value.data().chunks_exact(cols).map(|r| r.iter().copied().sum()).collect();
        let rows = data.len();
        let out = Tensor::new(vec![rows], data).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::SumRows(x, cols), needs)
    }

    /// `out[i] = x[i, index[i]]` for a `[rows, cols]` value.
    pub fn pick(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let value = self.value(x);
        let cols = *value.shape().last().unwrap();
        let rows = value.len() / cols;
        if index.len() != rows || index.iter().any(|&i| i >= cols) {
            return Err(Error::ShapeMismatch {
                op: "pick",
                lhs: value.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let data = index.iter().enumerate().map(|(r, &c)| value.data()[r * cols + c]).collect();
        let out = Tensor::new(vec![rows], data)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Pick(x, index.to_vec(), cols), needs))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        let needs = self.needs(x);
        self.push(out, Op::Square(x), needs)
    }

    /// `max(x, 0)` elementwise; the gradient at exactly zero is zero.
    pub fn pos_part(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.needs(x);
        self.push(out, Op::PosPart(x), needs)
    }

    /// Reverse sweep from a scalar `loss`. Blocks the loss does not reach get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let seed_shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarSeed(seed_shape.to_vec()));
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![T::one()]);
        let mut grads: Vec<Tensor<T>> = self.param_shapes.iter().map(|s| Tensor::zeros(s)).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let send = |target: Var, delta: Vec<T>, adj: &mut Vec<Option<Vec<T>>>| {
                if !self.nodes[target.0].needs_grad {
                    return;
                }
                match &mut adj[target.0] {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(delta) {
                            *a += d;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    grads[*id] = Tensor::new(self.param_shapes[*id].clone(), g)?;
                }
                Op::Conv2d { x, k, b, geom, cols } => {
                    let need_x = self.needs(*x);
                    let cg = if self.needs(*k) {
                        kernels::conv2d_backward(geom, cols, self.value(*k).data(), &g, need_x)
                    } else {
                        let cols = kernels::im2col(self.value(*x).data(), geom);
                        kernels::conv2d_backward(geom, &cols, self.value(*k).data(), &g, need_x)
                    };
                    if need_x {
                        send(*x, cg.input, &mut adj);
                    }
                    send(*k, cg.kernel, &mut adj);
                    if let Some(b) = b {
                        send(*b, cg.bias, &mut adj);
                    }
                }
                Op::ConvTranspose { x, k, b, geom } => {
                    let cg = kernels::conv_transpose_backward(geom, self.value(*x).data(), self.value(*k).data(), &g);
                    send(*x, cg.input, &mut adj);
                    send(*k, cg.kernel, &mut adj);
                    if let Some(b) = b {
                        send(*b, cg.bias, &mut adj);
                    }
                }
                Op::Dense { x, w, b, dims } => {
                    let (n, input, output) = *dims;
                    if self.needs(*x) {
                        let mut dx = vec![T::zero(); n * input];
                        kernels::matmul_bt(&g, self.value(*w).data(), &mut dx, n, output, input, false);
                        send(*x, dx, &mut adj);
                    }
                    if self.needs(*w) {
                        let mut dw = vec![T::zero(); input * output];
                        kernels::matmul_at(self.value(*x).data(), &g, &mut dw, input, n, output, false);
                        send(*w, dw, &mut adj);
                    }
                    if let Some(b) = b {
                        let mut db = vec![T::zero(); output];
                        for row in g.chunks_exact(output) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        send(*b, db, &mut adj);
                    }
                }
                Op::Relu(x) | Op::PosPart(x) => {
                    let out = node.value.data();
                    let d = g
                        .iter()
                        .zip(out)
                        .map(|(&gi, &o)| if o > T::zero() { gi } else { T::zero() })
                        .collect();
                    send(*x, d, &mut adj);
                }
                Op::Reshape(x) => send(*x, g, &mut adj),
                Op::LogSoftmax(x, cols) => {
                    let out = node.value.data();
                    let mut d = Vec::with_capacity(g.len());
                    for (grow, orow) in g.chunks_exact(*cols).zip(out.chunks_exact(*cols)) {
                        let total: T = grow.iter().copied().sum();
                        d.extend(grow.iter().zip(orow).map(|(&gi, &o)| gi - o.exp() * total));
                    }
                    send(*x, d, &mut adj);
                }
                Op::Exp(x) => {
                    let d = g.iter().zip(node.value.data()).map(|(&gi, &o)| gi * o).collect();
                    send(*x, d, &mut adj);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut adj);
                    send(*b, g, &mut adj);
                }
                Op::Sub(a, b) => {
                    send(*b, g.iter().map(|&v| -v).collect(), &mut adj);
                    send(*a, g, &mut adj);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    if self.needs(*a) {
                        send(*a, g.iter().zip(vb).map(|(&gi, &y)| gi * y).collect(), &mut adj);
                    }
                    if self.needs(*b) {
                        send(*b, g.iter().zip(va).map(|(&gi, &x)| gi * x).collect(), &mut adj);
                    }
                }
                Op::Scale(x, c) => send(*x, g.iter().map(|&v| v * *c).collect(), &mut adj),
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    send(*x, vec![g[0]; n], &mut adj);
                }
                Op::SumRows(x, cols) => {
                    let d = g.iter().flat_map(|&v| std::iter::repeat(v).take(*cols)).collect();
                    send(*x, d, &mut adj);
                }
                Op::Pick(x, index, cols) => {
                    let mut d = vec![T::zero(); index.len() * cols];
                    for (r, (&c, &gi)) in index.iter().zip(&g).enumerate() {
                        d[r * cols + c] = gi;
                    }
                    send(*x, d, &mut adj);
                }
                Op::Square(x) => {
                    let d = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&gi, &v)| gi * (v + v))
                        .collect();
                    send(*x, d, &mut adj);
                }
            }
        }
        Ok(Gradients::from_blocks(self.param_names.clone(), grads))
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}
