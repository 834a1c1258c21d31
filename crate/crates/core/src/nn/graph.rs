//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a `1 x 1` node walks the tape once in reverse and
//! returns gradients for every node that depends on a parameter.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Softplus(Var),
    Square(Var),
    Min(Var, Var),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Reshape(Var),
    RowLogSumExp(Var),
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, zero if `v` does not affect it.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                vec![0.0; r * c]
            }
        }
    }

    /// Gradient reshaped like `like`.
    pub fn tensor(&self, v: Var, like: &Tensor) -> Tensor {
        Tensor::new(like.shape().to_vec(), self.wrt(v)).expect("gradient shape")
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

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(rows * cols, data.len(), "constant_matrix");
        self.push(rows, cols, data, Op::Leaf, false)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Var {
        self.push(1, 1, vec![x], Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "scalar() on non-scalar node");
        n.value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::matrix(n.rows, n.cols, n.value.clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul inner dimension");
        let mut out = vec![0.0; ar * bc];
        gemm(self.value(a), ar, ac, false, self.value(b), br, bc, false, &mut out, false);
        let g = self.needs(a) || self.needs(b);
        self.push(ar, bc, out, Op::MatMul(a, b), g)
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(b), (1, c), "add_bias shape");
        let bv = self.value(b);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(c) {
            for (o, bb) in row.iter_mut().zip(bv) {
                *o += bb;
            }
        }
        let g = self.needs(x) || self.needs(b);
        self.push(r, c, out, Op::AddBias(x, b), g)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!((r, c), self.shape(b), "elementwise shape");
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let g = self.needs(a) || self.needs(b);
        self.push(r, c, out, op, g)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let g = self.needs(a);
        self.push(r, c, out, op, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, f64::min, Op::Min(a, b))
    }

    /// Multiplies every entry of `x` by the `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "mul_scalar expects 1x1");
        let sv = self.value(s)[0];
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|v| v * sv).collect();
        let g = self.needs(x) || self.needs(s);
        self.push(r, c, out, Op::MulScalar(x, s), g)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddConst(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, libm::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, libm::exp, Op::Exp(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Per-row sum: `r x c -> r x 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).chunks_exact(c.max(1)).map(|row| row.iter().sum()).collect();
        let g = self.needs(a);
        self.push(r, 1, out, Op::RowSum(a), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let g = self.needs(a);
        self.push(1, 1, vec![s], Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self.value(a).iter().sum();
        let g = self.needs(a);
        self.push(1, 1, vec![s / n], Op::Mean(a), g)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                assert_eq!(r, rows, "concat row mismatch");
                c
            })
            .collect();
        let cols: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let g = parts.iter().any(|&p| self.needs(p));
        self.push(rows, cols, out, Op::Concat(parts.to_vec()), g)
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= c, "slice_cols out of range");
        let v = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + start + len]);
        }
        let g = self.needs(a);
        self.push(r, len, out, Op::Slice(a, start), g)
    }

    /// Reinterprets the row-major data of `a` with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a).to_vec();
        assert_eq!(v.len(), rows * cols, "reshape size");
        let g = self.needs(a);
        self.push(rows, cols, v, Op::Reshape(a), g)
    }

    /// Per-row `ln Σ_j exp(a_ij)`: `r x c -> r x 1`.
    pub fn row_logsumexp(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).chunks_exact(c).map(logsumexp).collect();
        let g = self.needs(a);
        self.push(r, 1, out, Op::RowLogSumExp(a), g)
    }

    /// Reverse pass from a `1 x 1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (lr, lc) = self.shape(loss);
        if lr * lc != 1 {
            return Err(Error::NonScalarLoss(vec![lr, lc]));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.grad {
                grads[i] = Some(gout);
                continue;
            }
            self.propagate(node, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        let shapes = self.nodes.iter().map(|n| (n.rows, n.cols)).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ar, ac) = self.shape(*a);
                let (br, bc) = self.shape(*b);
                if self.needs(*a) {
                    let ga = slot(grads, *a, ar * ac);
                    gemm(gout, rows, cols, false, self.value(*b), br, bc, true, ga, true);
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, br * bc);
                    gemm(self.value(*a), ar, ac, true, gout, rows, cols, false, gb, true);
                }
            }
            Op::AddBias(x, b) => {
                if self.needs(*x) {
                    add_into(slot(grads, *x, rows * cols), gout);
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, cols);
                    for row in gout.chunks_exact(cols) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    add_into(slot(grads, *a, gout.len()), gout);
                }
                if self.needs(*b) {
                    add_into(slot(grads, *b, gout.len()), gout);
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    add_into(slot(grads, *a, gout.len()), gout);
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, gout.len());
                    for (g, o) in gb.iter_mut().zip(gout) {
                        *g -= o;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let ga = slot(grads, *a, gout.len());
                    for ((g, o), y) in ga.iter_mut().zip(gout).zip(bv) {
                        *g += o * y;
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let gb = slot(grads, *b, gout.len());
                    for ((g, o), x) in gb.iter_mut().zip(gout).zip(av) {
                        *g += o * x;
                    }
                }
            }
            Op::MulScalar(x, s) => {
                let sv = self.value(*s)[0];
                if self.needs(*x) {
                    let gx = slot(grads, *x, gout.len());
                    for (g, o) in gx.iter_mut().zip(gout) {
                        *g += o * sv;
                    }
                }
                if self.needs(*s) {
                    let dot: f64 = gout.iter().zip(self.value(*x)).map(|(o, v)| o * v).sum();
                    slot(grads, *s, 1)[0] += dot;
                }
            }
            Op::Scale(a, k) => {
                let ga = slot(grads, *a, gout.len());
                for (g, o) in ga.iter_mut().zip(gout) {
                    *g += o * k;
                }
            }
            Op::AddConst(a) | Op::Reshape(a) => {
                add_into(slot(grads, *a, gout.len()), gout);
            }
            Op::Tanh(a) => {
                let ga = slot(grads, *a, gout.len());
                for ((g, o), y) in ga.iter_mut().zip(gout).zip(&node.value) {
                    *g += o * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let ga = slot(grads, *a, gout.len());
                for ((g, o), x) in ga.iter_mut().zip(gout).zip(av) {
                    if *x > 0.0 {
                        *g += o;
                    }
                }
            }
            Op::Exp(a) => {
                let ga = slot(grads, *a, gout.len());
                for ((g, o), y) in ga.iter_mut().zip(gout).zip(&node.value) {
                    *g += o * y;
                }
            }
            Op::Softplus(a) => {
                let av = self.value(*a);
                let ga = slot(grads, *a, gout.len());
                for ((g, o), x) in ga.iter_mut().zip(gout).zip(av) {
                    *g += o * sigmoid(*x);
                }
            }
            Op::Square(a) => {
                let av = self.value(*a);
                let ga = slot(grads, *a, gout.len());
                for ((g, o), x) in ga.iter_mut().zip(gout).zip(av) {
                    *g += 2.0 * o * x;
                }
            }
            Op::Min(a, b) => {
                // Ties route the gradient to `a`.
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let ga = slot(grads, *a, gout.len());
                    for i in 0..gout.len() {
                        if av[i] <= bv[i] {
                            ga[i] += gout[i];
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, gout.len());
                    for i in 0..gout.len() {
                        if av[i] > bv[i] {
                            gb[i] += gout[i];
                        }
                    }
                }
            }
            Op::RowSum(a) => {
                let (_, ac) = self.shape(*a);
                let ga = slot(grads, *a, rows * ac);
                for (row, o) in ga.chunks_exact_mut(ac).zip(gout) {
                    row.iter_mut().for_each(|g| *g += o);
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                slot(grads, *a, len).iter_mut().for_each(|g| *g += gout[0]);
            }
            Op::Mean(a) => {
                let len = self.value(*a).len();
                let d = gout[0] / len.max(1) as f64;
                slot(grads, *a, len).iter_mut().for_each(|g| *g += d);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = self.shape(p);
                    if self.needs(p) {
                        let gp = slot(grads, p, rows * w);
                        for i in 0..rows {
                            let src = &gout[i * cols + offset..i * cols + offset + w];
                            add_into(&mut gp[i * w..(i + 1) * w], src);
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice(a, start) => {
                let (ar, ac) = self.shape(*a);
                let ga = slot(grads, *a, ar * ac);
                for i in 0..rows {
                    add_into(&mut ga[i * ac + start..i * ac + start + cols], &gout[i * cols..(i + 1) * cols]);
                }
            }
            Op::RowLogSumExp(a) => {
                let (_, ac) = self.shape(*a);
                let av = self.value(*a);
                let ga = slot(grads, *a, rows * ac);
                for i in 0..rows {
                    let lse = node.value[i];
                    for j in 0..ac {
                        ga[i * ac + j] += gout[i] * libm::exp(av[i * ac + j] - lse);
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        libm::exp(x)
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + libm::log(xs.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}
