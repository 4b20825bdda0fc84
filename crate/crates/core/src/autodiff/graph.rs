use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Matrix;
use crate::math;
use crate::{Error, Result};

/// Lower bound applied to the input of [`Graph::log`].
pub const LOG_CLAMP: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Collapse the rows: `r x c -> 1 x c`.
    Rows,
    /// Collapse the columns: `r x c -> r x 1`.
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reduce {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    Offset(Var),
    SoftmaxRows(Var),
    Reduce(Reduce, Var, Option<Axis>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    BroadcastRows(Var),
    BroadcastCols(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    grad: Matrix,
    op: Op,
}

/// A single-use reverse-mode computation graph.
///
/// Nodes are appended in evaluation order, so the node vector is already a
/// topological order and the backward sweep is a reverse scan that visits
/// each node once.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(Node { value, grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf (parameter, input or constant).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(Matrix::scalar(value))
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn grad(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].grad
    }

    #[inline]
    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert!(m.is_scalar());
        m.as_slice()[0]
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad.as_mut_slice().fill(0.0);
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() == y.shape() {
            Ok(x.zip_map(y, f))
        } else if x.is_scalar() {
            let s = x.as_slice()[0];
            Ok(y.map(|v| f(s, v)))
        } else if y.is_scalar() {
            let s = y.as_slice()[0];
            Ok(x.map(|v| f(v, s)))
        } else {
            Err(Error::Dimension {
                op,
                left: x.shape(),
                right: y.shape(),
            })
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push(value, Op::Div(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| -v);
        self.push(value, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(math::exp);
        self.push(value, Op::Exp(a))
    }

    /// Natural log of `max(x, LOG_CLAMP)`; the gradient is zero where the clamp is active.
    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| math::ln(v.max(LOG_CLAMP)));
        self.push(value, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(math::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(math::sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    /// `k * a` for a constant `k`.
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|v| v * k);
        self.push(value, Op::Scale(a, k))
    }

    /// `a + k` for a constant `k`.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|v| v + k);
        self.push(value, Op::Offset(a))
    }

    /// `1 - a`, exact for `a` in {0, 1}.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.neg(a);
        self.offset(n, 1.0)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if !x.is_finite() {
            return Err(Error::NonFinite(format!(
                "softmax_rows input {:?}",
                x.shape()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = math::exp(*v - max);
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    fn reduce(&mut self, kind: Reduce, a: Var, axis: Option<Axis>) -> Var {
        let x = self.value(a);
        let (r, c) = x.shape();
        let mut value = match axis {
            None => Matrix::scalar(x.sum()),
            Some(Axis::Rows) => {
                let mut out = Matrix::zeros(1, c);
                for i in 0..r {
                    for (o, v) in out.as_mut_slice().iter_mut().zip(x.row(i)) {
                        *o += v;
                    }
                }
                out
            }
            Some(Axis::Cols) => {
                let sums: Vec<f64> = (0..r).map(|i| x.row(i).iter().sum()).collect();
                Matrix::column_vector(&sums)
            }
        };
        if kind == Reduce::Mean {
            let n = reduce_count(r, c, axis) as f64;
            value.as_mut_slice().iter_mut().for_each(|v| *v /= n);
        }
        self.push(value, Op::Reduce(kind, a, axis))
    }

    /// Sum over all entries (`axis = None`) or along one axis.
    pub fn sum(&mut self, a: Var, axis: Option<Axis>) -> Var {
        self.reduce(Reduce::Sum, a, axis)
    }

    pub fn mean(&mut self, a: Var, axis: Option<Axis>) -> Var {
        self.reduce(Reduce::Mean, a, axis)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_cols of zero tensors".into()));
        };
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let shape = self.shape(p);
            if shape.0 != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: shape,
                });
            }
            cols += shape.1;
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.cols() {
            return Err(Error::Index {
                op: "slice_cols",
                index: end.max(start),
                extent: x.cols(),
            });
        }
        let mut out = Matrix::zeros(x.rows(), end - start);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..end]);
        }
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Rows of `a` at `indices`, in order; repeats allowed.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let mut out = Matrix::zeros(indices.len(), x.cols());
        for (o, &i) in indices.iter().enumerate() {
            if i >= x.rows() {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: i,
                    extent: x.rows(),
                });
            }
            out.row_mut(o).copy_from_slice(x.row(i));
        }
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec())))
    }

    /// Repeats a `1 x c` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != 1 {
            return Err(Error::Dimension {
                op: "broadcast_rows",
                left: x.shape(),
                right: (1, x.cols()),
            });
        }
        let mut out = Matrix::zeros(n, x.cols());
        for r in 0..n {
            out.row_mut(r).copy_from_slice(x.row(0));
        }
        Ok(self.push(out, Op::BroadcastRows(a)))
    }

    /// Repeats an `r x 1` column `n` times.
    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        let x = self.value(a);
        if x.cols() != 1 {
            return Err(Error::Dimension {
                op: "broadcast_cols",
                left: x.shape(),
                right: (x.rows(), 1),
            });
        }
        let mut out = Matrix::zeros(x.rows(), n);
        for r in 0..x.rows() {
            out.row_mut(r).fill(x.get(r, 0));
        }
        Ok(self.push(out, Op::BroadcastCols(a)))
    }

    /// Accumulates `d loss / d node` into every node reachable from `loss`.
    ///
    /// Calling this twice without [`Graph::zero_grad`] adds the gradient twice.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut pending: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(Matrix::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = pending[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut pending);
            self.nodes[id].grad.add_assign(&g);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Matrix, pending: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                ga.add_matmul_transposed_rhs(g, vb);
                accumulate(pending, *a, ga);
                let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                gb.add_transposed_lhs_matmul(va, g);
                accumulate(pending, *b, gb);
            }
            Op::Add(a, b) => {
                self.route_broadcast(pending, *a, g.clone());
                self.route_broadcast(pending, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.route_broadcast(pending, *a, g.clone());
                self.route_broadcast(pending, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = self.binary_partial(*a, *b, g, |_, y, gv| gv * y);
                let gb = self.binary_partial(*a, *b, g, |x, _, gv| gv * x);
                self.route_broadcast(pending, *a, ga);
                self.route_broadcast(pending, *b, gb);
            }
            Op::Div(a, b) => {
                let ga = self.binary_partial(*a, *b, g, |_, y, gv| gv / y);
                let gb = self.binary_partial(*a, *b, g, |x, y, gv| -gv * x / (y * y));
                self.route_broadcast(pending, *a, ga);
                self.route_broadcast(pending, *b, gb);
            }
            Op::Neg(a) => accumulate(pending, *a, g.map(|v| -v)),
            Op::Exp(a) => accumulate(pending, *a, g.zip_map(out, |gv, y| gv * y)),
            Op::Log(a) => {
                let x = self.value(*a);
                let gx = g.zip_map(x, |gv, xv| if xv > LOG_CLAMP { gv / xv } else { 0.0 });
                accumulate(pending, *a, gx);
            }
            Op::Sqrt(a) => accumulate(pending, *a, g.zip_map(out, |gv, y| gv / (2.0 * y))),
            Op::Relu(a) => {
                let x = self.value(*a);
                accumulate(
                    pending,
                    *a,
                    g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                );
            }
            Op::Sigmoid(a) => {
                accumulate(pending, *a, g.zip_map(out, |gv, s| gv * s * (1.0 - s)));
            }
            Op::Scale(a, k) => accumulate(pending, *a, g.map(|v| v * k)),
            Op::Offset(a) => accumulate(pending, *a, g.clone()),
            Op::SoftmaxRows(a) => {
                let mut gx = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (s, gr) = (out.row(r), g.row(r));
                    let dot: f64 = s.iter().zip(gr).map(|(x, y)| x * y).sum();
                    for ((o, &sv), &gv) in gx.row_mut(r).iter_mut().zip(s).zip(gr) {
                        *o = sv * (gv - dot);
                    }
                }
                accumulate(pending, *a, gx);
            }
            Op::Reduce(kind, a, axis) => {
                let (r, c) = self.shape(*a);
                let scale = match kind {
                    Reduce::Sum => 1.0,
                    Reduce::Mean => 1.0 / reduce_count(r, c, *axis) as f64,
                };
                let mut gx = Matrix::zeros(r, c);
                for i in 0..r {
                    for j in 0..c {
                        let gv = match axis {
                            None => g.get(0, 0),
                            Some(Axis::Rows) => g.get(0, j),
                            Some(Axis::Cols) => g.get(i, 0),
                        };
                        gx.set(i, j, gv * scale);
                    }
                }
                accumulate(pending, *a, gx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let mut gp = Matrix::zeros(r, c);
                    for i in 0..r {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + c]);
                    }
                    offset += c;
                    accumulate(pending, p, gp);
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut gx = Matrix::zeros(r, c);
                for i in 0..r {
                    gx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                accumulate(pending, *a, gx);
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = self.shape(*a);
                let mut gx = Matrix::zeros(r, c);
                for (o, &i) in indices.iter().enumerate() {
                    for (dst, src) in gx.row_mut(i).iter_mut().zip(g.row(o)) {
                        *dst += src;
                    }
                }
                accumulate(pending, *a, gx);
            }
            Op::BroadcastRows(a) => {
                let mut gx = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (dst, src) in gx.as_mut_slice().iter_mut().zip(g.row(i)) {
                        *dst += src;
                    }
                }
                accumulate(pending, *a, gx);
            }
            Op::BroadcastCols(a) => {
                let sums: Vec<f64> = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                accumulate(pending, *a, Matrix::column_vector(&sums));
            }
        }
    }

    /// Partial derivative of a binary elementwise op, evaluated at the output shape.
    fn binary_partial(
        &self,
        a: Var,
        b: Var,
        g: &Matrix,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Matrix {
        let (x, y) = (self.value(a), self.value(b));
        let mut out = g.clone();
        let at = |m: &Matrix, k: usize| {
            if m.is_scalar() {
                m.as_slice()[0]
            } else {
                m.as_slice()[k]
            }
        };
        for (k, o) in out.as_mut_slice().iter_mut().enumerate() {
            *o = f(at(x, k), at(y, k), *o);
        }
        out
    }

    /// Sends an output-shaped gradient to an operand, summing it down if the
    /// operand was a broadcast scalar.
    fn route_broadcast(&self, pending: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if self.value(v).shape() == g.shape() {
            accumulate(pending, v, g);
        } else {
            accumulate(pending, v, Matrix::scalar(g.sum()));
        }
    }
}

fn reduce_count(r: usize, c: usize, axis: Option<Axis>) -> usize {
    match axis {
        None => r * c,
        Some(Axis::Rows) => r,
        Some(Axis::Cols) => c,
    }
}

fn accumulate(pending: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut pending[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
