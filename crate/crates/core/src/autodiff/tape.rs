//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation on a [`Var`] appends a node holding the forward value and
//! the rule needed to push gradients back to its inputs. Node indices are the
//! recording order, so a single reverse sweep is a valid topological order.
//!
//! ```
//! use dualode::autodiff::{Matrix, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Matrix::scalar(3.0));
//! let loss = x.square().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data, vec![6.0]);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::rc::Rc;

use super::matrix::Matrix;
use super::params::ParamStore;
use super::AutodiffError;

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Leaf,
    Param(String),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    AddCol(usize, usize),
    MulCol(usize, usize),
    MulScalar(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softplus(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Abs(usize),
    Square(usize),
    Sum(usize),
    RowSums(usize),
    ColSums(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Reshape(usize),
    // Mask kept with the node; masked outputs are zero so backward ignores it.
    MaskedSoftmax(usize, #[allow(dead_code)] Rc<Vec<bool>>),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Recording of a forward computation.
///
/// A tape is single-threaded; build one per training window and drop it after
/// the backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var(#{}, {r}x{c})", self.idx)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    /// A free input that receives a gradient but is not a named parameter.
    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a named parameter from `store` onto the tape.
    pub fn param(&self, store: &ParamStore, name: &str) -> Result<Var<'_>, AutodiffError> {
        let tensor = store
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        let needs = tensor.requires_grad;
        Ok(self.push(tensor.value.clone(), Op::Param(name.to_string()), needs))
    }

    fn value_of(&self, idx: usize) -> std::cell::Ref<'_, Matrix> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[idx].value)
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].needs_grad
    }

    fn unary(&self, a: usize, op: Op, f: impl Fn(&Matrix) -> Matrix) -> Var<'_> {
        let value = f(&self.value_of(a));
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    fn binary(&self, a: usize, b: usize, op: Op, f: impl Fn(&Matrix, &Matrix) -> Matrix) -> Var<'_> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(value, op, needs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AutodiffError> {
        let nodes = self.nodes.borrow();
        let (r, c) = nodes[loss.idx].value.shape();
        if (r, c) != (1, 1) {
            return Err(AutodiffError::Shape(format!(
                "backward requires a scalar loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if matches!(node.op, Op::Constant | Op::Leaf | Op::Param(_)) {
                grads[idx] = Some(g);
                continue;
            }
            if !node.needs_grad {
                continue;
            }
            let val = |i: usize| &nodes[i].value;
            let mut acc = |i: usize, contrib: Matrix| {
                if !nodes[i].needs_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(existing) => existing.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Constant | Op::Leaf | Op::Param(_) => unreachable!(),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.scale(-1.0));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(val(*b), |g, y| g * y));
                    acc(*b, g.zip_map(val(*a), |g, x| g * x));
                }
                Op::Div(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    acc(*a, g.zip_map(y, |g, y| g / y));
                    let gb = Matrix::from_vec(
                        g.rows,
                        g.cols,
                        g.data
                            .iter()
                            .zip(&x.data)
                            .zip(&y.data)
                            .map(|((g, x), y)| -g * x / (y * y))
                            .collect(),
                    );
                    acc(*b, gb);
                }
                Op::AddRow(a, b) => {
                    acc(*b, g.col_sums());
                    acc(*a, g);
                }
                Op::AddCol(a, b) => {
                    acc(*b, g.row_sums());
                    acc(*a, g);
                }
                Op::MulCol(a, s) => {
                    let (x, sv) = (val(*a), val(*s));
                    let mut ga = g.clone();
                    let mut gs = Matrix::zeros(sv.rows, 1);
                    for r in 0..g.rows {
                        let srow = sv.data[r];
                        let mut dot = 0.0;
                        for cc in 0..g.cols {
                            let k = r * g.cols + cc;
                            ga.data[k] = g.data[k] * srow;
                            dot += g.data[k] * x.data[k];
                        }
                        gs.data[r] = dot;
                    }
                    acc(*a, ga);
                    acc(*s, gs);
                }
                Op::MulScalar(a, s) => {
                    let sv = val(*s).data[0];
                    let dot: f64 = g.data.iter().zip(&val(*a).data).map(|(g, x)| g * x).sum();
                    acc(*a, g.scale(sv));
                    acc(*s, Matrix::scalar(dot));
                }
                Op::Scale(a, s) => acc(*a, g.scale(*s)),
                Op::Offset(a) => acc(*a, g),
                Op::MatMul(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    if nodes[*a].needs_grad {
                        acc(*a, g.matmul_t(y));
                    }
                    if nodes[*b].needs_grad {
                        acc(*b, x.t_matmul(&g));
                    }
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |g, y| g * y * (1.0 - y))),
                Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |g, y| g * (1.0 - y * y))),
                Op::Softplus(a) => acc(*a, g.zip_map(val(*a), |g, x| g * sigmoid(x))),
                Op::Relu(a) => acc(*a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
                Op::Exp(a) => acc(*a, g.zip_map(&node.value, |g, y| g * y)),
                Op::Log(a) => acc(*a, g.zip_map(val(*a), |g, x| g / x)),
                Op::Sqrt(a) => acc(*a, g.zip_map(&node.value, |g, y| g / (2.0 * y))),
                Op::Abs(a) => acc(*a, g.zip_map(val(*a), |g, x| g * sign(x))),
                Op::Square(a) => acc(*a, g.zip_map(val(*a), |g, x| 2.0 * g * x)),
                Op::Sum(a) => {
                    let x = val(*a);
                    acc(*a, Matrix::filled(x.rows, x.cols, g.data[0]));
                }
                Op::RowSums(a) => {
                    let x = val(*a);
                    let mut ga = Matrix::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        for cc in 0..x.cols {
                            ga.data[r * x.cols + cc] = g.data[r];
                        }
                    }
                    acc(*a, ga);
                }
                Op::ColSums(a) => {
                    let x = val(*a);
                    let mut ga = Matrix::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        ga.data[r * x.cols..(r + 1) * x.cols].copy_from_slice(&g.data);
                    }
                    acc(*a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).cols;
                        let mut gp = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.data[r * w..(r + 1) * w]
                                .copy_from_slice(&g.data[r * g.cols + offset..r * g.cols + offset + w]);
                        }
                        acc(p, gp);
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = val(p).shape();
                        let gp = Matrix::from_vec(pr, pc, g.data[offset..offset + pr * pc].to_vec());
                        acc(p, gp);
                        offset += pr * pc;
                    }
                }
                Op::SliceCols(a, start) => {
                    let x = val(*a);
                    let mut ga = Matrix::zeros(x.rows, x.cols);
                    for r in 0..g.rows {
                        ga.data[r * x.cols + start..r * x.cols + start + g.cols]
                            .copy_from_slice(&g.data[r * g.cols..(r + 1) * g.cols]);
                    }
                    acc(*a, ga);
                }
                Op::SliceRows(a, start) => {
                    let x = val(*a);
                    let mut ga = Matrix::zeros(x.rows, x.cols);
                    ga.data[start * x.cols..start * x.cols + g.data.len()].copy_from_slice(&g.data);
                    acc(*a, ga);
                }
                Op::Reshape(a) => {
                    let x = val(*a);
                    acc(*a, Matrix::from_vec(x.rows, x.cols, g.data));
                }
                Op::MaskedSoftmax(a, _) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for cc in 0..y.cols {
                            ga.data[r * y.cols + cc] = yr[cc] * (gr[cc] - dot);
                        }
                    }
                    acc(*a, ga);
                }
            }
        }

        let params = nodes
            .iter()
            .enumerate()
            .take(loss.idx + 1)
            .filter_map(|(i, n)| match &n.op {
                Op::Param(name) if n.needs_grad => Some((i, name.clone())),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(usize, String)>,
}

impl Gradients {
    /// Gradient with respect to a leaf or parameter node, if it was reached.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Matrix> {
        self.grads.get(var.idx).and_then(Option::as_ref)
    }

    /// `(parameter name, gradient)` pairs. A parameter bound more than once
    /// appears once per binding.
    pub fn params(&self) -> impl Iterator<Item = (&str, Option<&Matrix>)> {
        self.params
            .iter()
            .map(|(i, name)| (name.as_str(), self.grads[*i].as_ref()))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Matrix {
        self.tape.value_of(self.idx).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.tape.value_of(self.idx))
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self) -> f64 {
        let v = self.tape.value_of(self.idx);
        assert_eq!(v.shape(), (1, 1), "scalar() on non-scalar node");
        v.data[0]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.value_of(self.idx).shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    fn same_tape(&self, other: Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        self.tape
            .binary(self.idx, other.idx, Op::Add(self.idx, other.idx), |a, b| {
                a.zip_map(b, |x, y| x + y)
            })
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        self.tape
            .binary(self.idx, other.idx, Op::Sub(self.idx, other.idx), |a, b| {
                a.zip_map(b, |x, y| x - y)
            })
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        self.tape
            .binary(self.idx, other.idx, Op::Mul(self.idx, other.idx), |a, b| {
                a.zip_map(b, |x, y| x * y)
            })
    }

    /// Elementwise quotient.
    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        self.tape
            .binary(self.idx, other.idx, Op::Div(self.idx, other.idx), |a, b| {
                a.zip_map(b, |x, y| x / y)
            })
    }

    /// `self (r x c) + row (1 x c)` broadcast over rows.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.same_tape(row);
        self.tape
            .binary(self.idx, row.idx, Op::AddRow(self.idx, row.idx), |a, b| {
                assert_eq!((1, a.cols), b.shape(), "add_row shape mismatch");
                let mut out = a.clone();
                for r in 0..a.rows {
                    for (o, v) in out.data[r * a.cols..(r + 1) * a.cols].iter_mut().zip(&b.data) {
                        *o += v;
                    }
                }
                out
            })
    }

    /// `self (r x c) + col (r x 1)` broadcast over columns.
    pub fn add_col(self, col: Var<'t>) -> Var<'t> {
        self.same_tape(col);
        self.tape
            .binary(self.idx, col.idx, Op::AddCol(self.idx, col.idx), |a, b| {
                assert_eq!((a.rows, 1), b.shape(), "add_col shape mismatch");
                let mut out = a.clone();
                for r in 0..a.rows {
                    for o in &mut out.data[r * a.cols..(r + 1) * a.cols] {
                        *o += b.data[r];
                    }
                }
                out
            })
    }

    /// `self (r x c) * col (r x 1)` broadcast over columns.
    pub fn mul_col(self, col: Var<'t>) -> Var<'t> {
        self.same_tape(col);
        self.tape
            .binary(self.idx, col.idx, Op::MulCol(self.idx, col.idx), |a, b| {
                assert_eq!((a.rows, 1), b.shape(), "mul_col shape mismatch");
                let mut out = a.clone();
                for r in 0..a.rows {
                    for o in &mut out.data[r * a.cols..(r + 1) * a.cols] {
                        *o *= b.data[r];
                    }
                }
                out
            })
    }

    /// Multiply by a `1 x 1` node.
    pub fn mul_scalar(self, s: Var<'t>) -> Var<'t> {
        self.same_tape(s);
        self.tape
            .binary(self.idx, s.idx, Op::MulScalar(self.idx, s.idx), |a, b| {
                assert_eq!(b.shape(), (1, 1), "mul_scalar needs a 1x1 factor");
                a.scale(b.data[0])
            })
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::Scale(self.idx, s), |a| a.scale(s))
    }

    pub fn offset(self, s: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::Offset(self.idx), |a| a.map(|x| x + s))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        self.tape
            .binary(self.idx, other.idx, Op::MatMul(self.idx, other.idx), |a, b| a.matmul(b))
    }

    pub fn t(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Transpose(self.idx), Matrix::transpose)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Sigmoid(self.idx), |a| a.map(sigmoid))
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Tanh(self.idx), |a| a.map(f64::tanh))
    }

    pub fn softplus(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Softplus(self.idx), |a| a.map(softplus))
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Relu(self.idx), |a| a.map(|x| x.max(0.0)))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Exp(self.idx), |a| a.map(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Log(self.idx), |a| a.map(f64::ln))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Sqrt(self.idx), |a| a.map(f64::sqrt))
    }

    pub fn abs(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Abs(self.idx), |a| a.map(f64::abs))
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Square(self.idx), |a| a.map(|x| x * x))
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(self) -> Var<'t> {
        self.tape
            .unary(self.idx, Op::Sum(self.idx), |a| Matrix::scalar(a.sum()))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.with_value(Matrix::len) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Per-row sums, `r x 1`.
    pub fn row_sums(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::RowSums(self.idx), Matrix::row_sums)
    }

    /// Per-column sums, `1 x c`.
    pub fn col_sums(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::ColSums(self.idx), Matrix::col_sums)
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        self.tape.unary(self.idx, Op::SliceCols(self.idx, start), |a| {
            assert!(start + len <= a.cols, "slice_cols out of range");
            let mut out = Matrix::zeros(a.rows, len);
            for r in 0..a.rows {
                out.data[r * len..(r + 1) * len]
                    .copy_from_slice(&a.data[r * a.cols + start..r * a.cols + start + len]);
            }
            out
        })
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Var<'t> {
        self.tape.unary(self.idx, Op::SliceRows(self.idx, start), |a| {
            assert!(start + len <= a.rows, "slice_rows out of range");
            Matrix::from_vec(len, a.cols, a.data[start * a.cols..(start + len) * a.cols].to_vec())
        })
    }

    /// Row-major reinterpretation with the same element count.
    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        self.tape.unary(self.idx, Op::Reshape(self.idx), |a| {
            assert_eq!(a.len(), rows * cols, "reshape changes element count");
            Matrix::from_vec(rows, cols, a.data.clone())
        })
    }

    /// Row-wise softmax restricted to `mask`; masked entries are exactly zero.
    ///
    /// Panics if a row has no unmasked entry; callers validate masks first.
    pub fn masked_softmax(self, mask: Rc<Vec<bool>>) -> Var<'t> {
        let m = mask.clone();
        self.tape
            .unary(self.idx, Op::MaskedSoftmax(self.idx, mask), move |a| {
                assert_eq!(m.len(), a.len(), "mask shape mismatch");
                let mut out = Matrix::zeros(a.rows, a.cols);
                for r in 0..a.rows {
                    let row = a.row(r);
                    let mrow = &m[r * a.cols..(r + 1) * a.cols];
                    let max = row
                        .iter()
                        .zip(mrow)
                        .filter(|(_, &keep)| keep)
                        .map(|(v, _)| *v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert!(max.is_finite() || max == f64::INFINITY, "fully masked attention row {r}");
                    let mut z = 0.0;
                    for c in 0..a.cols {
                        if mrow[c] {
                            let e = (row[c] - max).exp();
                            out.data[r * a.cols + c] = e;
                            z += e;
                        }
                    }
                    for v in &mut out.data[r * a.cols..(r + 1) * a.cols] {
                        *v /= z;
                    }
                }
                out
            })
    }
}

/// Concatenate along columns; all parts must share a row count.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Var<'t> {
    let tape = parts.first().expect("concat of nothing").tape;
    let idxs: Vec<usize> = parts.iter().map(|p| p.idx).collect();
    let value = {
        let nodes = tape.nodes.borrow();
        let rows = nodes[idxs[0]].value.rows;
        let total: usize = idxs.iter().map(|&i| nodes[i].value.cols).sum();
        let mut out = Matrix::zeros(rows, total);
        let mut offset = 0;
        for &i in &idxs {
            let v = &nodes[i].value;
            assert_eq!(v.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.data[r * total + offset..r * total + offset + v.cols].copy_from_slice(v.row(r));
            }
            offset += v.cols;
        }
        out
    };
    let needs = idxs.iter().any(|&i| tape.needs(i));
    tape.push(value, Op::ConcatCols(idxs), needs)
}

/// Concatenate along rows; all parts must share a column count.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    let tape = parts.first().expect("concat of nothing").tape;
    let idxs: Vec<usize> = parts.iter().map(|p| p.idx).collect();
    let value = {
        let nodes = tape.nodes.borrow();
        let cols = nodes[idxs[0]].value.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &idxs {
            let v = &nodes[i].value;
            assert_eq!(v.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        Matrix::from_vec(rows, cols, data)
    };
    let needs = idxs.iter().any(|&i| tape.needs(i));
    tape.push(value, Op::ConcatRows(idxs), needs)
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}
