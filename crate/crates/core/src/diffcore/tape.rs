//! Define-by-run reverse-mode tape over [`Tensor`] values.
//!
//! Every operation appends a node holding its output value. `backward`
//! walks the nodes in reverse creation order, which is a valid reverse
//! topological order because inputs always precede their consumers.
//! Shape mismatches inside primitive ops are programming errors and panic;
//! public entry points that see user data validate shapes first.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{self, gemm};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
    tape: u32,
}

impl Var {
    pub fn tape_id(&self) -> u32 {
        self.tape
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Min(usize, usize),
    Atan2(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Affine(usize, usize, usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Sin(usize),
    Cos(usize),
    Square(usize),
    Sqrt(usize),
    Softplus(usize),
    LogOneMinusTanhSq(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    ConcatRows(Vec<usize>),
    Pick(usize, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_shape(a: [usize; 2], b: [usize; 2]) -> [usize; 2] {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast {a:?} with {b:?}")
        }
    };
    [dim(a[0], b[0]), dim(a[1], b[1])]
}

#[inline]
fn bidx(shape: [usize; 2], i: usize, j: usize) -> usize {
    let r = if shape[0] == 1 { 0 } else { i };
    let c = if shape[1] == 1 { 0 } else { j };
    r * shape[1] + c
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.rows(), a.cols(), data).unwrap();
    }
    let out = broadcast_shape(a.shape(), b.shape());
    let mut data = Vec::with_capacity(out[0] * out[1]);
    for i in 0..out[0] {
        for j in 0..out[1] {
            data.push(f(a.data()[bidx(a.shape(), i, j)], b.data()[bidx(b.shape(), i, j)]));
        }
    }
    Tensor::new(out[0], out[1], data).unwrap()
}

/// Sums a gradient of shape `out` down to the broadcast source `target`.
fn reduce_to(g: &[f64], out: [usize; 2], target: [usize; 2]) -> Vec<f64> {
    if out == target {
        return g.to_vec();
    }
    let mut r = vec![0.0; target[0] * target[1]];
    for i in 0..out[0] {
        for j in 0..out[1] {
            r[bidx(target, i, j)] += g[i * out[1] + j];
        }
    }
    r
}

fn accumulate(slot: &mut Option<Vec<f64>>, add: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(add) {
                *a += b;
            }
        }
        None => *slot = Some(add),
    }
}

/// Gradients of a scalar output with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients {
    tape: u32,
    shapes: Vec<[usize; 2]>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`; exactly zero when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable from a different tape");
        let [r, c] = self.shapes[v.id];
        match &self.grads[v.id] {
            Some(g) => Tensor::new(r, c, g.clone()).unwrap(),
            None => Tensor::zeros(r, c),
        }
    }

    pub fn is_reached(&self, v: Var) -> bool {
        self.grads[v.id].is_some()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: RefCell::new(Vec::new()) }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { id: nodes.len() - 1, tape: self.id }
    }

    fn check(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable from a different tape");
        v.id
    }

    /// Constant input: no gradient is propagated into it.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf, e.g. a parameter or an input under test.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> Tensor {
        let id = self.check(v);
        self.nodes.borrow()[id].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        let id = self.check(v);
        f(&self.nodes.borrow()[id].value)
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.with_value(v, |t| t.shape())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        let id = self.check(v);
        self.nodes.borrow()[id].requires_grad
    }

    fn unary(&self, a: Var, op: impl FnOnce(usize) -> Op, f: impl Fn(f64) -> f64) -> Var {
        let ia = self.check(a);
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (nodes[ia].value.map(f), nodes[ia].requires_grad)
        };
        self.push(value, op(ia), rg)
    }

    fn binary(&self, a: Var, b: Var, op: impl FnOnce(usize, usize) -> Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (
                zip_broadcast(&nodes[ia].value, &nodes[ib].value, f),
                nodes[ia].requires_grad || nodes[ib].requires_grad,
            )
        };
        self.push(value, op(ia, ib), rg)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div, |x, y| x / y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Min, |x, y| if x <= y { x } else { y })
    }

    pub fn atan2(&self, y: Var, x: Var) -> Var {
        self.binary(y, x, Op::Atan2, f64::atan2)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Op::Neg, |x| -x)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, |i| Op::Scale(i, c), |x| x * c)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar, |x| x + c)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh, f64::tanh)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp, f64::exp)
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, Op::Log, f64::ln)
    }

    pub fn sin(&self, a: Var) -> Var {
        self.unary(a, Op::Sin, f64::sin)
    }

    pub fn cos(&self, a: Var) -> Var {
        self.unary(a, Op::Cos, f64::cos)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Op::Square, |x| x * x)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, Op::Sqrt, f64::sqrt)
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Op::Softplus, kernels::softplus)
    }

    /// `log(1 - tanh(x)^2)`, the squashing log-determinant.
    pub fn log_one_minus_tanh_sq(&self, a: Var) -> Var {
        self.unary(a, Op::LogOneMinusTanhSq, kernels::log_one_minus_tanh_sq)
    }

    /// Hard clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |i| Op::Clamp(i, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[ia].value, &nodes[ib].value);
            assert_eq!(x.cols(), y.rows(), "matmul {:?} x {:?}", x.shape(), y.shape());
            let mut out = vec![0.0; x.rows() * y.cols()];
            gemm(x.rows(), x.cols(), y.cols(), x.data(), false, y.data(), false, 0.0, &mut out);
            (
                Tensor::new(x.rows(), y.cols(), out).unwrap(),
                nodes[ia].requires_grad || nodes[ib].requires_grad,
            )
        };
        self.push(value, Op::MatMul(ia, ib), rg)
    }

    /// `x * w + bias` with the bias broadcast over rows.
    pub fn affine(&self, x: Var, w: Var, bias: Var) -> Var {
        let (ix, iw, ib) = (self.check(x), self.check(w), self.check(bias));
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (xv, wv, bv) = (&nodes[ix].value, &nodes[iw].value, &nodes[ib].value);
            assert_eq!(xv.cols(), wv.rows(), "affine input {:?} vs weight {:?}", xv.shape(), wv.shape());
            assert_eq!(bv.shape(), [1, wv.cols()], "affine bias shape");
            let out = kernels::affine(xv.data(), xv.rows(), xv.cols(), wv.data(), wv.cols(), bv.data());
            (
                Tensor::new(xv.rows(), wv.cols(), out).unwrap(),
                nodes[ix].requires_grad || nodes[iw].requires_grad || nodes[ib].requires_grad,
            )
        };
        self.push(value, Op::Affine(ix, iw, ib), rg)
    }

    pub fn sum(&self, a: Var) -> Var {
        let ia = self.check(a);
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (Tensor::scalar(nodes[ia].value.sum()), nodes[ia].requires_grad)
        };
        self.push(value, Op::Sum(ia), rg)
    }

    pub fn mean(&self, a: Var) -> Var {
        let ia = self.check(a);
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[ia].value;
            (Tensor::scalar(t.sum() / t.len() as f64), nodes[ia].requires_grad)
        };
        self.push(value, Op::Mean(ia), rg)
    }

    /// Per-row sum: `[r, c] -> [r, 1]`.
    pub fn row_sum(&self, a: Var) -> Var {
        let ia = self.check(a);
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[ia].value;
            let data = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
            (Tensor::new(t.rows(), 1, data).unwrap(), nodes[ia].requires_grad)
        };
        self.push(value, Op::RowSum(ia), rg)
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let ia = self.check(a);
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[ia].value;
            assert!(start + len <= t.cols(), "column slice out of range");
            (t.col_range(start, len), nodes[ia].requires_grad)
        };
        self.push(value, Op::SliceCols(ia, start), rg)
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let ids: Vec<usize> = parts.iter().map(|&v| self.check(v)).collect();
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let ts: Vec<&Tensor> = ids.iter().map(|&i| &nodes[i].value).collect();
            (
                Tensor::hcat(&ts).expect("concat_cols row mismatch"),
                ids.iter().any(|&i| nodes[i].requires_grad),
            )
        };
        self.push(value, Op::ConcatCols(ids), rg)
    }

    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Var {
        let ia = self.check(a);
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (nodes[ia].value.select_rows(idx), nodes[ia].requires_grad)
        };
        self.push(value, Op::GatherRows(ia, idx.to_vec()), rg)
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        let ids: Vec<usize> = parts.iter().map(|&v| self.check(v)).collect();
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let cols = nodes[ids[0]].value.cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for &i in &ids {
                let t = &nodes[i].value;
                assert_eq!(t.cols(), cols, "concat_rows column mismatch");
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            (Tensor::new(rows, cols, data).unwrap(), ids.iter().any(|&i| nodes[i].requires_grad))
        };
        self.push(value, Op::ConcatRows(ids), rg)
    }

    /// Picks column `idx[r]` from every row `r`: `[r, c] -> [r, 1]`.
    pub fn pick(&self, a: Var, idx: &[usize]) -> Var {
        let ia = self.check(a);
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[ia].value;
            assert_eq!(idx.len(), t.rows(), "pick needs one index per row");
            let data = idx.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
            (Tensor::new(t.rows(), 1, data).unwrap(), nodes[ia].requires_grad)
        };
        self.push(value, Op::Pick(ia, idx.to_vec()), rg)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.check(output);
        let nodes = self.nodes.borrow();
        if nodes[out].value.shape() != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got {:?}",
                nodes[out].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        grads[out] = Some(vec![1.0]);
        for id in (0..=out).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                self.propagate(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(nodes.len(), None);
        Ok(Gradients { tape: self.id, shapes, grads })
    }

    fn propagate(&self, nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &nodes[id];
        let out_shape = node.value.shape();
        let val = |i: usize| &nodes[i].value;
        let wants = |i: usize| nodes[i].requires_grad;
        let elementwise = |_: usize, d: &dyn Fn(usize) -> f64| -> Vec<f64> {
            (0..g.len()).map(|k| g[k] * d(k)).collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[*a], reduce_to(g, out_shape, val(*a).shape()));
                }
                if wants(*b) {
                    accumulate(&mut grads[*b], reduce_to(g, out_shape, val(*b).shape()));
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[*a], reduce_to(g, out_shape, val(*a).shape()));
                }
                if wants(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(&mut grads[*b], reduce_to(&neg, out_shape, val(*b).shape()));
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) | Op::Min(a, b) | Op::Atan2(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (sa, sb) = (av.shape(), bv.shape());
                let mut ga = vec![0.0; g.len()];
                let mut gb = vec![0.0; g.len()];
                for i in 0..out_shape[0] {
                    for j in 0..out_shape[1] {
                        let k = i * out_shape[1] + j;
                        let x = av.data()[bidx(sa, i, j)];
                        let y = bv.data()[bidx(sb, i, j)];
                        let (dx, dy) = match &node.op {
                            Op::Mul(..) => (y, x),
                            Op::Div(..) => (1.0 / y, -x / (y * y)),
                            Op::Min(..) => {
                                if x <= y {
                                    (1.0, 0.0)
                                } else {
                                    (0.0, 1.0)
                                }
                            }
                            // atan2(x = y-coordinate, y = x-coordinate)
                            _ => {
                                let r2 = x * x + y * y;
                                (y / r2, -x / r2)
                            }
                        };
                        ga[k] = g[k] * dx;
                        gb[k] = g[k] * dy;
                    }
                }
                if wants(*a) {
                    accumulate(&mut grads[*a], reduce_to(&ga, out_shape, sa));
                }
                if wants(*b) {
                    accumulate(&mut grads[*b], reduce_to(&gb, out_shape, sb));
                }
            }
            Op::Neg(a) => accumulate(&mut grads[*a], g.iter().map(|x| -x).collect()),
            Op::Scale(a, c) => accumulate(&mut grads[*a], g.iter().map(|x| x * c).collect()),
            Op::AddScalar(a) => accumulate(&mut grads[*a], g.to_vec()),
            Op::Relu(a) => {
                let x = val(*a).data();
                accumulate(&mut grads[*a], elementwise(*a, &|k| if x[k] > 0.0 { 1.0 } else { 0.0 }));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                accumulate(&mut grads[*a], elementwise(*a, &|k| 1.0 - y[k] * y[k]));
            }
            Op::Exp(a) => {
                let y = node.value.data();
                accumulate(&mut grads[*a], elementwise(*a, &|k| y[k]));
            }
            Op::Log(a) => {
                let x = val(*a).data();
                accumulate(&mut grads[*a], elementwise(*a, &|k| 1.0 / x[k]));
            }
            Op::Sin(a) => {
                let x = val(*a).data();
                accumulate(&mut grads[*a], elementwise(*a, &|k| x[k].cos()));
            }
            Op::Cos(a) => {
                let x = val(*a).data();
                accumulate(&mut grads[*a], elementwise(*a, &|k| -x[k].sin()));
            }
            Op::Square(a) => {
                let x = val(*a).data();
                accumulate(&mut grads[*a], elementwise(*a, &|k| 2.0 * x[k]));
            }
            Op::Sqrt(a) => {
                let y = node.value.data();
                accumulate(&mut grads[*a], elementwise(*a, &|k| 0.5 / y[k]));
            }
            Op::Softplus(a) => {
                let x = val(*a).data();
                accumulate(&mut grads[*a], elementwise(*a, &|k| kernels::sigmoid(x[k])));
            }
            Op::LogOneMinusTanhSq(a) => {
                let x = val(*a).data();
                accumulate(&mut grads[*a], elementwise(*a, &|k| -2.0 * x[k].tanh()));
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a).data();
                accumulate(
                    &mut grads[*a],
                    elementwise(*a, &|k| if x[k] >= *lo && x[k] <= *hi { 1.0 } else { 0.0 }),
                );
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, bv.data(), true, 0.0, &mut ga);
                    accumulate(&mut grads[*a], ga);
                }
                if wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g, false, 0.0, &mut gb);
                    accumulate(&mut grads[*b], gb);
                }
            }
            Op::Affine(x, w, b) => {
                let (xv, wv) = (val(*x), val(*w));
                let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
                if wants(*x) {
                    let mut gx = vec![0.0; m * k];
                    gemm(m, n, k, g, false, wv.data(), true, 0.0, &mut gx);
                    accumulate(&mut grads[*x], gx);
                }
                if wants(*w) {
                    let mut gw = vec![0.0; k * n];
                    gemm(k, m, n, xv.data(), true, g, false, 0.0, &mut gw);
                    accumulate(&mut grads[*w], gw);
                }
                if wants(*b) {
                    let mut gb = vec![0.0; n];
                    for r in 0..m {
                        for (c, acc) in gb.iter_mut().enumerate() {
                            *acc += g[r * n + c];
                        }
                    }
                    accumulate(&mut grads[*b], gb);
                }
            }
            Op::Sum(a) => accumulate(&mut grads[*a], vec![g[0]; val(*a).len()]),
            Op::Mean(a) => {
                let n = val(*a).len();
                accumulate(&mut grads[*a], vec![g[0] / n as f64; n]);
            }
            Op::RowSum(a) => {
                let [r, c] = val(*a).shape();
                let mut ga = Vec::with_capacity(r * c);
                for gi in g.iter().take(r) {
                    ga.extend(std::iter::repeat_n(*gi, c));
                }
                accumulate(&mut grads[*a], ga);
            }
            Op::SliceCols(a, start) => {
                let [r, c] = val(*a).shape();
                let len = out_shape[1];
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    ga[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                accumulate(&mut grads[*a], ga);
            }
            Op::ConcatCols(ids) => {
                let total = out_shape[1];
                let mut offset = 0;
                for &p in ids {
                    let c = val(p).cols();
                    if wants(p) {
                        let mut gp = Vec::with_capacity(out_shape[0] * c);
                        for i in 0..out_shape[0] {
                            gp.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                        }
                        accumulate(&mut grads[p], gp);
                    }
                    offset += c;
                }
            }
            Op::GatherRows(a, idx) => {
                let [r, c] = val(*a).shape();
                let mut ga = vec![0.0; r * c];
                for (k, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        ga[src * c + j] += g[k * c + j];
                    }
                }
                accumulate(&mut grads[*a], ga);
            }
            Op::ConcatRows(ids) => {
                let mut offset = 0;
                for &p in ids {
                    let n = val(p).len();
                    if wants(p) {
                        accumulate(&mut grads[p], g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Pick(a, idx) => {
                let [r, c] = val(*a).shape();
                let mut ga = vec![0.0; r * c];
                for (i, &j) in idx.iter().enumerate() {
                    ga[i * c + j] += g[i];
                }
                accumulate(&mut grads[*a], ga);
            }
        }
    }
}
