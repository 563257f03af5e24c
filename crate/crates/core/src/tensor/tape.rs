//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. The graph is
//! rebuilt for each evaluation, which suits objectives whose structure depends
//! on random draws. Nodes that do not depend on any tracked leaf are stored as
//! plain constants and never visited during the backward sweep.

use super::linalg::{cholesky, solve_lower, solve_upper_t};
use super::Tensor;
use crate::error::{Error, Result};
use std::cell::{Ref, RefCell};
use std::ops;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Square(usize),
    Softplus(usize),
    Sigmoid(usize),
    Relu(usize),
    ClampMin(usize, f64),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Transpose(usize),
    Sum(usize),
    SumRows(usize),
    SumCols(usize),
    Cholesky(usize),
    SolveLower(usize, usize),
    SolveUpperT(usize, usize),
    Diag(usize),
    TrilExpDiag(usize),
    SqDist(usize, usize),
    HCat(Vec<usize>),
    VCat(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    TileRows(usize, usize),
    Reshape(usize),
    LogSumExpRows(usize),
    SoftmaxRows(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Recording of a computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.tape.nodes.borrow()[self.id].value)
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

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let op = if tracked { op } else { Op::Leaf };
        nodes.push(Node { value, op, tracked });
        Var { tape: self, id }
    }

    /// Tracked leaf: gradients can be requested for it.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn is_tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    fn unary(&self, a: usize, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'_> {
        let (value, tracked) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[a].value), nodes[a].tracked)
        };
        self.push(value, op, tracked)
    }

    fn binary(&self, a: usize, b: usize, op: Op, f: impl FnOnce(&Tensor, &Tensor) -> Tensor) -> Var<'_> {
        let (value, tracked) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[a].value, &nodes[b].value), nodes[a].tracked || nodes[b].tracked)
        };
        self.push(value, op, tracked)
    }

    /// Concatenate along columns.
    pub fn hcat<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        let (value, tracked) = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&Tensor> = ids.iter().map(|&i| &nodes[i].value).collect();
            (Tensor::hcat(&refs), ids.iter().any(|&i| nodes[i].tracked))
        };
        self.push(value, Op::HCat(ids), tracked)
    }

    /// Concatenate along rows.
    pub fn vcat<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        let (value, tracked) = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&Tensor> = ids.iter().map(|&i| &nodes[i].value).collect();
            (Tensor::vcat(&refs), ids.iter().any(|&i| nodes[i].tracked))
        };
        self.push(value, Op::VCat(ids), tracked)
    }

    /// Gradients of a scalar `output` with respect to each of `inputs`.
    ///
    /// Fails with [`Error::UntrackedInput`] when an input is not a tracked
    /// ancestor of `output`.
    pub fn grad(&self, output: Var<'_>, inputs: &[Var<'_>]) -> Result<Vec<Tensor>> {
        let nodes = self.nodes.borrow();
        if nodes[output.id].value.len() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "grad needs a scalar output, got shape {:?}",
                nodes[output.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.id + 1];
        if nodes[output.id].tracked {
            grads[output.id] = Some(Tensor::scalar(1.0));
        }
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            backward(&nodes, id, &node.op, &g, &mut grads);
            grads[id] = Some(g);
        }
        inputs
            .iter()
            .map(|v| {
                if v.id > output.id || !nodes[v.id].tracked {
                    return Err(Error::UntrackedInput(v.id));
                }
                grads[v.id].clone().ok_or(Error::UntrackedInput(v.id))
            })
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].tracked {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Sum `g` down to `rows x cols` (undoing broadcasting).
fn reduce_to(g: Tensor, rows: usize, cols: usize) -> Tensor {
    if g.rows() == rows && g.cols() == cols {
        return g;
    }
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..g.rows() {
        let orow = if rows == 1 { 0 } else { r };
        for c in 0..g.cols() {
            let ocol = if cols == 1 { 0 } else { c };
            let v = out.get(orow, ocol) + g.get(r, c);
            out.set(orow, ocol, v);
        }
    }
    out
}

fn broadcast_shape(a: &Tensor, b: &Tensor) -> (usize, usize) {
    let dim = |x: usize, y: usize, what: &str| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast {what}: {:?} vs {:?}", a.shape(), b.shape())
        }
    };
    (dim(a.rows(), b.rows(), "rows"), dim(a.cols(), b.cols(), "cols"))
}

/// Elementwise `f(a, b)` with broadcasting of unit dimensions.
fn broadcast_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let (rows, cols) = broadcast_shape(a, b);
    let mut data = Vec::with_capacity(rows * cols);
    let (ar, ac) = (a.rows() == 1, a.cols() == 1);
    let (br, bc) = (b.rows() == 1, b.cols() == 1);
    for r in 0..rows {
        let ra = if ar { 0 } else { r };
        let rb = if br { 0 } else { r };
        for c in 0..cols {
            let x = a.get(ra, if ac { 0 } else { c });
            let y = b.get(rb, if bc { 0 } else { c });
            data.push(f(x, y));
        }
    }
    Tensor::from_vec(rows, cols, data)
}

/// Elementwise `f(g, a, b)` over the broadcast shape of `g`.
fn broadcast_map3(g: &Tensor, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    let (rows, cols) = (g.rows(), g.cols());
    if a.shape() == g.shape() && b.shape() == g.shape() {
        let data = g
            .as_slice()
            .iter()
            .zip(a.as_slice())
            .zip(b.as_slice())
            .map(|((&g, &x), &y)| f(g, x, y))
            .collect();
        return Tensor::from_vec(rows, cols, data);
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ra = if a.rows() == 1 { 0 } else { r };
        let rb = if b.rows() == 1 { 0 } else { r };
        for c in 0..cols {
            let x = a.get(ra, if a.cols() == 1 { 0 } else { c });
            let y = b.get(rb, if b.cols() == 1 { 0 } else { c });
            data.push(f(g.get(r, c), x, y));
        }
    }
    Tensor::from_vec(rows, cols, data)
}

fn tril(mut t: Tensor) -> Tensor {
    let n = t.cols();
    for r in 0..t.rows() {
        for c in r + 1..n {
            t.set(r, c, 0.0);
        }
    }
    t
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sq_dist(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.cols(), "sq_dist column mismatch");
    let d = a.cols();
    let mut out = Tensor::zeros(a.rows(), b.rows());
    let od = out.as_mut_slice();
    for i in 0..a.rows() {
        let ai = a.row_slice(i);
        for j in 0..b.rows() {
            let bj = b.row_slice(j);
            let mut s = 0.0;
            for k in 0..d {
                let t = ai[k] - bj[k];
                s += t * t;
            }
            od[i * b.rows() + j] = s;
        }
    }
    out
}

fn logsumexp_rows(a: &Tensor) -> Tensor {
    let mut out = Vec::with_capacity(a.rows());
    for r in 0..a.rows() {
        let row = a.row_slice(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            out.push(m);
            continue;
        }
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        out.push(m + s.ln());
    }
    Tensor::column(out)
}

fn softmax_rows(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        let row = a.row_slice(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (c, v) in row.iter().enumerate() {
            let e = (v - m).exp();
            out.set(r, c, e);
            s += e;
        }
        for c in 0..a.cols() {
            out.set(r, c, out.get(r, c) / s);
        }
    }
    out
}

fn backward(nodes: &[Node], id: usize, op: &Op, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |i: usize| &nodes[i].value;
    let out = &nodes[id].value;
    match *op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if nodes[a].tracked {
                let ga = reduce_to(g.clone(), val(a).rows(), val(a).cols());
                accumulate(grads, nodes, a, ga);
            }
            if nodes[b].tracked {
                let gb = reduce_to(g.clone(), val(b).rows(), val(b).cols());
                accumulate(grads, nodes, b, gb);
            }
        }
        Op::Sub(a, b) => {
            if nodes[a].tracked {
                let ga = reduce_to(g.clone(), val(a).rows(), val(a).cols());
                accumulate(grads, nodes, a, ga);
            }
            if nodes[b].tracked {
                let gb = reduce_to(g.scale(-1.0), val(b).rows(), val(b).cols());
                accumulate(grads, nodes, b, gb);
            }
        }
        Op::Mul(a, b) => {
            let (x, y) = (val(a), val(b));
            if nodes[a].tracked {
                let ga = broadcast_map3(g, x, y, |g, _, y| g * y);
                accumulate(grads, nodes, a, reduce_to(ga, x.rows(), x.cols()));
            }
            if nodes[b].tracked {
                let gb = broadcast_map3(g, x, y, |g, x, _| g * x);
                accumulate(grads, nodes, b, reduce_to(gb, y.rows(), y.cols()));
            }
        }
        Op::Div(a, b) => {
            let (x, y) = (val(a), val(b));
            if nodes[a].tracked {
                let ga = broadcast_map3(g, x, y, |g, _, y| g / y);
                accumulate(grads, nodes, a, reduce_to(ga, x.rows(), x.cols()));
            }
            if nodes[b].tracked {
                let gb = broadcast_map3(g, x, y, |g, x, y| -g * x / (y * y));
                accumulate(grads, nodes, b, reduce_to(gb, y.rows(), y.cols()));
            }
        }
        Op::Neg(a) => accumulate(grads, nodes, a, g.scale(-1.0)),
        Op::Scale(a, s) => accumulate(grads, nodes, a, g.scale(s)),
        Op::Offset(a) => accumulate(grads, nodes, a, g.clone()),
        Op::Exp(a) => accumulate(grads, nodes, a, g.zip_map(out, |g, o| g * o)),
        Op::Ln(a) => accumulate(grads, nodes, a, g.zip_map(val(a), |g, x| g / x)),
        Op::Sqrt(a) => accumulate(grads, nodes, a, g.zip_map(out, |g, o| 0.5 * g / o)),
        Op::Square(a) => accumulate(grads, nodes, a, g.zip_map(val(a), |g, x| 2.0 * g * x)),
        Op::Softplus(a) => accumulate(grads, nodes, a, g.zip_map(val(a), |g, x| g * sigmoid(x))),
        Op::Sigmoid(a) => accumulate(grads, nodes, a, g.zip_map(out, |g, o| g * o * (1.0 - o))),
        Op::Relu(a) => {
            accumulate(grads, nodes, a, g.zip_map(val(a), |g, x| if x > 0.0 { g } else { 0.0 }))
        }
        Op::ClampMin(a, lo) => {
            accumulate(grads, nodes, a, g.zip_map(val(a), |g, x| if x > lo { g } else { 0.0 }))
        }
        Op::MatMul { a, b, ta, tb } => {
            if nodes[a].tracked {
                let ga = if ta {
                    Tensor::matmul_t(val(b), tb, g, true)
                } else {
                    Tensor::matmul_t(g, false, val(b), !tb)
                };
                accumulate(grads, nodes, a, ga);
            }
            if nodes[b].tracked {
                let gb = if tb {
                    Tensor::matmul_t(g, true, val(a), ta)
                } else {
                    Tensor::matmul_t(val(a), !ta, g, false)
                };
                accumulate(grads, nodes, b, gb);
            }
        }
        Op::Transpose(a) => accumulate(grads, nodes, a, g.transpose()),
        Op::Sum(a) => {
            let x = val(a);
            accumulate(grads, nodes, a, Tensor::full(x.rows(), x.cols(), g.item()));
        }
        Op::SumRows(a) => {
            let x = val(a);
            let ga = Tensor::from_fn(x.rows(), x.cols(), |_, c| g.get(0, c));
            accumulate(grads, nodes, a, ga);
        }
        Op::SumCols(a) => {
            let x = val(a);
            let ga = Tensor::from_fn(x.rows(), x.cols(), |r, _| g.get(r, 0));
            accumulate(grads, nodes, a, ga);
        }
        Op::Cholesky(a) => {
            // Symmetric adjoint: S = L⁻ᵀ Φ(Lᵀ Ḡ) L⁻¹, Ā = (S + Sᵀ)/2.
            let l = out;
            let gl = tril(g.clone());
            let mut p = Tensor::matmul_t(l, true, &gl, false);
            let n = p.rows();
            for r in 0..n {
                for c in r + 1..n {
                    p.set(r, c, 0.0);
                }
                p.set(r, r, 0.5 * p.get(r, r));
            }
            let x = solve_upper_t(l, &p);
            let s = solve_upper_t(l, &x.transpose()).transpose();
            let sym = Tensor::from_fn(n, n, |r, c| 0.5 * (s.get(r, c) + s.get(c, r)));
            accumulate(grads, nodes, a, sym);
        }
        Op::SolveLower(l, b) => {
            let lv = val(l);
            let gb = solve_upper_t(lv, g);
            if nodes[l].tracked {
                let gl = tril(Tensor::matmul_t(&gb, false, out, true).scale(-1.0));
                accumulate(grads, nodes, l, gl);
            }
            accumulate(grads, nodes, b, gb);
        }
        Op::SolveUpperT(l, b) => {
            let lv = val(l);
            let gb = solve_lower(lv, g);
            if nodes[l].tracked {
                let gl = tril(Tensor::matmul_t(out, false, &gb, true).scale(-1.0));
                accumulate(grads, nodes, l, gl);
            }
            accumulate(grads, nodes, b, gb);
        }
        Op::Diag(a) => {
            let n = val(a).rows();
            let mut ga = Tensor::zeros(n, n);
            for i in 0..n {
                ga.set(i, i, g.get(i, 0));
            }
            accumulate(grads, nodes, a, ga);
        }
        Op::TrilExpDiag(a) => {
            let n = out.rows();
            let ga = Tensor::from_fn(n, n, |r, c| match r.cmp(&c) {
                std::cmp::Ordering::Greater => g.get(r, c),
                std::cmp::Ordering::Equal => g.get(r, c) * out.get(r, c),
                std::cmp::Ordering::Less => 0.0,
            });
            accumulate(grads, nodes, a, ga);
        }
        Op::SqDist(a, b) => {
            let (x, y) = (val(a), val(b));
            if nodes[a].tracked {
                // 2 (rowsum(G) ⊙ A - G B)
                let gy = Tensor::matmul_t(g, false, y, false);
                let ga = Tensor::from_fn(x.rows(), x.cols(), |r, c| {
                    let rs: f64 = g.row_slice(r).iter().sum();
                    2.0 * (rs * x.get(r, c) - gy.get(r, c))
                });
                accumulate(grads, nodes, a, ga);
            }
            if nodes[b].tracked {
                let gx = Tensor::matmul_t(g, true, x, false);
                let mut cs = vec![0.0; y.rows()];
                for r in 0..g.rows() {
                    for (c, v) in g.row_slice(r).iter().enumerate() {
                        cs[c] += v;
                    }
                }
                let gb = Tensor::from_fn(y.rows(), y.cols(), |r, c| 2.0 * (cs[r] * y.get(r, c) - gx.get(r, c)));
                accumulate(grads, nodes, b, gb);
            }
        }
        Op::HCat(ref ids) => {
            let mut offset = 0;
            for &i in ids {
                let w = val(i).cols();
                if nodes[i].tracked {
                    let gi = Tensor::from_fn(g.rows(), w, |r, c| g.get(r, offset + c));
                    accumulate(grads, nodes, i, gi);
                }
                offset += w;
            }
        }
        Op::VCat(ref ids) => {
            let mut offset = 0;
            for &i in ids {
                let h = val(i).rows();
                if nodes[i].tracked {
                    let cols = g.cols();
                    let gi = Tensor::from_vec(h, cols, g.as_slice()[offset * cols..(offset + h) * cols].to_vec());
                    accumulate(grads, nodes, i, gi);
                }
                offset += h;
            }
        }
        Op::SliceCols(a, start) => {
            let x = val(a);
            let w = out.cols();
            let ga = Tensor::from_fn(x.rows(), x.cols(), |r, c| {
                if c >= start && c < start + w {
                    g.get(r, c - start)
                } else {
                    0.0
                }
            });
            accumulate(grads, nodes, a, ga);
        }
        Op::SliceRows(a, start) => {
            let x = val(a);
            let mut ga = Tensor::zeros(x.rows(), x.cols());
            let cols = x.cols();
            ga.as_mut_slice()[start * cols..start * cols + g.len()].copy_from_slice(g.as_slice());
            accumulate(grads, nodes, a, ga);
        }
        Op::TileRows(a, times) => {
            let x = val(a);
            let block = x.len();
            let mut ga = Tensor::zeros(x.rows(), x.cols());
            {
                let gd = ga.as_mut_slice();
                for t in 0..times {
                    for (dst, src) in gd.iter_mut().zip(&g.as_slice()[t * block..(t + 1) * block]) {
                        *dst += src;
                    }
                }
            }
            accumulate(grads, nodes, a, ga);
        }
        Op::Reshape(a) => {
            let x = val(a);
            accumulate(grads, nodes, a, g.clone().reshape(x.rows(), x.cols()));
        }
        Op::LogSumExpRows(a) => {
            let x = val(a);
            let ga = Tensor::from_fn(x.rows(), x.cols(), |r, c| {
                let lse = out.get(r, 0);
                if lse == f64::NEG_INFINITY {
                    0.0
                } else {
                    g.get(r, 0) * (x.get(r, c) - lse).exp()
                }
            });
            accumulate(grads, nodes, a, ga);
        }
        Op::SoftmaxRows(a) => {
            let mut ga = Tensor::zeros(out.rows(), out.cols());
            for r in 0..out.rows() {
                let dot: f64 = g.row_slice(r).iter().zip(out.row_slice(r)).map(|(a, b)| a * b).sum();
                for c in 0..out.cols() {
                    ga.set(r, c, out.get(r, c) * (g.get(r, c) - dot));
                }
            }
            accumulate(grads, nodes, a, ga);
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

    /// Borrow the recorded value.
    pub fn value_ref(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn value(&self) -> Tensor {
        self.value_ref().clone()
    }

    pub fn item(&self) -> f64 {
        self.value_ref().item()
    }

    pub fn shape(&self) -> [usize; 2] {
        self.value_ref().shape()
    }

    pub fn rows(&self) -> usize {
        self.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.shape()[1]
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.is_tracked(self.id)
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        self.tape.binary(self.id, other.id, Op::Add(self.id, other.id), |a, b| broadcast_map(a, b, |x, y| x + y))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        self.tape.binary(self.id, other.id, Op::Sub(self.id, other.id), |a, b| broadcast_map(a, b, |x, y| x - y))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        self.tape.binary(self.id, other.id, Op::Mul(self.id, other.id), |a, b| broadcast_map(a, b, |x, y| x * y))
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        self.tape.binary(self.id, other.id, Op::Div(self.id, other.id), |a, b| broadcast_map(a, b, |x, y| x / y))
    }

    pub fn neg(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Neg(self.id), |a| a.scale(-1.0))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::Scale(self.id, s), |a| a.scale(s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::Offset(self.id), |a| a.map(|v| v + s))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Exp(self.id), |a| a.map(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Ln(self.id), |a| a.map(f64::ln))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Sqrt(self.id), |a| a.map(f64::sqrt))
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Square(self.id), |a| a.map(|v| v * v))
    }

    pub fn softplus(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Softplus(self.id), |a| a.map(softplus))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Sigmoid(self.id), |a| a.map(sigmoid))
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Relu(self.id), |a| a.map(|v| v.max(0.0)))
    }

    pub fn clamp_min(self, lo: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::ClampMin(self.id, lo), |a| a.map(|v| v.max(lo)))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.matmul_t(false, other, false)
    }

    /// `op(self) · op(other)` with optional transposes.
    pub fn matmul_t(self, ta: bool, other: Var<'t>, tb: bool) -> Var<'t> {
        self.same_tape(&other);
        let op = Op::MatMul { a: self.id, b: other.id, ta, tb };
        self.tape.binary(self.id, other.id, op, |a, b| Tensor::matmul_t(a, ta, b, tb))
    }

    pub fn t(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Transpose(self.id), Tensor::transpose)
    }

    /// Sum of all entries (`1 x 1`).
    pub fn sum(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Sum(self.id), |a| Tensor::scalar(a.sum()))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value_ref().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Column sums as a `1 x c` row.
    pub fn sum_rows(self) -> Var<'t> {
        self.tape.unary(self.id, Op::SumRows(self.id), |a| {
            let mut out = vec![0.0; a.cols()];
            for r in 0..a.rows() {
                for (o, v) in out.iter_mut().zip(a.row_slice(r)) {
                    *o += v;
                }
            }
            Tensor::row(out)
        })
    }

    /// Row sums as an `r x 1` column.
    pub fn sum_cols(self) -> Var<'t> {
        self.tape.unary(self.id, Op::SumCols(self.id), |a| {
            Tensor::column((0..a.rows()).map(|r| a.row_slice(r).iter().sum()).collect())
        })
    }

    /// Lower Cholesky factor of `self + jitter·I` (jitter escalated on failure).
    pub fn cholesky(self, jitter: f64) -> Result<Var<'t>> {
        let (value, tracked) = {
            let nodes = self.tape.nodes.borrow();
            let f = cholesky(&nodes[self.id].value, jitter)?;
            (f.into_l(), nodes[self.id].tracked)
        };
        Ok(self.tape.push(value, Op::Cholesky(self.id), tracked))
    }

    /// `L⁻¹ b` with `self` lower-triangular.
    pub fn solve_lower(self, b: Var<'t>) -> Var<'t> {
        self.same_tape(&b);
        self.tape.binary(self.id, b.id, Op::SolveLower(self.id, b.id), solve_lower)
    }

    /// `L⁻ᵀ b` with `self` lower-triangular.
    pub fn solve_upper_t(self, b: Var<'t>) -> Var<'t> {
        self.same_tape(&b);
        self.tape.binary(self.id, b.id, Op::SolveUpperT(self.id, b.id), solve_upper_t)
    }

    /// Diagonal of a square matrix as a column.
    pub fn diag(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Diag(self.id), |a| Tensor::column(a.diag()))
    }

    /// Lower triangle of `self` with the diagonal exponentiated.
    pub fn tril_exp_diag(self) -> Var<'t> {
        self.tape.unary(self.id, Op::TrilExpDiag(self.id), |a| {
            Tensor::from_fn(a.rows(), a.cols(), |r, c| match r.cmp(&c) {
                std::cmp::Ordering::Greater => a.get(r, c),
                std::cmp::Ordering::Equal => a.get(r, c).exp(),
                std::cmp::Ordering::Less => 0.0,
            })
        })
    }

    /// Pairwise squared Euclidean distances between rows.
    pub fn sq_dist(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        self.tape.binary(self.id, other.id, Op::SqDist(self.id, other.id), sq_dist)
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        self.tape.unary(self.id, Op::SliceCols(self.id, start), |a| {
            assert!(end <= a.cols() && start <= end, "slice_cols out of range");
            Tensor::from_fn(a.rows(), end - start, |r, c| a.get(r, start + c))
        })
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Var<'t> {
        self.tape.unary(self.id, Op::SliceRows(self.id, start), |a| {
            assert!(end <= a.rows() && start <= end, "slice_rows out of range");
            Tensor::from_vec(end - start, a.cols(), a.as_slice()[start * a.cols()..end * a.cols()].to_vec())
        })
    }

    /// Stack `times` copies of `self` vertically.
    pub fn tile_rows(self, times: usize) -> Var<'t> {
        self.tape.unary(self.id, Op::TileRows(self.id, times), |a| {
            let mut data = Vec::with_capacity(a.len() * times);
            for _ in 0..times {
                data.extend_from_slice(a.as_slice());
            }
            Tensor::from_vec(a.rows() * times, a.cols(), data)
        })
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        self.tape.unary(self.id, Op::Reshape(self.id), |a| a.clone().reshape(rows, cols))
    }

    /// Stable `ln Σ_c exp(a_rc)` for each row, as a column.
    pub fn logsumexp_rows(self) -> Var<'t> {
        self.tape.unary(self.id, Op::LogSumExpRows(self.id), logsumexp_rows)
    }

    pub fn softmax_rows(self) -> Var<'t> {
        self.tape.unary(self.id, Op::SoftmaxRows(self.id), softmax_rows)
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        Var::div(self, rhs)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}

impl<'t> ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.scale(rhs)
    }
}

impl<'t> ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.add_scalar(rhs)
    }
}

impl<'t> ops::Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.add_scalar(-rhs)
    }
}
