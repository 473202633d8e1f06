//! Reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records every operation of one forward evaluation in order, so
//! the node list is topologically sorted by construction. [`Tape::grad`] walks
//! it backwards once from a scalar root and accumulates adjoints into the
//! parameters registered with [`Tape::param`].

use super::params::{Gradients, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Floor applied to log arguments.
pub const LOG_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    /// `x · wᵀ + b` with `x: n×in`, `w: out×in`, `b: 1×out`.
    Affine(Var, Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Tensor),
    MaxConst(Var, f64),
    MinConst(Var, f64),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SumAll(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Affine(..) => "affine",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Log(_) => "log",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddConst(_) => "add_const",
            Op::MulConst(..) => "mul_const",
            Op::MaxConst(..) => "max_const",
            Op::MinConst(..) => "min_const",
            Op::ConcatCols(_) => "concat_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::SegmentSum(..) => "segment_sum",
            Op::SumAll(_) => "sum_all",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    shape_error: Option<String>,
    non_finite: Option<(usize, &'static str)>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// First recorded failure: a shape mismatch or a non-finite node value.
    pub fn check(&self) -> Result<()> {
        if let Some(msg) = &self.shape_error {
            return Err(Error::Dimension(msg.clone()));
        }
        if let Some((idx, name)) = self.non_finite {
            return Err(Error::NonFinite(format!("tape node {idx} ({name})")));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let idx = self.nodes.len();
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some((idx, op.name()));
        }
        self.nodes.push(Node { value, op });
        Var(idx)
    }

    fn shape_fail(&mut self, msg: String) -> Var {
        if self.shape_error.is_none() {
            self.shape_error = Some(msg);
        }
        self.push(Tensor::zeros(0, 0), Op::Constant)
    }

    fn same_shape(&mut self, a: Var, b: Var, what: &str) -> bool {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            self.shape_fail(format!("{what}: {sa:?} vs {sb:?}"));
            return false;
        }
        true
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn param(&mut self, params: &ParamSet, index: usize) -> Var {
        self.push(params.tensor(index).clone(), Op::Param(index))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, inp) = self.value(x).shape();
        let (out, win) = self.value(w).shape();
        let bshape = self.value(b).shape();
        if inp != win || bshape != (1, out) {
            return self.shape_fail(format!("affine: x {:?}, w {:?}, b {:?}", (n, inp), (out, win), bshape));
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut y = Tensor::zeros(n, out);
        for r in 0..n {
            let xr = xv.row(r);
            let yr = &mut y.data[r * out..(r + 1) * out];
            for (o, yo) in yr.iter_mut().enumerate() {
                let wr = wv.row(o);
                let mut acc = bv.data[o];
                for k in 0..inp {
                    acc += xr[k] * wr[k];
                }
                *yo = acc;
            }
        }
        self.push(y, Op::Affine(x, w, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(a);
        let y = Tensor {
            rows: src.rows,
            cols: src.cols,
            data: src.data.iter().map(|&v| f(v)).collect(),
        };
        self.push(y, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// Natural log with the argument floored at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(LOG_FLOOR).ln(), Op::Log(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |v| v * c, Op::Scale(a, c))
    }

    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |v| v.max(c), Op::MaxConst(a, c))
    }

    pub fn min_const(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |v| v.min(c), Op::MinConst(a, c))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        if !self.same_shape(a, b, op.name()) {
            return Var(self.nodes.len() - 1);
        }
        let (av, bv) = (self.value(a), self.value(b));
        let y = Tensor {
            rows: av.rows,
            cols: av.cols,
            data: av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect(),
        };
        self.push(y, op)
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

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Var {
        if self.value(a).shape() != c.shape() {
            return self.shape_fail(format!("add_const: {:?} vs {:?}", self.value(a).shape(), c.shape()));
        }
        let av = self.value(a);
        let y = Tensor {
            rows: av.rows,
            cols: av.cols,
            data: av.data.iter().zip(&c.data).map(|(x, y)| x + y).collect(),
        };
        self.push(y, Op::AddConst(a))
    }

    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        if self.value(a).shape() != c.shape() {
            return self.shape_fail(format!("mul_const: {:?} vs {:?}", self.value(a).shape(), c.shape()));
        }
        let av = self.value(a);
        let y = Tensor {
            rows: av.rows,
            cols: av.cols,
            data: av.data.iter().zip(&c.data).map(|(x, y)| x * y).collect(),
        };
        self.push(y, Op::MulConst(a, c))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows,
            None => return self.shape_fail("concat_cols: no inputs".into()),
        };
        if parts.iter().any(|&p| self.value(p).rows != rows) {
            return self.shape_fail("concat_cols: row counts differ".into());
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut y = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                y.data[r * cols + off..r * cols + off + pv.cols].copy_from_slice(pv.row(r));
                off += pv.cols;
            }
        }
        self.push(y, Op::ConcatCols(parts.to_vec()))
    }

    /// Row `r` of the output is row `index[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Var {
        let (n, cols) = self.value(a).shape();
        if index.iter().any(|&k| k >= n) {
            return self.shape_fail(format!("gather_rows: index out of range for {n} rows"));
        }
        let av = self.value(a);
        let mut y = Tensor::zeros(index.len(), cols);
        for (r, &k) in index.iter().enumerate() {
            y.data[r * cols..(r + 1) * cols].copy_from_slice(av.row(k));
        }
        self.push(y, Op::GatherRows(a, index))
    }

    /// Output row `s` is the sum of input rows `r` with `segment[r] == s`.
    pub fn segment_sum(&mut self, a: Var, segment: Vec<usize>, segments: usize) -> Var {
        let (n, cols) = self.value(a).shape();
        if segment.len() != n || segment.iter().any(|&s| s >= segments) {
            return self.shape_fail("segment_sum: bad segment map".into());
        }
        let av = self.value(a);
        let mut y = Tensor::zeros(segments, cols);
        for (r, &s) in segment.iter().enumerate() {
            let src = av.row(r);
            for (dst, v) in y.data[s * cols..(s + 1) * cols].iter_mut().zip(src) {
                *dst += v;
            }
        }
        self.push(y, Op::SegmentSum(a, segment))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Reverse sweep from a `1×1` root; returns d(root)/d(param) for every
    /// parameter in `params`, zero for those not on the tape.
    pub fn grad(&self, root: Var, params: &ParamSet) -> Result<Gradients> {
        self.check()?;
        if self.value(root).shape() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "gradient root must be scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::scalar(1.0));
        let mut grads = Gradients::zeros_like(params);

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => {
                    for (dst, v) in grads.tensors[*p].data.iter_mut().zip(&g.data) {
                        *dst += v;
                    }
                }
                Op::Affine(x, w, b) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, inp) = xv.shape();
                    let out = wv.rows;
                    let mut dx = Tensor::zeros(n, inp);
                    let mut dw = Tensor::zeros(out, inp);
                    let mut db = Tensor::zeros(1, out);
                    for r in 0..n {
                        let gr = g.row(r);
                        let xr = xv.row(r);
                        let dxr = &mut dx.data[r * inp..(r + 1) * inp];
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            db.data[o] += go;
                            let wr = wv.row(o);
                            let dwr = &mut dw.data[o * inp..(o + 1) * inp];
                            for k in 0..inp {
                                dxr[k] += go * wr[k];
                                dwr[k] += go * xr[k];
                            }
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *w, dw);
                    accumulate(&mut adj, *b, db);
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let d = zip_tensor(&g, av, |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut adj, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = zip_tensor(&g, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut adj, *a, d);
                }
                Op::Log(a) => {
                    let av = self.value(*a);
                    let d = zip_tensor(&g, av, |g, x| if x > LOG_FLOOR { g / x } else { 0.0 });
                    accumulate(&mut adj, *a, d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = map_tensor(&g, |v| -v);
                    accumulate(&mut adj, *a, g);
                    accumulate(&mut adj, *b, neg);
                }
                Op::Mul(a, b) => {
                    let da = zip_tensor(&g, self.value(*b), |g, y| g * y);
                    let db = zip_tensor(&g, self.value(*a), |g, x| g * x);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let da = zip_tensor(&g, bv, |g, y| g / y);
                    let mut db = zip_tensor(&g, &node.value, |g, q| -g * q);
                    for (d, y) in db.data.iter_mut().zip(&bv.data) {
                        *d /= y;
                    }
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut adj, *a, map_tensor(&g, |v| v * c));
                }
                Op::AddConst(a) => accumulate(&mut adj, *a, g),
                Op::MulConst(a, c) => accumulate(&mut adj, *a, zip_tensor(&g, c, |g, c| g * c)),
                Op::MaxConst(a, c) => {
                    let c = *c;
                    let d = zip_tensor(&g, self.value(*a), |g, x| if x > c { g } else { 0.0 });
                    accumulate(&mut adj, *a, d);
                }
                Op::MinConst(a, c) => {
                    let c = *c;
                    let d = zip_tensor(&g, self.value(*a), |g, x| if x < c { g } else { 0.0 });
                    accumulate(&mut adj, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let mut d = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            d.data[r * cols..(r + 1) * cols].copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        accumulate(&mut adj, p, d);
                    }
                }
                Op::GatherRows(a, index) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut d = Tensor::zeros(rows, cols);
                    for (r, &k) in index.iter().enumerate() {
                        for (dst, v) in d.data[k * cols..(k + 1) * cols].iter_mut().zip(g.row(r)) {
                            *dst += v;
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::SegmentSum(a, segment) => {
                    let cols = g.cols;
                    let mut d = Tensor::zeros(segment.len(), cols);
                    for (r, &s) in segment.iter().enumerate() {
                        d.data[r * cols..(r + 1) * cols].copy_from_slice(g.row(s));
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::SumAll(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Tensor::filled(rows, cols, g.data[0]));
                }
            }
        }
        Ok(grads)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&d.data) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

fn map_tensor(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        rows: t.rows,
        cols: t.cols,
        data: t.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip_tensor(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}
