//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records one forward pass. Leaves are created with
//! [`Tape::leaf`] (trainable, receive gradients) or [`Tape::constant`]
//! (inputs, never differentiated). Every op appends a node whose parents
//! precede it, so a single reverse sweep visits each node once.
//!
//! ```
//! use calattn::autodiff::Tape;
//! use calattn::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let sq = tape.square(x);
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod gradcheck;
pub(crate) mod kernels;
pub mod ops;

pub use gradcheck::{central_difference, grad_check, GradCheckReport};
pub use kernels::{gelu, gelu_grad, log_sum_exp, normal_cdf, sigmoid, softmax_row, softplus};

use kernels::{AttnShape, LayerNormCache, Mat};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddTiled(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    DivRows(Var, Var),
    Gelu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Powf(Var, Vec<f64>),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cache: LayerNormCache,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttnShape,
        probs: Vec<f64>,
    },
    PrependRow {
        tokens: Var,
        row: Var,
        groups: usize,
    },
    GatherRows(Var, Vec<usize>),
    GroupMean {
        x: Var,
        group_len: usize,
        skip: usize,
    },
    ConcatCols(Var, Var),
    PickCols(Var, Vec<usize>),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Constant => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddTiled(a, b) | DivRows(a, b)
            | ConcatCols(a, b) => vec![*a, *b],
            Linear { x, w, b } => {
                let mut p = vec![*x, *w];
                p.extend(b.iter().copied());
                p
            }
            Scale(x, _) | AddScalar(x) | Gelu(x) | Softplus(x) | Exp(x) | Log(x) | Square(x)
            | Powf(x, _) | Softmax(x) | LogSoftmax(x) | GatherRows(x, _) | PickCols(x, _)
            | SumRows(x) | Sum(x) | Mean(x) => vec![*x],
            GroupMean { x, .. } => vec![*x],
            LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Attention { q, k, v, .. } => vec![*q, *k, *v],
            PrependRow { tokens, row, .. } => vec![*tokens, *row],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass and replays it backward.
///
/// Leaf gradients accumulate across [`Tape::backward`] calls until
/// [`Tape::zero_grad`]; intermediate adjoints are discarded after each sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, `None` if no backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Attention probabilities `[batch, heads, seq, seq]` saved by an
    /// attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(id)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite output from forward op");
        let requires_grad = op
            .parents()
            .iter()
            .any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    fn same_len(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(value, op)
    }

    // ----- ops -------------------------------------------------------------

    /// `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            1.0,
            self.data(a),
            Mat::rm(k),
            self.data(b),
            Mat::rm(n),
            0.0,
            &mut out,
            Mat::rm(n),
        );
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    /// Affine map `x · wᵀ + b` for `x: [n,in]`, `w: [out,in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, din) = self.matrix_dims(x, "linear")?;
        let (dout, din2) = self.matrix_dims(w, "linear")?;
        if din != din2 {
            return Err(Error::shape(
                "linear",
                format!("input width {din} vs weight width {din2}"),
            ));
        }
        let mut out = vec![0.0; n * dout];
        if let Some(b) = b {
            if self.value(b).len() != dout {
                return Err(Error::shape(
                    "linear",
                    format!("bias length {} vs {dout}", self.value(b).len()),
                ));
            }
            let bias = self.data(b);
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bias);
            }
        }
        kernels::gemm(
            n,
            din,
            dout,
            1.0,
            self.data(x),
            Mat::rm(din),
            self.data(w),
            Mat::rm_t(din),
            if b.is_some() { 1.0 } else { 0.0 },
            &mut out,
            Mat::rm(dout),
        );
        Ok(self.push(Tensor::from_parts(vec![n, dout], out), Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        let data = self.zip_data(a, b, |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "sub")?;
        let data = self.zip_data(a, b, |x, y| x - y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul")?;
        let data = self.zip_data(a, b, |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(a, b)))
    }

    fn zip_data(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    /// Adds `b` to `a`, repeating `b` along the leading axis:
    /// `out[i] = a[i] + b[i mod len(b)]` in flat order.
    pub fn add_tiled(&mut self, a: Var, b: Var) -> Result<Var> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if lb == 0 || la % lb != 0 || self.value(a).last_dim() != self.value(b).last_dim() {
            return Err(Error::shape(
                "add_tiled",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let bd = self.data(b);
        let data = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % lb])
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddTiled(a, b)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.map(x, Op::Scale(x, k), |v| v * k)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.map(x, Op::AddScalar(x), |v| v + k)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Divides row `i` of `x: [n, c]` by `s[i]` (`s` holds `n` values).
    pub fn div_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let rows = self.value(x).rows();
        if self.value(s).len() != rows {
            return Err(Error::shape(
                "div_rows",
                format!("{} divisors for {rows} rows", self.value(s).len()),
            ));
        }
        let c = self.value(x).last_dim();
        let sd = self.data(s);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v / sd[i / c])
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::DivRows(x, s)))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, Op::Gelu(x), kernels::gelu)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, Op::Softplus(x), kernels::softplus)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, Op::Log(x), f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, Op::Square(x), |v| v * v)
    }

    /// Elementwise `x^p` with one exponent per element.
    pub fn powf(&mut self, x: Var, exponents: Vec<f64>) -> Result<Var> {
        if exponents.len() != self.value(x).len() {
            return Err(Error::shape("powf", "one exponent per element"));
        }
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .zip(&exponents)
            .map(|(&v, &p)| v.powf(p))
            .collect();
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        Ok(self.push(value, Op::Powf(x, exponents)))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let d = value.last_dim();
        for row in value.data_mut().chunks_mut(d) {
            kernels::softmax_in_place(row);
        }
        self.push(value, Op::Softmax(x))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let d = value.last_dim();
        for row in value.data_mut().chunks_mut(d) {
            let lse = kernels::log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(value, Op::LogSoftmax(x))
    }

    /// Row-wise layer normalisation followed by the affine `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if d < 2 || self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "width {d}, gain {}, bias {}",
                    self.value(gain).len(),
                    self.value(bias).len()
                ),
            ));
        }
        let (out, cache) =
            kernels::layer_norm_forward(self.data(x), d, self.data(gain), self.data(bias));
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            },
        ))
    }

    /// Fused scaled dot-product attention over `batch` sequences of `seq`
    /// rows each. `q`, `k`, `v` are `[batch·seq, dim]`; heads split the
    /// columns into contiguous blocks of `dim / heads`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
    ) -> Result<Var> {
        let (rows, dim) = self.matrix_dims(q, "attention")?;
        if self.shape(k) != [rows, dim] || self.shape(v) != [rows, dim] {
            return Err(Error::shape("attention", "q, k, v shapes differ"));
        }
        if heads == 0 || dim % heads != 0 || batch == 0 || rows % batch != 0 {
            return Err(Error::shape(
                "attention",
                format!("{rows}x{dim} with batch {batch}, heads {heads}"),
            ));
        }
        let shape = AttnShape {
            batch,
            seq: rows / batch,
            dim,
            heads,
        };
        let (out, probs) = kernels::attention_forward(self.data(q), self.data(k), self.data(v), shape);
        Ok(self.push(
            Tensor::from_parts(vec![rows, dim], out),
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
        ))
    }

    /// Splits `tokens: [groups·n, d]` into `groups` runs of `n` rows and
    /// prepends `row: [d]` to each run, giving `[groups·(n+1), d]`.
    pub fn prepend_row(&mut self, tokens: Var, row: Var, groups: usize) -> Result<Var> {
        let (rows, d) = self.matrix_dims(tokens, "prepend_row")?;
        if self.value(row).len() != d || groups == 0 || rows % groups != 0 {
            return Err(Error::shape(
                "prepend_row",
                format!("{rows}x{d} tokens, row of {}", self.value(row).len()),
            ));
        }
        let n = rows / groups;
        let mut out = Vec::with_capacity((rows + groups) * d);
        let (td, rd) = (self.data(tokens), self.data(row));
        for g in 0..groups {
            out.extend_from_slice(rd);
            out.extend_from_slice(&td[g * n * d..(g + 1) * n * d]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows + groups, d], out),
            Op::PrependRow {
                tokens,
                row,
                groups,
            },
        ))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        if rows.iter().any(|&r| r >= t.rows()) {
            return Err(Error::shape("gather_rows", "row index out of range"));
        }
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            out.extend_from_slice(t.row(r));
        }
        let value = Tensor::from_parts(vec![rows.len(), d], out);
        Ok(self.push(value, Op::GatherRows(x, rows)))
    }

    /// Mean of rows `skip..group_len` within each consecutive group of
    /// `group_len` rows.
    pub fn group_mean(&mut self, x: Var, group_len: usize, skip: usize) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        if group_len <= skip || !t.rows().is_multiple_of(group_len) {
            return Err(Error::shape("group_mean", "rows not divisible into groups"));
        }
        let groups = t.rows() / group_len;
        let count = (group_len - skip) as f64;
        let mut out = vec![0.0; groups * d];
        for g in 0..groups {
            for r in skip..group_len {
                for (o, v) in out[g * d..(g + 1) * d].iter_mut().zip(t.row(g * group_len + r)) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= count);
        let value = Tensor::from_parts(vec![groups, d], out);
        Ok(self.push(value, Op::GroupMean { x, group_len, skip }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.matrix_dims(a, "concat_cols")?;
        let (rb, cb) = self.matrix_dims(b, "concat_cols")?;
        if ra != rb {
            return Err(Error::shape("concat_cols", format!("rows {ra} vs {rb}")));
        }
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            out.extend_from_slice(self.value(a).row(r));
            out.extend_from_slice(self.value(b).row(r));
        }
        Ok(self.push(
            Tensor::from_parts(vec![ra, ca + cb], out),
            Op::ConcatCols(a, b),
        ))
    }

    /// `out[i] = x[i, cols[i]]`.
    pub fn pick_cols(&mut self, x: Var, cols: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        let c = t.last_dim();
        if cols.len() != t.rows() || cols.iter().any(|&j| j >= c) {
            return Err(Error::shape("pick_cols", "one in-range column per row"));
        }
        let data = cols.iter().enumerate().map(|(i, &j)| t.row(i)[j]).collect();
        let value = Tensor::from_parts(vec![cols.len()], data);
        Ok(self.push(value, Op::PickCols(x, cols)))
    }

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let value = Tensor::from_parts(vec![t.rows()], data);
        self.push(value, Op::SumRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    // ----- backward ----------------------------------------------------------

    /// Propagates `d loss / d node` to every leaf reachable from `loss` and
    /// adds it to that leaf's accumulated gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    let gt = Tensor::from_parts(node.value.shape().to_vec(), g);
                    match &mut self.grads[id] {
                        Some(acc) => acc.add_assign(&gt),
                        slot => *slot = Some(gt),
                    }
                }
                Op::Constant => {}
                op => {
                    for (parent, pg) in self.local_grads(op, &node.value, &g) {
                        if !self.nodes[parent.0].requires_grad {
                            continue;
                        }
                        match &mut adj[parent.0] {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            slot => *slot = Some(pg),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of one node with respect to its parents.
    fn local_grads(&self, op: &Op, out: &Tensor, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let elementwise = |x: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<(Var, Vec<f64>)> {
            let xd = self.data(x);
            let grad = g
                .iter()
                .zip(xd)
                .zip(out.data())
                .map(|((&g, &x), &y)| f(g, x, y))
                .collect();
            vec![(x, grad)]
        };
        match op {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let mut res = Vec::new();
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(m, n, k, 1.0, g, Mat::rm(n), self.data(*b), Mat::rm_t(n), 0.0, &mut da, Mat::rm(k));
                    res.push((*a, da));
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(k, m, n, 1.0, self.data(*a), Mat::rm_t(k), g, Mat::rm(n), 0.0, &mut db, Mat::rm(n));
                    res.push((*b, db));
                }
                res
            }
            Op::Linear { x, w, b } => {
                let (n, din) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dout = self.shape(*w)[0];
                let mut res = Vec::new();
                if needs(*x) {
                    let mut dx = vec![0.0; n * din];
                    kernels::gemm(n, dout, din, 1.0, g, Mat::rm(dout), self.data(*w), Mat::rm(din), 0.0, &mut dx, Mat::rm(din));
                    res.push((*x, dx));
                }
                if needs(*w) {
                    let mut dw = vec![0.0; dout * din];
                    kernels::gemm(dout, n, din, 1.0, g, Mat::rm_t(dout), self.data(*x), Mat::rm(din), 0.0, &mut dw, Mat::rm(din));
                    res.push((*w, dw));
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let mut db = vec![0.0; dout];
                        for row in g.chunks(dout) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        res.push((*b, db));
                    }
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                vec![
                    (*a, g.iter().zip(bd).map(|(g, y)| g * y).collect()),
                    (*b, g.iter().zip(ad).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::AddTiled(a, b) => {
                let lb = self.value(*b).len();
                let mut db = vec![0.0; lb];
                for (i, v) in g.iter().enumerate() {
                    db[i % lb] += v;
                }
                vec![(*a, g.to_vec()), (*b, db)]
            }
            Op::Scale(x, k) => vec![(*x, g.iter().map(|v| v * k).collect())],
            Op::AddScalar(x) => vec![(*x, g.to_vec())],
            Op::DivRows(x, s) => {
                let c = self.value(*x).last_dim();
                let (xd, sd) = (self.data(*x), self.data(*s));
                let dx = g.iter().enumerate().map(|(i, v)| v / sd[i / c]).collect();
                let mut ds = vec![0.0; sd.len()];
                for (i, (gv, xv)) in g.iter().zip(xd).enumerate() {
                    let r = i / c;
                    ds[r] -= gv * xv / (sd[r] * sd[r]);
                }
                vec![(*x, dx), (*s, ds)]
            }
            Op::Gelu(x) => elementwise(*x, &|g, x, _| g * kernels::gelu_grad(x)),
            Op::Softplus(x) => elementwise(*x, &|g, x, _| g * kernels::sigmoid(x)),
            Op::Exp(x) => elementwise(*x, &|g, _, y| g * y),
            Op::Log(x) => elementwise(*x, &|g, x, _| g / x),
            Op::Square(x) => elementwise(*x, &|g, x, _| 2.0 * g * x),
            Op::Powf(x, p) => {
                let xd = self.data(*x);
                let dx = g
                    .iter()
                    .zip(xd)
                    .zip(p)
                    .map(|((&g, &x), &p)| if p == 0.0 { 0.0 } else { g * p * x.powf(p - 1.0) })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Softmax(x) => {
                let c = out.last_dim();
                let mut dx = vec![0.0; g.len()];
                for ((dr, gr), yr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*x, dx)]
            }
            Op::LogSoftmax(x) => {
                let c = out.last_dim();
                let mut dx = vec![0.0; g.len()];
                for ((dr, gr), yr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c)) {
                    let total: f64 = gr.iter().sum();
                    for j in 0..c {
                        dr[j] = gr[j] - yr[j].exp() * total;
                    }
                }
                vec![(*x, dx)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            } => {
                let d = out.last_dim();
                let (dx, dg, db) = kernels::layer_norm_backward(g, d, self.data(*gain), cache);
                vec![(*x, dx), (*gain, dg), (*bias, db)]
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            } => {
                let (dq, dk, dv) = kernels::attention_backward(
                    g,
                    self.data(*q),
                    self.data(*k),
                    self.data(*v),
                    probs,
                    *shape,
                );
                vec![(*q, dq), (*k, dk), (*v, dv)]
            }
            Op::PrependRow {
                tokens,
                row,
                groups,
            } => {
                let d = out.last_dim();
                let n1 = out.rows() / groups;
                let mut dt = Vec::with_capacity((out.rows() - groups) * d);
                let mut dr = vec![0.0; d];
                for grp in 0..*groups {
                    let base = grp * n1 * d;
                    dr.iter_mut().zip(&g[base..base + d]).for_each(|(a, b)| *a += b);
                    dt.extend_from_slice(&g[base + d..base + n1 * d]);
                }
                vec![(*tokens, dt), (*row, dr)]
            }
            Op::GatherRows(x, rows) => {
                let d = out.last_dim();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (i, &r) in rows.iter().enumerate() {
                    dx[r * d..(r + 1) * d]
                        .iter_mut()
                        .zip(&g[i * d..(i + 1) * d])
                        .for_each(|(a, b)| *a += b);
                }
                vec![(*x, dx)]
            }
            Op::GroupMean { x, group_len, skip } => {
                let d = out.last_dim();
                let count = (group_len - skip) as f64;
                let mut dx = vec![0.0; self.value(*x).len()];
                for grp in 0..out.rows() {
                    for r in *skip..*group_len {
                        let base = (grp * group_len + r) * d;
                        dx[base..base + d]
                            .iter_mut()
                            .zip(&g[grp * d..(grp + 1) * d])
                            .for_each(|(a, b)| *a = b / count);
                    }
                }
                vec![(*x, dx)]
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(*a).last_dim(), self.value(*b).last_dim());
                let mut da = Vec::with_capacity(self.value(*a).len());
                let mut db = Vec::with_capacity(self.value(*b).len());
                for row in g.chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                vec![(*a, da), (*b, db)]
            }
            Op::PickCols(x, cols) => {
                let c = self.value(*x).last_dim();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (i, (&j, &gv)) in cols.iter().zip(g).enumerate() {
                    dx[i * c + j] = gv;
                }
                vec![(*x, dx)]
            }
            Op::SumRows(x) => {
                let c = self.value(*x).last_dim();
                let dx = (0..self.value(*x).len()).map(|i| g[i / c]).collect();
                vec![(*x, dx)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::Mean(x) => {
                let n = self.value(*x).len();
                vec![(*x, vec![g[0] / n as f64; n])]
            }
        }
    }
}

#[cfg(test)]
mod tests;
