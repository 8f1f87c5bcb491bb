//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::{GradError, Matrix, ParamId, ParamStore};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Reshape(Var),
    Gather(Var, Arc<[usize]>),
    Rows(Var, Arc<[usize]>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    LogSoftmax(Var),
    Softmax(Var),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    PickCols(Var, Arc<[usize]>),
    Entropy(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<(u64, usize), Var>,
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> GradError {
    GradError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.uid(), id.index());
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        let v = self.input(store.value(id).clone());
        self.bound.insert(key, v);
        v
    }

    /// Node bound to `id`, if the graph used it.
    pub fn bound_param(&self, store: &ParamStore, id: ParamId) -> Option<Var> {
        self.bound.get(&(store.uid(), id.index())).copied()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", va, vb));
        }
        let out = va.matmul(vb);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, GradError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(name, va, vb));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Matrix::from_vec(va.rows(), va.cols(), data);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, GradError> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(shape_err("add_row", va, vr));
        }
        let c = va.cols();
        let mut out = va.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += vr.data()[i % c];
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    /// Scales row `i` of `a` by `col[i]` (`col` is `r × 1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, GradError> {
        let (va, vc) = (self.value(a), self.value(col));
        if vc.cols() != 1 || vc.rows() != va.rows() {
            return Err(shape_err("mul_col", va, vc));
        }
        let c = va.cols();
        let mut out = va.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x *= vc.data()[i / c];
        }
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(out, Op::MulCol(a, col), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, GradError> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(GradError::Numeric("ln of a non-positive value".into()));
        }
        Ok(self.unary(a, f64::ln, Op::Ln(a)))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, GradError> {
        let va = self.value(a);
        if rows * cols != va.len() {
            return Err(GradError::Shape {
                op: "reshape",
                left: va.shape(),
                right: (rows, cols),
            });
        }
        let out = va.clone().reshaped(rows, cols);
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// `out.data[i] = a.data[index[i]]`, shaped `rows × cols`.
    pub fn gather(
        &mut self,
        a: Var,
        index: Arc<[usize]>,
        rows: usize,
        cols: usize,
    ) -> Result<Var, GradError> {
        let va = self.value(a);
        if index.len() != rows * cols {
            return Err(GradError::Shape {
                op: "gather",
                left: (index.len(), 1),
                right: (rows, cols),
            });
        }
        if index.iter().any(|&i| i >= va.len()) {
            return Err(GradError::Index("gather"));
        }
        let data = index.iter().map(|&i| va.data()[i]).collect();
        let out = Matrix::from_vec(rows, cols, data);
        let ng = self.ng(a);
        Ok(self.push(out, Op::Gather(a, index), ng))
    }

    /// Row lookup: row `i` of the result is row `rows[i]` of `a`.
    pub fn rows(&mut self, a: Var, rows: Arc<[usize]>) -> Result<Var, GradError> {
        let va = self.value(a);
        if rows.iter().any(|&r| r >= va.rows()) {
            return Err(GradError::Index("rows"));
        }
        let c = va.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows.iter() {
            data.extend_from_slice(va.row(r));
        }
        let out = Matrix::from_vec(rows.len(), c, data);
        let ng = self.ng(a);
        Ok(self.push(out, Op::Rows(a, rows), ng))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, GradError> {
        let va = self.value(a);
        if start >= end || end > va.cols() {
            return Err(GradError::Index("slice_cols"));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(va.rows() * w);
        for r in 0..va.rows() {
            data.extend_from_slice(&va.row(r)[start..end]);
        }
        let out = Matrix::from_vec(va.rows(), w, data);
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let first = parts.first().ok_or(GradError::Index("concat_cols"))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), self.value(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Matrix::from_vec(rows, cols, data);
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, GradError> {
        let va = self.value(a);
        if !va.all_finite() {
            return Err(GradError::NonFinite("log_softmax"));
        }
        let c = va.cols();
        let mut out = va.clone();
        for row in out.data_mut().chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::LogSoftmax(a), ng))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, GradError> {
        let va = self.value(a);
        if !va.all_finite() {
            return Err(GradError::NonFinite("softmax"));
        }
        let c = va.cols();
        let mut out = va.clone();
        for row in out.data_mut().chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    /// Row sums as an `r × 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let c = va.cols().max(1);
        let data = va.data().chunks(c).map(|r| r.iter().sum()).collect();
        let out = Matrix::from_vec(va.rows(), 1, data);
        let ng = self.ng(a);
        self.push(out, Op::SumCols(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Matrix::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s = va.data().iter().sum::<f64>() / va.len().max(1) as f64;
        let ng = self.ng(a);
        self.push(Matrix::scalar(s), Op::Mean(a), ng)
    }

    /// Element `cols[i]` of row `i`, as an `r × 1` column.
    pub fn pick_cols(&mut self, a: Var, cols: Arc<[usize]>) -> Result<Var, GradError> {
        let va = self.value(a);
        if cols.len() != va.rows() || cols.iter().any(|&c| c >= va.cols()) {
            return Err(GradError::Index("pick_cols"));
        }
        let data = cols.iter().enumerate().map(|(r, &c)| va.get(r, c)).collect();
        let out = Matrix::from_vec(va.rows(), 1, data);
        let ng = self.ng(a);
        Ok(self.push(out, Op::PickCols(a, cols), ng))
    }

    /// Shannon entropy (nats) of each probability row, as an `r × 1` column.
    pub fn entropy(&mut self, probs: Var) -> Result<Var, GradError> {
        let vp = self.value(probs);
        let c = vp.cols();
        let mut data = Vec::with_capacity(vp.rows());
        for row in vp.data().chunks(c) {
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(GradError::Numeric("entropy of a negative probability".into()));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(GradError::Numeric(format!(
                    "probabilities sum to {total}, not 1"
                )));
            }
            data.push(-row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>());
        }
        let out = Matrix::from_vec(vp.rows(), 1, data);
        let ng = self.ng(probs);
        Ok(self.push(out, Op::Entropy(probs), ng))
    }

    /// Draws one index per row from `softmax(logits)`; returns the indices
    /// and their log-probabilities as a differentiable `r × 1` column.
    pub fn sample_categorical(
        &mut self,
        logits: Var,
        rng: &mut impl Rng,
    ) -> Result<(Vec<usize>, Var), GradError> {
        let logp = self.log_softmax(logits)?;
        let idx: Vec<usize> = self
            .value(logp)
            .data()
            .chunks(self.value(logp).cols())
            .map(|row| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, lp) in row.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        return i;
                    }
                }
                row.len() - 1
            })
            .collect();
        let picked = self.pick_cols(logp, idx.clone().into())?;
        Ok((idx, picked))
    }

    /// Row-wise argmax (lowest index on ties) with log-probabilities.
    pub fn greedy_categorical(&mut self, logits: Var) -> Result<(Vec<usize>, Var), GradError> {
        let logp = self.log_softmax(logits)?;
        let idx = argmax_rows(self.value(logp));
        let picked = self.pick_cols(logp, idx.clone().into())?;
        Ok((idx, picked))
    }

    /// Gradients of the scalar `loss` with respect to every node that needs
    /// one.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GradError> {
        let vl = self.value(loss);
        if vl.shape() != (1, 1) {
            return Err(GradError::Shape {
                op: "backward",
                left: vl.shape(),
                right: (1, 1),
            });
        }
        if !vl.all_finite() {
            return Err(GradError::NonFinite("loss"));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_nt(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).matmul_tn(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, zip(g, vb, |x, y| x * y));
                acc(*b, zip(g, va, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let c = g.cols();
                let mut gr = vec![0.0; c];
                for r in g.data().chunks(c) {
                    for (s, x) in gr.iter_mut().zip(r) {
                        *s += x;
                    }
                }
                acc(*row, Matrix::from_vec(1, c, gr));
            }
            Op::MulCol(a, col) => {
                let (va, vc) = (self.value(*a), self.value(*col));
                let c = g.cols();
                let mut ga = g.clone();
                for (i, x) in ga.data_mut().iter_mut().enumerate() {
                    *x *= vc.data()[i / c];
                }
                acc(*a, ga);
                let gc: Vec<f64> = g
                    .data()
                    .chunks(c)
                    .zip(va.data().chunks(c))
                    .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                    .collect();
                acc(*col, Matrix::from_vec(g.rows(), 1, gc));
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::Relu(a) => {
                let va = self.value(*a);
                acc(*a, zip(g, va, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::Tanh(a) => acc(*a, zip(g, out, |x, y| x * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, zip(g, out, |x, y| x * y * (1.0 - y))),
            Op::Exp(a) => acc(*a, zip(g, out, |x, y| x * y)),
            Op::Ln(a) => acc(*a, zip(g, self.value(*a), |x, y| x / y)),
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, g.clone().reshaped(r, c));
            }
            Op::Gather(a, index) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = vec![0.0; r * c];
                for (&i, &x) in index.iter().zip(g.data()) {
                    ga[i] += x;
                }
                acc(*a, Matrix::from_vec(r, c, ga));
            }
            Op::Rows(a, rows) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = vec![0.0; r * c];
                for (i, &src) in rows.iter().enumerate() {
                    for (d, x) in ga[src * c..(src + 1) * c].iter_mut().zip(g.row(i)) {
                        *d += x;
                    }
                }
                acc(*a, Matrix::from_vec(r, c, ga));
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.value(*a).shape();
                let w = g.cols();
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    ga[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                acc(*a, Matrix::from_vec(r, c, ga));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, w) = self.value(*p).shape();
                    let mut gp = Vec::with_capacity(r * w);
                    for i in 0..r {
                        gp.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    offset += w;
                    acc(*p, Matrix::from_vec(r, w, gp));
                }
            }
            Op::LogSoftmax(a) => {
                let c = g.cols();
                let mut ga = g.clone();
                for (grow, orow) in ga.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                    let s: f64 = grow.iter().sum();
                    for (x, lp) in grow.iter_mut().zip(orow) {
                        *x -= lp.exp() * s;
                    }
                }
                acc(*a, ga);
            }
            Op::Softmax(a) => {
                let c = g.cols();
                let mut ga = g.clone();
                for (grow, prow) in ga.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                    let dot: f64 = grow.iter().zip(prow).map(|(x, p)| x * p).sum();
                    for (x, p) in grow.iter_mut().zip(prow) {
                        *x = p * (*x - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::SumCols(a) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    ga[i * c..(i + 1) * c].fill(g.data()[i]);
                }
                acc(*a, Matrix::from_vec(r, c, ga));
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g.item() / (r * c).max(1) as f64));
            }
            Op::PickCols(a, cols) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = vec![0.0; r * c];
                for (i, &j) in cols.iter().enumerate() {
                    ga[i * c + j] = g.data()[i];
                }
                acc(*a, Matrix::from_vec(r, c, ga));
            }
            Op::Entropy(p) => {
                let vp = self.value(*p);
                let c = vp.cols();
                let mut gp = vp.clone();
                for (i, x) in gp.data_mut().iter_mut().enumerate() {
                    *x = if *x > 0.0 {
                        -(x.ln() + 1.0) * g.data()[i / c]
                    } else {
                        0.0
                    };
                }
                acc(*p, gp);
            }
        }
    }
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

/// Index of the largest entry of each row; the lowest index wins ties.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.data()
        .chunks(m.cols().max(1))
        .map(|row| {
            let mut best = 0;
            for (i, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
