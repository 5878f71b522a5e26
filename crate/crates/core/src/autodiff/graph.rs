use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::simplex::{Distribution, ScoreVector, Transform};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    StackRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Transform(Var, Transform, Distribution),
    CrossEntropy(Var, usize, Vec<f64>),
    SquaredDistance(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of a single forward computation.
///
/// Nodes are appended in evaluation order, so the arena order is already a
/// topological order and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    first_nonfinite: Option<usize>,
}

/// Gradients of a scalar root with respect to every node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v`, zeros when no path reaches it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads[v.0].take()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Index of the first node whose value was not finite, if any.
    pub fn first_nonfinite(&self) -> Option<usize> {
        self.first_nonfinite
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.first_nonfinite.is_none() && !value.is_finite() {
            self.first_nonfinite = Some(id);
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(id)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `a [n, m] + row [1, m]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if ta.shape().len() != 2 || tr.shape() != [1, ta.cols()] {
            return Err(shape_err("add_row", ta, tr));
        }
        let m = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tr.data()[i % m])
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, row]);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x * c).collect(),
        )
        .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| f(*x)).collect(),
        )
        .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    /// Sum of all entries as a `[1, 1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Column means of a `[n, m]` matrix as a `[1, m]` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 || ta.rows() == 0 {
            return Err(Error::Shape {
                op: "mean_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (n, m) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; m];
        for i in 0..n {
            for (o, x) in out.iter_mut().zip(ta.row_slice(i)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), t));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let t = Tensor::new(vec![rows, cols], data)?;
        let rg = self.rg(parts);
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 || start >= end || end > ta.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let mut data = Vec::with_capacity(ta.rows() * (end - start));
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row_slice(r)[start..end]);
        }
        let t = Tensor::new(vec![ta.rows(), end - start], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::SliceCols(a, start), rg))
    }

    /// Stacks `[1, m]` rows into an `[n, m]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("stack_rows"));
        }
        let m = self.value(rows[0]).cols();
        let mut data = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            let t = self.value(r);
            if t.shape() != [1, m] {
                return Err(shape_err("stack_rows", self.value(rows[0]), t));
            }
            data.extend_from_slice(t.data());
        }
        let t = Tensor::new(vec![rows.len(), m], data)?;
        let rg = self.rg(rows);
        Ok(self.push(t, Op::StackRows(rows.to_vec()), rg))
    }

    /// Selects rows of a matrix (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.shape().len() != 2 {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: tt.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (v, d) = (tt.rows(), tt.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= v {
                return Err(Error::Shape {
                    op: "gather_rows",
                    lhs: tt.shape().to_vec(),
                    rhs: vec![i],
                });
            }
            data.extend_from_slice(tt.row_slice(i));
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(t, Op::GatherRows(table, ids.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Applies a simplex transform to a `[1, n]` score row under `mask`.
    pub fn transform(
        &mut self,
        scores: Var,
        mask: &[bool],
        transform: Transform,
    ) -> Result<(Var, Distribution)> {
        let ts = self.value(scores);
        if ts.shape() != [1, mask.len()] {
            return Err(Error::Shape {
                op: "transform",
                lhs: ts.shape().to_vec(),
                rhs: vec![1, mask.len()],
            });
        }
        let sv = ScoreVector::masked(ts.data().to_vec(), mask.to_vec())?;
        let dist = transform.apply(&sv)?;
        let t = Tensor::row(dist.probs().to_vec());
        let rg = self.rg(&[scores]);
        let v = self.push(t, Op::Transform(scores, transform, dist.clone()), rg);
        Ok((v, dist))
    }

    /// Softmax cross-entropy of `[1, C]` logits against a class index.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let tl = self.value(logits);
        if tl.shape().len() != 2 || tl.rows() != 1 || target >= tl.cols() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![target],
            });
        }
        let probs = crate::simplex::softmax(&ScoreVector::new(tl.data().to_vec()))?.into_probs();
        let max = tl.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + tl.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - tl.data()[target];
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, target, probs),
            rg,
        ))
    }

    /// `‖a − b‖²` as a scalar.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("squared_distance", ta, tb));
        }
        let d = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(d), Op::SquaredDistance(a, b), rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rt = self.value(root);
        if rt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                rt.shape()
            )));
        }
        if let Some(step) = self.first_nonfinite {
            if step <= root.0 {
                return Err(Error::NonFinite {
                    what: "forward value".into(),
                    step,
                });
            }
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · G
                    self.accumulate_with(grads, *b, |db| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let av = ta.data()[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *d += av * gv;
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|x| -x).collect());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.to_vec());
                let m = out.cols();
                self.accumulate_with(grads, *row, |dr| {
                    for (i, gv) in g.iter().enumerate() {
                        dr[i % m] += gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    self.accumulate(
                        grads,
                        *a,
                        g.iter().zip(tb.data()).map(|(x, y)| x * y).collect(),
                    );
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(
                        grads,
                        *b,
                        g.iter().zip(ta.data()).map(|(x, y)| x * y).collect(),
                    );
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.iter().map(|x| x * c).collect()),
            Op::Sigmoid(a) => {
                let d = g
                    .iter()
                    .zip(out.data())
                    .map(|(gv, s)| gv * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g
                    .iter()
                    .zip(out.data())
                    .map(|(gv, t)| gv * (1.0 - t * t))
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::MeanRows(a) => {
                let ta = self.value(*a);
                let (n, m) = (ta.rows(), ta.cols());
                let scale = 1.0 / n as f64;
                let d = (0..n * m).map(|i| g[i % m] * scale).collect();
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if self.nodes[p.0].requires_grad {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(grads, *p, d);
                    }
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let ta = self.value(*a);
                let (rows, cols) = (ta.rows(), ta.cols());
                let w = out.cols();
                self.accumulate_with(grads, *a, |da| {
                    for r in 0..rows {
                        for j in 0..w {
                            da[r * cols + start + j] += g[r * w + j];
                        }
                    }
                });
            }
            Op::StackRows(rows) => {
                let m = out.cols();
                for (i, r) in rows.iter().enumerate() {
                    self.accumulate(grads, *r, g[i * m..(i + 1) * m].to_vec());
                }
            }
            Op::GatherRows(table, ids) => {
                let d = out.cols();
                self.accumulate_with(grads, *table, |dt| {
                    for (r, &i) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[i * d + j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Transform(a, transform, dist) => {
                let d = transform.jvp(dist, g).expect("transform backward");
                self.accumulate(grads, *a, d);
            }
            Op::CrossEntropy(logits, target, probs) => {
                let mut d: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                d[*target] -= g[0];
                self.accumulate(grads, *logits, d);
            }
            Op::SquaredDistance(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let diff: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(x, y)| 2.0 * (x - y) * g[0])
                    .collect();
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, diff.iter().map(|x| -x).collect());
                }
                self.accumulate(grads, *a, diff);
            }
        }
    }
}
