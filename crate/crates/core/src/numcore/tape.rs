//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! Every operation evaluates eagerly and appends a node to the tape, so the
//! node list is already in topological order. `backward` walks it once in
//! reverse. All values are 2-D `[rows, cols]` matrices; the only broadcasts
//! are a `[1, c]` row applied across every row (`add_row`, `mul_row`).

use std::sync::atomic::{AtomicU32, Ordering};

use super::stable::sigmoid;
use super::tensor::Tensor;
use crate::error::{CdeError, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Tanh(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Recip(usize),
    Square(usize),
    LogSoftmax(usize),
    Softmax(usize),
    LogSumExp(usize),
    SumCols(usize),
    SumGroups(usize, usize),
    Sum(usize),
    Mean(usize),
    Columns(usize, usize),
    Tile(usize, usize),
    RepeatEach(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, available for leaf nodes.
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index as usize).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index as usize).and_then(|g| g.take())
    }
}

fn shape_err(op: &'static str, detail: String) -> CdeError {
    CdeError::Shape { op, detail }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.index as usize
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Result<Var> {
        if !value.is_matrix() {
            return Err(shape_err(
                "leaf",
                format!("tape values must be matrices, got shape {:?}", value.shape()),
            ));
        }
        Ok(self.push(value, Op::Leaf, needs_grad))
    }

    /// Differentiable leaf (parameter or input we want gradients for).
    pub fn variable(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v)].value
    }

    fn node(&self, v: Var) -> (usize, &Tensor, bool) {
        let i = self.idx(v);
        let n = &self.nodes[i];
        (i, &n.value, n.needs_grad)
    }

    fn unary(&mut self, a: Var, op: fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Var {
        let (ia, ta, ga) = self.node(a);
        let data: Vec<f64> = ta.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::matrix(ta.rows(), ta.cols(), data).expect("same shape");
        self.push(value, op(ia), ga)
    }

    fn binary_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ia, ta, ga) = self.node(a);
        let (ib, tb, gb) = self.node(b);
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::matrix(ta.rows(), ta.cols(), data)?;
        Ok(self.push(value, op(ia, ib), ga || gb))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ta, ga) = self.node(a);
        let (ib, tb, gb) = self.node(b);
        let (m, k) = dims(ta);
        let (k2, n) = dims(tb);
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul(ia, ib), ga || gb))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, Op::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("div", a, b, Op::Div, |x, y| x / y)
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        a: Var,
        row: Var,
        op: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ia, ta, ga) = self.node(a);
        let (ib, tb, gb) = self.node(row);
        let (m, n) = dims(ta);
        if tb.rows() != 1 || tb.cols() != n {
            return Err(shape_err(
                name,
                format!("row operand {:?} does not match [{m},{n}]", tb.shape()),
            ));
        }
        let rd = tb.data();
        let data: Vec<f64> = ta
            .data()
            .chunks_exact(n)
            .flat_map(|r| r.iter().zip(rd).map(|(&x, &y)| f(x, y)))
            .collect();
        let value = Tensor::matrix(m, n, data)?;
        Ok(self.push(value, op(ia, ib), ga || gb))
    }

    /// `a + row` for every row of `a`; `row` is `[1, cols]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, row, Op::AddRow, |x, y| x + y)
    }

    /// `a * row` elementwise for every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, row, Op::MulRow, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (ia, ta, ga) = self.node(a);
        let data = ta.data().iter().map(|&x| x * c).collect();
        let value = Tensor::matrix(ta.rows(), ta.cols(), data).expect("same shape");
        self.push(value, Op::Scale(ia, c), ga)
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let (ia, ta, ga) = self.node(a);
        let data = ta.data().iter().map(|&x| x + c).collect();
        let value = Tensor::matrix(ta.rows(), ta.cols(), data).expect("same shape");
        self.push(value, Op::Shift(ia), ga)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh, f64::tanh)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus, super::stable::softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp, f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log, f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt, f64::sqrt)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Op::Recip, |x| 1.0 / x)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square, |x| x * x)
    }

    fn rowwise(&mut self, a: Var, op: fn(usize) -> Op, log: bool) -> Var {
        let (ia, ta, ga) = self.node(a);
        let (m, n) = dims(ta);
        let mut data = Vec::with_capacity(m * n);
        for row in ta.data().chunks_exact(n) {
            let lse = row_lse(row);
            if log {
                data.extend(row.iter().map(|&x| x - lse));
            } else {
                data.extend(row.iter().map(|&x| (x - lse).exp()));
            }
        }
        let value = Tensor::matrix(m, n, data).expect("same shape");
        self.push(value, op(ia), ga)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        self.rowwise(a, Op::LogSoftmax, true)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        self.rowwise(a, Op::Softmax, false)
    }

    /// Row-wise log-sum-exp, `[m, n] -> [m, 1]`.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let (ia, ta, ga) = self.node(a);
        let n = ta.cols();
        let data: Vec<f64> = ta.data().chunks_exact(n).map(row_lse).collect();
        let value = Tensor::column(data);
        self.push(value, Op::LogSumExp(ia), ga)
    }

    /// Row sums, `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (ia, ta, ga) = self.node(a);
        let n = ta.cols();
        let data: Vec<f64> = ta.data().chunks_exact(n).map(|r| r.iter().sum()).collect();
        let value = Tensor::column(data);
        self.push(value, Op::SumCols(ia), ga)
    }

    /// Sums consecutive column groups of width `group`: `[m, g*k] -> [m, k]`.
    pub fn sum_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let (ia, ta, ga) = self.node(a);
        let (m, n) = dims(ta);
        if group == 0 || n % group != 0 {
            return Err(shape_err(
                "sum_groups",
                format!("{n} columns not divisible into groups of {group}"),
            ));
        }
        let data: Vec<f64> = ta
            .data()
            .chunks_exact(group)
            .map(|g| g.iter().sum())
            .collect();
        let value = Tensor::matrix(m, n / group, data)?;
        Ok(self.push(value, Op::SumGroups(ia, group), ga))
    }

    /// Sum of all entries, `[1, 1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let (ia, ta, ga) = self.node(a);
        let s = ta.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(ia), ga)
    }

    /// Mean of all entries, `[1, 1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let (ia, ta, ga) = self.node(a);
        let s: f64 = ta.data().iter().sum();
        let value = Tensor::scalar(s / ta.len() as f64);
        self.push(value, Op::Mean(ia), ga)
    }

    /// Contiguous column slice `[start, start + len)`.
    pub fn columns(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (ia, ta, ga) = self.node(a);
        let (m, n) = dims(ta);
        if len == 0 || start + len > n {
            return Err(shape_err(
                "columns",
                format!("slice [{start}, {}) out of {n} columns", start + len),
            ));
        }
        let data: Vec<f64> = ta
            .data()
            .chunks_exact(n)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let value = Tensor::matrix(m, len, data)?;
        Ok(self.push(value, Op::Columns(ia, start), ga))
    }

    /// Horizontal tiling: `[m, n] -> [m, n * times]` as `[a, a, ..., a]`.
    pub fn tile(&mut self, a: Var, times: usize) -> Result<Var> {
        let (ia, ta, ga) = self.node(a);
        let (m, n) = dims(ta);
        if times == 0 {
            return Err(shape_err("tile", "zero repetitions".into()));
        }
        let mut data = Vec::with_capacity(m * n * times);
        for row in ta.data().chunks_exact(n) {
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        let value = Tensor::matrix(m, n * times, data)?;
        Ok(self.push(value, Op::Tile(ia, times), ga))
    }

    /// Repeats each column `times` times consecutively.
    pub fn repeat_each(&mut self, a: Var, times: usize) -> Result<Var> {
        let (ia, ta, ga) = self.node(a);
        let (m, n) = dims(ta);
        if times == 0 {
            return Err(shape_err("repeat_each", "zero repetitions".into()));
        }
        let mut data = Vec::with_capacity(m * n * times);
        for &x in ta.data() {
            data.extend(std::iter::repeat_n(x, times));
        }
        let value = Tensor::matrix(m, n * times, data)?;
        Ok(self.push(value, Op::RepeatEach(ia, times), ga))
    }

    /// Gradients of a scalar `[1, 1]` output with respect to every leaf.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let seed = Tensor::scalar(1.0);
        self.backward_with(output, &seed)
    }

    /// Vector-Jacobian product with an explicit output cotangent.
    pub fn backward_with(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(CdeError::State("backward called on an empty tape".into()));
        }
        if output.tape != self.id || output.index as usize >= self.nodes.len() {
            return Err(CdeError::State(
                "backward called with a variable that was not produced by this tape".into(),
            ));
        }
        let out = output.index as usize;
        if self.nodes[out].value.shape() != seed.shape() {
            return Err(shape_err(
                "backward",
                format!(
                    "seed {:?} vs output {:?}",
                    seed.shape(),
                    self.nodes[out].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        grads[out] = Some(seed.data().to_vec());

        for i in (0..=out).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                match (node.op, g) {
                    (Op::Leaf, Some(g)) if node.needs_grad => Some(
                        Tensor::matrix(node.value.rows(), node.value.cols(), g)
                            .expect("gradient matches leaf shape"),
                    ),
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: usize, delta: Vec<f64>) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut grads[target] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(delta) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |j: usize| &self.nodes[j].value;
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(val(a));
                let n = val(b).cols();
                let ad = val(a).data();
                let bd = val(b).data();
                if self.needs(a) {
                    // dA = G B^T
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.accumulate(grads, a, da);
                }
                if self.needs(b) {
                    // dB = A^T G
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let arp = ad[r * k + p];
                            if arp == 0.0 {
                                continue;
                            }
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += arp * gv;
                            }
                        }
                    }
                    self.accumulate(grads, b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(a).data(), val(b).data());
                if self.needs(a) {
                    self.accumulate(grads, a, g.iter().zip(bd).map(|(x, y)| x * y).collect());
                }
                if self.needs(b) {
                    self.accumulate(grads, b, g.iter().zip(ad).map(|(x, y)| x * y).collect());
                }
            }
            Op::Div(a, b) => {
                let bd = val(b).data();
                if self.needs(a) {
                    self.accumulate(grads, a, g.iter().zip(bd).map(|(x, y)| x / y).collect());
                }
                if self.needs(b) {
                    // d(a/b)/db = -(a/b)/b
                    let d = g
                        .iter()
                        .zip(out)
                        .zip(bd)
                        .map(|((gv, q), y)| -gv * q / y)
                        .collect();
                    self.accumulate(grads, b, d);
                }
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, a, g.to_vec());
                if self.needs(r) {
                    let n = val(r).cols();
                    let mut dr = vec![0.0; n];
                    for grow in g.chunks_exact(n) {
                        for (d, x) in dr.iter_mut().zip(grow) {
                            *d += x;
                        }
                    }
                    self.accumulate(grads, r, dr);
                }
            }
            Op::MulRow(a, r) => {
                let n = val(r).cols();
                let rd = val(r).data();
                if self.needs(a) {
                    let d = g
                        .chunks_exact(n)
                        .flat_map(|grow| grow.iter().zip(rd).map(|(x, y)| x * y))
                        .collect();
                    self.accumulate(grads, a, d);
                }
                if self.needs(r) {
                    let ad = val(a).data();
                    let mut dr = vec![0.0; n];
                    for (grow, arow) in g.chunks_exact(n).zip(ad.chunks_exact(n)) {
                        for ((d, x), y) in dr.iter_mut().zip(grow).zip(arow) {
                            *d += x * y;
                        }
                    }
                    self.accumulate(grads, r, dr);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, a, g.iter().map(|x| x * c).collect()),
            Op::Shift(a) => self.accumulate(grads, a, g.to_vec()),
            Op::Tanh(a) => {
                let d = g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect();
                self.accumulate(grads, a, d);
            }
            Op::Softplus(a) => {
                let ad = val(a).data();
                let d = g.iter().zip(ad).map(|(x, y)| x * sigmoid(*y)).collect();
                self.accumulate(grads, a, d);
            }
            Op::Exp(a) => {
                let d = g.iter().zip(out).map(|(x, y)| x * y).collect();
                self.accumulate(grads, a, d);
            }
            Op::Log(a) => {
                let ad = val(a).data();
                let d = g.iter().zip(ad).map(|(x, y)| x / y).collect();
                self.accumulate(grads, a, d);
            }
            Op::Sqrt(a) => {
                let d = g.iter().zip(out).map(|(x, y)| 0.5 * x / y).collect();
                self.accumulate(grads, a, d);
            }
            Op::Recip(a) => {
                let d = g.iter().zip(out).map(|(x, y)| -x * y * y).collect();
                self.accumulate(grads, a, d);
            }
            Op::Square(a) => {
                let ad = val(a).data();
                let d = g.iter().zip(ad).map(|(x, y)| 2.0 * x * y).collect();
                self.accumulate(grads, a, d);
            }
            Op::LogSoftmax(a) => {
                let n = node.value.cols();
                let mut d = Vec::with_capacity(g.len());
                for (grow, orow) in g.chunks_exact(n).zip(out.chunks_exact(n)) {
                    let gs: f64 = grow.iter().sum();
                    d.extend(grow.iter().zip(orow).map(|(x, lp)| x - lp.exp() * gs));
                }
                self.accumulate(grads, a, d);
            }
            Op::Softmax(a) => {
                let n = node.value.cols();
                let mut d = Vec::with_capacity(g.len());
                for (grow, srow) in g.chunks_exact(n).zip(out.chunks_exact(n)) {
                    let dot: f64 = grow.iter().zip(srow).map(|(x, s)| x * s).sum();
                    d.extend(grow.iter().zip(srow).map(|(x, s)| s * (x - dot)));
                }
                self.accumulate(grads, a, d);
            }
            Op::LogSumExp(a) => {
                let n = val(a).cols();
                let ad = val(a).data();
                let mut d = Vec::with_capacity(ad.len());
                for ((arow, lse), gv) in ad.chunks_exact(n).zip(out).zip(g) {
                    d.extend(arow.iter().map(|x| gv * (x - lse).exp()));
                }
                self.accumulate(grads, a, d);
            }
            Op::SumCols(a) => {
                let n = val(a).cols();
                let d = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv, n))
                    .collect();
                self.accumulate(grads, a, d);
            }
            Op::SumGroups(a, group) => {
                let d = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv, group))
                    .collect();
                self.accumulate(grads, a, d);
            }
            Op::Sum(a) => {
                let len = val(a).len();
                self.accumulate(grads, a, vec![g[0]; len]);
            }
            Op::Mean(a) => {
                let len = val(a).len();
                self.accumulate(grads, a, vec![g[0] / len as f64; len]);
            }
            Op::Columns(a, start) => {
                let (_, n) = dims(val(a));
                let len = node.value.cols();
                let mut d = vec![0.0; val(a).len()];
                for (drow, grow) in d.chunks_exact_mut(n).zip(g.chunks_exact(len)) {
                    drow[start..start + len].copy_from_slice(grow);
                }
                self.accumulate(grads, a, d);
            }
            Op::Tile(a, times) => {
                let n = val(a).cols();
                let mut d = Vec::with_capacity(val(a).len());
                for grow in g.chunks_exact(n * times) {
                    let mut acc = grow[..n].to_vec();
                    for t in 1..times {
                        for (x, y) in acc.iter_mut().zip(&grow[t * n..(t + 1) * n]) {
                            *x += y;
                        }
                    }
                    d.extend(acc);
                }
                self.accumulate(grads, a, d);
            }
            Op::RepeatEach(a, times) => {
                let d = g.chunks_exact(times).map(|c| c.iter().sum()).collect();
                self.accumulate(grads, a, d);
            }
        }
    }
}

fn row_lse(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
