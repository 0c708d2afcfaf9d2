//! Reverse-mode tape over [`Tensor`] values.
//!
//! Every op appends a node holding its forward value. `backward` walks the
//! nodes in reverse insertion order, which is a valid reverse topological
//! order because inputs always precede their consumers.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    AddRowBias(Var, Var),
    Concat(Vec<Var>),
    Row(Var, usize),
    SelectRows(Var, Vec<usize>),
    MeanRows(Var, Vec<usize>),
    StackRows(Vec<Var>),
    Transpose(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    Sum(Var),
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn softmax_col(x: &Tensor) -> Vec<f64> {
    let m = x.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.data.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf for a trainable tensor; repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = ta.matmul(tb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    /// `m + 1 * bias^T`: adds the column vector `bias` to every row of `m`.
    pub fn add_row_bias(&mut self, m: Var, bias: Var) -> Result<Var> {
        let (tm, tb) = (self.value(m), self.value(bias));
        if tb.cols != 1 || tb.rows != tm.cols {
            return Err(shape_err("add_row_bias", tm, tb));
        }
        let mut out = tm.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                out.data[r * out.cols + c] += tb.data[c];
            }
        }
        Ok(self.push(out, Op::AddRowBias(m, bias)))
    }

    /// Vertical concatenation of column vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols != 1 {
                return Err(shape_err("concat", t, t));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(self.push(Tensor::column(data), Op::Concat(parts.to_vec())))
    }

    /// Row `i` of a matrix as a column vector.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let t = self.value(m);
        if i >= t.rows {
            return Err(Error::Dimension {
                expected: t.rows,
                got: i,
            });
        }
        let out = Tensor::column(t.row(i).to_vec());
        Ok(self.push(out, Op::Row(m, i)))
    }

    pub fn select_rows(&mut self, m: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(m);
        let mut data = Vec::with_capacity(idx.len() * t.cols);
        for &i in idx {
            if i >= t.rows {
                return Err(Error::Dimension {
                    expected: t.rows,
                    got: i,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(idx.len(), t.cols, data);
        Ok(self.push(out, Op::SelectRows(m, idx.to_vec())))
    }

    /// Mean of the selected rows, as a column vector.
    pub fn mean_rows(&mut self, m: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(m);
        if idx.is_empty() {
            return Err(Error::Dimension {
                expected: 1,
                got: 0,
            });
        }
        let mut acc = vec![0.0; t.cols];
        for &i in idx {
            if i >= t.rows {
                return Err(Error::Dimension {
                    expected: t.rows,
                    got: i,
                });
            }
            for (a, v) in acc.iter_mut().zip(t.row(i)) {
                *a += v;
            }
        }
        let k = idx.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Ok(self.push(Tensor::column(acc), Op::MeanRows(m, idx.to_vec())))
    }

    /// Stacks equal-length column vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::Dimension {
                expected: 1,
                got: 0,
            });
        };
        let d = self.value(first).rows;
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let t = self.value(r);
            if t.cols != 1 || t.rows != d {
                return Err(shape_err("stack_rows", self.value(first), t));
            }
            data.extend_from_slice(&t.data);
        }
        let out = Tensor::from_vec(rows.len(), d, data);
        Ok(self.push(out, Op::StackRows(rows.to_vec())))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.cols != 1 || t.rows == 0 {
            return Err(shape_err("softmax", t, t));
        }
        let out = Tensor::column(softmax_col(t));
        Ok(self.push(out, Op::Softmax(a)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.cols != 1 || t.rows == 0 {
            return Err(shape_err("log_softmax", t, t));
        }
        let m = t.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + t.data.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let out = t.map(|v| v - lse);
        Ok(self.push(out, Op::LogSoftmax(a)))
    }

    /// Element `i` of a column vector as a `1 x 1` scalar.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if i >= t.len() {
            return Err(Error::Label {
                label: i,
                len: t.len(),
            });
        }
        let out = Tensor::scalar(t.data[i]);
        Ok(self.push(out, Op::Pick(a, i)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(out, Op::Sum(a))
    }

    /// `sum_i w_i * s_i` over scalar vars. An empty list yields constant 0.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(shape_err("weighted_sum", t, t));
            }
            total += w * t.data[0];
        }
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec())))
    }

    /// Gradients of scalar `loss` w.r.t. every node.
    pub fn gradients(&self, loss: Var) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let lt = &self.nodes[loss.0].value;
        grads[loss.0] = Some(Tensor::from_vec(lt.rows, lt.cols, vec![1.0; lt.len()]));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul(&tb.transpose()));
                    acc(&mut grads, *b, ta.transpose().matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = g.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
                    let gb = g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, ga));
                    acc(&mut grads, *b, Tensor::from_vec(g.rows, g.cols, gb));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.map(|v| v * c)),
                Op::Tanh(a) => {
                    let d = g.data.iter().zip(&y.data).map(|(g, y)| g * (1.0 - y * y)).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, d));
                }
                Op::Sigmoid(a) => {
                    let d = g.data.iter().zip(&y.data).map(|(g, y)| g * y * (1.0 - y)).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, d));
                }
                Op::AddRowBias(m, b) => {
                    let mut gb = vec![0.0; g.cols];
                    for r in 0..g.rows {
                        for (o, v) in gb.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *m, g.clone());
                    acc(&mut grads, *b, Tensor::column(gb));
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).rows;
                        acc(&mut grads, p, Tensor::column(g.data[off..off + n].to_vec()));
                        off += n;
                    }
                }
                Op::Row(m, r) => {
                    let tm = self.value(*m);
                    let mut gm = Tensor::zeros(tm.rows, tm.cols);
                    gm.data[r * tm.cols..(r + 1) * tm.cols].copy_from_slice(&g.data);
                    acc(&mut grads, *m, gm);
                }
                Op::SelectRows(m, idx) => {
                    let tm = self.value(*m);
                    let mut gm = Tensor::zeros(tm.rows, tm.cols);
                    for (k, &r) in idx.iter().enumerate() {
                        for (o, v) in gm.data[r * tm.cols..(r + 1) * tm.cols]
                            .iter_mut()
                            .zip(g.row(k))
                        {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *m, gm);
                }
                Op::MeanRows(m, idx) => {
                    let tm = self.value(*m);
                    let mut gm = Tensor::zeros(tm.rows, tm.cols);
                    let k = idx.len() as f64;
                    for &r in idx {
                        for (o, v) in gm.data[r * tm.cols..(r + 1) * tm.cols]
                            .iter_mut()
                            .zip(&g.data)
                        {
                            *o += v / k;
                        }
                    }
                    acc(&mut grads, *m, gm);
                }
                Op::StackRows(rows) => {
                    for (k, &r) in rows.iter().enumerate() {
                        acc(&mut grads, r, Tensor::column(g.row(k).to_vec()));
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Softmax(a) => {
                    let dot: f64 = g.data.iter().zip(&y.data).map(|(g, y)| g * y).sum();
                    let d = g.data.iter().zip(&y.data).map(|(g, y)| y * (g - dot)).collect();
                    acc(&mut grads, *a, Tensor::column(d));
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = g.data.iter().sum();
                    let d = g
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(g, ly)| g - ly.exp() * total)
                        .collect();
                    acc(&mut grads, *a, Tensor::column(d));
                }
                Op::Pick(a, k) => {
                    let ta = self.value(*a);
                    let mut ga = Tensor::zeros(ta.rows, ta.cols);
                    ga.data[*k] = g.data[0];
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ta = self.value(*a);
                    acc(&mut grads, *a, Tensor::from_vec(ta.rows, ta.cols, vec![g.data[0]; ta.len()]));
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        acc(&mut grads, v, Tensor::scalar(w * g.data[0]));
                    }
                }
            }
            grads[i] = Some(g);
        }
        grads
    }

    /// Backpropagates `loss` and adds parameter gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) {
        let grads = self.gradients(loss);
        for (&id, &v) in &self.params {
            if let Some(g) = &grads[v.0] {
                store.accumulate(id, g);
            }
        }
    }
}
