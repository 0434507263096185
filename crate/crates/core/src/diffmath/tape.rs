use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    // The flag marks a rhs broadcast over the leading axis of the lhs.
    Add(usize, usize, bool),
    Sub(usize, usize, bool),
    Mul(usize, usize, bool),
    Maximum(usize, usize, bool),
    Concat(Vec<usize>),
    Slice { src: usize, start: usize },
    Sum(usize),
    Mean(usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Abs(usize),
    Softmax(usize),
    LogSoftmax(usize),
    StraightThrough(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run record of tensor operations for reverse-mode differentiation.
///
/// Every operation appends a node whose inputs already exist on the tape, so
/// the node order is a topological order. Values that do not depend on any
/// leaf are marked as not needing gradients and are skipped during backward.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf of a tape.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var.0)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var.0)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
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

/// `c[m,n] += a[m,k] * b[k,n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe views that stay inside the provided slices,
    // and `c` does not alias `a` or `b` because it is a unique borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    /// Records a differentiable input (parameter or data we want gradients for).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        check_finite("leaf", &value)?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        check_finite("constant", &value)?;
        Ok(self.push(value, Op::Constant, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            self.value(a).data(),
            k,
            1,
            self.value(b).data(),
            n,
            1,
            &mut out,
        );
        let t = Tensor::new(vec![m, n], out)?;
        check_finite("matmul", &t)?;
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(t, Op::MatMul(a.0, b.0), ng))
    }

    /// Shape check for elementwise binary ops. Returns whether `b` broadcasts
    /// over the leading axis of `a`.
    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(false)
        } else if sa.len() == sb.len() + 1 && &sa[1..] == sb {
            Ok(true)
        } else {
            Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize, bool) -> Op,
    ) -> Result<Var> {
        let bc = self.broadcast(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b).data();
        let nb = vb.len();
        let data: Vec<f64> = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, vb[if bc { i % nb } else { i }]))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        check_finite(name, &t)?;
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(t, op(a.0, b.0, bc), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul_elementwise", a, b, |x, y| x * y, Op::Mul)
    }

    /// Elementwise maximum; on ties the gradient goes to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, |x, y| if x >= y { x } else { y }, Op::Maximum)
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let t = self.value(a).map(f);
        check_finite(name, &t)?;
        let ng = self.ng(a.0);
        Ok(self.push(t, op, ng))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, f64::ln, Op::Log(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, f64::abs, Op::Abs(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a.0, c))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let t = Tensor::scalar(s);
        check_finite("sum", &t)?;
        let ng = self.ng(a.0);
        Ok(self.push(t, Op::Sum(a.0), ng))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::invalid("mean: empty tensor"));
        }
        let t = Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64);
        check_finite("mean", &t)?;
        let ng = self.ng(a.0);
        Ok(self.push(t, Op::Mean(a.0), ng))
    }

    /// Concatenates along the last axis. All leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_last_axis: no inputs"))?;
        let lead = self.shape(*first);
        let lead = &lead[..lead.len().saturating_sub(1)];
        let mut width = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.is_empty() || &s[..s.len() - 1] != lead {
                return Err(Error::Shape {
                    op: "concat_last_axis",
                    lhs: self.shape(*first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            width += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(width);
        let t = Tensor::new(shape, data)?;
        let ng = parts.iter().any(|p| self.ng(p.0));
        Ok(self.push(t, Op::Concat(parts.iter().map(|p| p.0).collect()), ng))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        let w = v.last_dim();
        if v.shape().is_empty() || start > end || end > w {
            return Err(Error::Shape {
                op: "slice",
                lhs: v.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let mut data = Vec::with_capacity(v.rows() * (end - start));
        for r in 0..v.rows() {
            data.extend_from_slice(&v.row(r)[start..end]);
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let t = Tensor::new(shape, data)?;
        let ng = self.ng(a.0);
        Ok(self.push(t, Op::Slice { src: a.0, start }, ng))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.shape().is_empty() {
            return Err(Error::Shape {
                op: "softmax_last_axis",
                lhs: vec![],
                rhs: vec![],
            });
        }
        let mut data = Vec::with_capacity(v.len());
        for r in 0..v.rows() {
            let row = v.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|&x| (x - max).exp()));
            let z: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|x| *x /= z);
        }
        let t = Tensor::new(v.shape().to_vec(), data)?;
        check_finite("softmax_last_axis", &t)?;
        let ng = self.ng(a.0);
        Ok(self.push(t, Op::Softmax(a.0), ng))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.shape().is_empty() {
            return Err(Error::Shape {
                op: "log_softmax_last_axis",
                lhs: vec![],
                rhs: vec![],
            });
        }
        let mut data = Vec::with_capacity(v.len());
        for r in 0..v.rows() {
            let row = v.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&x| x - lse));
        }
        let t = Tensor::new(v.shape().to_vec(), data)?;
        check_finite("log_softmax_last_axis", &t)?;
        let ng = self.ng(a.0);
        Ok(self.push(t, Op::LogSoftmax(a.0), ng))
    }

    /// Forward value `hard`, backward identity into `soft`.
    pub fn straight_through(&mut self, hard: Tensor, soft: Var) -> Result<Var> {
        if hard.shape() != self.shape(soft) {
            return Err(Error::Shape {
                op: "straight_through",
                lhs: hard.shape().to_vec(),
                rhs: self.shape(soft).to_vec(),
            });
        }
        check_finite("straight_through", &hard)?;
        let ng = self.ng(soft.0);
        Ok(self.push(hard, Op::StraightThrough(soft.0), ng))
    }

    /// Reverse sweep from a scalar `loss`. Every leaf on the tape gets an
    /// entry; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match adj[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(i, &g, &mut adj);
        }

        let mut grads = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf = node.op {
                let shape = node.value.shape().to_vec();
                let t = match adj[i].take() {
                    Some(g) => Tensor::new(shape, g)?,
                    None => Tensor::zeros(&shape),
                };
                grads.insert(i, t);
            }
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, adj: &'a mut [Option<Vec<f64>>], j: usize) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[j].needs_grad {
            return None;
        }
        let n = self.nodes[j].value.len();
        Some(adj[j].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.nodes[*a].needs_grad {
                    let mut da = vec![0.0; m * k];
                    // G[m,n] * B^T[n,k]
                    gemm_acc(m, n, k, g, n, 1, vb.data(), 1, n, &mut da);
                    let s = self.slot(adj, *a).unwrap();
                    s.iter_mut().zip(&da).for_each(|(x, d)| *x += d);
                }
                if self.nodes[*b].needs_grad {
                    let mut db = vec![0.0; k * n];
                    // A^T[k,m] * G[m,n]
                    gemm_acc(k, m, n, va.data(), 1, k, g, n, 1, &mut db);
                    let s = self.slot(adj, *b).unwrap();
                    s.iter_mut().zip(&db).for_each(|(x, d)| *x += d);
                }
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if let Some(s) = self.slot(adj, *a) {
                    s.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
                if let Some(s) = self.slot(adj, *b) {
                    let nb = s.len();
                    for (idx, d) in g.iter().enumerate() {
                        s[if *bc { idx % nb } else { idx }] += sign * d;
                    }
                }
            }
            Op::Mul(a, b, bc) => {
                let va = self.nodes[*a].value.data();
                let vb = self.nodes[*b].value.data();
                let nb = vb.len();
                let bi = |idx: usize| if *bc { idx % nb } else { idx };
                if let Some(s) = self.slot(adj, *a) {
                    for (idx, d) in g.iter().enumerate() {
                        s[idx] += d * vb[bi(idx)];
                    }
                }
                if let Some(s) = self.slot(adj, *b) {
                    for (idx, d) in g.iter().enumerate() {
                        s[bi(idx)] += d * va[idx];
                    }
                }
            }
            Op::Maximum(a, b, bc) => {
                let va = self.nodes[*a].value.data();
                let vb = self.nodes[*b].value.data();
                let nb = vb.len();
                let bi = |idx: usize| if *bc { idx % nb } else { idx };
                if let Some(s) = self.slot(adj, *a) {
                    for (idx, d) in g.iter().enumerate() {
                        if va[idx] >= vb[bi(idx)] {
                            s[idx] += d;
                        }
                    }
                }
                if let Some(s) = self.slot(adj, *b) {
                    for (idx, d) in g.iter().enumerate() {
                        if va[idx] < vb[bi(idx)] {
                            s[bi(idx)] += d;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let width = self.nodes[i].value.last_dim();
                let rows = self.nodes[i].value.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[*p].value.last_dim();
                    if let Some(s) = self.slot(adj, *p) {
                        for r in 0..rows {
                            let src = &g[r * width + offset..r * width + offset + w];
                            s[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, d)| *x += d);
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { src, start } => {
                let w_out = self.nodes[i].value.last_dim();
                let w_in = self.nodes[*src].value.last_dim();
                let rows = self.nodes[i].value.rows();
                if let Some(s) = self.slot(adj, *src) {
                    for r in 0..rows {
                        let dst = &mut s[r * w_in + start..r * w_in + start + w_out];
                        dst.iter_mut()
                            .zip(&g[r * w_out..(r + 1) * w_out])
                            .for_each(|(x, d)| *x += d);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.slot(adj, *a) {
                    s.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(s) = self.slot(adj, *a) {
                    let d = g[0] / s.len() as f64;
                    s.iter_mut().for_each(|x| *x += d);
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = self.slot(adj, *a) {
                    s.iter_mut().zip(g).for_each(|(x, d)| *x += c * d);
                }
            }
            Op::Relu(a) => {
                let va = self.nodes[*a].value.data();
                if let Some(s) = self.slot(adj, *a) {
                    for (idx, d) in g.iter().enumerate() {
                        if va[idx] > 0.0 {
                            s[idx] += d;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(s) = self.slot(adj, *a) {
                    for (idx, d) in g.iter().enumerate() {
                        let y = out[idx];
                        s[idx] += d * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(s) = self.slot(adj, *a) {
                    for (idx, d) in g.iter().enumerate() {
                        let y = out[idx];
                        s[idx] += d * (1.0 - y * y);
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(s) = self.slot(adj, *a) {
                    for (idx, d) in g.iter().enumerate() {
                        s[idx] += d * out[idx];
                    }
                }
            }
            Op::Log(a) => {
                let va = self.nodes[*a].value.data();
                if let Some(s) = self.slot(adj, *a) {
                    for (idx, d) in g.iter().enumerate() {
                        s[idx] += d / va[idx];
                    }
                }
            }
            Op::Abs(a) => {
                let va = self.nodes[*a].value.data();
                if let Some(s) = self.slot(adj, *a) {
                    for (idx, d) in g.iter().enumerate() {
                        // subgradient 0 at the kink
                        let sign = if va[idx] > 0.0 {
                            1.0
                        } else if va[idx] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        s[idx] += d * sign;
                    }
                }
            }
            Op::Softmax(a) => {
                let w = self.nodes[i].value.last_dim();
                if let Some(s) = self.slot(adj, *a) {
                    for r in 0..self.nodes[i].value.rows() {
                        let y = &out[r * w..(r + 1) * w];
                        let gr = &g[r * w..(r + 1) * w];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..w {
                            s[r * w + c] += y[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let w = self.nodes[i].value.last_dim();
                if let Some(s) = self.slot(adj, *a) {
                    for r in 0..self.nodes[i].value.rows() {
                        let y = &out[r * w..(r + 1) * w];
                        let gr = &g[r * w..(r + 1) * w];
                        let total: f64 = gr.iter().sum();
                        for c in 0..w {
                            s[r * w + c] += gr[c] - y[c].exp() * total;
                        }
                    }
                }
            }
            Op::StraightThrough(soft) => {
                if let Some(s) = self.slot(adj, *soft) {
                    s.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
            }
        }
    }
}
