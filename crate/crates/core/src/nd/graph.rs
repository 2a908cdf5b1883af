use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reductions are sums over every element (and every batch row).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `-sum t * log p` on probability rows.
    CrossEntropy,
    /// Cross-entropy fused with a row softmax; takes logits.
    SoftmaxCrossEntropy,
    /// `sum (p - t)^2`.
    SquaredError,
    /// Binary cross-entropy on probabilities strictly inside (0, 1).
    Bce,
}

#[derive(Clone, Debug)]
pub enum Target {
    /// One class index per prediction row.
    Classes(Vec<usize>),
    /// Dense target with the prediction's shape (one-hot rows, regression targets).
    Dense(Tensor),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    Sum(Var),
    SliceCols { src: Var, start: usize },
    Loss { kind: LossKind, pred: Var, target: Target },
    GaussianKl { mu: Var, logvar: Var },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Arc<Tensor>,
    requires_grad: bool,
}

/// Append-only tape. Inputs of every node precede it, so a reverse sweep
/// over the node list is a valid topological order for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients of a scalar root, indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient w.r.t. `v`, zero-filled when `v` did not influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn row_layout(shape: &[usize]) -> Option<(usize, usize)> {
    match shape.len() {
        1 => Some((1, shape[0])),
        2 => Some((shape[0], shape[1])),
        _ => None,
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `g [m x n] * b^T` where `b` is `[k x n]`.
fn matmul_nt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            out[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T * g` where `a` is `[m x k]` and `g` is `[m x n]`.
fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, gv) in out_row.iter_mut().zip(g_row) {
                *o += aip * gv;
            }
        }
    }
    out
}

fn softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[r * cols..(r + 1) * cols];
        let mut total = 0.0;
        for (d, v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.push_shared(op, Arc::new(value), requires_grad)
    }

    fn push_shared(&mut self, op: Op, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Constant leaf sharing storage with the caller (model weights).
    pub fn constant_shared(&mut self, t: Arc<Tensor>) -> Var {
        self.push_shared(Op::Leaf, t, false)
    }

    /// Trainable leaf sharing storage with the caller.
    pub fn parameter_shared(&mut self, t: Arc<Tensor>) -> Var {
        let v = self.push_shared(Op::Leaf, t, true);
        self.params.push(v);
        v
    }

    /// Leaf input whose gradient is reported by `backward`.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Trainable leaf; also listed by [`Graph::parameters`].
    pub fn parameter(&mut self, t: Tensor) -> Var {
        let v = self.push(Op::Leaf, t, true);
        self.params.push(v);
        v
    }

    pub fn parameters(&self) -> &[Var] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        check_finite("matmul", &out)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_raw(vec![m, n], out), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (shape, data): (Vec<usize>, Vec<f64>) = if ta.shape() == tb.shape() {
            (
                ta.shape().to_vec(),
                ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect(),
            )
        } else if ta.is_scalar() {
            let s = ta.data()[0];
            (tb.shape().to_vec(), tb.data().iter().map(|y| f(s, *y)).collect())
        } else if tb.is_scalar() {
            let s = tb.data()[0];
            (ta.shape().to_vec(), ta.data().iter().map(|x| f(*x, s)).collect())
        } else {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        };
        check_finite(name, &data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(op, Tensor::from_raw(shape, data), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(a);
        let data: Vec<f64> = t.data().iter().map(|x| f(*x)).collect();
        check_finite(name, &data)?;
        let shape = t.shape().to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(op, Tensor::from_raw(shape, data), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|x| *x <= 0.0) {
            return Err(Error::NonPositive { op: "log" });
        }
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    /// Row-wise softmax of a `[batch x C]` (or rank-1 `[C]`) tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = row_layout(t.shape()).ok_or_else(|| Error::ShapeMismatch {
            op: "softmax",
            lhs: t.shape().to_vec(),
            rhs: vec![],
        })?;
        let data = softmax_rows(t.data(), rows, cols);
        check_finite("softmax", &data)?;
        let shape = t.shape().to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(Op::Softmax(a), Tensor::from_raw(shape, data), rg))
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        check_finite("sum", &[s])?;
        let rg = self.needs(&[a]);
        Ok(self.push(Op::Sum(a), Tensor::scalar(s), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, src: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(src);
        let (rows, cols) = match t.shape() {
            [r, c] if start < end && end <= *c => (*r, *c),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "slice_cols",
                    lhs: s.to_vec(),
                    rhs: vec![start, end],
                })
            }
        };
        let width = end - start;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * cols + start..r * cols + end]);
        }
        let rg = self.needs(&[src]);
        Ok(self.push(
            Op::SliceCols { src, start },
            Tensor::from_raw(vec![rows, width], data),
            rg,
        ))
    }

    pub fn loss(&mut self, kind: LossKind, pred: Var, target: Target) -> Result<Var> {
        let p = self.value(pred);
        let value = match (&kind, &target) {
            (_, Target::Dense(t)) if t.shape() != p.shape() => {
                return Err(Error::ShapeMismatch {
                    op: "loss",
                    lhs: p.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                })
            }
            (LossKind::SquaredError, Target::Dense(t)) => p
                .data()
                .iter()
                .zip(t.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
            (LossKind::Bce, Target::Dense(t)) => {
                if p.data().iter().any(|v| *v <= 0.0 || *v >= 1.0) {
                    return Err(Error::NonPositive { op: "bce" });
                }
                -p.data()
                    .iter()
                    .zip(t.data())
                    .map(|(p, t)| t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                    .sum::<f64>()
            }
            (LossKind::CrossEntropy, _) => {
                let dense = dense_target(p.shape(), &target)?;
                let mut total = 0.0;
                for (pv, tv) in p.data().iter().zip(dense.data()) {
                    if *tv != 0.0 {
                        if *pv <= 0.0 {
                            return Err(Error::NonPositive { op: "cross_entropy" });
                        }
                        total -= tv * pv.ln();
                    }
                }
                total
            }
            (LossKind::SoftmaxCrossEntropy, _) => {
                let dense = dense_target(p.shape(), &target)?;
                let (rows, cols) = row_layout(p.shape()).expect("validated by dense_target");
                let mut total = 0.0;
                for r in 0..rows {
                    let z = &p.data()[r * cols..(r + 1) * cols];
                    let t = &dense.data()[r * cols..(r + 1) * cols];
                    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    let mass: f64 = t.iter().sum();
                    total += mass * lse - z.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
                }
                total
            }
            (_, Target::Classes(_)) => {
                return Err(Error::InvalidConfig(format!(
                    "{kind:?} needs a dense target"
                )))
            }
        };
        check_finite("loss", &[value])?;
        let rg = self.needs(&[pred]);
        Ok(self.push(Op::Loss { kind, pred, target }, Tensor::scalar(value), rg))
    }

    /// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over all entries.
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        let (m, lv) = (self.value(mu), self.value(logvar));
        if m.shape() != lv.shape() {
            return Err(Error::ShapeMismatch {
                op: "gaussian_kl",
                lhs: m.shape().to_vec(),
                rhs: lv.shape().to_vec(),
            });
        }
        let value = 0.5
            * m.data()
                .iter()
                .zip(lv.data())
                .map(|(m, l)| m * m + l.exp() - l - 1.0)
                .sum::<f64>();
        check_finite("gaussian_kl", &[value])?;
        let rg = self.needs(&[mu, logvar]);
        Ok(self.push(Op::GaussianKl { mu, logvar }, Tensor::scalar(value), rg))
    }

    /// Reverse sweep from a scalar root. Fan-out contributions are summed.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let y = node.value.data();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    if self.nodes[a.0].requires_grad {
                        let ga = matmul_nt(&g, self.value(*b).data(), m, k, n);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb = matmul_tn(self.value(*a).data(), &g, m, k, n);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    self.broadcast_back(&mut grads, *a, &g, |_| 1.0);
                    self.broadcast_back(&mut grads, *b, &g, |_| 1.0);
                }
                Op::Sub(a, b) => {
                    self.broadcast_back(&mut grads, *a, &g, |_| 1.0);
                    self.broadcast_back(&mut grads, *b, &g, |_| -1.0);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[a.0].value.clone(), self.nodes[b.0].value.clone());
                    self.broadcast_back(&mut grads, *a, &g, |i| pick(&vb, i));
                    self.broadcast_back(&mut grads, *b, &g, |i| pick(&va, i));
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.iter().map(|v| v * c).collect());
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let d = g
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let d = g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    let d = g.iter().zip(y).map(|(g, e)| g * e).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    let d = g.iter().zip(x).map(|(g, x)| g / x).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Softmax(a) => {
                    let (rows, cols) = row_layout(node.value.shape()).expect("checked in forward");
                    let mut d = vec![0.0; y.len()];
                    for r in 0..rows {
                        let span = r * cols..(r + 1) * cols;
                        let (gr, yr) = (&g[span.clone()], &y[span.clone()]);
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((dv, gv), yv) in d[span].iter_mut().zip(gr).zip(yr) {
                            *dv = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::SliceCols { src, start } => {
                    let (rows, cols) = (self.shape(*src)[0], self.shape(*src)[1]);
                    let width = node.value.shape()[1];
                    let mut d = vec![0.0; rows * cols];
                    for r in 0..rows {
                        d[r * cols + start..r * cols + start + width]
                            .copy_from_slice(&g[r * width..(r + 1) * width]);
                    }
                    accumulate(&mut grads, *src, d);
                }
                Op::Loss { kind, pred, target } => {
                    let d = self.loss_grad(*kind, *pred, target, g[0])?;
                    accumulate(&mut grads, *pred, d);
                }
                Op::GaussianKl { mu, logvar } => {
                    let m = self.value(*mu).data();
                    accumulate(&mut grads, *mu, m.iter().map(|v| g[0] * v).collect());
                    let lv = self.value(*logvar).data();
                    accumulate(
                        &mut grads,
                        *logvar,
                        lv.iter().map(|l| g[0] * 0.5 * (l.exp() - 1.0)).collect(),
                    );
                }
            }
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|d| Tensor::from_raw(n.value.shape().to_vec(), d))
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn broadcast_back(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        g: &[f64],
        partial: impl Fn(usize) -> f64,
    ) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let d = if self.value(v).is_scalar() && g.len() != 1 {
            vec![g.iter().enumerate().map(|(i, g)| g * partial(i)).sum()]
        } else {
            g.iter().enumerate().map(|(i, g)| g * partial(i)).collect()
        };
        accumulate(grads, v, d);
    }

    fn loss_grad(&self, kind: LossKind, pred: Var, target: &Target, g: f64) -> Result<Vec<f64>> {
        let p = self.value(pred);
        Ok(match kind {
            LossKind::SquaredError | LossKind::Bce => {
                let Target::Dense(t) = target else {
                    unreachable!("rejected in forward")
                };
                p.data()
                    .iter()
                    .zip(t.data())
                    .map(|(p, t)| match kind {
                        LossKind::SquaredError => g * 2.0 * (p - t),
                        _ => g * (-t / p + (1.0 - t) / (1.0 - p)),
                    })
                    .collect()
            }
            LossKind::CrossEntropy => {
                let dense = dense_target(p.shape(), target)?;
                p.data()
                    .iter()
                    .zip(dense.data())
                    .map(|(p, t)| if *t != 0.0 { -g * t / p } else { 0.0 })
                    .collect()
            }
            LossKind::SoftmaxCrossEntropy => {
                let dense = dense_target(p.shape(), target)?;
                let (rows, cols) = row_layout(p.shape()).expect("checked in forward");
                let sm = softmax_rows(p.data(), rows, cols);
                let mut d = vec![0.0; sm.len()];
                for r in 0..rows {
                    let t = &dense.data()[r * cols..(r + 1) * cols];
                    let mass: f64 = t.iter().sum();
                    for c in 0..cols {
                        let i = r * cols + c;
                        d[i] = g * (mass * sm[i] - t[c]);
                    }
                }
                d
            }
        })
    }
}

fn pick(t: &Tensor, i: usize) -> f64 {
    if t.is_scalar() {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(d) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

fn dense_target(shape: &[usize], target: &Target) -> Result<Tensor> {
    let (rows, cols) = row_layout(shape).ok_or_else(|| Error::ShapeMismatch {
        op: "loss",
        lhs: shape.to_vec(),
        rhs: vec![],
    })?;
    match target {
        Target::Dense(t) => Ok(t.clone()),
        Target::Classes(classes) => {
            if classes.len() != rows {
                return Err(Error::LengthMismatch {
                    expected: rows,
                    found: classes.len(),
                });
            }
            let mut data = vec![0.0; rows * cols];
            for (r, &c) in classes.iter().enumerate() {
                if c >= cols {
                    return Err(Error::InvalidClass {
                        index: c,
                        classes: cols,
                    });
                }
                data[r * cols + c] = 1.0;
            }
            Ok(Tensor::from_raw(shape.to_vec(), data))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_ones() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = g.constant(Tensor::identity(2));
        let p = g.matmul(a, i).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
        let ones = g.constant(t(&[2, 1], &[1.0, 1.0]));
        let q = g.matmul(a, ones).unwrap();
        assert_eq!(g.value(q).data(), &[3.0, 7.0]);
        assert_eq!(g.value(q).shape(), &[2, 1]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn elementwise_basics() {
        let mut g = Graph::new();
        let z = g.input(Tensor::scalar(0.0));
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s).item(), Some(0.5));
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(z).item(), Some(0.25));

        let x = g.constant(t(&[2], &[-3.0, 3.0]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 3.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(g.log(x), Err(Error::NonPositive { .. })));
    }

    #[test]
    fn exp_overflow_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1000.0));
        assert!(matches!(g.exp(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn broadcasting_only_for_scalars() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[1, 3]));
        assert!(g.add(a, b).is_err());
        let s = g.constant(Tensor::scalar(2.0));
        let c = g.add(a, s).unwrap();
        assert_eq!(g.value(c).data(), &[2.0; 6]);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3, 2], &[0.0, 0.0, 1000.0, 1000.0, 1f64.ln(), 3f64.ln()]));
        let s = g.softmax(x).unwrap();
        let v = g.value(s).data();
        assert_eq!(&v[..4], &[0.5; 4]);
        assert!((v[4] - 0.25).abs() < 1e-15 && (v[5] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn loss_examples() {
        let mut g = Graph::new();
        let p = g.constant(t(&[1, 2], &[0.0, 1.0]));
        let ce = g
            .loss(LossKind::CrossEntropy, p, Target::Classes(vec![1]))
            .unwrap();
        assert_eq!(g.value(ce).item(), Some(0.0));

        let mu = g.constant(Tensor::zeros(&[1, 3]));
        let lv = g.constant(Tensor::zeros(&[1, 3]));
        let kl = g.gaussian_kl(mu, lv).unwrap();
        assert_eq!(g.value(kl).item(), Some(0.0));

        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let se = g
            .loss(LossKind::SquaredError, a, Target::Dense(t(&[2], &[1.0, 2.0])))
            .unwrap();
        assert_eq!(g.value(se).item(), Some(0.0));
        let z = g.constant(Tensor::zeros(&[2]));
        let se = g
            .loss(LossKind::SquaredError, z, Target::Dense(t(&[2], &[3.0, 4.0])))
            .unwrap();
        assert_eq!(g.value(se).item(), Some(25.0));
    }

    #[test]
    fn invalid_class_index() {
        let mut g = Graph::new();
        let p = g.constant(t(&[1, 2], &[0.5, 0.5]));
        let err = g.loss(LossKind::CrossEntropy, p, Target::Classes(vec![2]));
        assert!(matches!(err, Err(Error::InvalidClass { index: 2, classes: 2 })));
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        assert_eq!(g.backward(y).unwrap().wrt(x).item(), Some(6.0));
    }

    #[test]
    fn constant_graph_has_zero_gradients() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.wrt(x).item(), Some(0.0));
    }

    #[test]
    fn non_scalar_root() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn fan_out_sums_exactly() {
        for n in 1..6 {
            let mut g = Graph::new();
            let x = g.input(Tensor::vector(vec![0.3, -1.2]).unwrap());
            let paths: Vec<Var> = (0..n).map(|_| g.tanh(x).unwrap()).collect();
            let mut acc = paths[0];
            for p in &paths[1..] {
                acc = g.add(acc, *p).unwrap();
            }
            let root = g.sum(acc).unwrap();
            let many = g.backward(root).unwrap().wrt(x);

            let mut g1 = Graph::new();
            let x1 = g1.input(Tensor::vector(vec![0.3, -1.2]).unwrap());
            let p1 = g1.tanh(x1).unwrap();
            let r1 = g1.sum(p1).unwrap();
            let one = g1.backward(r1).unwrap().wrt(x1);
            for (m, o) in many.data().iter().zip(one.data()) {
                assert_eq!(*m, n as f64 * o);
            }
        }
    }

    #[test]
    fn matmul_sum_gradient_is_ones_times_bt() {
        let a_data: Vec<f64> = (0..35).map(|i| (i as f64 * 0.37).sin()).collect();
        let b_data: Vec<f64> = (0..21).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut g = Graph::new();
        let a = g.input(t(&[5, 7], &a_data));
        let b = g.constant(t(&[7, 3], &b_data));
        let p = g.matmul(a, b).unwrap();
        let s = g.sum(p).unwrap();
        let ga = g.backward(s).unwrap().wrt(a);
        for i in 0..5 {
            for k in 0..7 {
                let expected: f64 = b_data[k * 3..k * 3 + 3].iter().sum();
                assert!((ga.data()[i * 7 + k] - expected).abs() < 1e-12);
            }
        }
    }
}
