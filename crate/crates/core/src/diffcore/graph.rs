//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value. Nodes are
//! created in topological order, so the backward pass is a single reverse
//! sweep over the tape starting at the loss node.

use super::params::ParamTree;
use super::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Neg(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Reshape(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<Option<usize>>),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    ScaleRows(Var, Vec<f64>),
    GaussianLogProb { actions: Tensor, mean: Var, log_std: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// The tape. Owned by a single forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Parameter leaves of a [`ParamTree`] placed on a graph.
#[derive(Clone, Debug)]
pub struct Bound {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no bound parameter `{name}`"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Collects gradients back into a tree with the original layout. Leaves
    /// that did not influence the loss get zeros.
    pub fn gradients(&self, g: &Graph, grads: &Gradients) -> ParamTree {
        let mut out = ParamTree::new();
        for (name, &v) in self.names.iter().zip(&self.vars) {
            let t = grads
                .wrt(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()));
            out.insert(name.clone(), t).expect("unique names");
        }
        out
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` cut off from the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn bind(&mut self, params: &ParamTree) -> Bound {
        let mut names = Vec::with_capacity(params.len());
        let mut vars = Vec::with_capacity(params.len());
        for (n, t) in params.iter() {
            names.push(n.to_string());
            vars.push(self.leaf(t.clone()));
        }
        Bound { names, vars }
    }

    /// Same as [`Graph::bind`] but the leaves are constants.
    pub fn bind_frozen(&mut self, params: &ParamTree) -> Bound {
        let mut names = Vec::with_capacity(params.len());
        let mut vars = Vec::with_capacity(params.len());
        for (n, t) in params.iter() {
            names.push(n.to_string());
            vars.push(self.constant(t.clone()));
        }
        Bound { names, vars }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(
            ta.shape().len() == 2 && tb.shape().len() == 2 && ta.cols() == tb.rows(),
            "matmul shape mismatch {:?} x {:?}",
            ta.shape(),
            tb.shape()
        );
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let data = matmul(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], data).unwrap();
        let ng = self.ng(&[a, b]);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `x[B×O] + b[O]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(b));
        assert!(
            tx.shape().len() == 2 && tb.shape() == [tx.cols()],
            "add_row shape mismatch {:?} + {:?}",
            tx.shape(),
            tb.shape()
        );
        let c = tx.cols();
        let mut value = tx.clone();
        for (i, x) in value.data_mut().iter_mut().enumerate() {
            *x += tb.data()[i % c];
        }
        let ng = self.ng(&[x, b]);
        self.push(value, Op::AddRow(x, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).map(|v| v * k);
        let ng = self.ng(&[x]);
        self.push(value, Op::Scale(x, k), ng)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).map(|v| v + k);
        let ng = self.ng(&[x]);
        self.push(value, Op::AddScalar(x), ng)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| -v);
        let ng = self.ng(&[x]);
        self.push(value, Op::Neg(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let ng = self.ng(&[x]);
        self.push(value, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let ng = self.ng(&[x]);
        self.push(value, Op::Sigmoid(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(&[x]);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        let ng = self.ng(&[x]);
        self.push(value, Op::Exp(x), ng)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        let ng = self.ng(&[x]);
        self.push(value, Op::Ln(x), ng)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        let ng = self.ng(&[x]);
        self.push(value, Op::Abs(x), ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        let ng = self.ng(&[x]);
        self.push(value, Op::Square(x), ng)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(&[x]);
        self.push(value, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let ng = self.ng(&[x]);
        self.push(value, Op::Mean(x), ng)
    }

    /// Row sums: `[B×K] -> [B]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let t = self.value(x);
        assert_eq!(t.shape().len(), 2, "sum_cols needs a matrix");
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let value = Tensor::vector(data);
        let ng = self.ng(&[x]);
        self.push(value, Op::SumCols(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self
            .value(x)
            .clone()
            .reshaped(shape)
            .expect("reshape size mismatch");
        let ng = self.ng(&[x]);
        self.push(value, Op::Reshape(x), ng)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let mut data = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            let row = t.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|v| (v - m).exp()));
            let z: f64 = data[start..].iter().sum();
            for v in &mut data[start..start + c] {
                *v /= z;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        let ng = self.ng(&[x]);
        self.push(value, Op::SoftmaxRows(x), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut data = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            let row = t.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|v| v - lse));
        }
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        let ng = self.ng(&[x]);
        self.push(value, Op::LogSoftmaxRows(x), ng)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let rows = self.value(xs[0]).rows();
        let cols: usize = xs.iter().map(|&v| self.value(v).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &v in xs {
                let t = self.value(v);
                assert_eq!(t.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(t.row(r));
            }
        }
        let value = Tensor::new(vec![rows, cols], data).unwrap();
        let ng = self.ng(xs);
        self.push(value, Op::ConcatCols(xs.to_vec()), ng)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let t = self.value(x);
        assert!(start < end && end <= t.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let value = Tensor::new(vec![t.rows(), end - start], data).unwrap();
        let ng = self.ng(&[x]);
        self.push(value, Op::SliceCols(x, start, end), ng)
    }

    /// Selects rows of a matrix; `None` produces a zero row.
    pub fn gather_rows(&mut self, x: Var, idx: &[Option<usize>]) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for i in idx {
            match i {
                Some(r) => data.extend_from_slice(t.row(*r)),
                None => data.extend(std::iter::repeat(0.0).take(c)),
            }
        }
        let value = Tensor::new(vec![idx.len(), c], data).unwrap();
        let ng = self.ng(&[x]);
        self.push(value, Op::GatherRows(x, idx.to_vec()), ng)
    }

    /// Elementwise clamp; the gradient passes only where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let ng = self.ng(&[x]);
        self.push(value, Op::Clamp(x, lo, hi), ng)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), f64::min);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Minimum(a, b), ng)
    }

    /// Multiplies row `r` of a matrix by `w[r]`.
    pub fn scale_rows(&mut self, x: Var, w: &[f64]) -> Var {
        let t = self.value(x);
        assert_eq!(t.rows(), w.len(), "scale_rows length mismatch");
        let c = t.cols();
        let mut value = t.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v *= w[i / c];
        }
        let ng = self.ng(&[x]);
        self.push(value, Op::ScaleRows(x, w.to_vec()), ng)
    }

    /// Diagonal Gaussian log density of fixed `actions[B×A]` under
    /// `N(mean[B×A], exp(log_std[A])²)`, summed over action dims: `[B]`.
    pub fn gaussian_log_prob(&mut self, actions: &Tensor, mean: Var, log_std: Var) -> Var {
        let (tm, ts) = (self.value(mean), self.value(log_std));
        assert_eq!(actions.shape(), tm.shape(), "gaussian_log_prob action/mean shape");
        assert_eq!(ts.shape(), [tm.cols()], "gaussian_log_prob log_std shape");
        let value = Tensor::vector(gaussian_log_prob_rows(actions, tm, ts));
        let ng = self.ng(&[mean, log_std]);
        self.push(
            value,
            Op::GaussianLogProb {
                actions: actions.clone(),
                mean,
                log_std,
            },
            ng,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lt.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[id].take() else { continue };
            self.propagate(node, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.needs_grad(*a) {
                    let ga = matmul_bt(gy.data(), tb.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga).unwrap());
                }
                if self.needs_grad(*b) {
                    let gb = matmul_at(ta.data(), gy.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb).unwrap());
                }
            }
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, gy.clone());
                if self.needs_grad(*b) {
                    let c = gy.cols();
                    let mut gb = vec![0.0; c];
                    for (i, g) in gy.data().iter().enumerate() {
                        gb[i % c] += g;
                    }
                    self.accumulate(grads, *b, Tensor::vector(gb));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                if self.needs_grad(*b) {
                    self.accumulate(grads, *b, gy.map(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                if self.needs_grad(*a) {
                    self.accumulate(grads, *a, gy.zip_map(self.value(*b), |g, v| g * v));
                }
                if self.needs_grad(*b) {
                    self.accumulate(grads, *b, gy.zip_map(self.value(*a), |g, v| g * v));
                }
            }
            Op::Scale(x, k) => {
                let k = *k;
                self.accumulate(grads, *x, gy.map(|g| g * k));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, gy.clone()),
            Op::Neg(x) => self.accumulate(grads, *x, gy.map(|g| -g)),
            Op::Tanh(x) => self.accumulate(grads, *x, gy.zip_map(y, |g, t| g * (1.0 - t * t))),
            Op::Sigmoid(x) => self.accumulate(grads, *x, gy.zip_map(y, |g, s| g * s * (1.0 - s))),
            Op::Relu(x) => {
                let gx = gy.zip_map(self.value(*x), |g, v| if v > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *x, gx);
            }
            Op::Exp(x) => self.accumulate(grads, *x, gy.zip_map(y, |g, e| g * e)),
            Op::Ln(x) => self.accumulate(grads, *x, gy.zip_map(self.value(*x), |g, v| g / v)),
            Op::Abs(x) => {
                let gx = gy.zip_map(self.value(*x), |g, v| {
                    if v > 0.0 {
                        g
                    } else if v < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Square(x) => {
                self.accumulate(grads, *x, gy.zip_map(self.value(*x), |g, v| 2.0 * g * v))
            }
            Op::Sum(x) => {
                let g = gy.item();
                self.accumulate(grads, *x, Tensor::filled(self.value(*x).shape(), g));
            }
            Op::Mean(x) => {
                let t = self.value(*x);
                let g = gy.item() / t.len() as f64;
                self.accumulate(grads, *x, Tensor::filled(t.shape(), g));
            }
            Op::SumCols(x) => {
                let t = self.value(*x);
                let c = t.cols();
                let data = (0..t.len()).map(|i| gy.data()[i / c]).collect();
                self.accumulate(grads, *x, Tensor::new(t.shape().to_vec(), data).unwrap());
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, gy.clone().reshaped(&shape).unwrap());
            }
            Op::SoftmaxRows(x) => {
                let c = y.cols();
                let mut gx = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), &gy.data()[r * c..(r + 1) * c]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(s, g)| s * (g - dot)));
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), gx).unwrap());
            }
            Op::LogSoftmaxRows(x) => {
                let c = y.cols();
                let mut gx = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), &gy.data()[r * c..(r + 1) * c]);
                    let gsum: f64 = gr.iter().sum();
                    gx.extend(yr.iter().zip(gr).map(|(l, g)| g - l.exp() * gsum));
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), gx).unwrap());
            }
            Op::ConcatCols(xs) => {
                let rows = y.rows();
                let total = y.cols();
                let mut offset = 0;
                for &v in xs {
                    let c = self.value(v).cols();
                    if self.needs_grad(v) {
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(
                                &gy.data()[r * total + offset..r * total + offset + c],
                            );
                        }
                        let shape = self.value(v).shape().to_vec();
                        self.accumulate(grads, v, Tensor::new(shape, data).unwrap());
                    }
                    offset += c;
                }
            }
            Op::SliceCols(x, start, end) => {
                let t = self.value(*x);
                let (c, w) = (t.cols(), end - start);
                let mut gx = Tensor::zeros(t.shape());
                for r in 0..t.rows() {
                    gx.data_mut()[r * c + start..r * c + end]
                        .copy_from_slice(&gy.data()[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::GatherRows(x, idx) => {
                let t = self.value(*x);
                let c = t.cols();
                let mut gx = Tensor::zeros(t.shape());
                for (k, i) in idx.iter().enumerate() {
                    if let Some(r) = i {
                        let dst = &mut gx.data_mut()[r * c..(r + 1) * c];
                        for (d, g) in dst.iter_mut().zip(&gy.data()[k * c..(k + 1) * c]) {
                            *d += g;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let gx = gy.zip_map(self.value(*x), |g, v| if v >= lo && v <= hi { g } else { 0.0 });
                self.accumulate(grads, *x, gx);
            }
            Op::Minimum(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs_grad(*a) {
                    let d = (0..ta.len())
                        .map(|i| if ta.data()[i] <= tb.data()[i] { gy.data()[i] } else { 0.0 })
                        .collect();
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), d).unwrap());
                }
                if self.needs_grad(*b) {
                    let d = (0..ta.len())
                        .map(|i| if ta.data()[i] <= tb.data()[i] { 0.0 } else { gy.data()[i] })
                        .collect();
                    self.accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), d).unwrap());
                }
            }
            Op::ScaleRows(x, w) => {
                let c = gy.cols();
                let mut gx = gy.clone();
                for (i, g) in gx.data_mut().iter_mut().enumerate() {
                    *g *= w[i / c];
                }
                self.accumulate(grads, *x, gx);
            }
            Op::GaussianLogProb {
                actions,
                mean,
                log_std,
            } => {
                let (tm, ts) = (self.value(*mean), self.value(*log_std));
                let a_dim = tm.cols();
                let mut gmean = vec![0.0; tm.len()];
                let mut gls = vec![0.0; a_dim];
                for r in 0..tm.rows() {
                    let g = gy.data()[r];
                    for d in 0..a_dim {
                        let i = r * a_dim + d;
                        let inv_std = (-ts.data()[d]).exp();
                        let z = (actions.data()[i] - tm.data()[i]) * inv_std;
                        gmean[i] = g * z * inv_std;
                        gls[d] += g * (z * z - 1.0);
                    }
                }
                if self.needs_grad(*mean) {
                    self.accumulate(grads, *mean, Tensor::new(tm.shape().to_vec(), gmean).unwrap());
                }
                if self.needs_grad(*log_std) {
                    self.accumulate(grads, *log_std, Tensor::vector(gls));
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) fn gaussian_log_prob_rows(actions: &Tensor, mean: &Tensor, log_std: &Tensor) -> Vec<f64> {
    let a_dim = mean.cols();
    (0..mean.rows())
        .map(|r| {
            (0..a_dim)
                .map(|d| {
                    let i = r * a_dim + d;
                    let ls = log_std.data()[d];
                    let z = (actions.data()[i] - mean.data()[i]) * (-ls).exp();
                    -0.5 * z * z - ls - 0.5 * LN_2PI
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap(), &Tensor::filled(&[2, 3], 1.0));
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = g.tanh(w);
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn detached_path_has_no_gradient() {
        let mut params = ParamTree::new();
        params.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        params.insert("unused", Tensor::vector(vec![3.0])).unwrap();
        let mut g = Graph::new();
        let b = g.bind(&params);
        let w = b.var("w");
        let d = g.detach(w);
        let sq = g.square(d);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        let tree = b.gradients(&g, &grads);
        assert_eq!(tree.get("w").unwrap().data(), &[0.0, 0.0]);
        assert_eq!(tree.get("unused").unwrap().data(), &[0.0]);
    }

    #[test]
    fn softmax_and_log_softmax_agree() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1000.0, 0.0], vec![2f64.ln(), 0.0]]).unwrap());
        let s = g.softmax_rows(x);
        let l = g.log_softmax_rows(x);
        let (sv, lv) = (g.value(s).clone(), g.value(l).clone());
        assert_eq!(sv.at(0, 0), 1.0);
        assert!(sv.at(0, 1) >= 0.0 && sv.at(0, 1) < 1e-300);
        assert!((sv.at(1, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((lv.at(1, 1).exp() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn minimum_routes_ties_to_first() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = g.leaf(Tensor::vector(vec![1.0, 0.0]));
        let m = g.minimum(a, b);
        let s = g.sum(m);
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.wrt(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(gr.wrt(b).unwrap().data(), &[0.0, 1.0]);
    }
}
