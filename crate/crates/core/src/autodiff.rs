//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves are either
//! constants or parameters tagged with an id; [`Tape::backward`] returns the
//! gradient of a scalar node with respect to every parameter leaf that was
//! registered as trainable. Gradients still propagate *through* constant
//! leaves' consumers, so upstream parameters are trained across frozen layers.
//!
//! Vectors are represented as `1 × n` matrices.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    SoftmaxRows(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    MseLoss(Var, Arc<Matrix>),
}

#[derive(Debug)]
struct Node {
    value: Arc<Matrix>,
    op: Op,
    requires_grad: bool,
    param: Option<usize>,
}

/// Gradients of a scalar with respect to parameter leaves, keyed by parameter id.
pub type ParamGrads = HashMap<usize, Matrix>;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_rows(x: ArrayView2<f64>, causal: bool) -> Matrix {
    let mut out = x.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let limit = if causal { i + 1 } else { row.len() };
        let max = row
            .iter()
            .take(limit)
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if j < limit {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
    out
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad, None)
    }

    fn push_shared(
        &mut self,
        value: Arc<Matrix>,
        op: Op,
        requires_grad: bool,
        param: Option<usize>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_shared(&mut self, value: Arc<Matrix>) -> Var {
        self.push_shared(value, Op::Leaf, false, None)
    }

    /// A leaf whose gradient is reported under `id` by [`Tape::backward`].
    pub fn param(&mut self, id: usize, value: Arc<Matrix>) -> Var {
        self.push_shared(value, Op::Leaf, true, Some(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// `a · scale + shift`, element-wise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).mapv(|v| v * scale + shift);
        let rg = self.rg(a);
        self.push(value, Op::Affine(a, scale), rg)
    }

    /// Row-wise softmax; with `causal`, entry `(i, j)` for `j > i` is masked out.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let value = softmax_rows(self.value(a).view(), causal);
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let x = self.value(a);
        let cols = x.ncols() as f64;
        let mut normalized = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in normalized.rows_mut() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let value = &normalized * self.value(gain) + self.value(bias);
        let rg = self.rg(a) || self.rg(gain) || self.rg(bias);
        self.push(
            value,
            Op::LayerNorm {
                input: a,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        )
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("row counts agree");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceRows(a, start), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("column counts agree");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let value = Matrix::from_shape_vec((rows, cols), flat).expect("element count preserved");
        let rg = self.rg(a);
        self.push(value, Op::Reshape(a), rg)
    }

    /// Mean squared error against a constant target, as a `1 × 1` node.
    pub fn mse_loss(&mut self, pred: Var, target: Arc<Matrix>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.dim(), target.dim(), "mse_loss shape mismatch");
        let n = p.len() as f64;
        let loss = Zip::from(p)
            .and(&*target)
            .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b))
            / n;
        let rg = self.rg(pred);
        self.push(
            Matrix::from_elem((1, 1), loss),
            Op::MseLoss(pred, target),
            rg,
        )
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, output: Var) -> ParamGrads {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Matrix::ones((1, 1)));
        let mut params = ParamGrads::new();

        for idx in (0..=output.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let mut send = |target: Var, g: Matrix| {
                if !self.nodes[target.0].requires_grad {
                    return;
                }
                match &mut grads[target.0] {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => {
                    if let Some(id) = node.param {
                        match params.get_mut(&id) {
                            Some(acc) => *acc += &grad,
                            None => {
                                params.insert(id, grad);
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        send(*a, grad.dot(&self.value(*b).t()));
                    }
                    if self.rg(*b) {
                        send(*b, self.value(*a).t().dot(&grad));
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.rg(*a) {
                        send(*a, grad.dot(self.value(*b)));
                    }
                    if self.rg(*b) {
                        send(*b, grad.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        send(*b, grad.clone());
                    }
                    send(*a, grad);
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        send(*row, grad.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    send(*a, grad);
                }
                Op::Affine(a, scale) => send(*a, grad * *scale),
                Op::SoftmaxRows(a) => {
                    let y = &*node.value;
                    let mut dx = &grad * y;
                    for (mut dx_row, y_row) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let dot = dx_row.sum();
                        Zip::from(&mut dx_row)
                            .and(&y_row)
                            .for_each(|d, &yv| *d -= yv * dot);
                    }
                    send(*a, dx);
                }
                Op::LayerNorm {
                    input,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    if self.rg(*bias) {
                        send(*bias, grad.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.rg(*gain) {
                        send(
                            *gain,
                            (&grad * normalized).sum_axis(Axis(0)).insert_axis(Axis(0)),
                        );
                    }
                    if self.rg(*input) {
                        let dxhat = &grad * self.value(*gain);
                        let cols = dxhat.ncols() as f64;
                        let mut dx = dxhat.clone();
                        for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                            let xh = normalized.row(i);
                            let mean_d = row.sum() / cols;
                            let mean_dx = row.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>()
                                / cols;
                            Zip::from(&mut row).and(&xh).for_each(|d, &x| {
                                *d = inv_std[i] * (*d - mean_d - x * mean_dx);
                            });
                        }
                        send(*input, dx);
                    }
                }
                Op::Gelu(a) => {
                    let mut dx = grad;
                    Zip::from(&mut dx)
                        .and(&**self.nodes[a.0].value)
                        .for_each(|d, &x| *d *= gelu_grad(x));
                    send(*a, dx);
                }
                Op::SliceCols(a, start) => {
                    let mut full = Matrix::zeros(self.shape(*a));
                    let w = grad.ncols();
                    full.slice_mut(s![.., *start..*start + w]).assign(&grad);
                    send(*a, full);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        if self.rg(p) {
                            send(p, grad.slice(s![.., offset..offset + w]).to_owned());
                        }
                        offset += w;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut full = Matrix::zeros(self.shape(*a));
                    let h = grad.nrows();
                    full.slice_mut(s![*start..*start + h, ..]).assign(&grad);
                    send(*a, full);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        if self.rg(p) {
                            send(p, grad.slice(s![offset..offset + h, ..]).to_owned());
                        }
                        offset += h;
                    }
                }
                Op::Reshape(a) => {
                    let flat: Vec<f64> = grad.iter().copied().collect();
                    send(
                        *a,
                        Matrix::from_shape_vec(self.shape(*a), flat).expect("same element count"),
                    );
                }
                Op::MseLoss(pred, target) => {
                    let p = self.value(*pred);
                    let scale = 2.0 * grad[[0, 0]] / p.len() as f64;
                    send(*pred, (p - &**target) * scale);
                }
            }
        }
        params
    }
}
