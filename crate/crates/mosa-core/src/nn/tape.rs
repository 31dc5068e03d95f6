//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! Every forward operation appends a node to the tape; [`Tape::backward`]
//! walks the nodes in reverse, accumulating gradients for every input and
//! parameter leaf. The pipeline is a fixed DAG, so a flat tape is all the
//! graph machinery needed.

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;
use crate::nn::params::ParameterSet;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    MulColBroadcast(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Ln(Var),
    PowScalar(Var, f64),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
        len: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    MeanAll(Var),
    SumAll(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    NormalizeRows(Var, f64),
}

struct Node {
    op: Op,
    value: Matrix,
    grad: Option<Matrix>,
}

/// A single forward pass with retained intermediates.
pub struct Tape {
    nodes: Vec<Node>,
    /// Leaf nodes bound to named parameters, for gradient hand-off.
    param_leaves: Vec<(Var, String)>,
    ran_backward: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_leaves: Vec::new(),
            ran_backward: false,
        }
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register a constant or input leaf.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Register a leaf bound to a named parameter; its gradient can later be
    /// handed back to the [`ParameterSet`] with [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var> {
        let value = params
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter '{name}'")))?
            .clone();
        let var = self.push(Op::Leaf, value);
        self.param_leaves.push((var, name.to_string()));
        Ok(var)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`Tape::backward`] target w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn shape_err(op: &'static str, expected: String, m: &Matrix) -> Error {
        Error::ShapeMismatch {
            op,
            expected,
            got: format!("{}x{}", m.rows(), m.cols()),
        }
    }

    // ----- forward ops -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.add(&self.nodes[b.0].value)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.scale(c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Self::shape_err("mul", format!("{:?}", va.shape()), vb));
        }
        let mut value = va.clone();
        for (o, &x) in value.data_mut().iter_mut().zip(vb.data()) {
            *o *= x;
        }
        Ok(self.push(Op::Mul(a, b), value))
    }

    /// `a[N×F] + b[1×F]` broadcast over rows (bias add).
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(Self::shape_err(
                "add_row_broadcast",
                format!("1x{}", va.cols()),
                vb,
            ));
        }
        let mut value = va.clone();
        let cols = value.cols();
        for r in 0..value.rows() {
            for c in 0..cols {
                let v = value.get(r, c) + vb.get(0, c);
                value.set(r, c, v);
            }
        }
        Ok(self.push(Op::AddRowBroadcast(a, b), value))
    }

    /// `a[N×F] ⊙ w[1×F]` broadcast over rows (per-column weighting).
    pub fn mul_col_broadcast(&mut self, a: Var, w: Var) -> Result<Var> {
        let (va, vw) = (&self.nodes[a.0].value, &self.nodes[w.0].value);
        if vw.rows() != 1 || vw.cols() != va.cols() {
            return Err(Self::shape_err(
                "mul_col_broadcast",
                format!("1x{}", va.cols()),
                vw,
            ));
        }
        let mut value = va.clone();
        let cols = value.cols();
        for r in 0..value.rows() {
            for c in 0..cols {
                let v = value.get(r, c) * vw.get(0, c);
                value.set(r, c, v);
            }
        }
        Ok(self.push(Op::MulColBroadcast(a, w), value))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|v| v.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(f64::ln);
        self.push(Op::Ln(a), value)
    }

    pub fn pow_scalar(&mut self, a: Var, p: f64) -> Var {
        let value = self.nodes[a.0].value.map(|v| v.powf(p));
        self.push(Op::PowScalar(a, p), value)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.nodes[a.0].value.map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), value)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows_value(&self.nodes[a.0].value);
        self.push(Op::SoftmaxRows(a), value)
    }

    /// Row-wise layer normalization with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (vx, vg, vb) = (
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
        );
        if vg.rows() != 1 || vg.cols() != vx.cols() {
            return Err(Self::shape_err("layer_norm gamma", format!("1x{}", vx.cols()), vg));
        }
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(Self::shape_err("layer_norm beta", format!("1x{}", vx.cols()), vb));
        }
        let mut value = Matrix::zeros(vx.rows(), vx.cols());
        for r in 0..vx.rows() {
            let (mean, inv_std) = row_norm_stats(vx.row(r), eps);
            for c in 0..vx.cols() {
                let xhat = (vx.get(r, c) - mean) * inv_std;
                value.set(r, c, xhat * vg.get(0, c) + vb.get(0, c));
            }
        }
        Ok(self.push(Op::LayerNorm { x, gamma, beta, eps }, value))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat_rows of nothing".into()));
        }
        let cols = self.nodes[parts[0].0].value.cols();
        let mut rows = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.cols() != cols {
                return Err(Self::shape_err("concat_rows", format!("?x{cols}"), v));
            }
            rows += v.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat_cols of nothing".into()));
        }
        let rows = self.nodes[parts[0].0].value.rows();
        let mut cols = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.rows() != rows {
                return Err(Self::shape_err("concat_cols", format!("{rows}x?"), v));
            }
            cols += v.cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            for r in 0..rows {
                for c in 0..v.cols() {
                    value.set(r, offset + c, v.get(r, c));
                }
            }
            offset += v.cols();
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if start + len > v.rows() {
            return Err(Error::Invalid(format!(
                "slice_rows {start}..{} out of {} rows",
                start + len,
                v.rows()
            )));
        }
        let data = v.data()[start * v.cols()..(start + len) * v.cols()].to_vec();
        let value = Matrix::from_vec(len, v.cols(), data)?;
        Ok(self.push(Op::SliceRows { x, start, len }, value))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if start + len > v.cols() {
            return Err(Error::Invalid(format!(
                "slice_cols {start}..{} out of {} cols",
                start + len,
                v.cols()
            )));
        }
        let mut value = Matrix::zeros(v.rows(), len);
        for r in 0..v.rows() {
            for c in 0..len {
                value.set(r, c, v.get(r, start + c));
            }
        }
        Ok(self.push(Op::SliceCols { x, start, len }, value))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let n = v.data().len();
        if n == 0 {
            return Err(Error::Invalid("mean of empty matrix".into()));
        }
        let mean = v.data().iter().sum::<f64>() / n as f64;
        let value = Matrix::from_vec(1, 1, vec![mean])?;
        Ok(self.push(Op::MeanAll(a), value))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let sum = self.nodes[a.0].value.data().iter().sum::<f64>();
        let value = Matrix::from_vec(1, 1, vec![sum]).expect("1x1");
        self.push(Op::SumAll(a), value)
    }

    /// Mean softmax cross-entropy over rows of `logits` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = &self.nodes[logits.0].value;
        if labels.len() != v.rows() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                expected: format!("{} labels", v.rows()),
                got: format!("{}", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= v.cols()) {
            return Err(Error::Invalid(format!(
                "label {bad} out of range for {} classes",
                v.cols()
            )));
        }
        let probs = softmax_rows_value(v);
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            total -= probs.get(r, label).max(1e-300).ln();
        }
        let value = Matrix::from_vec(1, 1, vec![total / labels.len() as f64])?;
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            value,
        ))
    }

    /// L2-normalize each row (with `eps` inside the square root).
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let v = &self.nodes[a.0].value;
        let mut value = v.clone();
        for r in 0..value.rows() {
            let n = row_norm(v.row(r), eps);
            for c in 0..value.cols() {
                value.set(r, c, v.get(r, c) / n);
            }
        }
        self.push(Op::NormalizeRows(a, eps), value)
    }

    // ----- backward -----

    fn add_grad(&mut self, v: Var, delta: &Matrix) {
        let node = &mut self.nodes[v.0];
        match node.grad.as_mut() {
            Some(g) => {
                for (o, &d) in g.data_mut().iter_mut().zip(delta.data()) {
                    *o += d;
                }
            }
            None => node.grad = Some(delta.clone()),
        }
    }

    /// Backpropagate from a scalar (1x1) target through the whole tape.
    ///
    /// Errors if the tape is empty, the target is not scalar, or backward
    /// already ran (gradients would double-accumulate).
    pub fn backward(&mut self, target: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Invalid("backward on an empty tape".into()));
        }
        if self.ran_backward {
            return Err(Error::Invalid("backward already ran on this tape".into()));
        }
        let tv = &self.nodes[target.0].value;
        if tv.shape() != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                expected: "1x1 scalar target".into(),
                got: format!("{}x{}", tv.rows(), tv.cols()),
            });
        }
        self.ran_backward = true;
        self.nodes[target.0].grad = Some(Matrix::from_vec(1, 1, vec![1.0])?);

        for idx in (0..=target.0).rev() {
            let Some(grad) = self.nodes[idx].grad.clone() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let bt = self.nodes[b.0].value.transpose();
                    let ga = grad.matmul(&bt)?;
                    let at = self.nodes[a.0].value.transpose();
                    let gb = at.matmul(&grad)?;
                    self.add_grad(a, &ga);
                    self.add_grad(b, &gb);
                }
                Op::Add(a, b) => {
                    self.add_grad(a, &grad);
                    self.add_grad(b, &grad);
                }
                Op::Scale(a, c) => {
                    self.add_grad(a, &grad.scale(c));
                }
                Op::Mul(a, b) => {
                    let ga = hadamard(&grad, &self.nodes[b.0].value);
                    let gb = hadamard(&grad, &self.nodes[a.0].value);
                    self.add_grad(a, &ga);
                    self.add_grad(b, &gb);
                }
                Op::AddRowBroadcast(a, b) => {
                    self.add_grad(a, &grad);
                    let gb = col_sums(&grad);
                    self.add_grad(b, &gb);
                }
                Op::MulColBroadcast(a, w) => {
                    let vw = self.nodes[w.0].value.clone();
                    let va = self.nodes[a.0].value.clone();
                    let mut ga = grad.clone();
                    for r in 0..ga.rows() {
                        for c in 0..ga.cols() {
                            let v = ga.get(r, c) * vw.get(0, c);
                            ga.set(r, c, v);
                        }
                    }
                    let mut gw = Matrix::zeros(1, vw.cols());
                    for r in 0..grad.rows() {
                        for c in 0..grad.cols() {
                            let v = gw.get(0, c) + grad.get(r, c) * va.get(r, c);
                            gw.set(0, c, v);
                        }
                    }
                    self.add_grad(a, &ga);
                    self.add_grad(w, &gw);
                }
                Op::Relu(a) => {
                    let va = &self.nodes[a.0].value;
                    let mut ga = grad.clone();
                    for (g, &x) in ga.data_mut().iter_mut().zip(va.data()) {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    self.add_grad(a, &ga);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[idx].value.clone();
                    let mut ga = grad.clone();
                    for (g, &y) in ga.data_mut().iter_mut().zip(y.data()) {
                        *g *= y * (1.0 - y);
                    }
                    self.add_grad(a, &ga);
                }
                Op::Ln(a) => {
                    let va = self.nodes[a.0].value.clone();
                    let mut ga = grad.clone();
                    for (g, &x) in ga.data_mut().iter_mut().zip(va.data()) {
                        *g /= x;
                    }
                    self.add_grad(a, &ga);
                }
                Op::PowScalar(a, p) => {
                    let va = self.nodes[a.0].value.clone();
                    let mut ga = grad.clone();
                    if p == 0.0 {
                        for g in ga.data_mut() {
                            *g = 0.0;
                        }
                    } else {
                        for (g, &x) in ga.data_mut().iter_mut().zip(va.data()) {
                            *g *= p * x.powf(p - 1.0);
                        }
                    }
                    self.add_grad(a, &ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let va = self.nodes[a.0].value.clone();
                    let mut ga = grad.clone();
                    for (g, &x) in ga.data_mut().iter_mut().zip(va.data()) {
                        if x <= lo || x >= hi {
                            *g = 0.0;
                        }
                    }
                    self.add_grad(a, &ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.nodes[idx].value.clone();
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let mut dot = 0.0;
                        for c in 0..y.cols() {
                            dot += grad.get(r, c) * y.get(r, c);
                        }
                        for c in 0..y.cols() {
                            ga.set(r, c, y.get(r, c) * (grad.get(r, c) - dot));
                        }
                    }
                    self.add_grad(a, &ga);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let vx = self.nodes[x.0].value.clone();
                    let vg = self.nodes[gamma.0].value.clone();
                    let d = vx.cols();
                    let mut gx = Matrix::zeros(vx.rows(), d);
                    let mut ggamma = Matrix::zeros(1, d);
                    let mut gbeta = Matrix::zeros(1, d);
                    for r in 0..vx.rows() {
                        let (mean, inv_std) = row_norm_stats(vx.row(r), eps);
                        let xhat: Vec<f64> =
                            vx.row(r).iter().map(|&v| (v - mean) * inv_std).collect();
                        let h: Vec<f64> = (0..d).map(|c| grad.get(r, c) * vg.get(0, c)).collect();
                        let m1 = h.iter().sum::<f64>() / d as f64;
                        let m2 = h
                            .iter()
                            .zip(&xhat)
                            .map(|(&a, &b)| a * b)
                            .sum::<f64>()
                            / d as f64;
                        for c in 0..d {
                            gx.set(r, c, (h[c] - m1 - xhat[c] * m2) * inv_std);
                            let gg = ggamma.get(0, c) + grad.get(r, c) * xhat[c];
                            ggamma.set(0, c, gg);
                            let gb = gbeta.get(0, c) + grad.get(r, c);
                            gbeta.set(0, c, gb);
                        }
                    }
                    self.add_grad(x, &gx);
                    self.add_grad(gamma, &ggamma);
                    self.add_grad(beta, &gbeta);
                }
                Op::Transpose(a) => {
                    self.add_grad(a, &grad.transpose());
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.nodes[p.0].value.rows();
                        let cols = self.nodes[p.0].value.cols();
                        let slice = Matrix::from_vec(
                            rows,
                            cols,
                            grad.data()[start * cols..(start + rows) * cols].to_vec(),
                        )?;
                        self.add_grad(p, &slice);
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.nodes[p.0].value.rows();
                        let cols = self.nodes[p.0].value.cols();
                        let mut slice = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                slice.set(r, c, grad.get(r, offset + c));
                            }
                        }
                        self.add_grad(p, &slice);
                        offset += cols;
                    }
                }
                Op::SliceRows { x, start, len } => {
                    let vx = &self.nodes[x.0].value;
                    let mut gx = Matrix::zeros(vx.rows(), vx.cols());
                    for r in 0..len {
                        for c in 0..vx.cols() {
                            gx.set(start + r, c, grad.get(r, c));
                        }
                    }
                    self.add_grad(x, &gx);
                }
                Op::SliceCols { x, start, len } => {
                    let vx = &self.nodes[x.0].value;
                    let mut gx = Matrix::zeros(vx.rows(), vx.cols());
                    for r in 0..vx.rows() {
                        for c in 0..len {
                            gx.set(r, start + c, grad.get(r, c));
                        }
                    }
                    self.add_grad(x, &gx);
                }
                Op::MeanAll(a) => {
                    let va = &self.nodes[a.0].value;
                    let scale = grad.get(0, 0) / va.data().len() as f64;
                    let ga = Matrix::from_vec(
                        va.rows(),
                        va.cols(),
                        vec![scale; va.data().len()],
                    )?;
                    self.add_grad(a, &ga);
                }
                Op::SumAll(a) => {
                    let va = &self.nodes[a.0].value;
                    let scale = grad.get(0, 0);
                    let ga = Matrix::from_vec(
                        va.rows(),
                        va.cols(),
                        vec![scale; va.data().len()],
                    )?;
                    self.add_grad(a, &ga);
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let v = self.nodes[logits.0].value.clone();
                    let mut ga = softmax_rows_value(&v);
                    let scale = grad.get(0, 0) / labels.len() as f64;
                    for (r, &label) in labels.iter().enumerate() {
                        let v = ga.get(r, label) - 1.0;
                        ga.set(r, label, v);
                    }
                    let ga = ga.scale(scale);
                    self.add_grad(logits, &ga);
                }
                Op::NormalizeRows(a, eps) => {
                    let va = self.nodes[a.0].value.clone();
                    let y = self.nodes[idx].value.clone();
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    for r in 0..va.rows() {
                        let n = row_norm(va.row(r), eps);
                        let mut dot = 0.0;
                        for c in 0..va.cols() {
                            dot += grad.get(r, c) * y.get(r, c);
                        }
                        for c in 0..va.cols() {
                            ga.set(r, c, (grad.get(r, c) - y.get(r, c) * dot) / n);
                        }
                    }
                    self.add_grad(a, &ga);
                }
            }
        }
        Ok(())
    }

    /// Add the gradients of all parameter leaves into the parameter set's
    /// accumulators. Requires a completed backward pass.
    pub fn accumulate_param_grads(&self, params: &mut ParameterSet) -> Result<()> {
        if !self.ran_backward {
            return Err(Error::Invalid(
                "accumulate_param_grads before backward".into(),
            ));
        }
        for (var, name) in &self.param_leaves {
            if let Some(g) = self.nodes[var.0].grad.as_ref() {
                params.add_grad(name, g)?;
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_norm(row: &[f64], eps: f64) -> f64 {
    (row.iter().map(|&v| v * v).sum::<f64>() + eps).sqrt()
}

fn row_norm_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    for (o, &x) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= x;
    }
    out
}

fn col_sums(a: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, a.cols());
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            let v = out.get(0, c) + a.get(r, c);
            out.set(0, c, v);
        }
    }
    out
}

/// Row-wise softmax of a plain matrix (max-subtracted).
pub fn softmax_rows_value(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row_max = x.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..x.cols() {
            let e = (x.get(r, c) - row_max).exp();
            out.set(r, c, e);
            sum += e;
        }
        for c in 0..x.cols() {
            let v = out.get(r, c) / sum;
            out.set(r, c, v);
        }
    }
    out
}
