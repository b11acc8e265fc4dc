//! Dense feed-forward network with ReLU hidden layers, a softmax output and
//! mean cross-entropy loss, trained with plain stochastic gradient descent.
//!
//! Everything is `f64`. Weight matrices are row-major with shape
//! `(out_dim, in_dim)`. Each row of a batch is processed independently with a
//! fixed operation order, so the output for a row does not depend on which
//! other rows share its batch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.values)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite matrix entry at row {}, column {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, values)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so handle the zero-width case separately.
        let cols = self.cols.max(1);
        let n = if self.cols == 0 { 0 } else { self.rows };
        self.values.chunks_exact(cols).take(n)
    }
}

/// Parameters of one fully connected layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// Shape `(out_dim, in_dim)`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights in `[-a, a]` with `a = sqrt(6 / (in + out))`;
    /// zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let values = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-a..=a))
            .collect();
        Self {
            weights: Matrix {
                rows: out_dim,
                cols: in_dim,
                values,
            },
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    /// `out = W x + b` for a single input row.
    #[inline]
    fn affine_row(&self, x: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let w = self.weights.row(o);
            let mut acc = self.bias[o];
            for (wi, xi) in w.iter().zip(x) {
                acc += wi * xi;
            }
            *slot = acc;
        }
    }

    fn affine(&self, input: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(input.rows(), self.out_dim());
        for r in 0..input.rows() {
            self.affine_row(input.row(r), out.row_mut(r));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Network parameters: hidden layers use `hidden_activation`, the last layer
/// feeds a softmax over classes. Gradients share this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
    #[serde(default)]
    pub hidden_activation: Activation,
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Numerically stable softmax of one row, written in place.
fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl Network {
    fn dims_of(input_dim: usize, hidden: &[usize], num_classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        dims
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], num_classes: usize) -> Self {
        let dims = Self::dims_of(input_dim, hidden, num_classes);
        Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            hidden_activation: Activation::Relu,
        }
    }

    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        let dims = Self::dims_of(input_dim, hidden, num_classes);
        Self {
            layers: dims
                .windows(2)
                .map(|w| Dense::glorot(w[0], w[1], rng))
                .collect(),
            hidden_activation: Activation::Relu,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::in_dim)
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, Dense::out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.values().len() + l.bias.len())
            .sum()
    }

    /// Checks that consecutive layers chain and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias length {} != out_dim {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidInput(format!("layer {i}: non-finite bias")));
            }
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} out_dim {} != layer {} in_dim {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-softmax scores.
    pub fn logits(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_batch(batch)?;
        let mut act = self.layers[0].affine(batch);
        for layer in &self.layers[1..] {
            relu_in_place(&mut act);
            act = layer.affine(&act);
        }
        Ok(act)
    }

    /// Class probabilities, one row per input row.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        let mut out = self.logits(batch)?;
        for r in 0..out.rows() {
            softmax_row(out.row_mut(r));
        }
        Ok(out)
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// every parameter.
    pub fn loss_and_grad(&self, batch: &Matrix, labels: &[usize]) -> Result<(f64, Network)> {
        self.check_batch(batch)?;
        if labels.len() != batch.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                batch.rows()
            )));
        }
        if batch.rows() == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let classes = self.num_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }

        // Forward pass keeping the input of every layer.
        let mut inputs: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        let mut act = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&act);
            inputs.push(act);
            if i + 1 < self.layers.len() {
                relu_in_place(&mut z);
            }
            act = z;
        }
        let mut delta = act; // logits
        let n = batch.rows();
        let scale = 1.0 / n as f64;
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = delta.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            for v in row.iter_mut() {
                *v = (*v - lse).exp() * scale;
            }
            row[y] -= scale;
        }
        loss *= scale;

        let mut grads = self.zeros_like();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &inputs[l];
            let g = &mut grads.layers[l];
            for r in 0..n {
                let d_row = delta.row(r);
                let x_row = input.row(r);
                for (o, &d) in d_row.iter().enumerate() {
                    g.bias[o] += d;
                    if d != 0.0 {
                        for (gw, &x) in g.weights.row_mut(o).iter_mut().zip(x_row) {
                            *gw += d * x;
                        }
                    }
                }
            }
            if l > 0 {
                let mut prev = Matrix::zeros(n, layer.in_dim());
                for r in 0..n {
                    let d_row = delta.row(r);
                    let p_row = prev.row_mut(r);
                    for (o, &d) in d_row.iter().enumerate() {
                        if d != 0.0 {
                            for (p, &w) in p_row.iter_mut().zip(layer.weights.row(o)) {
                                *p += d * w;
                            }
                        }
                    }
                    // ReLU derivative: the stored input of layer l is the
                    // post-activation output of layer l-1.
                    for (p, &a) in p_row.iter_mut().zip(input.row(r)) {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok((loss, grads))
    }

    pub fn zeros_like(&self) -> Network {
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim(), l.out_dim()))
                .collect(),
            hidden_activation: self.hidden_activation,
        }
    }

    fn check_same_shape(&self, other: &Network) -> Result<()> {
        let same = self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.in_dim() == b.in_dim() && a.out_dim() == b.out_dim() && a.bias.len() == b.bias.len()
            });
        if same {
            Ok(())
        } else {
            Err(Error::Shape("gradient shape does not match parameters".into()))
        }
    }

    /// `params <- params - learning_rate * grads`, elementwise.
    pub fn sgd_step(&mut self, grads: &Network, learning_rate: f64) -> Result<()> {
        self.check_same_shape(grads)?;
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in p.weights.values_mut().iter_mut().zip(g.weights.values()) {
                *w -= learning_rate * gw;
            }
            for (b, gb) in p.bias.iter_mut().zip(&g.bias) {
                *b -= learning_rate * gb;
            }
        }
        Ok(())
    }

    /// All parameters flattened layer by layer (weights, then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.values());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Mutable access to parameter `index` in [`Network::flat_params`] order.
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            let nw = l.weights.values().len();
            if index < nw {
                return l.weights.values_mut().get_mut(index);
            }
            index -= nw;
            if index < l.bias.len() {
                return l.bias.get_mut(index);
            }
            index -= l.bias.len();
        }
        None
    }
}
