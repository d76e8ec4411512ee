use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitcore::{BitMatrix, BitVector};
use crate::{Error, RealTensor, Result};

/// Which weights a [`BinaryDense`] layer multiplies by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// `θ(w_c)`, the normal binary network.
    Binary,
    /// `w_c` itself.
    Continuous,
}

/// How binary-weight products are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Dense float matrix product against the unpacked `±1` weights.
    Float,
    /// XNOR-popcount for `±1` inputs, sign-flip accumulation otherwise.
    Packed,
}

fn uniform_init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<RealTensor> {
    let scale = 1.0 / (in_dim as f64).sqrt();
    let data = (0..in_dim * out_dim)
        .map(|_| (rng.random_range(-1.0..=1.0) * scale).clamp(-1.0, 1.0))
        .collect();
    RealTensor::matrix(out_dim, in_dim, data)
}

fn check_input(x: &ArrayView2<f64>, in_dim: usize) -> Result<()> {
    if x.ncols() != in_dim {
        return Err(Error::shape(format!("batch × {in_dim}"), format!("{:?}", x.shape())));
    }
    Ok(())
}

fn check_grad(g: &ArrayView2<f64>, rows: usize, out_dim: usize) -> Result<()> {
    if g.dim() != (rows, out_dim) {
        return Err(Error::shape(format!("{rows} × {out_dim}"), format!("{:?}", g.shape())));
    }
    Ok(())
}

fn first_non_finite(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    values.into_iter().enumerate().find(|(_, v)| !v.is_finite())
}

/// Plain real-valued dense map `x ↦ W·x` (no bias; batch norm follows).
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousDense {
    w: RealTensor,
}

impl ContinuousDense {
    pub fn new(w: RealTensor) -> Result<Self> {
        if w.shape().len() != 2 {
            return Err(Error::shape("out × in matrix", format!("{:?}", w.shape())));
        }
        Ok(Self { w })
    }

    /// Entries uniform in `[−1, 1]/√in_dim`.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::new(uniform_init(in_dim, out_dim, rng)?)
    }

    pub fn weights(&self) -> &RealTensor {
        &self.w
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_input(&x, self.in_dim())?;
        Ok(x.dot(&self.w.view2().t()))
    }

    /// Returns `(∂L/∂W, ∂L/∂x)`.
    pub fn backward(&self, x: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        check_input(&x, self.in_dim())?;
        check_grad(&g, x.nrows(), self.out_dim())?;
        Ok((g.t().dot(&x), g.dot(&self.w.view2())))
    }

    pub(crate) fn sgd_update(&mut self, grad: ArrayView2<f64>, lr: f64) {
        self.w
            .data_mut()
            .iter_mut()
            .zip(grad.iter())
            .for_each(|(w, g)| *w -= lr * g);
    }
}

/// Dense layer computing with `θ(w_c)` while `w_c ∈ [−1, 1]` accumulates updates.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryDense {
    w_c: RealTensor,
    w_b: BitMatrix,
}

impl BinaryDense {
    pub fn new(w_c: RealTensor) -> Result<Self> {
        if w_c.shape().len() != 2 {
            return Err(Error::shape("out × in matrix", format!("{:?}", w_c.shape())));
        }
        if let Some(bad) = w_c.data().iter().find(|v| v.abs() > 1.0) {
            return Err(Error::invalid(format!("latent weight {bad} outside [-1, 1]")));
        }
        let w_b = BitMatrix::binarize(&w_c)?;
        Ok(Self { w_c, w_b })
    }

    /// Entries uniform in `[−1, 1]/√in_dim`, clipped to `[−1, 1]`.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::new(uniform_init(in_dim, out_dim, rng)?)
    }

    pub fn latent(&self) -> &RealTensor {
        &self.w_c
    }

    /// Packed `θ(w_c)`, always in sync with [`latent`](Self::latent).
    pub fn binary(&self) -> &BitMatrix {
        &self.w_b
    }

    pub fn in_dim(&self) -> usize {
        self.w_c.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w_c.rows()
    }

    /// `θ(w_c)` unpacked to a dense `±1` matrix.
    pub fn sign_matrix(&self) -> Array2<f64> {
        self.w_c.view2().mapv(|v| if v > 0.0 { 1.0 } else { -1.0 })
    }

    fn weights(&self, source: WeightSource) -> Array2<f64> {
        match source {
            WeightSource::Binary => self.sign_matrix(),
            WeightSource::Continuous => self.w_c.to_array2(),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>, source: WeightSource, kernel: Kernel) -> Result<Array2<f64>> {
        check_input(&x, self.in_dim())?;
        match (source, kernel) {
            (WeightSource::Binary, Kernel::Packed) => self.forward_packed(x),
            _ => Ok(x.dot(&self.weights(source).t())),
        }
    }

    fn forward_packed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let row = x.row(i).to_vec();
                if row.iter().all(|&v| v == 1.0 || v == -1.0) {
                    let bits = BitVector::from_signs(&row)?;
                    Ok(self.w_b.matvec_bits(&bits)?.into_iter().map(|d| d as f64).collect())
                } else {
                    self.w_b.matvec_real(&row)
                }
            })
            .collect::<Result<_>>()?;
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(Array2::from_shape_vec((x.nrows(), self.out_dim()), flat).expect("row lengths match"))
    }

    /// Returns `(∂L/∂w, ∂L/∂x)`. The gradient with respect to the binary
    /// weights is handed to `w_c` unchanged.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        g: ArrayView2<f64>,
        source: WeightSource,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        check_input(&x, self.in_dim())?;
        check_grad(&g, x.nrows(), self.out_dim())?;
        Ok((g.t().dot(&x), g.dot(&self.weights(source))))
    }

    /// `w_c ← clip(w_c − lr·grad, −1, 1)` followed by a refresh of `w_b`.
    pub fn sgd_update(&mut self, grad: ArrayView2<f64>, lr: f64) -> Result<()> {
        if grad.dim() != (self.out_dim(), self.in_dim()) {
            return Err(Error::shape(
                format!("{} × {}", self.out_dim(), self.in_dim()),
                format!("{:?}", grad.shape()),
            ));
        }
        self.w_c
            .data_mut()
            .iter_mut()
            .zip(grad.iter())
            .for_each(|(w, g)| *w = (*w - lr * g).clamp(-1.0, 1.0));
        self.w_b = BitMatrix::binarize(&self.w_c)?;
        Ok(())
    }
}

/// Batch statistics from a training-mode batch-norm pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub x_hat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

/// Per-feature normalization with learned scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub(crate) gamma: RealTensor,
    pub(crate) beta: RealTensor,
    pub(crate) running_mean: RealTensor,
    pub(crate) running_var: RealTensor,
    pub(crate) momentum: f64,
    pub(crate) epsilon: f64,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

impl BatchNorm {
    pub fn new(dim: usize) -> Result<Self> {
        Self::from_parts(
            RealTensor::vector(vec![1.0; dim])?,
            RealTensor::vector(vec![0.0; dim])?,
            RealTensor::vector(vec![0.0; dim])?,
            RealTensor::vector(vec![1.0; dim])?,
            BN_MOMENTUM,
            BN_EPSILON,
        )
    }

    pub fn from_parts(
        gamma: RealTensor,
        beta: RealTensor,
        running_mean: RealTensor,
        running_var: RealTensor,
        momentum: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let dim = gamma.len();
        for t in [&gamma, &beta, &running_mean, &running_var] {
            if !t.is_vector() || t.len() != dim {
                return Err(Error::shape(format!("vector of {dim}"), format!("{:?}", t.shape())));
            }
        }
        if running_var.data().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("running variance must be non-negative"));
        }
        if !(momentum > 0.0 && momentum < 1.0) || !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!(
                "batch norm needs momentum in (0, 1) and epsilon > 0, got {momentum} and {epsilon}"
            )));
        }
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
            momentum,
            epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &RealTensor {
        &self.gamma
    }

    pub fn beta(&self) -> &RealTensor {
        &self.beta
    }

    pub fn running_mean(&self) -> &RealTensor {
        &self.running_mean
    }

    pub fn running_var(&self) -> &RealTensor {
        &self.running_var
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn affine(&self, mut x_hat: Array2<f64>) -> Array2<f64> {
        let (g, b) = (self.gamma.view1(), self.beta.view1());
        for mut row in x_hat.rows_mut() {
            row.iter_mut()
                .zip(g.iter().zip(b.iter()))
                .for_each(|(v, (g, b))| *v = *v * g + b);
        }
        x_hat
    }

    /// Normalize with the batch's own statistics.
    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, BatchNormCache)> {
        check_input(&x, self.dim())?;
        if x.nrows() == 0 {
            return Err(Error::Empty("batch norm on an empty batch".into()));
        }
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let centered = &x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        let x_hat = centered * &inv_std;
        let y = self.affine(x_hat.clone());
        Ok((
            y,
            BatchNormCache {
                x_hat,
                inv_std,
                mean,
                var,
            },
        ))
    }

    /// Normalize with the running statistics.
    pub fn forward_eval(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_input(&x, self.dim())?;
        let mean = self.running_mean.view1();
        let inv_std = self.running_var.view1().mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        Ok(self.affine((&x - &mean) * &inv_std))
    }

    /// Exact derivative through the batch statistics. Returns `(∂x, ∂γ, ∂β)`.
    pub fn backward(&self, cache: &BatchNormCache, g: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>)> {
        check_grad(&g, cache.x_hat.nrows(), self.dim())?;
        let n = g.nrows() as f64;
        let dgamma = (&g * &cache.x_hat).sum_axis(Axis(0));
        let dbeta = g.sum_axis(Axis(0));
        let dx_hat = &g * &self.gamma.view1();
        let sum_dx_hat = dx_hat.sum_axis(Axis(0));
        let sum_dx_hat_xhat = (&dx_hat * &cache.x_hat).sum_axis(Axis(0));
        let mut dx = dx_hat * n - &sum_dx_hat - &cache.x_hat * &sum_dx_hat_xhat;
        dx *= &(&cache.inv_std / n);
        Ok((dx, dgamma, dbeta))
    }

    /// Exponential moving average toward a batch's statistics.
    pub fn update_running(&mut self, mean: &Array1<f64>, var: &Array1<f64>) {
        let m = self.momentum;
        self.running_mean
            .data_mut()
            .iter_mut()
            .zip(mean)
            .for_each(|(r, b)| *r = (1.0 - m) * *r + m * b);
        self.running_var
            .data_mut()
            .iter_mut()
            .zip(var)
            .for_each(|(r, b)| *r = ((1.0 - m) * *r + m * b).max(0.0));
    }

    /// Replace the running statistics outright.
    pub fn set_running(&mut self, mean: &[f64], var: &[f64]) -> Result<()> {
        if mean.len() != self.dim() || var.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: mean.len().max(var.len()),
            });
        }
        self.running_mean.data_mut().copy_from_slice(mean);
        self.running_var
            .data_mut()
            .iter_mut()
            .zip(var)
            .for_each(|(r, &v)| *r = v.max(0.0));
        Ok(())
    }

    pub(crate) fn sgd_update(&mut self, dgamma: &Array1<f64>, dbeta: &Array1<f64>, lr: f64) {
        self.gamma.data_mut().iter_mut().zip(dgamma).for_each(|(p, g)| *p -= lr * g);
        self.beta.data_mut().iter_mut().zip(dbeta).for_each(|(p, g)| *p -= lr * g);
    }
}

/// Forward function of an activation layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `θ(x)`.
    Sign,
    /// `clamp(x, −1, 1)`, the smooth surrogate whose derivative the backward pass uses.
    HardTanh,
}

pub fn binarize_activation(x: ArrayView2<f64>, activation: Activation) -> Array2<f64> {
    match activation {
        Activation::Sign => x.mapv(|v| if v > 0.0 { 1.0 } else { -1.0 }),
        Activation::HardTanh => x.mapv(|v| v.clamp(-1.0, 1.0)),
    }
}

/// Straight-through gradient: pass where `|x| ≤ 1`, zero elsewhere.
pub fn binarize_activation_backward(pre: ArrayView2<f64>, g: ArrayView2<f64>) -> Array2<f64> {
    let mut out = g.to_owned();
    out.zip_mut_with(&pre, |g, &x| {
        if x.abs() > 1.0 {
            *g = 0.0;
        }
    });
    out
}

/// Row-wise softmax, shifted by the row max.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(probs: ArrayView2<f64>, labels: &[u32]) -> Result<(f64, Array2<f64>)> {
    if probs.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            left: probs.nrows(),
            right: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= probs.ncols()) {
        return Err(Error::invalid(format!("label {bad} outside 0..{}", probs.ncols())));
    }
    let n = labels.len() as f64;
    let mut grad = probs.to_owned();
    let mut loss = 0.0;
    for (mut row, &l) in grad.rows_mut().into_iter().zip(labels) {
        loss -= row[l as usize].max(f64::MIN_POSITIVE).ln();
        row[l as usize] -= 1.0;
    }
    grad /= n;
    Ok((loss / n, grad))
}

/// One stage of a [`Network`](super::Network).
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    ContinuousDense(ContinuousDense),
    BinaryDense(BinaryDense),
    BatchNorm(BatchNorm),
    BinarizeActivation { dim: usize },
    SoftmaxOutput { dim: usize },
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::ContinuousDense(l) => l.in_dim(),
            Layer::BinaryDense(l) => l.in_dim(),
            Layer::BatchNorm(l) => l.dim(),
            Layer::BinarizeActivation { dim } | Layer::SoftmaxOutput { dim } => *dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::ContinuousDense(l) => l.out_dim(),
            Layer::BinaryDense(l) => l.out_dim(),
            _ => self.in_dim(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::ContinuousDense(_) => "continuous_dense",
            Layer::BinaryDense(_) => "binary_dense",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::BinarizeActivation { .. } => "binarize",
            Layer::SoftmaxOutput { .. } => "softmax",
        }
    }

    pub(crate) fn check_finite(&self, index: usize) -> Result<()> {
        let bad = match self {
            Layer::ContinuousDense(l) => first_non_finite(l.w.data().iter().copied()),
            Layer::BatchNorm(l) => first_non_finite(l.gamma.data().iter().chain(l.beta.data()).copied()),
            _ => None,
        };
        match bad {
            Some(_) => Err(Error::Divergence { layer: index }),
            None => Ok(()),
        }
    }
}
