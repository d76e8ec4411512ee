use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{ArchSpec, LayerKind};
use super::layers::{
    binarize_activation, binarize_activation_backward, cross_entropy, softmax, Activation, BatchNorm,
    BatchNormCache, BinaryDense, ContinuousDense, Kernel, Layer, WeightSource,
};
use crate::data_io::Dataset;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch norm uses the batch's statistics.
    Train,
    /// Batch norm uses the running statistics.
    Eval,
}

/// Which binary-dense layers compute with `w_c` instead of `θ(w_c)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Binary,
    Continuous,
    /// Only the dense layer with this index (counting dense layers from 0).
    ContinuousLayer(usize),
}

impl WeightMode {
    fn source(self, dense_index: usize) -> WeightSource {
        match self {
            WeightMode::Binary => WeightSource::Binary,
            WeightMode::Continuous => WeightSource::Continuous,
            WeightMode::ContinuousLayer(i) if i == dense_index => WeightSource::Continuous,
            WeightMode::ContinuousLayer(_) => WeightSource::Binary,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardConfig {
    pub mode: Mode,
    pub weights: WeightMode,
    pub activation: Activation,
    pub kernel: Kernel,
}

impl ForwardConfig {
    pub fn train() -> Self {
        Self {
            mode: Mode::Train,
            weights: WeightMode::Binary,
            activation: Activation::Sign,
            kernel: Kernel::Float,
        }
    }

    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            ..Self::train()
        }
    }

    /// Continuous weights and hard-tanh activations: the differentiable
    /// network whose exact gradient the straight-through backward pass computes.
    pub fn surrogate() -> Self {
        Self {
            weights: WeightMode::Continuous,
            activation: Activation::HardTanh,
            ..Self::train()
        }
    }

    pub fn with_weights(self, weights: WeightMode) -> Self {
        Self { weights, ..self }
    }

    pub fn with_kernel(self, kernel: Kernel) -> Self {
        Self { kernel, ..self }
    }
}

/// Everything a forward pass saw, for backward and for diagnostics.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    config: ForwardConfig,
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Array2<f64>>,
    batch_norm: Vec<Option<BatchNormCache>>,
}

impl ForwardCache {
    pub fn config(&self) -> ForwardConfig {
        self.config
    }

    pub fn batch_len(&self) -> usize {
        self.activations[0].nrows()
    }

    pub fn input_of(&self, layer: usize) -> ArrayView2<'_, f64> {
        self.activations[layer].view()
    }

    pub fn output_of(&self, layer: usize) -> ArrayView2<'_, f64> {
        self.activations[layer + 1].view()
    }

    /// Pre-softmax scores.
    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.activations[self.activations.len() - 2].view()
    }

    pub fn probabilities(&self) -> ArrayView2<'_, f64> {
        self.activations.last().expect("non-empty").view()
    }

    pub fn batch_stats(&self, layer: usize) -> Option<&BatchNormCache> {
        self.batch_norm[layer].as_ref()
    }

    pub fn predictions(&self) -> Vec<u32> {
        argmax_rows(self.probabilities())
    }
}

fn argmax_rows(p: ArrayView2<f64>) -> Vec<u32> {
    p.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerGrad {
    None,
    Dense(Array2<f64>),
    BatchNorm { gamma: Array1<f64>, beta: Array1<f64> },
}

impl LayerGrad {
    fn all_finite(&self) -> bool {
        match self {
            LayerGrad::None => true,
            LayerGrad::Dense(g) => g.iter().all(|v| v.is_finite()),
            LayerGrad::BatchNorm { gamma, beta } => gamma.iter().chain(beta).all(|v| v.is_finite()),
        }
    }
}

/// Parameter gradients, one entry per layer, plus the gradient at the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: Array2<f64>,
    pub loss: f64,
}

/// Learning-rate multiplier for the latent weights of binary dense layers.
///
/// Batch norm after a binary layer divides its weight gradients by the
/// pre-activation scale, roughly `√in`, while the latent weights live on
/// `[−1, 1]`. Left at unit rate they barely leave their initialization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentLrScale {
    Unit,
    /// `1/√(1.5/(in + out))`, the inverse of the Glorot uniform bound.
    #[default]
    Glorot,
}

impl LatentLrScale {
    pub fn factor(self, in_dim: usize, out_dim: usize) -> f64 {
        match self {
            LatentLrScale::Unit => 1.0,
            LatentLrScale::Glorot => ((in_dim + out_dim) as f64 / 1.5).sqrt(),
        }
    }
}

/// Latent learning-rate multiplier: `gain` times the per-layer [`LatentLrScale`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentLr {
    pub scale: LatentLrScale,
    pub gain: f64,
}

impl LatentLr {
    /// Latent weights step at exactly the global rate.
    pub const UNIT: LatentLr = LatentLr {
        scale: LatentLrScale::Unit,
        gain: 1.0,
    };

    pub fn factor(self, in_dim: usize, out_dim: usize) -> f64 {
        self.gain * self.scale.factor(in_dim, out_dim)
    }
}

/// An ordered stack of layers ending in a softmax output.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    version: u64,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::invalid("network has no layers"));
        };
        if !matches!(last, Layer::SoftmaxOutput { .. }) {
            return Err(Error::invalid("the last layer must be the softmax output"));
        }
        if let Some(i) = layers[..layers.len() - 1]
            .iter()
            .position(|l| matches!(l, Layer::SoftmaxOutput { .. }))
        {
            return Err(Error::invalid(format!("softmax output at layer {i} is not last")));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    format!("layer {} input of {}", i + 1, pair[0].out_dim()),
                    format!("{} ({})", pair[1].in_dim(), pair[1].name()),
                ));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// Dense, batch norm and (except after the last dense layer) sign
    /// activation for every step of `arch`, with seeded uniform weights.
    pub fn from_arch(arch: &ArchSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = arch.widths();
        let mut layers = Vec::new();
        for (i, kind) in arch.kinds().iter().enumerate() {
            let (din, dout) = (w[i], w[i + 1]);
            layers.push(match kind {
                LayerKind::Continuous => Layer::ContinuousDense(ContinuousDense::init(din, dout, &mut rng)?),
                LayerKind::Binary => Layer::BinaryDense(BinaryDense::init(din, dout, &mut rng)?),
            });
            layers.push(Layer::BatchNorm(BatchNorm::new(dout)?));
            if i + 1 < arch.num_dense() {
                layers.push(Layer::BinarizeActivation { dim: dout });
            }
        }
        layers.push(Layer::SoftmaxOutput {
            dim: arch.num_classes(),
        });
        Self::new(layers)
    }

    /// Widths and dense kinds, read back off the layers.
    pub fn arch(&self) -> Result<ArchSpec> {
        let mut widths = vec![self.input_dim()];
        let mut kinds = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::ContinuousDense(l) => {
                    kinds.push(LayerKind::Continuous);
                    widths.push(l.out_dim());
                }
                Layer::BinaryDense(l) => {
                    kinds.push(LayerKind::Binary);
                    widths.push(l.out_dim());
                }
                _ => {}
            }
        }
        Ok(ArchSpec::new(widths, kinds)?)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    /// Bumped on every parameter change; caches from older versions are rejected.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// Layer indices of the dense layers, in order.
    pub fn dense_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::ContinuousDense(_) | Layer::BinaryDense(_)))
            .map(|(i, _)| i)
            .collect()
    }

    fn apply(
        &self,
        index: usize,
        dense_index: usize,
        x: ArrayView2<f64>,
        cfg: &ForwardConfig,
    ) -> Result<(Array2<f64>, Option<BatchNormCache>)> {
        Ok(match &self.layers[index] {
            Layer::ContinuousDense(l) => (l.forward(x)?, None),
            Layer::BinaryDense(l) => (l.forward(x, cfg.weights.source(dense_index), cfg.kernel)?, None),
            Layer::BatchNorm(l) => match cfg.mode {
                Mode::Train => {
                    let (y, c) = l.forward_train(x)?;
                    (y, Some(c))
                }
                Mode::Eval => (l.forward_eval(x)?, None),
            },
            Layer::BinarizeActivation { .. } => (binarize_activation(x, cfg.activation), None),
            Layer::SoftmaxOutput { .. } => (softmax(x), None),
        })
    }

    pub fn forward(&self, x: ArrayView2<f64>, cfg: ForwardConfig) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(
                format!("batch × {}", self.input_dim()),
                format!("{:?}", x.shape()),
            ));
        }
        if x.nrows() == 0 {
            return Err(Error::Empty("forward on an empty batch".into()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut batch_norm = Vec::with_capacity(self.layers.len());
        activations.push(x.to_owned());
        let mut dense_index = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, bn) = self.apply(i, dense_index, activations[i].view(), &cfg)?;
            if matches!(layer, Layer::ContinuousDense(_) | Layer::BinaryDense(_)) {
                dense_index += 1;
            }
            activations.push(y);
            batch_norm.push(bn);
        }
        Ok(ForwardCache {
            version: self.version,
            config: cfg,
            activations,
            batch_norm,
        })
    }

    /// Eval-mode output of the first `end` layers.
    pub fn forward_prefix(&self, x: ArrayView2<f64>, cfg: ForwardConfig, end: usize) -> Result<Array2<f64>> {
        let cfg = ForwardConfig { mode: Mode::Eval, ..cfg };
        let mut cur = x.to_owned();
        let mut dense_index = 0;
        for (i, layer) in self.layers[..end].iter().enumerate() {
            cur = self.apply(i, dense_index, cur.view(), &cfg)?.0;
            if matches!(layer, Layer::ContinuousDense(_) | Layer::BinaryDense(_)) {
                dense_index += 1;
            }
        }
        Ok(cur)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::StaleCache(format!(
                "cache from network version {}, network is at {}",
                cache.version, self.version
            )));
        }
        if cache.config.mode != Mode::Train {
            return Err(Error::StaleCache("backward needs a train-mode forward".into()));
        }
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::StaleCache("cache belongs to a different network".into()));
        }
        Ok(())
    }

    /// Softmax cross-entropy gradients for a train-mode forward on this batch.
    pub fn backward(&self, cache: &ForwardCache, labels: &[u32]) -> Result<Gradients> {
        self.check_cache(cache)?;
        let (loss, dlogits) = cross_entropy(cache.probabilities(), labels)?;
        let mut grads = self.backward_from_logits(cache, dlogits.view())?;
        grads.loss = loss;
        Ok(grads)
    }

    /// Backpropagate an arbitrary gradient with respect to the logits.
    pub fn backward_from_logits(&self, cache: &ForwardCache, dlogits: ArrayView2<f64>) -> Result<Gradients> {
        self.check_cache(cache)?;
        let n = self.layers.len();
        let mut layers = vec![LayerGrad::None; n];
        let mut g = dlogits.to_owned();
        let mut dense_index = self.dense_layers().len();
        for i in (0..n - 1).rev() {
            let x = cache.input_of(i);
            g = match &self.layers[i] {
                Layer::ContinuousDense(l) => {
                    dense_index -= 1;
                    let (dw, dx) = l.backward(x, g.view())?;
                    layers[i] = LayerGrad::Dense(dw);
                    dx
                }
                Layer::BinaryDense(l) => {
                    dense_index -= 1;
                    let (dw, dx) = l.backward(x, g.view(), cache.config.weights.source(dense_index))?;
                    layers[i] = LayerGrad::Dense(dw);
                    dx
                }
                Layer::BatchNorm(l) => {
                    let bn = cache.batch_norm[i].as_ref().expect("train-mode cache");
                    let (dx, gamma, beta) = l.backward(bn, g.view())?;
                    layers[i] = LayerGrad::BatchNorm { gamma, beta };
                    dx
                }
                Layer::BinarizeActivation { .. } => binarize_activation_backward(x, g.view()),
                Layer::SoftmaxOutput { .. } => unreachable!("softmax is last"),
            };
        }
        Ok(Gradients {
            layers,
            input: g,
            loss: f64::NAN,
        })
    }

    /// Plain SGD; binary-dense latent weights are clipped to `[−1, 1]`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        self.sgd_step_with(grads, lr, LatentLr::UNIT)
    }

    /// [`sgd_step`](Self::sgd_step) with binary-dense layers stepping at
    /// `lr` times their [`LatentLrScale`] factor.
    pub fn sgd_step_with(&mut self, grads: &Gradients, lr: f64, latent: LatentLr) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                left: self.layers.len(),
                right: grads.layers.len(),
            });
        }
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate {lr}")));
        }
        if let Some(i) = grads.layers.iter().position(|g| !g.all_finite()) {
            return Err(Error::Divergence { layer: i });
        }
        for (layer, g) in self.layers.iter().zip(&grads.layers) {
            let ok = matches!(
                (layer, g),
                (Layer::ContinuousDense(_) | Layer::BinaryDense(_), LayerGrad::Dense(_))
                    | (Layer::BatchNorm(_), LayerGrad::BatchNorm { .. })
                    | (_, LayerGrad::None)
            );
            if !ok {
                return Err(Error::invalid(format!("gradient does not fit layer {}", layer.name())));
            }
        }
        self.version += 1;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            match (layer, g) {
                (Layer::ContinuousDense(l), LayerGrad::Dense(dw)) => l.sgd_update(dw.view(), lr),
                (Layer::BinaryDense(l), LayerGrad::Dense(dw)) => {
                    let scale = latent.factor(l.in_dim(), l.out_dim());
                    l.sgd_update(dw.view(), lr * scale)?
                }
                (Layer::BatchNorm(l), LayerGrad::BatchNorm { gamma, beta }) => l.sgd_update(gamma, beta, lr),
                _ => {}
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check_finite(i)?;
        }
        Ok(())
    }

    /// Fold a train-mode batch's statistics into the running averages.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) -> Result<()> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::StaleCache("cache belongs to a different network".into()));
        }
        for (layer, bn) in self.layers.iter_mut().zip(&cache.batch_norm) {
            if let (Layer::BatchNorm(l), Some(c)) = (layer, bn) {
                l.update_running(&c.mean, &c.var);
            }
        }
        Ok(())
    }

    /// Set every batch-norm layer's running statistics to the population
    /// statistics of `x` under the given forward configuration. Layers are
    /// calibrated in order so each sees already-calibrated predecessors.
    pub fn recalibrate_batch_norm(&mut self, x: ArrayView2<f64>, cfg: ForwardConfig, chunk: usize) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::Empty("recalibration data".into()));
        }
        let chunk = chunk.max(1);
        let bn_layers: Vec<usize> = (0..self.layers.len())
            .filter(|&i| matches!(self.layers[i], Layer::BatchNorm(_)))
            .collect();
        for i in bn_layers {
            let dim = self.layers[i].in_dim();
            let mut shift: Option<Array1<f64>> = None;
            let mut sum = Array1::<f64>::zeros(dim);
            let mut sum_sq = Array1::<f64>::zeros(dim);
            for start in (0..x.nrows()).step_by(chunk) {
                let end = (start + chunk).min(x.nrows());
                let h = self.forward_prefix(x.slice(ndarray::s![start..end, ..]), cfg, i)?;
                let k = shift.get_or_insert_with(|| h.mean_axis(Axis(0)).expect("non-empty"));
                let d = &h - &*k;
                sum += &d.sum_axis(Axis(0));
                sum_sq += &d.mapv(|v| v * v).sum_axis(Axis(0));
            }
            let n = x.nrows() as f64;
            let shift = shift.expect("at least one chunk");
            let mean_d = &sum / n;
            let var = (&sum_sq / n - &mean_d * &mean_d).mapv(|v| v.max(0.0));
            let mean = shift + mean_d;
            if let Layer::BatchNorm(l) = &mut self.layers[i] {
                l.set_running(mean.as_slice().unwrap(), var.as_slice().unwrap())?;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Predicted classes, evaluated in chunks.
    pub fn predict(&self, x: ArrayView2<f64>, cfg: ForwardConfig) -> Result<Vec<u32>> {
        let cfg = ForwardConfig { mode: Mode::Eval, ..cfg };
        let mut out = Vec::with_capacity(x.nrows());
        for start in (0..x.nrows()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(x.nrows());
            let p = self.forward_prefix(x.slice(ndarray::s![start..end, ..]), cfg, self.layers.len())?;
            out.extend(argmax_rows(p.view()));
        }
        Ok(out)
    }
}

const EVAL_CHUNK: usize = 1000;

/// Fraction of correctly classified samples.
///
/// With [`WeightMode::Binary`] the stored running statistics are used. Any
/// other mode changes the scale of the pre-activations it touches, so the
/// batch-norm statistics are first re-estimated on `data` itself (no labels
/// involved) under that mode, as a batch-statistics forward would.
pub fn evaluate(net: &Network, data: &Dataset, weights: WeightMode) -> Result<f64> {
    evaluate_with(net, data, ForwardConfig::eval().with_weights(weights))
}

pub fn evaluate_with(net: &Network, data: &Dataset, cfg: ForwardConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    let x = data.images.view2();
    let preds = if cfg.weights == WeightMode::Binary {
        net.predict(x, cfg)?
    } else {
        let mut recal = net.clone();
        recal.recalibrate_batch_norm(x, cfg, EVAL_CHUNK)?;
        recal.predict(x, cfg)?
    };
    Ok(accuracy(&preds, &data.labels))
}

pub fn accuracy(preds: &[u32], labels: &[u32]) -> f64 {
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len().max(1) as f64
}
