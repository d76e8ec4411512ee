use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{ArchSpec, LayerKind};
use super::network::{evaluate, ForwardConfig, LatentLr, LatentLrScale, Network, WeightMode};
use crate::data_io::{batches, Dataset};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate for the first epoch.
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Overrides the kind of the first dense layer of the architecture.
    pub first_layer: Option<LayerKind>,
    #[serde(default)]
    pub latent_lr_scale: LatentLrScale,
    /// Constant multiplier on top of `latent_lr_scale`.
    #[serde(default = "default_latent_lr_gain")]
    pub latent_lr_gain: f64,
}

fn default_latent_lr_gain() -> f64 {
    16.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.3,
            lr_decay: 0.9,
            batch_size: 100,
            epochs: 20,
            seed: 0,
            first_layer: Some(LayerKind::Continuous),
            latent_lr_scale: LatentLrScale::Glorot,
            latent_lr_gain: default_latent_lr_gain(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if !(self.latent_lr_gain > 0.0 && self.latent_lr_gain.is_finite()) {
            return Err(Error::invalid(format!("latent_lr_gain must be positive, got {}", self.latent_lr_gain)));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }

    pub fn latent_lr(&self) -> LatentLr {
        LatentLr {
            scale: self.latent_lr_scale,
            gain: self.latent_lr_gain,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }

    /// Seeded network for `arch`, honoring [`first_layer`](Self::first_layer).
    pub fn init_network(&self, arch: &ArchSpec) -> Result<Network> {
        let arch = match self.first_layer {
            Some(kind) => arch.clone().with_first_layer(kind),
            None => arch.clone(),
        };
        Network::from_arch(&arch, self.seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub samples: usize,
}

/// Forward, backward, running-stat update and SGD on one batch.
pub fn train_step(
    net: &mut Network,
    data: &Dataset,
    indices: &[usize],
    lr: f64,
    latent: LatentLr,
) -> Result<StepStats> {
    let (x, labels) = data.batch(indices);
    let cache = net.forward(x.view(), ForwardConfig::train())?;
    let grads = net.backward(&cache, &labels)?;
    if !grads.loss.is_finite() {
        return Err(Error::Divergence { layer: net.layers().len() - 1 });
    }
    let correct = cache
        .predictions()
        .iter()
        .zip(&labels)
        .filter(|(p, l)| p == l)
        .count();
    net.update_running_stats(&cache)?;
    net.sgd_step_with(&grads, lr, latent)?;
    Ok(StepStats {
        loss: grads.loss,
        correct,
        samples: labels.len(),
    })
}

/// One row of the per-epoch training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,train_acc,test_acc";

    pub fn csv_row(&self) -> String {
        let test = self.test_acc.map_or(String::new(), |a| a.to_string());
        format!("{},{},{},{},{}", self.epoch, self.lr, self.train_loss, self.train_acc, test)
    }
}

/// Train for `cfg.epochs` epochs, reporting each epoch as it finishes.
/// Train loss and accuracy are averaged over the epoch's batches as they
/// were seen during training.
pub fn train(
    net: &mut Network,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::Empty("training dataset".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
        for idx in batches(train_data.len(), cfg.batch_size, order_rng.next_u64())? {
            let s = train_step(net, train_data, &idx, lr, cfg.latent_lr())?;
            loss_sum += s.loss * s.samples as f64;
            correct += s.correct;
            seen += s.samples;
        }
        let test_acc = test_data
            .map(|d| evaluate(net, d, WeightMode::Binary))
            .transpose()?;
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            test_acc,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
