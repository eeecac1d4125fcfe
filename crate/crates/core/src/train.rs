//! Reconstruction training of a [`Model`] as a metadata-conditioned
//! autoencoder: each image is fed together with its true one-hot class and the
//! model is asked to reproduce the image.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{one_hot_batch, LabeledDataset};
use crate::error::{contract, dim_err, Error, Result};
use crate::model::Model;
use crate::tape::Tape;
use crate::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum OptimizerKind {
    Adam {
        #[cfg_attr(feature = "serde", serde(default = "default_beta1"))]
        beta1: f64,
        #[cfg_attr(feature = "serde", serde(default = "default_beta2"))]
        beta2: f64,
        #[cfg_attr(feature = "serde", serde(default = "default_adam_eps"))]
        epsilon: f64,
    },
    Sgd,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_adam_eps(),
        }
    }
}

fn default_lr() -> f64 {
    0.001
}

#[cfg_attr(not(feature = "serde"), allow(dead_code))]
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    #[cfg_attr(feature = "serde", serde(default = "default_lr"))]
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub optimizer: OptimizerKind,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
    #[cfg_attr(feature = "serde", serde(default = "default_true"))]
    pub shuffle: bool,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: Adam at 0.001, batches of 256, 20 epochs.
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: 256,
            epochs: 20,
            optimizer: OptimizerKind::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    /// A learning rate of exactly 0 is accepted and freezes every parameter.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return contract(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return contract("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return contract("epochs must be at least 1");
        }
        if let OptimizerKind::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon <= 0.0 {
                return contract("Adam needs beta1, beta2 in [0, 1) and epsilon > 0");
            }
        }
        Ok(())
    }
}

/// `(1 / (N·b)) Σ (yhat − y)²`.
pub fn mse_loss(yhat: &Tensor, y: &Tensor) -> Result<f64> {
    if yhat.shape() != y.shape() {
        return dim_err("mse_loss", yhat.shape(), y.shape());
    }
    let s: f64 = yhat.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / y.numel() as f64)
}

/// Per-parameter optimiser memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Applies one SGD or Adam update in place.
pub fn optimizer_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return contract(format!("{} parameters but {} gradients", params.len(), grads.len()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return dim_err("optimizer_step", p.shape(), g.shape());
        }
    }
    let lr = config.learning_rate;
    state.step += 1;
    match config.optimizer {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                p.data_mut().iter_mut().zip(g.data()).for_each(|(w, d)| *w -= lr * d);
            }
        }
        OptimizerKind::Adam { beta1, beta2, epsilon } => {
            if state.first.is_empty() {
                state.first = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
                state.second = state.first.clone();
            } else if state.first.len() != grads.len() {
                return contract("optimizer state belongs to a different parameter set");
            }
            let t = state.step as i32;
            let c1 = 1.0 - libm::pow(beta1, t as f64);
            let c2 = 1.0 - libm::pow(beta2, t as f64);
            for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.first).zip(&mut state.second) {
                let iter = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
                for (((w, &d), m), v) in iter {
                    *m = beta1 * *m + (1.0 - beta1) * d;
                    *v = beta2 * *v + (1.0 - beta2) * d * d;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *w -= lr * mhat / (libm::sqrt(vhat) + epsilon);
                }
            }
        }
    }
    Ok(())
}

/// Checks that a dataset can be fed to `model`.
pub fn check_compatible(model: &Model, dataset: &LabeledDataset) -> Result<()> {
    let spec = model.spec();
    if dataset.is_empty() {
        return Err(Error::Dataset("dataset is empty".into()));
    }
    if (spec.image_h, spec.image_w, spec.channels) != (dataset.image_h, dataset.image_w, dataset.channels) {
        return Err(Error::Dataset(format!(
            "dataset images are {}x{}x{}, model expects {}x{}x{}",
            dataset.image_h, dataset.image_w, dataset.channels, spec.image_h, spec.image_w, spec.channels
        )));
    }
    if spec.meta_count != 1 || spec.meta_dim != dataset.class_count() {
        return Err(Error::Dataset(format!(
            "dataset has {} classes, model expects {} one-hot blocks of {}",
            dataset.class_count(),
            spec.meta_count,
            spec.meta_dim
        )));
    }
    Ok(())
}

/// Runs one forward/backward pass on a batch and returns the loss and the
/// parameter gradients in registry order.
pub fn loss_and_grads(model: &Model, images: &Tensor, meta: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let m = tape.constant(meta.clone());
    let y = model.forward_on_tape(&mut tape, x, m)?;
    let loss = tape.mse(y, x)?;
    let grads = tape.backward(loss)?;
    let value = tape.value(loss).data()[0];
    let out = tape
        .params()
        .iter()
        .map(|&p| grads.get(p).cloned().expect("parameters always receive adjoints"))
        .collect();
    Ok((value, out))
}

/// Trains in place and returns the mean loss of every epoch (weighted by
/// batch size). `on_epoch` sees the epoch index (from 1), its loss and the
/// model after the epoch's last update.
pub fn train_autoencoder(
    model: &mut Model,
    dataset: &LabeledDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &Model),
) -> Result<Vec<f64>> {
    config.validate()?;
    check_compatible(model, dataset)?;
    let n = dataset.len();
    let d = dataset.class_count();
    let mut rng = Rng::new(config.seed);
    let mut state = OptimizerState::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        if config.shuffle {
            rng.shuffle(&mut order);
        }
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let images = dataset.images.select_cols(batch)?;
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.labels[i]).collect();
            let meta = one_hot_batch(&labels, d)?;
            let (loss, grads) = loss_and_grads(model, &images, &meta)?;
            total += loss * batch.len() as f64;
            optimizer_step(&mut model.params_mut(), &grads, &mut state, config)?;
        }
        let mean = total / n as f64;
        history.push(mean);
        on_epoch(epoch, mean, model);
    }
    Ok(history)
}
