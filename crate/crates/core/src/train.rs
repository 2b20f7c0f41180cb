//! RMSProp, categorical cross-entropy and the mini-batch training loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{random_augment, stream_position, AugmentPolicy};
use crate::dataset::{batches, LabeledImage};
use crate::imaging::GrayImage32;
use crate::nn::{image_tensor, one_hot, Gradients, Mode, NetworkSpec, NnError, Parameters, Tensor};

/// Lower bound applied to probabilities inside the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("label {0} is outside the network's output classes")]
    LabelOutOfRange(usize),
}

/// `−Σ y·ln(max(p, 1e−12))` for a one-hot target.
pub fn cross_entropy(probs: &Tensor, onehot: &Tensor) -> Result<f64, TrainError> {
    let ones = onehot.data().iter().filter(|&&v| v == 1.0).count();
    let zeros = onehot.data().iter().filter(|&&v| v == 0.0).count();
    if onehot.shape() != probs.shape() || ones != 1 || ones + zeros != onehot.len() {
        return Err(NnError::MalformedOneHot.into());
    }
    Ok(-probs
        .data()
        .iter()
        .zip(onehot.data())
        .filter(|(_, &y)| y == 1.0)
        .map(|(&p, _)| p.max(PROB_FLOOR).ln())
        .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            rho: 0.9,
            eps: 1e-8,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(TrainError::InvalidConfig(format!(
                "rho {} outside [0, 1)",
                self.rho
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "eps {} must be positive",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Optimizer hyperparameters plus the running mean of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub config: RmsPropConfig,
    pub accum: Parameters,
}

impl RmsPropState {
    pub fn new(config: RmsPropConfig, params: &Parameters) -> Self {
        Self {
            config,
            accum: params.zeros_like(),
        }
    }
}

/// `v ← ρv + (1−ρ)g²;  w ← w − lr·g/(√v + ε)` elementwise.
pub fn rmsprop_step(
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut RmsPropState,
) -> Result<(), TrainError> {
    if !params.same_shapes(grads) || !params.same_shapes(&state.accum) {
        return Err(
            NnError::ShapeMismatch("optimizer buffers do not match parameters".into()).into(),
        );
    }
    let RmsPropConfig { lr, rho, eps } = state.config;
    for ((w, g), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.accum.tensors_mut())
    {
        for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = rho * *vi + (1.0 - rho) * gi * gi;
            *wi -= lr * gi / (vi.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// On-the-fly augmentation; `None` trains on the raw images.
    pub augment: Option<AugmentPolicy>,
    pub optimizer: RmsPropConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            seed: 0,
            augment: None,
            optimizer: RmsPropConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig(
                "epochs must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "batch size must be at least 1".into(),
            ));
        }
        if let Some(policy) = &self.augment {
            policy.validate().map_err(TrainError::InvalidConfig)?;
        }
        self.optimizer.validate()
    }
}

/// One row of the training history. `epoch` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dropout seed for one sample visit, independent of batch composition.
fn dropout_seed(seed: u64, epoch: usize, sample: usize) -> u64 {
    mix64(seed ^ mix64(stream_position(epoch, sample)))
}

fn check_labels(spec: &NetworkSpec, samples: &[LabeledImage]) -> Result<usize, TrainError> {
    let classes = spec.num_classes()?;
    if let Some(bad) = samples.iter().find(|s| s.label >= classes) {
        return Err(TrainError::LabelOutOfRange(bad.label));
    }
    Ok(classes)
}

/// One pass over `train` in seeded mini-batches, one optimizer step per
/// batch on the batch-mean gradient. Returns the mean loss and accuracy of
/// the (augmented, dropout-active) training forward passes.
pub fn train_epoch(
    spec: &NetworkSpec,
    params: &mut Parameters,
    state: &mut RmsPropState,
    train: &[LabeledImage],
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    config.validate()?;
    let classes = check_labels(spec, train)?;
    let indices: Vec<usize> = (0..train.len()).collect();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut grads = params.zeros_like();
    for batch in batches(&indices, config.batch_size, config.seed, epoch) {
        grads.scale(0.0);
        for &i in &batch {
            let sample = &train[i];
            let augmented;
            let image = match &config.augment {
                Some(policy) => {
                    augmented = random_augment(&sample.image, policy, stream_position(epoch, i));
                    &augmented
                }
                None => &sample.image,
            };
            let mode = Mode::Train {
                seed: dropout_seed(config.seed, epoch, i),
            };
            let (probs, cache) = spec.forward(params, &image_tensor(image), mode)?;
            let target = one_hot(sample.label, classes);
            loss_sum += cross_entropy(&probs, &target)?;
            if probs.argmax() == sample.label {
                correct += 1;
            }
            spec.accumulate_backward(params, cache, &target, &mut grads)?;
        }
        grads.scale(1.0 / batch.len() as f64);
        rmsprop_step(params, &grads, state)?;
    }
    Ok(EpochStats {
        loss: loss_sum / train.len() as f64,
        accuracy: correct as f64 / train.len() as f64,
    })
}

/// Inference-mode predictions over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

pub fn evaluate(
    spec: &NetworkSpec,
    params: &Parameters,
    samples: &[LabeledImage],
) -> Result<Evaluation, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let classes = check_labels(spec, samples)?;
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(samples.len());
    let mut probabilities = Vec::with_capacity(samples.len());
    for s in samples {
        let probs = spec.infer(params, &s.image)?;
        loss += cross_entropy(&probs, &one_hot(s.label, classes))?;
        predictions.push(probs.argmax());
        probabilities.push(probs.into_data());
    }
    let correct = predictions
        .iter()
        .zip(samples)
        .filter(|(p, s)| **p == s.label)
        .count();
    Ok(Evaluation {
        loss: loss / samples.len() as f64,
        accuracy: correct as f64 / samples.len() as f64,
        predictions,
        probabilities,
    })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Parameters,
    pub history: Vec<EpochRecord>,
}

pub fn fit(
    spec: &NetworkSpec,
    train: &[LabeledImage],
    val: &[LabeledImage],
    config: &TrainConfig,
) -> Result<FitResult, TrainError> {
    fit_with_progress(spec, train, val, config, |_| {})
}

/// [`fit`] with a callback invoked after every epoch.
pub fn fit_with_progress(
    spec: &NetworkSpec,
    train: &[LabeledImage],
    val: &[LabeledImage],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult, TrainError> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut params = spec.init_params(config.seed)?;
    let mut state = RmsPropState::new(config.optimizer, &params);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let stats = train_epoch(spec, &mut params, &mut state, train, config, epoch)?;
        let eval = evaluate(spec, &params, val)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: stats.loss,
            train_accuracy: stats.accuracy,
            val_loss: eval.loss,
            val_accuracy: eval.accuracy,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(FitResult { params, history })
}

/// Most probable class (lowest index on ties) and the full distribution.
pub fn predict(
    spec: &NetworkSpec,
    params: &Parameters,
    image: &GrayImage32,
) -> Result<(usize, Tensor), TrainError> {
    let probs = spec.infer(params, image)?;
    Ok((probs.argmax(), probs))
}

/// `epoch,train_loss,train_acc,val_loss,val_acc` with a header row.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
        ));
    }
    out
}
