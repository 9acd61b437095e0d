//! Smooth training with the correlation regularizer.
//!
//! Every epoch shuffles the data, adds fresh Gaussian noise to each example
//! and takes momentum-SGD steps on mean cross-entropy. Once per epoch, before
//! the first minibatch, the regularizer `α ‖R‖_{1,1}` gets its own plain
//! gradient step at the current learning rate.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_loss, gradient_step, sgd_step, Gradients, MlpModel, SgdParams, SgdState};
use crate::rng::{self, Phase};
use crate::linalg::argmax;
use crate::smoothing::{NoiseConfig, SmoothedClassifier};
use crate::spectral::regularizer_and_gradient;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// `(epoch, divisor)`: from 0-based `epoch` on, the learning rate is
    /// divided by `divisor` (cumulatively).
    pub lr_drops: Vec<(usize, f64)>,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Regularizer weight.
    pub alpha: f64,
    /// Variance of the input noise added during training.
    pub noise_variance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            lr: 0.1,
            lr_drops: vec![(10, 10.0), (20, 10.0)],
            momentum: 0.9,
            weight_decay: 0.0,
            alpha: 0.1,
            noise_variance: 0.12,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be ≥ 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0,1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) || !(self.alpha >= 0.0) || !(self.noise_variance >= 0.0) {
            return bad("weight_decay, alpha and noise_variance must be ≥ 0".into());
        }
        if self.lr_drops.iter().any(|&(_, d)| !(d > 0.0)) {
            return bad("lr divisors must be > 0".into());
        }
        Ok(())
    }

    /// Learning rate in effect during 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_drops
            .iter()
            .filter(|&&(e, _)| epoch >= e)
            .fold(self.lr, |lr, &(_, d)| lr / d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's (noisy) examples.
    pub loss: f64,
    /// Accuracy on the same noisy examples, before each step.
    pub train_acc: f64,
    /// `‖R‖_{1,1}` at the start of the epoch.
    pub reg_value: f64,
    /// Wall time of the training work in the epoch.
    pub seconds: f64,
}

/// Progress notifications from [`train_observed`].
pub enum TrainEvent<'a> {
    /// The regularizer value for `epoch`, together with the weights it was
    /// computed on (before the regularizer step).
    Regularizer {
        epoch: usize,
        value: f64,
        model: &'a MlpModel,
    },
    EpochEnd {
        metrics: &'a EpochMetrics,
        model: &'a MlpModel,
    },
}

/// Train `model` on `data`; returns the final weights and per-epoch metrics.
pub fn train(model: MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<(MlpModel, Vec<EpochMetrics>)> {
    train_observed(model, data, cfg, |_| Ok(()))
}

/// [`train`] with a callback. An error from the callback stops training.
///
/// On divergence (non-finite loss) training stops with
/// [`Error::Diverged`]; the last `EpochEnd` event carried the last good
/// weights.
pub fn train_observed(
    mut model: MlpModel,
    data: &Dataset,
    cfg: &TrainConfig,
    mut observer: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<(MlpModel, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "data has {} features, model takes {}",
            data.dim(),
            model.input_dim()
        )));
    }
    if data.num_classes() > model.num_classes() {
        return Err(Error::Dimension(format!(
            "data has {} classes, model outputs {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    let sigma = cfg.noise_variance.sqrt();
    let mut state = SgdState::new(&model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Gradients::zeros_like(&model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut noisy = vec![0.0; data.dim()];

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let sgd = SgdParams {
            lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        };
        let mut busy = Duration::ZERO;
        let mut started = Instant::now();

        let reg_value = if cfg.alpha > 0.0 {
            let mut reg = regularizer_and_gradient(&model);
            busy += started.elapsed();
            observer(TrainEvent::Regularizer { epoch, value: reg.value, model: &model })?;
            started = Instant::now();
            reg.grads.scale(cfg.alpha);
            gradient_step(&mut model, &reg.grads, lr)?;
            reg.value
        } else {
            // Logged only; not part of the baseline's training work.
            busy += started.elapsed();
            let value = regularizer_and_gradient(&model).value;
            observer(TrainEvent::Regularizer { epoch, value, model: &model })?;
            started = Instant::now();
            value
        };

        order.shuffle(&mut rng::phase_stream(cfg.seed, epoch as u64, Phase::Shuffle));
        let mut noise_rng = rng::phase_stream(cfg.seed, epoch as u64, Phase::TrainNoise);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            for g in &mut grads.layers {
                g.entries_mut().fill(0.0);
            }
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let x = data.input(i);
                for (n, &xi) in noisy.iter_mut().zip(x) {
                    *n = if sigma > 0.0 {
                        let z: f64 = StandardNormal.sample(&mut noise_rng);
                        xi + sigma * z
                    } else {
                        xi
                    };
                }
                let trace = model.forward_traced(&noisy)?;
                let label = data.label(i);
                let (loss, upstream) = cross_entropy_loss(trace.logits(), label)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, batch: b, loss });
                }
                loss_sum += loss;
                if argmax(trace.logits()) == label {
                    hits += 1;
                }
                model.backward_into(&trace, &upstream, scale, &mut grads)?;
            }
            if !grads.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss: f64::NAN });
            }
            sgd_step(&mut model, &grads, &sgd, &mut state)?;
        }
        busy += started.elapsed();

        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / data.len() as f64,
            train_acc: hits as f64 / data.len() as f64,
            reg_value,
            seconds: busy.as_secs_f64(),
        };
        observer(TrainEvent::EpochEnd { metrics: &metrics, model: &model })?;
        history.push(metrics);
    }
    Ok((model, history))
}

/// Accuracy of `f_w` (no noise) or of the smoothed majority vote with `num`
/// draws per sample. Sample `i` uses the stream `(stream, i, Evaluate)`.
pub fn evaluate(
    model: &MlpModel,
    data: &Dataset,
    noise: Option<&NoiseConfig>,
    num: u64,
    stream: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut hits = 0usize;
    match noise {
        None => {
            for i in 0..data.len() {
                if model.predict(data.input(i))? == data.label(i) {
                    hits += 1;
                }
            }
        }
        Some(noise) => {
            let clf = SmoothedClassifier::new(model, *noise)?;
            for i in 0..data.len() {
                let seed = rng::sample_seed(stream, i as u64, Phase::Evaluate);
                if clf.predict(data.input(i), num, seed)? == data.label(i) {
                    hits += 1;
                }
            }
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
