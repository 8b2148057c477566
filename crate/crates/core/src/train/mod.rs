//! Loss, optimizers, learning-rate schedule and the training loop.

mod eval;
mod federated;
mod metrics;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MultiAngleSample;
use crate::error::{Error, Result};
use crate::model::{GestureModel, PreparedSample};
use crate::neuro::{log_softmax, ModelParameters, Tape, Tensor};
use crate::preprocess::{augment, AugmentConfig};
use crate::rng::stream;

pub use eval::{
    angle_importance, derangement, eval_angle_subset, evaluate, run_angle_dropout,
    run_angle_permutation, write_protocol_csv, EvalReport, ImportanceTable, ProtocolSummary,
    RepresentationCache, TrialResult,
};
pub use federated::{
    federated_average, run_federated, FederatedConfig, FederatedOutcome, FederatedRoundState,
    RoundRecord,
};
pub use metrics::{auc_macro, balanced_accuracy, confusion_matrix, per_class_recall};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Apply augmentation to training batches.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 0.001,
            lr_decay: 0.5,
            lr_decay_every: 80,
            patience: 100,
            batch_size: 32,
            max_epochs: 200,
            seed: 1,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr_init, self.lr_decay, self.epsilon];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(
                "lr_init, lr_decay and epsilon must be positive".into(),
            ));
        }
        if self.lr_decay_every == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "lr_decay_every, patience and batch_size must be at least 1".into(),
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Step-decayed learning rate: `lr_init * lr_decay^floor(epoch / lr_decay_every)`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    let steps = (epoch / cfg.lr_decay_every) as i32;
    cfg.lr_init * cfg.lr_decay.powi(steps)
}

/// Negative log-likelihood of `label` under `softmax(scores)`.
pub fn nll_loss(scores: &[f64], label: usize) -> Result<f64> {
    if label >= scores.len() {
        return Err(Error::Invalid(format!(
            "label {label} out of range for {} classes",
            scores.len()
        )));
    }
    let lp = log_softmax(&Tensor::row_vector(scores.to_vec()));
    Ok(-lp.data()[label])
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: ModelParameters,
    v: ModelParameters,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParameters, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &ModelParameters, lr: f64) -> Result<()> {
        params.check_layout(grads)?;
        params.check_layout(&self.m)?;
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for (((p, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("Adam update".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(Adam),
    Sgd,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, params: &ModelParameters) -> Self {
        match cfg.optimizer {
            OptimizerKind::Adam => {
                Optimizer::Adam(Adam::new(params, cfg.beta1, cfg.beta2, cfg.epsilon))
            }
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &ModelParameters, lr: f64) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads, lr),
            Optimizer::Sgd => {
                params.check_layout(grads)?;
                params.add_scaled(grads, -lr);
                if !params.all_finite() {
                    return Err(Error::NonFinite("SGD update".into()));
                }
                Ok(())
            }
        }
    }
}

/// Early stopping on a monitored loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records `loss` for `epoch`; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        let improved = match self.best {
            None => true,
            Some((_, b)) => loss < b,
        };
        if improved {
            self.best = Some((epoch, loss));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        (improved, self.since_best >= self.patience)
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Mean loss and summed gradients of `model` at `params` over `samples`.
///
/// Per-sample gradients are computed in parallel and reduced in sample
/// order, so the result does not depend on the thread count.
pub fn batch_gradients(
    model: &GestureModel,
    params: &ModelParameters,
    samples: &[&PreparedSample],
) -> Result<(f64, ModelParameters)> {
    if samples.is_empty() {
        return Err(Error::Invalid("gradient of an empty batch".into()));
    }
    let parts = samples
        .par_iter()
        .map(|s| sample_gradient(model, params, s))
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len() as f64;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_scaled(g, 1.0);
    }
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

fn sample_gradient(
    model: &GestureModel,
    params: &ModelParameters,
    sample: &PreparedSample,
) -> Result<(f64, ModelParameters)> {
    let mut tape = Tape::new();
    let lp = model.log_probs_on(&mut tape, params, &sample.routing())?;
    check_label(sample.label, model.classes)?;
    let picked = tape.column(lp, sample.label)?;
    let loss = tape.scale(picked, -1.0);
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], tape.param_grads(&grads, params)))
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::Data(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Mean loss and balanced accuracy over prepared samples, without gradients.
pub fn evaluate_loss(model: &GestureModel, params: &ModelParameters, samples: &[PreparedSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let outs = samples
        .par_iter()
        .map(|s| {
            check_label(s.label, model.classes)?;
            let mut tape = Tape::new();
            let lp = model.log_probs_on(&mut tape, params, &s.routing())?;
            let row = tape.value(lp).data();
            let pred = argmax(row);
            Ok((-row[s.label], pred))
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = outs.iter().map(|(l, _)| l).sum::<f64>() / samples.len() as f64;
    let preds: Vec<usize> = outs.iter().map(|(_, p)| *p).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok((loss, balanced_accuracy(&preds, &labels)?))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn prepare_all(model: &GestureModel, samples: &[MultiAngleSample]) -> Result<Vec<PreparedSample>> {
    samples
        .par_iter()
        .map(|s| PreparedSample::from_sample(s, &model.config.graph))
        .collect()
}

/// One pass over `samples` in shuffled mini-batches; returns the mean
/// training loss. `fixed` holds pre-built graphs when augmentation is off.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_epoch(
    model: &GestureModel,
    params: &mut ModelParameters,
    optimizer: &mut Optimizer,
    samples: &[MultiAngleSample],
    fixed: Option<&[PreparedSample]>,
    cfg: &TrainConfig,
    augment_cfg: &AugmentConfig,
    lr: f64,
    key: &[u64],
) -> Result<f64> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut stream(&[key, &[0x0e]].concat()));
    let mut loss_sum = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let prepared: Vec<PreparedSample> = match fixed {
            Some(all) => batch.iter().map(|&i| all[i].clone()).collect(),
            None => batch
                .par_iter()
                .map(|&i| {
                    let mut r = stream(&[key, &[0xa0, i as u64]].concat());
                    let s = augment(&samples[i], &mut r, augment_cfg);
                    PreparedSample::from_sample(&s, &model.config.graph)
                })
                .collect::<Result<_>>()?,
        };
        let refs: Vec<&PreparedSample> = prepared.iter().collect();
        let (loss, grads) = batch_gradients(model, params, &refs)?;
        loss_sum += loss * batch.len() as f64;
        optimizer.step(params, &grads, lr)?;
    }
    Ok(loss_sum / samples.len() as f64)
}

/// Trains `model` in place on preprocessed samples and leaves it holding
/// the parameters of the best validation epoch.
pub fn train(
    model: &mut GestureModel,
    train_set: &[MultiAngleSample],
    val_set: &[MultiAngleSample],
    cfg: &TrainConfig,
    augment_cfg: &AugmentConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let val = prepare_all(model, val_set)?;
    let fixed_train = if cfg.augment {
        None
    } else {
        Some(prepare_all(model, train_set)?)
    };
    let mut params = model.params.clone();
    let mut optimizer = Optimizer::new(cfg, &params);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = params.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at_epoch(epoch, cfg);
        let train_loss = run_epoch(
            model,
            &mut params,
            &mut optimizer,
            train_set,
            fixed_train.as_deref(),
            cfg,
            augment_cfg,
            lr,
            &[cfg.seed, epoch as u64],
        )?;
        let (val_loss, val_bacc) = evaluate_loss(model, &params, &val)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_balanced_accuracy: val_bacc,
        };
        on_epoch(&record);
        epochs.push(record);
        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best_params = params.clone();
        }
        if stop {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_val_loss) = stopper.best().expect("at least one epoch ran");
    model.params = best_params;
    Ok(TrainHistory {
        epochs,
        best_epoch,
        best_val_loss,
        stopped_early,
    })
}

#[cfg(test)]
mod tests;
