//! Weighted federated averaging with local training between rounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_loss, lr_at_epoch, prepare_all, run_epoch, Optimizer, TrainConfig};
use crate::data::MultiAngleSample;
use crate::error::{Error, Result};
use crate::model::GestureModel;
use crate::neuro::ModelParameters;
use crate::preprocess::AugmentConfig;

/// Element-wise average of `params` with `weights` normalised to sum 1.
pub fn federated_average(params: &[ModelParameters], weights: &[f64]) -> Result<ModelParameters> {
    if params.is_empty() {
        return Err(Error::Invalid("federated round without participants".into()));
    }
    if params.len() != weights.len() {
        return Err(Error::Invalid(format!(
            "{} parameter sets but {} weights",
            params.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Invalid("participant weights must be finite and >= 0".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Invalid("participant weights sum to zero".into()));
    }
    for p in &params[1..] {
        params[0].check_layout(p)?;
    }
    let mut out = params[0].zeros_like();
    for (p, w) in params.iter().zip(weights) {
        out.add_scaled(p, w / total);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedRoundState {
    pub participants: Vec<ModelParameters>,
    /// Sample count (or any non-negative weight) per participant.
    pub weights: Vec<f64>,
    pub round: usize,
}

impl FederatedRoundState {
    /// Averages the participants, broadcasts the result back to all of them
    /// and advances the round counter.
    pub fn round(&mut self) -> Result<ModelParameters> {
        let global = federated_average(&self.participants, &self.weights)?;
        for p in &mut self.participants {
            *p = global.clone();
        }
        self.round += 1;
        Ok(global)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederatedConfig {
    pub participants: usize,
    pub rounds: usize,
    /// Local epochs each participant trains between averaging steps.
    pub local_epochs: usize,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        Self {
            participants: 2,
            rounds: 10,
            local_epochs: 1,
        }
    }
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.participants == 0 || self.rounds == 0 || self.local_epochs == 0 {
            return Err(Error::Config(
                "participants, rounds and local_epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean local training loss per participant.
    pub local_losses: Vec<f64>,
    /// Loss of the averaged model on the evaluation set.
    pub global_loss: f64,
    pub global_balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedOutcome {
    pub rounds: Vec<RoundRecord>,
}

/// Runs `cfg.rounds` rounds of local training followed by weighted
/// averaging (weights = local sample counts). `model` ends up holding the
/// final global parameters.
pub fn run_federated(
    model: &mut GestureModel,
    participant_sets: &[Vec<MultiAngleSample>],
    eval_set: &[MultiAngleSample],
    cfg: &FederatedConfig,
    train_cfg: &TrainConfig,
    augment_cfg: &AugmentConfig,
    mut on_round: impl FnMut(&RoundRecord),
) -> Result<FederatedOutcome> {
    cfg.validate()?;
    train_cfg.validate()?;
    if participant_sets.is_empty() || participant_sets.iter().any(Vec::is_empty) {
        return Err(Error::Data("every participant needs training samples".into()));
    }
    let eval = prepare_all(model, eval_set)?;
    let fixed: Vec<Option<Vec<_>>> = participant_sets
        .iter()
        .map(|s| {
            (!train_cfg.augment)
                .then(|| prepare_all(model, s))
                .transpose()
        })
        .collect::<Result<_>>()?;
    let mut state = FederatedRoundState {
        participants: vec![model.params.clone(); participant_sets.len()],
        weights: participant_sets.iter().map(|s| s.len() as f64).collect(),
        round: 0,
    };
    let mut optimizers: Vec<Optimizer> = state
        .participants
        .iter()
        .map(|p| Optimizer::new(train_cfg, p))
        .collect();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let frozen: &GestureModel = model;
        let local_losses = state
            .participants
            .par_iter_mut()
            .zip(optimizers.par_iter_mut())
            .enumerate()
            .map(|(i, (params, opt))| {
                let mut loss = 0.0;
                for e in 0..cfg.local_epochs {
                    let epoch = round * cfg.local_epochs + e;
                    loss = run_epoch(
                        frozen,
                        params,
                        opt,
                        &participant_sets[i],
                        fixed[i].as_deref(),
                        train_cfg,
                        augment_cfg,
                        lr_at_epoch(epoch, train_cfg),
                        &[train_cfg.seed, 0xfed, i as u64, epoch as u64],
                    )?;
                }
                Ok(loss)
            })
            .collect::<Result<Vec<_>>>()?;
        let global = state.round()?;
        let (global_loss, global_bacc) = evaluate_loss(model, &global, &eval)?;
        model.params = global;
        let record = RoundRecord {
            round,
            local_losses,
            global_loss,
            global_balanced_accuracy: global_bacc,
        };
        on_round(&record);
        rounds.push(record);
    }
    Ok(FederatedOutcome { rounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuro::Tensor;

    fn single(v: f64) -> ModelParameters {
        let mut p = ModelParameters::default();
        p.add("w", Tensor::row_vector(vec![v, -v]));
        p
    }

    #[test]
    fn weighted_average_examples() {
        let avg = federated_average(&[single(1.0), single(3.0)], &[1.0, 1.0]).unwrap();
        assert_eq!(avg.flatten(), vec![2.0, -2.0]);
        let avg = federated_average(&[single(1.0), single(3.0)], &[1.0, 3.0]).unwrap();
        assert_eq!(avg.flatten(), vec![2.5, -2.5]);
        let one = federated_average(&[single(0.7)], &[5.0]).unwrap();
        assert_eq!(one, single(0.7));
    }

    #[test]
    fn average_errors() {
        assert!(federated_average(&[single(1.0)], &[0.0]).is_err());
        assert!(federated_average(&[single(1.0), single(2.0)], &[1.0]).is_err());
        let mut other = ModelParameters::default();
        other.add("w", Tensor::row_vector(vec![1.0]));
        assert!(federated_average(&[single(1.0), other], &[1.0, 1.0]).is_err());
        assert!(federated_average(&[], &[]).is_err());
        assert!(federated_average(&[single(1.0)], &[-1.0]).is_err());
    }

    #[test]
    fn round_broadcasts() {
        let mut state = FederatedRoundState {
            participants: vec![single(1.0), single(3.0)],
            weights: vec![1.0, 1.0],
            round: 0,
        };
        let g = state.round().unwrap();
        assert_eq!(state.round, 1);
        assert!(state.participants.iter().all(|p| *p == g));
    }
}
