//! Comparison modes: centralized training on the pooled data, and an
//! ensemble of independently trained participants whose softmax outputs
//! are averaged at prediction time.

use crate::coordinator::initial_params;
use crate::datasets::{Dataset, Shard};
use crate::error::{ensure_len, invalid, Result};
use crate::exec::Execution;
use crate::model::{argmax, Matrix, ModelSpec};
use crate::params::ParameterVector;
use crate::participant::{evaluate, local_train, Evaluation, LocalTrainConfig};
use crate::schedule::ElrSchedule;
use crate::seed::{self, stream};

/// Output of a single-model training run.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaRun {
    pub params: ParameterVector,
    pub initial_eval: Option<Evaluation>,
    /// Test metrics after each epoch; empty without a test set.
    pub epoch_evals: Vec<Evaluation>,
    pub train_loss_per_epoch: Vec<f64>,
}

impl VanillaRun {
    pub fn final_eval(&self) -> Option<Evaluation> {
        self.epoch_evals.last().copied().or(self.initial_eval)
    }
}

fn training_seed(seed: u64) -> u64 {
    seed::derive(seed, &[stream::TRAIN])
}

/// Minibatch SGD on the whole dataset with the exponential schedule.
pub fn run_vanilla(
    data: &Dataset,
    spec: &ModelSpec,
    schedule: &ElrSchedule,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    test: Option<&Dataset>,
) -> Result<VanillaRun> {
    let start = initial_params(spec, seed);
    let initial_eval = test.map(|t| evaluate(spec, &start, t)).transpose()?;
    if epochs == 0 {
        return Ok(VanillaRun {
            params: start,
            initial_eval,
            epoch_evals: Vec::new(),
            train_loss_per_epoch: Vec::new(),
        });
    }
    let shard = Shard::whole(0, data.clone());
    let mut cfg = LocalTrainConfig::new(epochs, batch_size, training_seed(seed));
    cfg.keep_epoch_params = test.is_some();
    let report = local_train(&shard, spec, &start, &cfg, |e| Ok(schedule.rate(e)))?;
    let epoch_evals = match test {
        Some(t) => report
            .epoch_params
            .iter()
            .map(|p| evaluate(spec, p, t))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    Ok(VanillaRun {
        params: report.end_params,
        initial_eval,
        epoch_evals,
        train_loss_per_epoch: report.train_loss_per_epoch,
    })
}

/// Independently trained members combined by averaging their class
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    spec: ModelSpec,
    members: Vec<ParameterVector>,
}

impl EnsembleModel {
    pub fn new(spec: ModelSpec, members: Vec<ParameterVector>) -> Result<Self> {
        if members.is_empty() {
            return Err(invalid("an ensemble needs at least one member"));
        }
        for m in &members {
            ensure_len("ensemble member", spec.param_count(), m.len())?;
        }
        Ok(Self { spec, members })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn members(&self) -> &[ParameterVector] {
        &self.members
    }

    pub fn predict_proba(&self, features: &Matrix) -> Result<Matrix> {
        ensemble_predict(self, features)
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(features)?
            .row_iter()
            .map(argmax)
            .collect())
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<Evaluation> {
        let probs = self.predict_proba(data.features())?;
        let mut correct = 0usize;
        let mut loss = 0.0;
        for (p, &y) in probs.row_iter().zip(data.labels()) {
            if argmax(p) == y {
                correct += 1;
            }
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
        }
        let n = data.len() as f64;
        Ok(Evaluation {
            accuracy: correct as f64 / n,
            mean_loss: loss / n,
        })
    }
}

/// Mean of the members' softmax outputs, summed in member order.
pub fn ensemble_predict(e: &EnsembleModel, features: &Matrix) -> Result<Matrix> {
    let mut sum: Option<Vec<f64>> = None;
    for m in &e.members {
        let p = e.spec.forward(m, features)?;
        match &mut sum {
            None => sum = Some(p.as_slice().to_vec()),
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(p.as_slice()) {
                    *a += v;
                }
            }
        }
    }
    let k = e.members.len() as f64;
    let data = sum
        .expect("ensemble has at least one member")
        .into_iter()
        .map(|v| v / k)
        .collect();
    Matrix::new(features.rows(), e.spec.class_count(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub model: EnsembleModel,
    pub initial_eval: Option<Evaluation>,
    /// Ensemble test metrics after each epoch; empty without a test set.
    pub epoch_evals: Vec<Evaluation>,
}

impl EnsembleRun {
    pub fn final_eval(&self) -> Option<Evaluation> {
        self.epoch_evals.last().copied().or(self.initial_eval)
    }
}

/// Trains one member per shard from the shared initialization, never
/// exchanging parameters.
pub fn ensemble_train(
    shards: &[Shard],
    spec: &ModelSpec,
    schedule: &ElrSchedule,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    execution: Execution,
) -> Result<EnsembleModel> {
    Ok(ensemble_train_tracked(
        shards, spec, schedule, epochs, batch_size, seed, execution, None,
    )?
    .model)
}

/// [`ensemble_train`] plus per-epoch evaluation of the ensemble on `test`.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_train_tracked(
    shards: &[Shard],
    spec: &ModelSpec,
    schedule: &ElrSchedule,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    execution: Execution,
    test: Option<&Dataset>,
) -> Result<EnsembleRun> {
    if shards.is_empty() {
        return Err(invalid("an ensemble needs at least one shard"));
    }
    let start = initial_params(spec, seed);
    let initial_eval = match test {
        Some(t) => {
            Some(EnsembleModel::new(spec.clone(), vec![start.clone(); shards.len()])?.evaluate(t)?)
        }
        None => None,
    };
    if epochs == 0 {
        return Ok(EnsembleRun {
            model: EnsembleModel::new(spec.clone(), vec![start; shards.len()])?,
            initial_eval,
            epoch_evals: Vec::new(),
        });
    }
    let mut cfg = LocalTrainConfig::new(epochs, batch_size, training_seed(seed));
    cfg.keep_epoch_params = test.is_some();
    let reports = execution.try_map(shards.len(), |k| {
        local_train(&shards[k], spec, &start, &cfg, |e| Ok(schedule.rate(e)))
    })?;

    let mut epoch_evals = Vec::new();
    if let Some(t) = test {
        for j in 0..epochs {
            let members = reports.iter().map(|r| r.epoch_params[j].clone()).collect();
            epoch_evals.push(EnsembleModel::new(spec.clone(), members)?.evaluate(t)?);
        }
    }
    let members = reports.into_iter().map(|r| r.end_params).collect();
    Ok(EnsembleRun {
        model: EnsembleModel::new(spec.clone(), members)?,
        initial_eval,
        epoch_evals,
    })
}
