//! One data center's share of a round: `T` epochs of minibatch SGD over its
//! private shard, starting from the downloaded shared model.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, Shard};
use crate::error::{invalid, Result};
use crate::model::{argmax, cross_entropy, Batch, ModelSpec};
use crate::params::{sgd_step, ParameterVector};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Base seed for this participant-round. Each epoch's shuffle is keyed by
    /// `(seed, participant_id, epoch)`.
    pub seed: u64,
    /// Keep a copy of the parameters at the end of every epoch.
    pub keep_epoch_params: bool,
    /// Simulated wall time of one epoch, copied into the report.
    pub epoch_seconds: f64,
}

impl LocalTrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            seed,
            keep_epoch_params: false,
            epoch_seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalRunReport {
    pub participant_id: usize,
    pub start_params_hash: u64,
    pub end_params: ParameterVector,
    pub epochs_run: usize,
    pub minibatch_steps: usize,
    /// Sample-weighted mean minibatch loss seen during each epoch.
    pub train_loss_per_epoch: Vec<f64>,
    pub rate_per_epoch: Vec<f64>,
    pub wall_epoch_cost: f64,
    /// Parameters after each epoch; empty unless requested.
    pub epoch_params: Vec<ParameterVector>,
}

/// Trains on `shard` for `config.epochs` epochs. `rate_fn(j)` gives the
/// learning rate for epoch `j` (0-based); it is held fixed for the epoch.
pub fn local_train<F>(
    shard: &Shard,
    spec: &ModelSpec,
    start: &ParameterVector,
    config: &LocalTrainConfig,
    rate_fn: F,
) -> Result<LocalRunReport>
where
    F: Fn(usize) -> Result<f64>,
{
    if shard.is_empty() {
        return Err(invalid(format!(
            "participant {} has an empty shard",
            shard.participant_id
        )));
    }
    if config.batch_size == 0 {
        return Err(invalid("batch_size must be >= 1"));
    }
    if config.epochs == 0 {
        return Err(invalid("local training needs at least one epoch"));
    }

    let data = &shard.data;
    let mut params = start.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut rates = Vec::with_capacity(config.epochs);
    let mut snapshots = Vec::new();
    let mut steps = 0;

    for epoch in 0..config.epochs {
        let lr = rate_fn(epoch)?;
        let epoch_seed = seed::derive(config.seed, &[shard.participant_id as u64, epoch as u64]);
        order.shuffle(&mut seed::rng(epoch_seed));

        let mut weighted_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let features = data.features().gather(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let batch = Batch::new(&features, &labels)?;
            let (loss, grad) = spec.loss_and_gradient(&params, &batch)?;
            params = sgd_step(&params, &grad, lr)?;
            weighted_loss += loss * chunk.len() as f64;
            steps += 1;
        }
        losses.push(weighted_loss / data.len() as f64);
        rates.push(lr);
        if config.keep_epoch_params {
            snapshots.push(params.clone());
        }
    }

    Ok(LocalRunReport {
        participant_id: shard.participant_id,
        start_params_hash: start.fingerprint(),
        end_params: params,
        epochs_run: config.epochs,
        minibatch_steps: steps,
        train_loss_per_epoch: losses,
        rate_per_epoch: rates,
        wall_epoch_cost: config.epoch_seconds,
        epoch_params: snapshots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Accuracy (argmax of the class probabilities, ties to the lowest class)
/// and mean cross-entropy.
pub fn evaluate(spec: &ModelSpec, params: &ParameterVector, data: &Dataset) -> Result<Evaluation> {
    let logits = spec.logits(params, data.features())?;
    let probs = spec.forward(params, data.features())?;
    let mut correct = 0usize;
    let mut loss = 0.0;
    for ((z, p), &y) in logits.row_iter().zip(probs.row_iter()).zip(data.labels()) {
        if argmax(p) == y {
            correct += 1;
        }
        loss += cross_entropy(z, y);
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_loss: loss / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_gaussian_blobs;
    use crate::model::{Activation, Matrix};
    use crate::schedule::ClrSchedule;

    fn blobs_shard() -> Shard {
        Shard::whole(0, gen_gaussian_blobs(3, 60, 3, 3, 4.0).unwrap())
    }

    #[test]
    fn single_full_batch_epoch_is_one_step() {
        let shard = blobs_shard();
        let spec = ModelSpec::logistic(3, 3).unwrap();
        let start = spec.init_params(1);
        let cfg = LocalTrainConfig::new(1, shard.len(), 9);
        let report = local_train(&shard, &spec, &start, &cfg, |_| Ok(0.05)).unwrap();
        let grad = spec.gradient(&start, &shard.data.batch()).unwrap();
        let expected = sgd_step(&start, &grad, 0.05).unwrap();
        for (a, b) in report.end_params.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(report.minibatch_steps, 1);
        assert_eq!(report.start_params_hash, start.fingerprint());
    }

    #[test]
    fn deterministic_given_seed() {
        let shard = blobs_shard();
        let spec = ModelSpec::mlp(3, &[5], 3, Activation::Tanh).unwrap();
        let start = spec.init_params(2);
        let cfg = LocalTrainConfig::new(3, 7, 42);
        let a = local_train(&shard, &spec, &start, &cfg, |_| Ok(0.1)).unwrap();
        let b = local_train(&shard, &spec, &start, &cfg, |_| Ok(0.1)).unwrap();
        assert_eq!(a, b);
        let other = LocalTrainConfig::new(3, 7, 43);
        let c = local_train(&shard, &spec, &start, &other, |_| Ok(0.1)).unwrap();
        assert_ne!(a.end_params, c.end_params);
    }

    #[test]
    fn short_last_batch_is_kept() {
        let shard = blobs_shard();
        let spec = ModelSpec::logistic(3, 3).unwrap();
        let cfg = LocalTrainConfig::new(2, 25, 0);
        let report = local_train(&shard, &spec, &spec.init_params(0), &cfg, |_| Ok(0.01)).unwrap();
        assert_eq!(report.minibatch_steps, 2 * 3);
        assert_eq!(report.train_loss_per_epoch.len(), 2);
    }

    #[test]
    fn full_batch_ignores_shuffle_seed() {
        let shard = blobs_shard();
        let spec = ModelSpec::logistic(3, 3).unwrap();
        let start = spec.init_params(4);
        let a = local_train(
            &shard,
            &spec,
            &start,
            &LocalTrainConfig::new(4, 1000, 1),
            |_| Ok(0.1),
        )
        .unwrap();
        let b = local_train(
            &shard,
            &spec,
            &start,
            &LocalTrainConfig::new(4, 1000, 2),
            |_| Ok(0.1),
        )
        .unwrap();
        for (x, y) in a.end_params.as_slice().iter().zip(b.end_params.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn clr_training_reduces_loss_on_separable_blobs() {
        let shard = Shard::whole(0, gen_gaussian_blobs(8, 400, 4, 3, 6.0).unwrap());
        let spec = ModelSpec::logistic(4, 3).unwrap();
        let clr = ClrSchedule::default();
        let cfg = LocalTrainConfig::new(20, 32, 5);
        let report = local_train(&shard, &spec, &spec.init_params(5), &cfg, |j| {
            clr.rate(j, 20)
        })
        .unwrap();
        let losses = &report.train_loss_per_epoch;
        assert!(losses.last().unwrap() < losses.first().unwrap());
        assert!(losses.iter().all(|l| l.is_finite()));
        assert_eq!(report.rate_per_epoch[0], 0.01);
    }

    #[test]
    fn keeps_epoch_snapshots_on_request() {
        let shard = blobs_shard();
        let spec = ModelSpec::logistic(3, 3).unwrap();
        let mut cfg = LocalTrainConfig::new(3, 16, 0);
        cfg.keep_epoch_params = true;
        let report = local_train(&shard, &spec, &spec.init_params(0), &cfg, |_| Ok(0.01)).unwrap();
        assert_eq!(report.epoch_params.len(), 3);
        assert_eq!(report.epoch_params[2], report.end_params);
    }

    #[test]
    fn argument_errors() {
        let shard = blobs_shard();
        let spec = ModelSpec::logistic(3, 3).unwrap();
        let p = spec.init_params(0);
        assert!(
            local_train(&shard, &spec, &p, &LocalTrainConfig::new(0, 4, 0), |_| Ok(
                0.1
            ))
            .is_err()
        );
        assert!(
            local_train(&shard, &spec, &p, &LocalTrainConfig::new(1, 0, 0), |_| Ok(
                0.1
            ))
            .is_err()
        );
        let wrong = ModelSpec::logistic(2, 3).unwrap();
        assert!(local_train(
            &shard,
            &wrong,
            &wrong.init_params(0),
            &LocalTrainConfig::new(1, 4, 0),
            |_| Ok(0.1)
        )
        .is_err());
    }

    #[test]
    fn evaluate_zero_model_on_balanced_binary() {
        let data = gen_gaussian_blobs(0, 10, 2, 2, 3.0).unwrap();
        let spec = ModelSpec::logistic(2, 2).unwrap();
        let e = evaluate(&spec, &ParameterVector::zeros(6), &data).unwrap();
        assert_eq!(e.accuracy, 0.5);
        assert!((e.mean_loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_hand_enumerated() {
        // scores: class 0 gets x, class 1 gets y
        let spec = ModelSpec::logistic(2, 2).unwrap();
        let params = ParameterVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let feats = Matrix::from_rows(&[
            vec![2.0, 1.0],  // predicts 0, label 0: correct
            vec![0.0, 3.0],  // predicts 1, label 1: correct
            vec![1.0, 1.0],  // tie -> 0, label 1: wrong
            vec![-1.0, 0.5], // predicts 1, label 0: wrong
        ])
        .unwrap();
        let data = Dataset::new(feats, vec![0, 1, 1, 0], 2).unwrap();
        let e = evaluate(&spec, &params, &data).unwrap();
        assert_eq!(e.accuracy, 0.5);
    }

    #[test]
    fn perfect_model_scores_one() {
        let spec = ModelSpec::logistic(1, 2).unwrap();
        let params = ParameterVector::new(vec![10.0, -10.0, 0.0, 0.0]).unwrap();
        let feats = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![2.0]]).unwrap();
        let data = Dataset::new(feats, vec![0, 1, 0], 2).unwrap();
        assert_eq!(evaluate(&spec, &params, &data).unwrap().accuracy, 1.0);
    }
}
