//! The global server: broadcasts the shared model, collects one upload per
//! participant, averages them, and decides the next round's length.
//!
//! A round is a barrier. Every participant starts from the same shared
//! vector, trains with a seed derived from `(global seed, round,
//! participant, epoch)`, and the uploads are averaged in participant order.
//! A participant that fails is rerun from scratch with the same inputs, so
//! its eventual upload is bit-identical to the one a fault-free run gets.

use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, Shard};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::model::ModelSpec;
use crate::params::{average, rel_change_with, Norm, ParameterVector};
use crate::participant::{evaluate, local_train, Evaluation, LocalRunReport, LocalTrainConfig};
use crate::schedule::{EpochPolicy, RateSchedule};
use crate::seed::{self, stream};
use crate::wansim::{round_comm, CommRecord, WanModel};

pub const DEFAULT_MAX_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    /// Training finished but the upload never arrived.
    UploadLoss,
    /// The participant died halfway through its epochs.
    CrashMidTraining,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub round: usize,
    pub participant: usize,
    pub kind: FailureKind,
}

/// Scripted failures. Each entry costs the named participant one attempt in
/// that round; entries for the same slot apply in list order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub faults: Vec<Fault>,
}

impl FaultPlan {
    pub fn new(faults: Vec<Fault>) -> Self {
        Self { faults }
    }

    pub fn validate(&self, participants: usize) -> Result<()> {
        match self.faults.iter().find(|f| f.participant >= participants) {
            Some(f) => Err(invalid(format!(
                "fault targets participant {} but only {participants} exist",
                f.participant
            ))),
            None => Ok(()),
        }
    }

    pub fn failures_for(&self, round: usize, participant: usize) -> Vec<FailureKind> {
        self.faults
            .iter()
            .filter(|f| f.round == round && f.participant == participant)
            .map(|f| f.kind)
            .collect()
    }
}

/// Everything a co-learning run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ColearnConfig {
    pub model: ModelSpec,
    pub rate: RateSchedule,
    pub epochs: EpochPolicy,
    pub batch_size: usize,
    /// Upper bound on rounds.
    pub max_rounds: usize,
    /// Upper bound on local epochs per participant. The last round is
    /// shortened to fit.
    pub epoch_budget: usize,
    pub seed: u64,
    pub wan: WanModel,
    pub faults: FaultPlan,
    pub max_retries: usize,
    pub execution: Execution,
    pub norm: Norm,
    /// Evaluate the average of the local models after every local epoch,
    /// not only at synchronization points.
    pub track_epochs: bool,
    /// Per-round override of the shared rate; rounds past the end of the
    /// list use the schedule's constant.
    pub shared_rates: Vec<f64>,
}

impl ColearnConfig {
    pub fn new(model: ModelSpec, rate: RateSchedule, epochs: EpochPolicy, seed: u64) -> Self {
        Self {
            model,
            rate,
            epochs,
            batch_size: 32,
            max_rounds: usize::MAX,
            epoch_budget: 100,
            seed,
            wan: WanModel::default(),
            faults: FaultPlan::default(),
            max_retries: DEFAULT_MAX_RETRIES,
            execution: Execution::default(),
            norm: Norm::L2,
            track_epochs: false,
            shared_rates: Vec::new(),
        }
    }

    fn shared_rate(&self, round: usize) -> f64 {
        self.shared_rates
            .get(round)
            .copied()
            .unwrap_or_else(|| self.rate.shared_rate())
    }

    /// Shared initial parameters for a run with this seed.
    pub fn initial_params(&self) -> ParameterVector {
        initial_params(&self.model, self.seed)
    }
}

/// Model initialization keyed by the run seed; every training mode starts
/// from this vector so runs with equal seeds are comparable.
pub fn initial_params(model: &ModelSpec, seed: u64) -> ParameterVector {
    model.init_params(seed::derive(seed, &[stream::INIT]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub round_index: usize,
    pub shared: ParameterVector,
    /// Shared model before the last averaging; absent only in round 0.
    pub prev_shared: Option<ParameterVector>,
    /// Planned local epochs for this round.
    pub epochs: usize,
    pub shared_rate: f64,
}

impl RoundState {
    pub fn initial(shared: ParameterVector, epochs: usize, shared_rate: f64) -> Self {
        Self {
            round_index: 0,
            shared,
            prev_shared: None,
            epochs,
            shared_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSummary {
    pub participant_id: usize,
    pub start_params_hash: u64,
    pub end_params_hash: u64,
    pub epochs_run: usize,
    pub minibatch_steps: usize,
    pub final_train_loss: f64,
    pub failures: Vec<FailureKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: usize,
    /// Epochs the policy asked for.
    pub planned_epochs: usize,
    /// Epochs actually run (smaller only when the budget ran out).
    pub epochs: usize,
    /// Local epochs per participant up to and including this round.
    pub epochs_cum: usize,
    pub rel_change: f64,
    pub next_epochs: usize,
    pub shared_in_hash: u64,
    pub shared_out_hash: u64,
    pub participants: Vec<ParticipantSummary>,
    pub comm: CommRecord,
    pub eval: Option<Evaluation>,
    /// Accuracy of the average of the local models after each local epoch.
    pub epoch_evals: Vec<Evaluation>,
}

impl RoundRecord {
    pub fn budget_clipped(&self) -> bool {
        self.epochs < self.planned_epochs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub participants: usize,
    pub initial_eval: Option<Evaluation>,
    pub rounds: Vec<RoundRecord>,
    pub final_shared: ParameterVector,
}

impl RunHistory {
    /// Local epochs summed over participants and rounds.
    pub fn total_epochs(&self) -> usize {
        self.rounds
            .iter()
            .map(|r| self.participants * r.epochs)
            .sum()
    }

    pub fn epochs_per_participant(&self) -> usize {
        self.rounds.last().map_or(0, |r| r.epochs_cum)
    }

    pub fn total_bytes(&self) -> u64 {
        self.rounds
            .iter()
            .map(|r| r.comm.upload_bytes + r.comm.download_bytes)
            .sum()
    }

    pub fn final_eval(&self) -> Option<Evaluation> {
        self.rounds.last().map_or(self.initial_eval, |r| r.eval)
    }

    /// `(local epochs so far, test accuracy)` starting from the initial
    /// model. Uses per-epoch averages when they were tracked, otherwise one
    /// point per round.
    pub fn accuracy_curve(&self) -> Vec<(usize, f64)> {
        let mut curve = Vec::new();
        if let Some(e) = self.initial_eval {
            curve.push((0, e.accuracy));
        }
        for r in &self.rounds {
            let start = r.epochs_cum - r.epochs;
            if r.epoch_evals.is_empty() {
                if let Some(e) = r.eval {
                    curve.push((r.epochs_cum, e.accuracy));
                }
            } else {
                curve.extend(
                    r.epoch_evals
                        .iter()
                        .enumerate()
                        .map(|(j, e)| (start + j + 1, e.accuracy)),
                );
            }
        }
        curve
    }
}

/// Read-only inputs shared by every round of a run.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub config: &'a ColearnConfig,
    pub shards: &'a [Shard],
    pub test: Option<&'a Dataset>,
    /// Local epochs each participant has already run.
    pub epochs_done: usize,
}

struct Upload {
    report: LocalRunReport,
    failures: Vec<FailureKind>,
}

fn train_participant(
    state: &RoundState,
    ctx: &RoundContext<'_>,
    k: usize,
    epochs: usize,
) -> Result<Upload> {
    let config = ctx.config;
    let shard = &ctx.shards[k];
    let round_seed = seed::derive(config.seed, &[stream::TRAIN, state.round_index as u64]);
    let rate_fn = |j: usize| {
        config
            .rate
            .rate(state.shared_rate, j, epochs, ctx.epochs_done + j)
    };
    let mut local = LocalTrainConfig::new(epochs, config.batch_size, round_seed);
    local.epoch_seconds = config.wan.per_epoch_seconds;

    let failures = config.faults.failures_for(state.round_index, k);
    if failures.len() > config.max_retries {
        return Err(Error::RoundAbort {
            round: state.round_index,
            participant: k,
            failures: failures.len(),
            max_retries: config.max_retries,
        });
    }
    for kind in &failures {
        // the failed attempt's work is thrown away
        let mut attempt = local;
        if *kind == FailureKind::CrashMidTraining {
            attempt.epochs = (epochs / 2).max(1);
        }
        local_train(shard, &config.model, &state.shared, &attempt, rate_fn)?;
    }

    local.keep_epoch_params = config.track_epochs && ctx.test.is_some();
    let report = local_train(shard, &config.model, &state.shared, &local, rate_fn)?;
    Ok(Upload { report, failures })
}

/// Runs one synchronization round and returns the next state with the
/// round's record.
pub fn run_round(state: &RoundState, ctx: &RoundContext<'_>) -> Result<(RoundState, RoundRecord)> {
    let config = ctx.config;
    let participants = ctx.shards.len();
    if participants == 0 {
        return Err(invalid("a round needs at least one shard"));
    }
    if state.epochs == 0 {
        return Err(invalid("round state asks for zero epochs"));
    }
    let remaining = config.epoch_budget.saturating_sub(ctx.epochs_done);
    if remaining == 0 {
        return Err(invalid("epoch budget already exhausted"));
    }
    let epochs = state.epochs.min(remaining);

    let uploads = config
        .execution
        .try_map(participants, |k| train_participant(state, ctx, k, epochs))?;

    let shared_in_hash = state.shared.fingerprint();
    for u in &uploads {
        assert_eq!(
            u.report.start_params_hash, shared_in_hash,
            "participant {} trained from a stale shared model",
            u.report.participant_id
        );
    }

    let models: Vec<ParameterVector> = uploads
        .iter()
        .map(|u| u.report.end_params.clone())
        .collect();
    let shared = average(&models)?;
    let change = rel_change_with(&shared, &state.shared, config.norm)?;
    let next_round = state.round_index + 1;
    let next_epochs = config.epochs.next_epochs(next_round, state.epochs, change);

    let eval = ctx
        .test
        .map(|test| evaluate(&config.model, &shared, test))
        .transpose()?;
    let mut epoch_evals = Vec::new();
    if let (true, Some(test)) = (config.track_epochs, ctx.test) {
        for j in 0..epochs {
            let snapshot: Vec<ParameterVector> = uploads
                .iter()
                .map(|u| u.report.epoch_params[j].clone())
                .collect();
            epoch_evals.push(evaluate(&config.model, &average(&snapshot)?, test)?);
        }
    }

    let record = RoundRecord {
        round_index: state.round_index,
        planned_epochs: state.epochs,
        epochs,
        epochs_cum: ctx.epochs_done + epochs,
        rel_change: change,
        next_epochs,
        shared_in_hash,
        shared_out_hash: shared.fingerprint(),
        participants: uploads
            .iter()
            .map(|u| ParticipantSummary {
                participant_id: u.report.participant_id,
                start_params_hash: u.report.start_params_hash,
                end_params_hash: u.report.end_params.fingerprint(),
                epochs_run: u.report.epochs_run,
                minibatch_steps: u.report.minibatch_steps,
                final_train_loss: u
                    .report
                    .train_loss_per_epoch
                    .last()
                    .copied()
                    .unwrap_or(f64::NAN),
                failures: u.failures.clone(),
            })
            .collect(),
        comm: round_comm(
            &config.model,
            &config.wan,
            participants,
            epochs,
            state.round_index,
        )?,
        eval,
        epoch_evals,
    };

    let next = RoundState {
        round_index: next_round,
        prev_shared: Some(state.shared.clone()),
        shared,
        epochs: next_epochs,
        shared_rate: config.shared_rate(next_round),
    };
    Ok((next, record))
}

/// Drives a co-learning run round by round. The partial history stays
/// readable after a failed step.
#[derive(Debug)]
pub struct Coordinator<'a> {
    config: &'a ColearnConfig,
    shards: &'a [Shard],
    test: Option<&'a Dataset>,
    state: RoundState,
    history: RunHistory,
}

impl<'a> Coordinator<'a> {
    pub fn new(
        config: &'a ColearnConfig,
        shards: &'a [Shard],
        test: Option<&'a Dataset>,
    ) -> Result<Self> {
        if shards.is_empty() {
            return Err(invalid("co-learning needs at least one participant"));
        }
        if let Some(s) = shards
            .iter()
            .enumerate()
            .find(|(k, s)| s.participant_id != *k)
        {
            return Err(invalid(format!(
                "shard at position {} carries participant id {}",
                s.0, s.1.participant_id
            )));
        }
        if config.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if config.epoch_budget == 0 {
            return Err(invalid("epoch_budget must be >= 1"));
        }
        config.faults.validate(shards.len())?;

        let shared = config.initial_params();
        let initial_eval = test
            .map(|t| evaluate(&config.model, &shared, t))
            .transpose()?;
        let state = RoundState::initial(
            shared.clone(),
            config.epochs.initial_epochs(),
            config.shared_rate(0),
        );
        Ok(Self {
            config,
            shards,
            test,
            state,
            history: RunHistory {
                participants: shards.len(),
                initial_eval,
                rounds: Vec::new(),
                final_shared: shared,
            },
        })
    }

    pub fn is_finished(&self) -> bool {
        self.history.rounds.len() >= self.config.max_rounds
            || self.history.epochs_per_participant() >= self.config.epoch_budget
    }

    /// Runs the next round. Returns `Ok(None)` once the round or epoch limit
    /// is reached.
    pub fn step(&mut self) -> Result<Option<&RoundRecord>> {
        if self.is_finished() {
            return Ok(None);
        }
        let ctx = RoundContext {
            config: self.config,
            shards: self.shards,
            test: self.test,
            epochs_done: self.history.epochs_per_participant(),
        };
        let (next, record) = run_round(&self.state, &ctx)?;
        self.history.final_shared = next.shared.clone();
        self.state = next;
        self.history.rounds.push(record);
        Ok(self.history.rounds.last())
    }

    pub fn run(mut self) -> Result<RunHistory> {
        while self.step()?.is_some() {}
        Ok(self.history)
    }

    pub fn state(&self) -> &RoundState {
        &self.state
    }

    pub fn history(&self) -> &RunHistory {
        &self.history
    }

    pub fn into_history(self) -> RunHistory {
        self.history
    }
}

pub fn run_colearning(
    config: &ColearnConfig,
    shards: &[Shard],
    test: Option<&Dataset>,
) -> Result<RunHistory> {
    Coordinator::new(config, shards, test)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_gaussian_blobs, partition_iid};
    use crate::schedule::{ClrSchedule, FlePolicy, IlePolicy};

    fn setup(k: usize) -> (ColearnConfig, Vec<Shard>, Dataset) {
        let data = gen_gaussian_blobs(1, 200, 3, 3, 3.0).unwrap();
        let test = gen_gaussian_blobs(2, 90, 3, 3, 3.0).unwrap();
        let shards = partition_iid(&data, k, 3).unwrap();
        let mut cfg = ColearnConfig::new(
            ModelSpec::logistic(3, 3).unwrap(),
            RateSchedule::Clr(ClrSchedule::default()),
            EpochPolicy::Ile(IlePolicy::with_defaults(2).unwrap()),
            11,
        );
        cfg.batch_size = 8;
        cfg.epoch_budget = 12;
        (cfg, shards, test)
    }

    #[test]
    fn zero_rounds_keeps_initial_eval_only() {
        let (mut cfg, shards, test) = setup(3);
        cfg.max_rounds = 0;
        let h = run_colearning(&cfg, &shards, Some(&test)).unwrap();
        assert!(h.rounds.is_empty());
        assert!(h.initial_eval.is_some());
        assert_eq!(h.final_shared, cfg.initial_params());
    }

    #[test]
    fn budget_bounds_epochs() {
        let (cfg, shards, test) = setup(3);
        let h = run_colearning(&cfg, &shards, Some(&test)).unwrap();
        assert_eq!(h.epochs_per_participant(), 12);
        assert_eq!(h.total_epochs(), 36);
        for (i, r) in h.rounds.iter().enumerate() {
            assert_eq!(r.round_index, i);
            assert_eq!(r.participants.len(), 3);
            assert!(r
                .participants
                .iter()
                .all(|p| p.start_params_hash == r.shared_in_hash));
        }
        for pair in h.rounds.windows(2) {
            assert_eq!(pair[0].shared_out_hash, pair[1].shared_in_hash);
            assert_eq!(pair[0].next_epochs, pair[1].planned_epochs);
        }
    }

    #[test]
    fn rounds_limit_stops_early() {
        let (mut cfg, shards, _) = setup(2);
        cfg.max_rounds = 2;
        let h = run_colearning(&cfg, &shards, None).unwrap();
        assert_eq!(h.rounds.len(), 2);
        assert!(h.rounds.iter().all(|r| r.eval.is_none()));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let (mut cfg, shards, test) = setup(4);
        cfg.execution = Execution::Sequential;
        let a = run_colearning(&cfg, &shards, Some(&test)).unwrap();
        cfg.execution = Execution::Parallel;
        let b = run_colearning(&cfg, &shards, Some(&test)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_failures_abort_the_round() {
        let (mut cfg, shards, test) = setup(3);
        cfg.max_retries = 1;
        cfg.faults = FaultPlan::new(vec![
            Fault {
                round: 1,
                participant: 2,
                kind: FailureKind::UploadLoss,
            },
            Fault {
                round: 1,
                participant: 2,
                kind: FailureKind::CrashMidTraining,
            },
        ]);
        let mut coord = Coordinator::new(&cfg, &shards, Some(&test)).unwrap();
        assert!(coord.step().unwrap().is_some());
        match coord.step() {
            Err(Error::RoundAbort {
                round: 1,
                participant: 2,
                failures: 2,
                ..
            }) => {}
            other => panic!("expected abort, got {other:?}"),
        }
        assert_eq!(coord.history().rounds.len(), 1);
    }

    #[test]
    fn fault_plan_validated_against_participants() {
        let (mut cfg, shards, _) = setup(3);
        cfg.faults = FaultPlan::new(vec![Fault {
            round: 0,
            participant: 3,
            kind: FailureKind::UploadLoss,
        }]);
        assert!(Coordinator::new(&cfg, &shards, None).is_err());
    }

    #[test]
    fn fle_keeps_round_length() {
        let (mut cfg, shards, _) = setup(3);
        cfg.epochs = EpochPolicy::Fle(FlePolicy::new(3).unwrap());
        let h = run_colearning(&cfg, &shards, None).unwrap();
        assert_eq!(h.rounds.len(), 4);
        assert!(h.rounds.iter().all(|r| r.epochs == 3));
    }

    #[test]
    fn epoch_tracking_ends_on_shared_model() {
        let (mut cfg, shards, test) = setup(3);
        cfg.track_epochs = true;
        let h = run_colearning(&cfg, &shards, Some(&test)).unwrap();
        for r in &h.rounds {
            assert_eq!(r.epoch_evals.len(), r.epochs);
            assert_eq!(r.epoch_evals.last().copied(), r.eval);
        }
        let curve = h.accuracy_curve();
        assert_eq!(curve.len(), 13);
        assert_eq!(curve[0].0, 0);
        assert_eq!(curve[12].0, 12);
    }
}
