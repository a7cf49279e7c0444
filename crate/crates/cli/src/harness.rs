//! Turns a [`RunConfig`] into training runs and on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use colearn_core::baselines::{ensemble_train_tracked, run_vanilla};
use colearn_core::checkpoint;
use colearn_core::coordinator::{ColearnConfig, Coordinator, RunHistory};
use colearn_core::datasets::{
    gen_gaussian_blobs, gen_xor_rings, load_csv, partition_iid, train_test_split, write_csv,
    CsvSchema, Dataset, Shard,
};
use colearn_core::participant::Evaluation;
use colearn_core::schedule::ElrSchedule;
use colearn_core::seed::{self, stream};
use colearn_core::{ModelSpec, ParameterVector};
use serde::{Deserialize, Serialize};

use crate::config::{
    ConfigError, DatasetSource, EpochChoice, Mode, ModelChoice, RateChoice, RunConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run aborted: {0}")]
    Runtime(#[from] colearn_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

impl HarnessError {
    /// Process exit status: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Train and test data for one seed.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn seed_data(cfg: &RunConfig, seed: u64) -> Result<SeedData> {
    let train_seed = seed::derive(seed, &[stream::TRAIN_DATA]);
    let test_seed = seed::derive(seed, &[stream::TEST_DATA]);
    let (train, test) = match &cfg.dataset {
        DatasetSource::Blobs {
            samples,
            test_samples,
            dims,
            classes,
            separation,
        } => (
            gen_gaussian_blobs(train_seed, *samples, *dims, *classes, *separation)?,
            gen_gaussian_blobs(test_seed, *test_samples, *dims, *classes, *separation)?,
        ),
        DatasetSource::XorRings {
            samples,
            test_samples,
            noise,
        } => (
            gen_xor_rings(train_seed, *samples, *noise)?,
            gen_xor_rings(test_seed, *test_samples, *noise)?,
        ),
        DatasetSource::Csv {
            path,
            test_path,
            header,
            label_column,
            classes,
            test_fraction,
        } => {
            let mut schema = CsvSchema::new(*classes);
            schema.has_header = *header;
            schema.label_column = *label_column;
            let data = load_csv(path, &schema)?;
            match test_path {
                Some(tp) => (data, load_csv(tp, &schema)?),
                None => train_test_split(&data, *test_fraction, test_seed)?,
            }
        }
    };
    Ok(SeedData { train, test })
}

pub fn shards_for(cfg: &RunConfig, data: &Dataset, seed: u64) -> Result<Vec<Shard>> {
    Ok(partition_iid(
        data,
        cfg.participants,
        seed::derive(seed, &[stream::PARTITION]),
    )?)
}

pub fn model_spec(cfg: &RunConfig, dims: usize, classes: usize) -> Result<ModelSpec> {
    Ok(match cfg.model.kind {
        ModelChoice::Logistic => ModelSpec::logistic(dims, classes)?,
        ModelChoice::Mlp => ModelSpec::mlp(dims, &cfg.model.hidden, classes, cfg.model.activation)?,
    })
}

pub fn colearn_config(
    cfg: &RunConfig,
    spec: &ModelSpec,
    seed: u64,
    rate: RateChoice,
    epochs: EpochChoice,
) -> ColearnConfig {
    let mut c = ColearnConfig::new(
        spec.clone(),
        cfg.rate_schedule(rate),
        cfg.epoch_policy(epochs),
        seed,
    );
    c.batch_size = cfg.batch_size;
    c.max_rounds = cfg.rounds.unwrap_or(usize::MAX);
    c.epoch_budget = cfg.epoch_budget;
    c.wan = cfg.wan;
    c.faults = cfg.faults.clone();
    c.max_retries = cfg.max_retries;
    c.execution = cfg.execution;
    c.norm = cfg.norm;
    c
}

fn baseline_schedule(cfg: &RunConfig) -> Result<ElrSchedule> {
    Ok(ElrSchedule::new(
        cfg.eta,
        cfg.decay,
        cfg.epoch_budget.max(1),
    )?)
}

/// One line of a history CSV. Row 0 is the untrained model; later rows
/// follow synchronization rounds (co-learning) or epochs (baselines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub round: usize,
    pub epoch_cum: usize,
    #[serde(rename = "T_i")]
    pub t_i: usize,
    pub rel_change: Option<f64>,
    pub shared_test_acc: Option<f64>,
    pub shared_test_loss: Option<f64>,
    pub upload_bytes: u64,
    pub download_bytes: u64,
    pub interval_s: f64,
}

pub const HISTORY_HEADER: &str =
    "round,epoch_cum,T_i,rel_change,shared_test_acc,shared_test_loss,upload_bytes,download_bytes,interval_s";

fn initial_row(eval: Option<Evaluation>) -> HistoryRow {
    HistoryRow {
        round: 0,
        epoch_cum: 0,
        t_i: 0,
        rel_change: None,
        shared_test_acc: eval.map(|e| e.accuracy),
        shared_test_loss: eval.map(|e| e.mean_loss),
        upload_bytes: 0,
        download_bytes: 0,
        interval_s: 0.0,
    }
}

pub fn colearn_rows(history: &RunHistory) -> Vec<HistoryRow> {
    let mut rows = vec![initial_row(history.initial_eval)];
    rows.extend(history.rounds.iter().map(|r| HistoryRow {
        round: r.round_index + 1,
        epoch_cum: r.epochs_cum,
        t_i: r.epochs,
        rel_change: Some(r.rel_change),
        shared_test_acc: r.eval.map(|e| e.accuracy),
        shared_test_loss: r.eval.map(|e| e.mean_loss),
        upload_bytes: r.comm.upload_bytes,
        download_bytes: r.comm.download_bytes,
        interval_s: r.comm.interval_seconds,
    }));
    rows
}

/// Baseline rows: one per epoch, no communication.
fn epoch_rows(initial: Option<Evaluation>, evals: &[Evaluation]) -> Vec<HistoryRow> {
    let mut rows = vec![initial_row(initial)];
    rows.extend(evals.iter().enumerate().map(|(i, e)| HistoryRow {
        round: i + 1,
        epoch_cum: i + 1,
        t_i: 1,
        rel_change: None,
        shared_test_acc: Some(e.accuracy),
        shared_test_loss: Some(e.mean_loss),
        upload_bytes: 0,
        download_bytes: 0,
        interval_s: 0.0,
    }));
    rows
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

/// Per-seed summary written next to the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub mode: Mode,
    pub seed: u64,
    pub strategy: Option<String>,
    pub completed: bool,
    pub error: Option<String>,
    pub rounds: usize,
    pub epochs_per_participant: usize,
    pub total_bytes: u64,
    pub param_count: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub initial_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("summary types serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn save_checkpoint(path: &Path, params: &ParameterVector) -> Result<()> {
    Ok(checkpoint::save(path, params)?)
}

/// Filename-safe strategy tag, e.g. `clr-ile`.
pub fn strategy_tag(rate: RateChoice, epochs: EpochChoice) -> String {
    format!("{}-{}", rate_label(rate), epoch_label(epochs)).to_lowercase()
}

pub fn strategy_label(rate: RateChoice, epochs: EpochChoice) -> String {
    format!("{}+{}", rate_label(rate), epoch_label(epochs))
}

fn rate_label(r: RateChoice) -> &'static str {
    match r {
        RateChoice::Clr => "CLR",
        RateChoice::Elr => "ELR",
    }
}

fn epoch_label(e: EpochChoice) -> &'static str {
    match e {
        EpochChoice::Ile => "ILE",
        EpochChoice::Fle => "FLE",
    }
}

/// The four ablation arms in reporting order.
pub const ABLATION_ARMS: [(RateChoice, EpochChoice); 4] = [
    (RateChoice::Clr, EpochChoice::Ile),
    (RateChoice::Clr, EpochChoice::Fle),
    (RateChoice::Elr, EpochChoice::Ile),
    (RateChoice::Elr, EpochChoice::Fle),
];

/// Final accuracy of one finished run, for the printed report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub seed: u64,
    pub strategy: String,
    pub final_accuracy: f64,
}

/// Runs every seed of `cfg` and writes artifacts under `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Vec<Outcome>> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_json(&out.join("config.json"), cfg)?;
    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        match cfg.mode {
            Mode::Colearn => outcomes.push(run_colearn_seed(cfg, seed, out)?),
            Mode::Vanilla => outcomes.push(run_vanilla_seed(cfg, seed, out)?),
            Mode::Ensemble => outcomes.push(run_ensemble_seed(cfg, seed, out)?),
            Mode::Ablate => outcomes.extend(run_ablation_seed(cfg, seed, out)?),
        }
    }
    if cfg.mode == Mode::Ablate {
        write_ablation_summary(cfg, &outcomes, out)?;
    }
    Ok(outcomes)
}

fn summary_base(cfg: &RunConfig, seed: u64, spec: &ModelSpec, data: &SeedData) -> SeedSummary {
    SeedSummary {
        mode: cfg.mode,
        seed,
        strategy: None,
        completed: true,
        error: None,
        rounds: 0,
        epochs_per_participant: 0,
        total_bytes: 0,
        param_count: spec.param_count(),
        train_samples: data.train.len(),
        test_samples: data.test.len(),
        initial_accuracy: None,
        final_accuracy: None,
        final_loss: None,
    }
}

fn fill_from_history(summary: &mut SeedSummary, h: &RunHistory) {
    summary.rounds = h.rounds.len();
    summary.epochs_per_participant = h.epochs_per_participant();
    summary.total_bytes = h.total_bytes();
    summary.initial_accuracy = h.initial_eval.map(|e| e.accuracy);
    summary.final_accuracy = h.final_eval().map(|e| e.accuracy);
    summary.final_loss = h.final_eval().map(|e| e.mean_loss);
}

/// Co-learning for one seed and one strategy. Artifacts written so far
/// survive an abort.
fn colearn_once(
    cfg: &RunConfig,
    seed: u64,
    rate: RateChoice,
    epochs: EpochChoice,
    track_epochs: bool,
    out: &Path,
    suffix: &str,
) -> Result<RunHistory> {
    let data = seed_data(cfg, seed)?;
    let spec = model_spec(cfg, data.train.dims(), data.train.class_count())?;
    let shards = shards_for(cfg, &data.train, seed)?;
    let mut config = colearn_config(cfg, &spec, seed, rate, epochs);
    config.track_epochs = track_epochs;

    let mut summary = summary_base(cfg, seed, &spec, &data);
    summary.strategy = Some(strategy_label(rate, epochs));
    let history_path = out.join(format!("history_seed{seed}{suffix}.csv"));
    let summary_path = out.join(format!("summary_seed{seed}{suffix}.json"));

    let mut coordinator = Coordinator::new(&config, &shards, Some(&data.test))?;
    loop {
        match coordinator.step() {
            Ok(Some(record)) => {
                let done = record.round_index + 1;
                if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                    let path = out.join(format!("checkpoint_seed{seed}{suffix}_round{done}.clrn"));
                    save_checkpoint(&path, &coordinator.state().shared)?;
                }
            }
            Ok(None) => break,
            Err(e) => {
                let h = coordinator.history();
                write_history(&history_path, &colearn_rows(h))?;
                fill_from_history(&mut summary, h);
                summary.completed = false;
                summary.error = Some(e.to_string());
                write_json(&summary_path, &summary)?;
                save_checkpoint(
                    &out.join(format!("partial_seed{seed}{suffix}.clrn")),
                    &h.final_shared,
                )?;
                return Err(e.into());
            }
        }
    }
    let history = coordinator.into_history();
    write_history(&history_path, &colearn_rows(&history))?;
    fill_from_history(&mut summary, &history);
    write_json(&summary_path, &summary)?;
    save_checkpoint(
        &out.join(format!("final_seed{seed}{suffix}.clrn")),
        &history.final_shared,
    )?;
    Ok(history)
}

fn run_colearn_seed(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Outcome> {
    let h = colearn_once(cfg, seed, cfg.rate, cfg.epochs_policy, false, out, "")?;
    let outcome = Outcome {
        seed,
        strategy: strategy_label(cfg.rate, cfg.epochs_policy),
        final_accuracy: h.final_eval().map_or(f64::NAN, |e| e.accuracy),
    };
    println!(
        "seed {seed} colearn {}: rounds {} epochs {} bytes {} final_acc {:.4}",
        outcome.strategy,
        h.rounds.len(),
        h.epochs_per_participant(),
        h.total_bytes(),
        outcome.final_accuracy
    );
    Ok(outcome)
}

fn run_vanilla_seed(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Outcome> {
    let data = seed_data(cfg, seed)?;
    let spec = model_spec(cfg, data.train.dims(), data.train.class_count())?;
    let run = run_vanilla(
        &data.train,
        &spec,
        &baseline_schedule(cfg)?,
        cfg.epoch_budget,
        cfg.batch_size,
        seed,
        Some(&data.test),
    )?;
    write_history(
        &out.join(format!("history_seed{seed}.csv")),
        &epoch_rows(run.initial_eval, &run.epoch_evals),
    )?;
    let mut summary = summary_base(cfg, seed, &spec, &data);
    summary.strategy = Some("ELR".into());
    summary.epochs_per_participant = cfg.epoch_budget;
    summary.initial_accuracy = run.initial_eval.map(|e| e.accuracy);
    summary.final_accuracy = run.final_eval().map(|e| e.accuracy);
    summary.final_loss = run.final_eval().map(|e| e.mean_loss);
    write_json(&out.join(format!("summary_seed{seed}.json")), &summary)?;
    save_checkpoint(&out.join(format!("final_seed{seed}.clrn")), &run.params)?;
    let final_accuracy = summary.final_accuracy.unwrap_or(f64::NAN);
    println!(
        "seed {seed} vanilla: epochs {} final_acc {final_accuracy:.4}",
        cfg.epoch_budget
    );
    Ok(Outcome {
        seed,
        strategy: "vanilla".into(),
        final_accuracy,
    })
}

fn run_ensemble_seed(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Outcome> {
    let data = seed_data(cfg, seed)?;
    let spec = model_spec(cfg, data.train.dims(), data.train.class_count())?;
    let shards = shards_for(cfg, &data.train, seed)?;
    let run = ensemble_train_tracked(
        &shards,
        &spec,
        &baseline_schedule(cfg)?,
        cfg.epoch_budget,
        cfg.batch_size,
        seed,
        cfg.execution,
        Some(&data.test),
    )?;
    write_history(
        &out.join(format!("history_seed{seed}.csv")),
        &epoch_rows(run.initial_eval, &run.epoch_evals),
    )?;
    let mut summary = summary_base(cfg, seed, &spec, &data);
    summary.strategy = Some("ELR".into());
    summary.epochs_per_participant = cfg.epoch_budget;
    summary.initial_accuracy = run.initial_eval.map(|e| e.accuracy);
    summary.final_accuracy = run.final_eval().map(|e| e.accuracy);
    summary.final_loss = run.final_eval().map(|e| e.mean_loss);
    write_json(&out.join(format!("summary_seed{seed}.json")), &summary)?;
    for (k, member) in run.model.members().iter().enumerate() {
        save_checkpoint(
            &out.join(format!("final_seed{seed}_member{k}.clrn")),
            member,
        )?;
    }
    let final_accuracy = summary.final_accuracy.unwrap_or(f64::NAN);
    println!(
        "seed {seed} ensemble: members {} epochs {} final_acc {final_accuracy:.4}",
        shards.len(),
        cfg.epoch_budget
    );
    Ok(Outcome {
        seed,
        strategy: "ensemble".into(),
        final_accuracy,
    })
}

/// Per-epoch test accuracy of the averaged local models for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub strategy: String,
    pub seed: u64,
    pub epoch: usize,
    pub test_acc: f64,
}

/// All four arms for one seed; appends their curves to
/// `ablation_curves_seed{seed}.csv`.
pub fn run_ablation_seed(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<Outcome>> {
    let mut outcomes = Vec::new();
    let mut points = Vec::new();
    for (rate, epochs) in ABLATION_ARMS {
        let suffix = format!("_{}", strategy_tag(rate, epochs));
        let h = colearn_once(cfg, seed, rate, epochs, true, out, &suffix)?;
        let strategy = strategy_label(rate, epochs);
        points.extend(
            h.accuracy_curve()
                .into_iter()
                .map(|(epoch, test_acc)| CurvePoint {
                    strategy: strategy.clone(),
                    seed,
                    epoch,
                    test_acc,
                }),
        );
        let final_accuracy = h.final_eval().map_or(f64::NAN, |e| e.accuracy);
        println!(
            "seed {seed} ablate {strategy}: rounds {} bytes {} final_acc {final_accuracy:.4}",
            h.rounds.len(),
            h.total_bytes()
        );
        outcomes.push(Outcome {
            seed,
            strategy,
            final_accuracy,
        });
    }
    let path = out.join(format!("ablation_curves_seed{seed}.csv"));
    let csv_err = |source| HarnessError::Csv {
        path: path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for p in &points {
        w.serialize(p).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub strategy: String,
    pub runs: usize,
    pub mean_final_acc: f64,
    pub std_final_acc: f64,
}

/// Mean and sample standard deviation of final accuracy per arm.
pub fn summarize_arms(outcomes: &[Outcome]) -> Vec<ArmSummary> {
    ABLATION_ARMS
        .iter()
        .map(|&(r, e)| {
            let strategy = strategy_label(r, e);
            let accs: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.strategy == strategy)
                .map(|o| o.final_accuracy)
                .collect();
            let (mean, std) = mean_std(&accs);
            ArmSummary {
                strategy,
                runs: accs.len(),
                mean_final_acc: mean,
                std_final_acc: std,
            }
        })
        .collect()
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn write_ablation_summary(cfg: &RunConfig, outcomes: &[Outcome], out: &Path) -> Result<()> {
    let arms = summarize_arms(outcomes);
    let path = out.join("ablation_summary.csv");
    let csv_err = |source| HarnessError::Csv {
        path: path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for a in &arms {
        w.serialize(a).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;
    println!("strategy  mean_final_acc  std  ({} seeds)", cfg.seeds.len());
    for a in &arms {
        println!(
            "{:<8}  {:.4}  {:.4}",
            a.strategy, a.mean_final_acc, a.std_final_acc
        );
    }
    Ok(())
}

/// Writes the training set of `seed` as `K` shard files and returns their
/// paths.
pub fn partition(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let data = seed_data(cfg, seed)?;
    let shards = shards_for(cfg, &data.train, seed)?;
    let mut paths = Vec::with_capacity(shards.len());
    for shard in &shards {
        let path = out.join(format!("shard_{}.csv", shard.participant_id));
        write_csv(&path, &shard.data, true)?;
        println!("{} rows -> {}", shard.len(), path.display());
        paths.push(path);
    }
    Ok(paths)
}
