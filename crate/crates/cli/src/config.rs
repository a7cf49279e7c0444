//! Run configuration: a flat TOML file plus `key=value` overrides,
//! validated into a [`RunConfig`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use colearn_core::coordinator::{Fault, FaultPlan, DEFAULT_MAX_RETRIES};
use colearn_core::schedule::{
    ClrSchedule, ElrSchedule, EpochPolicy, FlePolicy, IlePolicy, RateSchedule, DEFAULT_CAP_FACTOR,
    DEFAULT_DECAY, DEFAULT_EPSILON, DEFAULT_SHARED_RATE,
};
use colearn_core::wansim::WanModel;
use colearn_core::{Activation, Execution, Norm};
use serde::{Deserialize, Serialize};

pub const DEFAULT_PARTICIPANTS: usize = 5;
pub const DEFAULT_T0: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_EPOCH_BUDGET: usize = 100;
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// A configuration problem tied to one field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Colearn,
    Vanilla,
    Ensemble,
    Ablate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateChoice {
    Clr,
    Elr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpochChoice {
    Ile,
    Fle,
}

/// Fields exactly as they appear in the file; everything optional so that
/// missing keys fall back to defaults or produce a named error.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<Mode>,
    dataset: Option<String>,
    samples: Option<usize>,
    test_samples: Option<usize>,
    dims: Option<usize>,
    classes: Option<usize>,
    separation: Option<f64>,
    noise: Option<f64>,
    csv_path: Option<PathBuf>,
    csv_test_path: Option<PathBuf>,
    csv_header: Option<bool>,
    csv_label_column: Option<usize>,
    test_fraction: Option<f64>,
    participants: Option<usize>,
    model: Option<ModelChoice>,
    hidden: Option<Vec<usize>>,
    activation: Option<Activation>,
    rate: Option<RateChoice>,
    epochs_policy: Option<EpochChoice>,
    t0: Option<usize>,
    epsilon: Option<f64>,
    cap: Option<usize>,
    eta: Option<f64>,
    decay: Option<f64>,
    batch_size: Option<usize>,
    epoch_budget: Option<usize>,
    rounds: Option<usize>,
    seeds: Option<Vec<u64>>,
    bandwidth: Option<f64>,
    per_epoch_seconds: Option<f64>,
    wire_bytes_per_param: Option<u64>,
    max_retries: Option<usize>,
    checkpoint_every: Option<usize>,
    norm: Option<Norm>,
    execution: Option<Execution>,
    faults: Option<Vec<Fault>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DatasetSource {
    Blobs {
        samples: usize,
        test_samples: usize,
        dims: usize,
        classes: usize,
        separation: f64,
    },
    XorRings {
        samples: usize,
        test_samples: usize,
        noise: f64,
    },
    Csv {
        path: PathBuf,
        test_path: Option<PathBuf>,
        header: bool,
        label_column: Option<usize>,
        classes: usize,
        test_fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub kind: ModelChoice,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

/// Validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub dataset: DatasetSource,
    pub participants: usize,
    pub model: ModelConfig,
    pub rate: RateChoice,
    pub epochs_policy: EpochChoice,
    pub t0: usize,
    pub epsilon: f64,
    pub cap: usize,
    pub eta: f64,
    pub decay: f64,
    pub batch_size: usize,
    pub epoch_budget: usize,
    pub rounds: Option<usize>,
    pub seeds: Vec<u64>,
    pub wan: WanModel,
    pub max_retries: usize,
    pub checkpoint_every: usize,
    pub norm: Norm,
    pub execution: Execution,
    pub faults: FaultPlan,
}

impl RunConfig {
    pub fn clr(&self) -> ClrSchedule {
        ClrSchedule::new(self.eta, self.decay).expect("validated")
    }

    pub fn elr(&self) -> ElrSchedule {
        ElrSchedule::new(self.eta, self.decay, self.epoch_budget).expect("validated")
    }

    pub fn ile(&self) -> IlePolicy {
        IlePolicy::new(self.t0, self.epsilon, self.cap).expect("validated")
    }

    pub fn fle(&self) -> FlePolicy {
        FlePolicy::new(self.t0).expect("validated")
    }

    pub fn rate_schedule(&self, choice: RateChoice) -> RateSchedule {
        match choice {
            RateChoice::Clr => RateSchedule::Clr(self.clr()),
            RateChoice::Elr => RateSchedule::Elr(self.elr()),
        }
    }

    pub fn epoch_policy(&self, choice: EpochChoice) -> EpochPolicy {
        match choice {
            EpochChoice::Ile => EpochPolicy::Ile(self.ile()),
            EpochChoice::Fle => EpochPolicy::Fle(self.fle()),
        }
    }

    /// Parses TOML text, applies overrides, and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::new("<file>", e.message().to_string()))?;
        apply_overrides(&mut table, overrides)?;
        let raw: RawConfig = toml::Value::Table(table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| blame_field(&table, e))?;
        validate(raw)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }
}

/// Finds the key responsible for a deserialization failure by retrying
/// each key on its own.
fn blame_field(table: &toml::Table, whole: toml::de::Error) -> ConfigError {
    let msg = whole.message().to_string();
    if let Some(field) = field_in_message(&msg) {
        return ConfigError::new(field, msg.clone());
    }
    for (key, value) in table {
        let single = toml::Table::from_iter([(key.clone(), value.clone())]);
        if let Err(e) = toml::Value::Table(single).try_into::<RawConfig>() {
            return ConfigError::new(key.clone(), e.message().to_string());
        }
    }
    ConfigError::new("<file>", msg)
}

/// Pulls the backticked field name out of serde messages such as
/// "unknown field `foo`" or "invalid type ... for key `bar`".
fn field_in_message(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let end = start + msg[start..].find('`')?;
    Some(&msg[start..end])
}

fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), ConfigError> {
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::new(item.clone(), "override must look like key=value"))?;
        let key = key.trim();
        let value = value.trim();
        // values that are not valid TOML are taken as bare strings
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
    }
    Ok(())
}

fn positive(field: &str, v: usize) -> Result<usize, ConfigError> {
    if v == 0 {
        Err(ConfigError::new(field, "must be >= 1"))
    } else {
        Ok(v)
    }
}

fn validate(raw: RawConfig) -> Result<RunConfig, ConfigError> {
    let mode = raw.mode.unwrap_or(Mode::Colearn);
    let dataset_name = raw
        .dataset
        .ok_or_else(|| ConfigError::new("dataset", "missing required field"))?;

    let dataset = match dataset_name.as_str() {
        "blobs" => DatasetSource::Blobs {
            samples: raw.samples.unwrap_or(10_000),
            test_samples: raw.test_samples.unwrap_or(10_000),
            dims: positive("dims", raw.dims.unwrap_or(20))?,
            classes: raw.classes.unwrap_or(5),
            separation: raw.separation.unwrap_or(3.0),
        },
        "xor-rings" => DatasetSource::XorRings {
            samples: raw.samples.unwrap_or(5_000),
            test_samples: raw.test_samples.unwrap_or(5_000),
            noise: raw.noise.unwrap_or(0.1),
        },
        "csv" => {
            let path = raw
                .csv_path
                .ok_or_else(|| ConfigError::new("csv_path", "required when dataset = \"csv\""))?;
            let classes = raw
                .classes
                .ok_or_else(|| ConfigError::new("classes", "required when dataset = \"csv\""))?;
            let test_fraction = raw.test_fraction.unwrap_or(0.2);
            if raw.csv_test_path.is_none() && !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(ConfigError::new("test_fraction", "must lie in (0, 1)"));
            }
            DatasetSource::Csv {
                path,
                test_path: raw.csv_test_path,
                header: raw.csv_header.unwrap_or(false),
                label_column: raw.csv_label_column,
                classes: positive("classes", classes)?,
                test_fraction,
            }
        }
        other => {
            return Err(ConfigError::new(
                "dataset",
                format!("unknown dataset {other:?} (expected blobs, xor-rings or csv)"),
            ))
        }
    };
    match &dataset {
        DatasetSource::Blobs {
            samples,
            classes,
            separation,
            test_samples,
            ..
        } => {
            if *classes < 2 {
                return Err(ConfigError::new("classes", "blobs need at least 2 classes"));
            }
            if samples < classes || test_samples < classes {
                return Err(ConfigError::new(
                    "samples",
                    "need at least one sample per class",
                ));
            }
            if !(*separation > 0.0 && separation.is_finite()) {
                return Err(ConfigError::new("separation", "must be positive"));
            }
        }
        DatasetSource::XorRings {
            samples,
            test_samples,
            noise,
        } => {
            if *samples < 4 || *test_samples < 4 {
                return Err(ConfigError::new(
                    "samples",
                    "xor-rings needs at least 4 samples",
                ));
            }
            if !(*noise >= 0.0 && noise.is_finite()) {
                return Err(ConfigError::new("noise", "must be >= 0"));
            }
        }
        DatasetSource::Csv { .. } => {}
    }

    let participants = positive(
        "participants",
        raw.participants.unwrap_or(DEFAULT_PARTICIPANTS),
    )?;
    let t0 = positive("t0", raw.t0.unwrap_or(DEFAULT_T0))?;
    let epsilon = raw.epsilon.unwrap_or(DEFAULT_EPSILON);
    let cap = raw.cap.unwrap_or(t0.saturating_mul(DEFAULT_CAP_FACTOR));
    let eta = raw.eta.unwrap_or(DEFAULT_SHARED_RATE);
    let decay = raw.decay.unwrap_or(DEFAULT_DECAY);
    let epoch_budget = raw.epoch_budget.unwrap_or(DEFAULT_EPOCH_BUDGET);
    let rate = raw.rate.unwrap_or(RateChoice::Clr);
    let epochs_policy = raw.epochs_policy.unwrap_or(EpochChoice::Ile);

    if !(eta > 0.0 && eta.is_finite()) {
        return Err(ConfigError::new("eta", "must be positive"));
    }
    if !(decay > 0.0 && decay < 1.0) {
        return Err(ConfigError::new("decay", "must lie in (0, 1)"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(ConfigError::new("epsilon", "must lie in (0, 1)"));
    }
    if cap < t0 {
        return Err(ConfigError::new("cap", format!("must be >= t0 ({t0})")));
    }
    // zero epochs is a valid request for an untrained baseline
    let trains = mode == Mode::Vanilla || mode == Mode::Ensemble;
    if !(trains && epoch_budget == 0) && epoch_budget < t0 {
        return Err(ConfigError::new(
            "epoch_budget",
            format!("must be >= t0 ({t0})"),
        ));
    }

    let model = ModelConfig {
        kind: raw.model.unwrap_or(ModelChoice::Logistic),
        hidden: raw.hidden.unwrap_or_else(|| vec![16, 16]),
        activation: raw.activation.unwrap_or_default(),
    };
    if model.kind == ModelChoice::Mlp && model.hidden.contains(&0) {
        return Err(ConfigError::new("hidden", "hidden widths must be >= 1"));
    }

    let seeds = raw.seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    if seeds.is_empty() {
        return Err(ConfigError::new("seeds", "need at least one seed"));
    }
    let defaults = WanModel::default();
    let wan = WanModel::new(
        raw.bandwidth.unwrap_or(defaults.bandwidth),
        raw.per_epoch_seconds.unwrap_or(defaults.per_epoch_seconds),
        raw.wire_bytes_per_param
            .unwrap_or(defaults.wire_bytes_per_param),
    )
    .map_err(|e| {
        ConfigError::new(
            "bandwidth/per_epoch_seconds/wire_bytes_per_param",
            e.to_string(),
        )
    })?;

    let faults = FaultPlan::new(raw.faults.unwrap_or_default());
    faults
        .validate(participants)
        .map_err(|e| ConfigError::new("faults", e.to_string()))?;

    Ok(RunConfig {
        mode,
        dataset,
        participants,
        model,
        rate,
        epochs_policy,
        t0,
        epsilon,
        cap,
        eta,
        decay,
        batch_size: positive("batch_size", raw.batch_size.unwrap_or(DEFAULT_BATCH_SIZE))?,
        epoch_budget,
        rounds: raw.rounds,
        seeds,
        wan,
        max_retries: raw.max_retries.unwrap_or(DEFAULT_MAX_RETRIES),
        checkpoint_every: raw.checkpoint_every.unwrap_or(0),
        norm: raw.norm.unwrap_or_default(),
        execution: raw.execution.unwrap_or_default(),
        faults,
    })
}

/// Every default in one place, for `--help` style listings and docs.
pub fn defaults() -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        ("participants", DEFAULT_PARTICIPANTS.to_string()),
        ("t0", DEFAULT_T0.to_string()),
        ("eta", DEFAULT_SHARED_RATE.to_string()),
        ("decay", DEFAULT_DECAY.to_string()),
        ("epsilon", DEFAULT_EPSILON.to_string()),
        ("batch_size", DEFAULT_BATCH_SIZE.to_string()),
        ("epoch_budget", DEFAULT_EPOCH_BUDGET.to_string()),
        ("max_retries", DEFAULT_MAX_RETRIES.to_string()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_dataset_is_named() {
        let err = RunConfig::from_toml_str("mode = \"colearn\"\n", &[]).unwrap_err();
        assert_eq!(err.field, "dataset");
    }

    #[test]
    fn reference_constants_are_defaults() {
        let cfg = RunConfig::from_toml_str("dataset = \"blobs\"\n", &[]).unwrap();
        assert_eq!(cfg.participants, 5);
        assert_eq!(cfg.eta, 0.01);
        assert_eq!(cfg.decay, 0.25);
        assert_eq!(cfg.t0, 5);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.cap, 5 * 1024);
        assert_eq!(cfg.mode, Mode::Colearn);
    }

    #[test]
    fn overrides_win_over_file() {
        let cfg = RunConfig::from_toml_str(
            "dataset = \"blobs\"\neta = 0.5\n",
            &[
                "eta=0.02".into(),
                "dataset=xor-rings".into(),
                "hidden=[8, 4]".into(),
                "model=mlp".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.eta, 0.02);
        assert!(matches!(cfg.dataset, DatasetSource::XorRings { .. }));
        assert_eq!(cfg.model.hidden, vec![8, 4]);
        assert_eq!(cfg.model.kind, ModelChoice::Mlp);
    }

    #[test]
    fn unknown_and_mistyped_fields_are_named() {
        let err = RunConfig::from_toml_str("dataset = \"blobs\"\nbogus = 1\n", &[]).unwrap_err();
        assert_eq!(err.field, "bogus");
        let err =
            RunConfig::from_toml_str("dataset = \"blobs\"\neta = \"fast\"\n", &[]).unwrap_err();
        assert_eq!(err.field, "eta");
    }

    #[test]
    fn range_checks() {
        for (kv, field) in [
            ("decay=1.5", "decay"),
            ("eta=0", "eta"),
            ("participants=0", "participants"),
            ("epoch_budget=2", "epoch_budget"),
            ("cap=1", "cap"),
            ("epsilon=0", "epsilon"),
            ("dataset=\"mnist\"", "dataset"),
        ] {
            let err = RunConfig::from_toml_str("dataset = \"blobs\"\n", &[kv.into()]).unwrap_err();
            assert_eq!(err.field, field, "{kv}");
        }
    }

    #[test]
    fn faults_parse_and_validate() {
        let text = "dataset = \"blobs\"\nfaults = [{ round = 1, participant = 2, kind = \"upload-loss\" }]\n";
        let cfg = RunConfig::from_toml_str(text, &[]).unwrap();
        assert_eq!(cfg.faults.faults.len(), 1);
        let err = RunConfig::from_toml_str(text, &["participants=2".into()]).unwrap_err();
        assert_eq!(err.field, "faults");
    }

    #[test]
    fn vanilla_allows_zero_epochs() {
        let cfg = RunConfig::from_toml_str(
            "dataset = \"blobs\"\nmode = \"vanilla\"\nepoch_budget = 0\n",
            &[],
        )
        .unwrap();
        assert_eq!(cfg.epoch_budget, 0);
    }

    #[test]
    fn csv_requires_path_and_classes() {
        let err = RunConfig::from_toml_str("dataset = \"csv\"\n", &[]).unwrap_err();
        assert_eq!(err.field, "csv_path");
        let err =
            RunConfig::from_toml_str("dataset = \"csv\"\ncsv_path = \"x.csv\"\n", &[]).unwrap_err();
        assert_eq!(err.field, "classes");
    }
}
