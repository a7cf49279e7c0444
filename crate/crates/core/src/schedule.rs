//! Learning-rate schedules and local-epoch policies.
//!
//! The rate axis is cyclical (restarts every round) or exponential
//! (one decay over the whole budget); the epoch axis either doubles the
//! round length once the shared model settles or keeps it fixed.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const DEFAULT_SHARED_RATE: f64 = 0.01;
pub const DEFAULT_DECAY: f64 = 0.25;
pub const DEFAULT_EPSILON: f64 = 0.01;
/// Default doubling cap, as a multiple of the initial round length.
pub const DEFAULT_CAP_FACTOR: usize = 1 << 10;

fn check_rate(rate: f64, name: &str) -> Result<()> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {rate}")))
    }
}

fn check_decay(decay: f64) -> Result<()> {
    if decay > 0.0 && decay < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("decay must lie in (0, 1), got {decay}")))
    }
}

/// Per-round exponential annealing `η · r^(j / T)` that restarts each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClrSchedule {
    pub shared_rate: f64,
    pub decay: f64,
}

impl Default for ClrSchedule {
    fn default() -> Self {
        Self {
            shared_rate: DEFAULT_SHARED_RATE,
            decay: DEFAULT_DECAY,
        }
    }
}

impl ClrSchedule {
    pub fn new(shared_rate: f64, decay: f64) -> Result<Self> {
        check_rate(shared_rate, "shared_rate")?;
        check_decay(decay)?;
        Ok(Self { shared_rate, decay })
    }

    /// Rate for epoch `j` of a round lasting `round_length` epochs.
    pub fn rate(&self, epoch_in_round: usize, round_length: usize) -> Result<f64> {
        self.rate_with(self.shared_rate, epoch_in_round, round_length)
    }

    /// Same as [`ClrSchedule::rate`] with an explicit per-round base rate.
    pub fn rate_with(
        &self,
        shared_rate: f64,
        epoch_in_round: usize,
        round_length: usize,
    ) -> Result<f64> {
        if round_length == 0 {
            return Err(invalid("round length must be >= 1"));
        }
        if epoch_in_round > round_length {
            return Err(invalid(format!(
                "epoch {epoch_in_round} lies beyond a round of {round_length} epochs"
            )));
        }
        Ok(shared_rate * self.decay.powf(epoch_in_round as f64 / round_length as f64))
    }
}

pub fn clr_rate(s: &ClrSchedule, epoch_in_round: usize, round_length: usize) -> Result<f64> {
    s.rate(epoch_in_round, round_length)
}

/// Non-cyclical baseline: `initial_rate · decay^(e / budget)` over the
/// global epoch counter `e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElrSchedule {
    pub initial_rate: f64,
    pub decay: f64,
    pub total_epoch_budget: usize,
}

impl ElrSchedule {
    pub fn new(initial_rate: f64, decay: f64, total_epoch_budget: usize) -> Result<Self> {
        check_rate(initial_rate, "initial_rate")?;
        check_decay(decay)?;
        if total_epoch_budget == 0 {
            return Err(invalid("total_epoch_budget must be >= 1"));
        }
        Ok(Self {
            initial_rate,
            decay,
            total_epoch_budget,
        })
    }

    pub fn rate(&self, global_epoch: usize) -> f64 {
        self.initial_rate
            * self
                .decay
                .powf(global_epoch as f64 / self.total_epoch_budget as f64)
    }
}

pub fn elr_rate(s: &ElrSchedule, global_epoch: usize) -> f64 {
    s.rate(global_epoch)
}

/// Increasing local epochs: start at `initial_epochs`, double (up to `cap`)
/// whenever the shared model's relative change is at most `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IlePolicy {
    pub initial_epochs: usize,
    pub epsilon: f64,
    pub cap: usize,
}

impl IlePolicy {
    pub fn new(initial_epochs: usize, epsilon: f64, cap: usize) -> Result<Self> {
        if initial_epochs == 0 {
            return Err(invalid("initial_epochs must be >= 1"));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(invalid(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if cap < initial_epochs {
            return Err(invalid(format!(
                "cap {cap} is below initial_epochs {initial_epochs}"
            )));
        }
        Ok(Self {
            initial_epochs,
            epsilon,
            cap,
        })
    }

    pub fn with_defaults(initial_epochs: usize) -> Result<Self> {
        Self::new(
            initial_epochs,
            DEFAULT_EPSILON,
            initial_epochs.saturating_mul(DEFAULT_CAP_FACTOR),
        )
    }

    pub fn next_epochs(&self, round: usize, prev_epochs: usize, change: f64) -> usize {
        if round == 0 {
            self.initial_epochs
        } else if change <= self.epsilon {
            prev_epochs.saturating_mul(2).min(self.cap)
        } else {
            prev_epochs
        }
    }
}

pub fn next_epochs(p: &IlePolicy, round: usize, prev_epochs: usize, change: f64) -> usize {
    p.next_epochs(round, prev_epochs, change)
}

/// Fixed local epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlePolicy {
    pub epochs: usize,
}

impl FlePolicy {
    pub fn new(epochs: usize) -> Result<Self> {
        if epochs == 0 {
            return Err(invalid("epochs must be >= 1"));
        }
        Ok(Self { epochs })
    }
}

pub fn fle_epochs(p: &FlePolicy, _round: usize) -> usize {
    p.epochs
}

/// Rate axis of the strategy grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RateSchedule {
    Clr(ClrSchedule),
    Elr(ElrSchedule),
}

impl RateSchedule {
    /// Rate for local epoch `epoch_in_round` of a round planned at
    /// `round_length` epochs, where `global_epoch` counts every local epoch
    /// the participant has run before this one.
    pub fn rate(
        &self,
        shared_rate: f64,
        epoch_in_round: usize,
        round_length: usize,
        global_epoch: usize,
    ) -> Result<f64> {
        match self {
            RateSchedule::Clr(s) => s.rate_with(shared_rate, epoch_in_round, round_length),
            RateSchedule::Elr(s) => Ok(s.rate(global_epoch)),
        }
    }

    /// η used at the start of every round.
    pub fn shared_rate(&self) -> f64 {
        match self {
            RateSchedule::Clr(s) => s.shared_rate,
            RateSchedule::Elr(s) => s.initial_rate,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RateSchedule::Clr(_) => "CLR",
            RateSchedule::Elr(_) => "ELR",
        }
    }
}

/// Epoch axis of the strategy grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EpochPolicy {
    Ile(IlePolicy),
    Fle(FlePolicy),
}

impl EpochPolicy {
    pub fn next_epochs(&self, round: usize, prev_epochs: usize, change: f64) -> usize {
        match self {
            EpochPolicy::Ile(p) => p.next_epochs(round, prev_epochs, change),
            EpochPolicy::Fle(p) => fle_epochs(p, round),
        }
    }

    pub fn initial_epochs(&self) -> usize {
        self.next_epochs(0, 0, f64::INFINITY)
    }

    pub fn label(&self) -> &'static str {
        match self {
            EpochPolicy::Ile(_) => "ILE",
            EpochPolicy::Fle(_) => "FLE",
        }
    }
}
