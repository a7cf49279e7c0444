//! Traffic and synchronization-interval accounting for rounds over a WAN.
//!
//! Each participant uploads its model and downloads the shared one over its
//! own link; links are uniform, so the slowest link takes
//! `2 · model_bytes / bandwidth`. Nothing is compressed.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WanModel {
    /// Bytes per second on each datacenter link. May be infinite.
    pub bandwidth: f64,
    /// Simulated training seconds for one local epoch.
    pub per_epoch_seconds: f64,
    pub wire_bytes_per_param: u64,
}

impl Default for WanModel {
    fn default() -> Self {
        Self {
            bandwidth: 12.5e6,
            per_epoch_seconds: 180.0,
            wire_bytes_per_param: 4,
        }
    }
}

impl WanModel {
    pub fn new(bandwidth: f64, per_epoch_seconds: f64, wire_bytes_per_param: u64) -> Result<Self> {
        if bandwidth.is_nan() || bandwidth <= 0.0 {
            return Err(invalid(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if !(per_epoch_seconds.is_finite() && per_epoch_seconds > 0.0) {
            return Err(invalid(format!(
                "per_epoch_seconds must be positive, got {per_epoch_seconds}"
            )));
        }
        if wire_bytes_per_param == 0 {
            return Err(invalid("wire_bytes_per_param must be >= 1"));
        }
        Ok(Self {
            bandwidth,
            per_epoch_seconds,
            wire_bytes_per_param,
        })
    }

    pub fn wire_bytes_for(&self, param_count: usize) -> Result<u64> {
        if param_count == 0 {
            return Err(invalid("a model with zero parameters has no wire size"));
        }
        Ok(self.wire_bytes_per_param * param_count as u64)
    }
}

/// Traffic and timing for one synchronization round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommRecord {
    pub round_index: usize,
    pub upload_bytes: u64,
    pub download_bytes: u64,
    pub training_seconds: f64,
    pub transfer_seconds: f64,
    /// Time between consecutive synchronizations.
    pub interval_seconds: f64,
}

pub fn model_wire_bytes(spec: &ModelSpec, wan: &WanModel) -> u64 {
    // a valid spec always has at least one weight
    wan.wire_bytes_for(spec.param_count())
        .expect("ModelSpec guarantees a non-empty parameter vector")
}

pub fn round_comm(
    spec: &ModelSpec,
    wan: &WanModel,
    participants: usize,
    epochs: usize,
    round_index: usize,
) -> Result<CommRecord> {
    if participants == 0 {
        return Err(invalid("round needs at least one participant"));
    }
    if epochs == 0 {
        return Err(invalid("round needs at least one local epoch"));
    }
    let model_bytes = model_wire_bytes(spec, wan);
    let total = participants as u64 * model_bytes;
    let training_seconds = epochs as f64 * wan.per_epoch_seconds;
    let transfer_seconds = 2.0 * model_bytes as f64 / wan.bandwidth;
    Ok(CommRecord {
        round_index,
        upload_bytes: total,
        download_bytes: total,
        training_seconds,
        transfer_seconds,
        interval_seconds: training_seconds + transfer_seconds,
    })
}
