//! Deterministic simulator for collaborative training across data centers.
//!
//! Participants hold disjoint shards of a dataset, train locally with
//! minibatch SGD, and periodically upload their parameters to a coordinator
//! that averages them into a shared model. Two strategies drive the
//! protocol:
//!
//! - a cyclical learning rate that anneals exponentially within each round
//!   and restarts at the next one ([`schedule::ClrSchedule`]);
//! - a local-epoch policy that doubles the round length once the shared
//!   model stops moving ([`schedule::IlePolicy`]).
//!
//! Baselines ([`baselines`]) cover centralized training and output-averaging
//! ensembles, and [`wansim`] accounts for the traffic and synchronization
//! interval each round costs over a wide-area link.
//!
//! Every run is a pure function of its configuration and seed. Participant
//! work inside a round can run on a rayon pool (feature `parallel`, on by
//! default); results are joined in participant order, so the output is
//! bit-identical to the sequential path.

pub mod baselines;
pub mod checkpoint;
pub mod coordinator;
pub mod datasets;
pub mod error;
pub mod exec;
pub mod model;
pub mod params;
pub mod participant;
pub mod schedule;
pub mod seed;
pub mod wansim;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{Activation, Batch, Matrix, ModelKind, ModelSpec};
pub use params::{average, rel_change, rel_change_with, sgd_step, Norm, ParameterVector};
