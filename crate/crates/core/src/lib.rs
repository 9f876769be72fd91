//! Fault detection for device dependency networks.
//!
//! * [`topology`]: dependency DAG, levels and reachability.
//! * [`failure_model`]: Markov failure rates, Weibull recovery, transient/permanent classification.
//! * [`root_cause`]: Bayesian ranking of suspects from a poll sweep.
//! * [`correlation`]: similarity graph and Girvan–Newman clustering.
//! * [`simulator`]: seeded device-state simulation producing logs and snapshots.

pub mod alarm;
pub mod canonical;
pub mod failure_model;
pub mod root_cause;
pub mod topology;
pub mod correlation;
pub mod simulator;
pub mod pipeline;
pub mod bench;
