//! Wireless-sensor-network simulator with exponential streak-based
//! black-hole detection.
//!
//! A cluster head, elected by residual energy, overhears every forward in
//! its cluster. Each missed forward extends the offender's drop streak and
//! its trust factor falls as `100 * x^streak`; one observed forward resets
//! it. When the trust factor reaches the threshold the node is broadcast as
//! malicious and routed around.
//!
//! - [`trust`]: streak counters, trust factors, verdicts
//! - [`cluster`]: energy accounting and head election
//! - [`adversary`]: honest, black-hole, gray-hole, on-off, turncoat and
//!   cooperative behaviors
//! - [`sim`]: the deterministic event loop
//! - [`metrics`]: event log, report counters, replay oracle
//! - [`config`]: scenario files

pub mod adversary;
pub mod cluster;
pub mod config;
pub mod ids;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod topology;
pub mod trust;

pub use adversary::{Action, BehaviorKind, BehaviorSpec};
pub use config::{ConfigError, Scenario, ScenarioConfig};
pub use ids::{NodeId, Tick};
pub use metrics::{EventLogRecord, LogKind, MetricsReport};
pub use sim::{run, run_scenario, RunError, SimError, SimOutcome};
pub use trust::{compute_tf, drops_to_detection, FaultTolerance, Threshold, TrustTable, Verdict};
