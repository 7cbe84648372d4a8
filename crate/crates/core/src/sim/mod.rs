//! Discrete-event simulation of one cluster: route discovery, forwarding,
//! head overhearing with per-hop forward timers, ACK/RTR and exclusion of
//! detected nodes.

mod engine;
pub mod queue;
pub mod routing;

use thiserror::Error;

use crate::cluster::{ClusterError, ElectionAudit};
use crate::config::{ConfigError, Scenario, ScenarioConfig};
use crate::metrics::{EventLogRecord, MetricsReport};
use crate::trust::{TrustError, TrustTable};

pub use engine::{NodeState, Packet, Role, SimEvent, Simulation, CONTROL_LATENCY};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("trust bookkeeping failed: {0}")]
    Trust(#[from] TrustError),
    #[error("simulation invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Engine-side counters that are not part of the published report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub events_processed: u64,
    pub data_hops: u64,
    pub discoveries: u64,
    pub timers_armed: u64,
    pub timers_canceled: u64,
    pub timers_fired: u64,
    pub record_drop_calls: u64,
    pub record_forward_calls: u64,
    pub in_flight_at_end: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub report: MetricsReport,
    pub log: Vec<EventLogRecord>,
    pub elections: Vec<ElectionAudit>,
    pub final_trust: TrustTable,
    pub stats: SimStats,
    pub diagnostics: Vec<String>,
}

impl SimOutcome {
    pub fn log_text(&self) -> String {
        crate::metrics::render_log(&self.log)
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<SimOutcome, SimError> {
    Simulation::new(scenario)?.run()
}

/// Validates `config` and runs it to quiescence.
pub fn run(config: &ScenarioConfig) -> Result<SimOutcome, RunError> {
    let scenario = config.validate()?;
    Ok(run_scenario(&scenario)?)
}
