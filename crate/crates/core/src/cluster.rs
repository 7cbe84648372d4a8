//! Energy bookkeeping and max-energy cluster-head election.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, Tick};
use crate::trust::TrustTable;

pub const DEFAULT_PERIOD_TE: Tick = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("no eligible cluster-head candidate at t={at}: every node is dead or detected")]
    NoEligibleHead { at: Tick },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyRecord {
    pub node_id: NodeId,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElectionResult {
    pub head: NodeId,
    pub term: u32,
    pub elected_at: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnergyTimerConfig {
    pub period_te: Tick,
}

impl EnergyTimerConfig {
    pub fn new(period_te: Tick) -> Option<Self> {
        (period_te > 0).then_some(EnergyTimerConfig { period_te })
    }
}

impl Default for EnergyTimerConfig {
    fn default() -> Self {
        EnergyTimerConfig {
            period_te: DEFAULT_PERIOD_TE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    Transmit,
    Receive,
    Overhear,
    IdleTick,
}

/// Per-event energy costs in abstract units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyCosts {
    #[serde(default = "EnergyCosts::default_tx")]
    pub c_tx: f64,
    #[serde(default = "EnergyCosts::default_rx")]
    pub c_rx: f64,
    #[serde(default = "EnergyCosts::default_oh")]
    pub c_oh: f64,
    #[serde(default)]
    pub c_idle: f64,
}

impl EnergyCosts {
    fn default_tx() -> f64 {
        1.0
    }
    fn default_rx() -> f64 {
        0.5
    }
    fn default_oh() -> f64 {
        0.75
    }

    pub fn cost(&self, activity: Activity) -> f64 {
        match activity {
            Activity::Transmit => self.c_tx,
            Activity::Receive => self.c_rx,
            Activity::Overhear => self.c_oh,
            Activity::IdleTick => self.c_idle,
        }
    }
}

impl Default for EnergyCosts {
    fn default() -> Self {
        EnergyCosts {
            c_tx: 1.0,
            c_rx: 0.5,
            c_oh: 0.75,
            c_idle: 0.0,
        }
    }
}

/// Energy left after `count` occurrences of `activity`, clamped at zero.
pub fn consume_energy(energy: f64, activity: Activity, costs: &EnergyCosts, count: u32) -> f64 {
    (energy - costs.cost(activity) * f64::from(count)).max(0.0)
}

/// Maximum-energy eligible node; ties go to the lowest id.
pub fn elect_head(
    records: &[EnergyRecord],
    excluded: &BTreeSet<NodeId>,
    term: u32,
    now: Tick,
) -> Result<ElectionResult, ClusterError> {
    let mut best: Option<&EnergyRecord> = None;
    for rec in records.iter().filter(|r| !excluded.contains(&r.node_id)) {
        best = match best {
            None => Some(rec),
            Some(b) if rec.energy > b.energy => Some(rec),
            Some(b) if rec.energy == b.energy && rec.node_id < b.node_id => Some(rec),
            keep => keep,
        };
    }
    best.map(|b| ElectionResult {
        head: b.node_id.clone(),
        term,
        elected_at: now,
    })
    .ok_or(ClusterError::NoEligibleHead { at: now })
}

/// What an energy-timer expiry asks the event loop to do.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectionTrigger {
    pub broadcasters: Vec<NodeId>,
    pub next_expiry: Tick,
}

/// One election as it happened, kept for invariant audits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElectionAudit {
    pub result: ElectionResult,
    pub candidates: Vec<EnergyRecord>,
    pub excluded: BTreeSet<NodeId>,
}

impl ElectionAudit {
    /// Independent re-check: the head is eligible, holds the maximum
    /// energy, and no eligible node with equal energy has a lower id.
    pub fn holds(&self) -> bool {
        let head = &self.result.head;
        if self.excluded.contains(head) {
            return false;
        }
        let eligible: Vec<&EnergyRecord> = self
            .candidates
            .iter()
            .filter(|c| !self.excluded.contains(&c.node_id))
            .collect();
        let Some(head_energy) = eligible.iter().find(|c| &c.node_id == head).map(|c| c.energy) else {
            return false;
        };
        eligible
            .iter()
            .all(|c| c.energy < head_energy || (c.energy == head_energy && &c.node_id >= head))
    }
}

/// Cluster state: current head, its term, the energy round being collected
/// and the trust table the head carries.
#[derive(Debug, Clone)]
pub struct ClusterManager {
    timer: EnergyTimerConfig,
    head: Option<NodeId>,
    term: u32,
    round: BTreeMap<NodeId, f64>,
    table: TrustTable,
    audits: Vec<ElectionAudit>,
}

impl ClusterManager {
    pub fn new(timer: EnergyTimerConfig, table: TrustTable) -> Self {
        ClusterManager {
            timer,
            head: None,
            term: 0,
            round: BTreeMap::new(),
            table,
            audits: Vec::new(),
        }
    }

    pub fn head(&self) -> Option<&NodeId> {
        self.head.as_ref()
    }

    pub fn term(&self) -> u32 {
        self.term
    }

    pub fn table(&self) -> &TrustTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut TrustTable {
        &mut self.table
    }

    pub fn audits(&self) -> &[ElectionAudit] {
        &self.audits
    }

    /// T_e expired at `now`: every live node broadcasts, then an election runs.
    pub fn on_energy_timer<'a, I>(&mut self, now: Tick, live: I) -> ElectionTrigger
    where
        I: IntoIterator<Item = &'a NodeId>,
    {
        self.round.clear();
        ElectionTrigger {
            broadcasters: live.into_iter().cloned().collect(),
            next_expiry: now + self.timer.period_te,
        }
    }

    pub fn on_energy_broadcast(&mut self, record: EnergyRecord) {
        self.round.insert(record.node_id, record.energy);
    }

    /// Elects from the records gathered this round and hands the table to the
    /// winner. Detected nodes are ineligible.
    pub fn hold_election(&mut self, now: Tick) -> Result<ElectionResult, ClusterError> {
        let candidates: Vec<EnergyRecord> = self
            .round
            .iter()
            .map(|(id, e)| EnergyRecord {
                node_id: id.clone(),
                energy: *e,
            })
            .collect();
        let excluded = self.table.detected().clone();
        let result = elect_head(&candidates, &excluded, self.term + 1, now)?;
        self.term = result.term;
        let previous = self.head.replace(result.head.clone());
        let placeholder = TrustTable::new(self.table.x(), self.table.ttf());
        let outgoing = std::mem::replace(&mut self.table, placeholder);
        self.table = handoff_trust_table(previous.as_ref(), &result.head, outgoing);
        self.round.clear();
        self.audits.push(ElectionAudit {
            result: result.clone(),
            candidates,
            excluded,
        });
        Ok(result)
    }
}

/// Moves the trust table from the outgoing head to the incoming one.
///
/// Streaks and the detected set carry over unchanged; a first election
/// simply adopts the initial table.
pub fn handoff_trust_table(_old_head: Option<&NodeId>, _new_head: &NodeId, table: TrustTable) -> TrustTable {
    table
}
