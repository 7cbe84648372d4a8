//! Streak-counter trust table kept by the cluster head.
//!
//! Every tracked node carries a count of consecutive packets it failed to
//! forward. Its trust factor is `100 * x^streak`, so trust collapses
//! exponentially while a node keeps dropping and snaps back to 100 the
//! moment it is seen forwarding. A node whose trust factor falls to or
//! below the threshold is declared malicious and frozen.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ids::NodeId;

/// Trust factor of a node nobody has seen drop anything.
pub const FULL_TRUST: f64 = 100.0;

/// Default threshold trust factor.
pub const DEFAULT_TTF: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrustError {
    #[error("fault tolerance x must lie strictly between 0 and 1, got {0}")]
    InvalidFaultTolerance(f64),
    #[error("threshold trust factor must lie strictly between 0 and 100, got {0}")]
    InvalidThreshold(f64),
    #[error("node {0} is not tracked by the trust table")]
    UnknownNode(NodeId),
    #[error("node {0} is already tracked by the trust table")]
    DuplicateNode(NodeId),
    #[error("node {0} was already declared malicious and accepts no further updates")]
    AlreadyDetected(NodeId),
}

/// Network fault tolerance `x`, the per-drop decay base.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct FaultTolerance(f64);

impl FaultTolerance {
    pub fn new(x: f64) -> Result<Self, TrustError> {
        if x > 0.0 && x < 1.0 {
            Ok(FaultTolerance(x))
        } else {
            Err(TrustError::InvalidFaultTolerance(x))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Threshold trust factor in (0, 100).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(ttf: f64) -> Result<Self, TrustError> {
        if ttf > 0.0 && ttf < FULL_TRUST {
            Ok(Threshold(ttf))
        } else {
            Err(TrustError::InvalidThreshold(ttf))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold(DEFAULT_TTF)
    }
}

/// Trust factor after `n` consecutive drops: `100 * x^n`.
///
/// The power is built by repeated multiplication so that every caller
/// (engine, detection-count helper, log replay) lands on the same bits.
pub fn compute_tf(x: FaultTolerance, n: u32) -> f64 {
    let mut power = 1.0_f64;
    for _ in 0..n {
        power *= x.0;
    }
    FULL_TRUST * power
}

/// Smallest streak at which a continuously dropping node is declared malicious.
pub fn drops_to_detection(x: FaultTolerance, ttf: Threshold) -> u32 {
    let mut power = 1.0_f64;
    let mut n = 0_u32;
    loop {
        power *= x.0;
        n += 1;
        if FULL_TRUST * power <= ttf.0 {
            return n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustEntry {
    pub node_id: NodeId,
    pub streak: u32,
    pub tf: f64,
}

impl TrustEntry {
    fn fresh(node_id: NodeId) -> Self {
        TrustEntry {
            node_id,
            streak: 0,
            tf: FULL_TRUST,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Benign,
    Malicious,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub node_id: NodeId,
    pub status: Status,
    pub tf_at_verdict: f64,
    pub streak_at_verdict: u32,
}

impl Verdict {
    pub fn is_malicious(&self) -> bool {
        self.status == Status::Malicious
    }
}

/// Per-cluster trust table. `x` and `ttf` are fixed for its lifetime.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustTable {
    entries: BTreeMap<NodeId, TrustEntry>,
    x: FaultTolerance,
    ttf: Threshold,
    detected: BTreeSet<NodeId>,
}

impl TrustTable {
    pub fn new(x: FaultTolerance, ttf: Threshold) -> Self {
        TrustTable {
            entries: BTreeMap::new(),
            x,
            ttf,
            detected: BTreeSet::new(),
        }
    }

    /// Table with a fresh entry for each id.
    pub fn with_nodes<I>(x: FaultTolerance, ttf: Threshold, ids: I) -> Result<Self, TrustError>
    where
        I: IntoIterator<Item = NodeId>,
    {
        let mut table = TrustTable::new(x, ttf);
        for id in ids {
            table.register_node(id)?;
        }
        Ok(table)
    }

    pub fn x(&self) -> FaultTolerance {
        self.x
    }

    pub fn ttf(&self) -> Threshold {
        self.ttf
    }

    pub fn register_node(&mut self, id: NodeId) -> Result<&TrustEntry, TrustError> {
        if self.entries.contains_key(&id) {
            return Err(TrustError::DuplicateNode(id));
        }
        Ok(self.entries.entry(id.clone()).or_insert(TrustEntry::fresh(id)))
    }

    pub fn deregister_node(&mut self, id: &NodeId) -> Result<TrustEntry, TrustError> {
        let entry = self
            .entries
            .remove(id)
            .ok_or_else(|| TrustError::UnknownNode(id.clone()))?;
        self.detected.remove(id);
        Ok(entry)
    }

    pub fn lookup(&self, id: &NodeId) -> Option<&TrustEntry> {
        self.entries.get(id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &TrustEntry> {
        self.entries.values()
    }

    pub fn detected(&self) -> &BTreeSet<NodeId> {
        &self.detected
    }

    pub fn is_detected(&self, id: &NodeId) -> bool {
        self.detected.contains(id)
    }

    fn live_entry(&mut self, id: &NodeId) -> Result<&mut TrustEntry, TrustError> {
        if self.detected.contains(id) {
            return Err(TrustError::AlreadyDetected(id.clone()));
        }
        self.entries
            .get_mut(id)
            .ok_or_else(|| TrustError::UnknownNode(id.clone()))
    }

    /// The node failed to forward within the deadline.
    pub fn record_drop(&mut self, id: &NodeId) -> Result<Verdict, TrustError> {
        let x = self.x;
        let ttf = self.ttf.0;
        let entry = self.live_entry(id)?;
        entry.streak += 1;
        entry.tf = compute_tf(x, entry.streak);
        let status = if entry.tf <= ttf {
            Status::Malicious
        } else {
            Status::Benign
        };
        let verdict = Verdict {
            node_id: id.clone(),
            status,
            tf_at_verdict: entry.tf,
            streak_at_verdict: entry.streak,
        };
        if verdict.is_malicious() {
            self.detected.insert(id.clone());
        }
        Ok(verdict)
    }

    /// The node was overheard forwarding; its streak resets unconditionally.
    pub fn record_forward(&mut self, id: &NodeId) -> Result<&TrustEntry, TrustError> {
        let entry = self.live_entry(id)?;
        entry.streak = 0;
        entry.tf = FULL_TRUST;
        Ok(entry)
    }
}
