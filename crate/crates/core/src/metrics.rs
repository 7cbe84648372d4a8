//! Event log, run counters and the log-replay trust oracle.
//!
//! The log is line oriented: `time<TAB>kind<TAB>subject<TAB>seq<TAB>detail`,
//! with `-` standing in for an absent subject or sequence number.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, Tick};
use crate::trust::{FaultTolerance, Threshold, FULL_TRUST};

macro_rules! log_kinds {
    ($($name:ident),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum LogKind { $($name),* }

        impl LogKind {
            pub const ALL: &'static [LogKind] = &[$(LogKind::$name),*];

            pub fn as_str(self) -> &'static str {
                match self { $(LogKind::$name => stringify!($name)),* }
            }
        }

        impl FromStr for LogKind {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s { $(stringify!($name) => Ok(LogKind::$name),)* _ => Err(()) }
            }
        }
    };
}

log_kinds!(
    EnergyTimerExpiry,
    EnergyBroadcast,
    Election,
    RouteRequest,
    RouteReply,
    Originate,
    PacketSend,
    PacketReceive,
    ChannelLoss,
    Overhear,
    TimerArm,
    TimerCancel,
    ForwardTimerExpiry,
    Drop,
    Discard,
    Delivered,
    AckDelivery,
    RtrDelivery,
    Retransmit,
    LostPermanently,
    MaliciousBroadcast,
    NodeDeath,
    Warning,
);

impl fmt::Display for LogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Overhear detail prefix marking a forward that satisfied a pending timer.
pub const OVERHEAR_FORWARD: &str = "forward";
/// Timer-expiry detail for a relay that failed to forward.
pub const TIMEOUT_RELAY: &str = "relay";
/// Timer-expiry detail for a packet that never reached its destination.
pub const TIMEOUT_FINAL_HOP: &str = "final-hop";

#[derive(Debug, Clone, PartialEq)]
pub struct EventLogRecord {
    pub time: Tick,
    pub kind: LogKind,
    pub subject: Option<NodeId>,
    pub seq: Option<u64>,
    pub detail: String,
}

impl fmt::Display for EventLogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t", self.time, self.kind)?;
        match &self.subject {
            Some(s) => write!(f, "{s}\t")?,
            None => f.write_str("-\t")?,
        }
        match self.seq {
            Some(s) => write!(f, "{s}\t")?,
            None => f.write_str("-\t")?,
        }
        f.write_str(&self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event log line {line}: {reason}")]
pub struct LogParseError {
    pub line: usize,
    pub reason: String,
}

impl EventLogRecord {
    fn parse(line_no: usize, line: &str) -> Result<Self, LogParseError> {
        let err = |reason: String| LogParseError { line: line_no, reason };
        let mut fields = line.splitn(5, '\t');
        let mut next = |name: &str| fields.next().ok_or_else(|| err(format!("missing field `{name}`")));
        let time = next("time")?;
        let kind = next("kind")?;
        let subject = next("subject")?;
        let seq = next("seq")?;
        let detail = next("detail")?;
        Ok(EventLogRecord {
            time: time.parse().map_err(|_| err(format!("bad time `{time}`")))?,
            kind: kind.parse().map_err(|_| err(format!("unknown kind `{kind}`")))?,
            subject: (subject != "-").then(|| NodeId::from(subject)),
            seq: match seq {
                "-" => None,
                s => Some(s.parse().map_err(|_| err(format!("bad seq `{s}`")))?),
            },
            detail: detail.to_owned(),
        })
    }
}

/// Renders a log in the line format, LF terminated.
pub fn render_log(records: &[EventLogRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 48);
    for r in records {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_log(text: &str) -> Result<Vec<EventLogRecord>, LogParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| EventLogRecord::parse(i + 1, l))
        .collect()
}

/// Run summary. `drops_before_detection` counts the forward-timer expiries
/// the head attributed to each attacker before it was broadcast, i.e. the
/// drops that built its streak; drops still in flight at exclusion are
/// visible only as `Drop` records in the log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub packets_sent: u64,
    pub packets_delivered: u64,
    pub packets_lost_permanently: u64,
    pub retransmissions: u64,
    pub drops_before_detection: BTreeMap<NodeId, u64>,
    pub detection_time: BTreeMap<NodeId, Tick>,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub rtr_count: u64,
    pub ack_count: u64,
    pub elections_held: u64,
    pub final_energy: BTreeMap<NodeId, f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Scalar counters in a fixed column order.
    pub fn counters(&self) -> [(&'static str, u64); 9] {
        [
            ("packets_sent", self.packets_sent),
            ("packets_delivered", self.packets_delivered),
            ("packets_lost_permanently", self.packets_lost_permanently),
            ("retransmissions", self.retransmissions),
            ("false_positives", self.false_positives),
            ("false_negatives", self.false_negatives),
            ("rtr_count", self.rtr_count),
            ("ack_count", self.ack_count),
            ("elections_held", self.elections_held),
        ]
    }
}

/// Shortest round-trip rendering of a float.
pub fn format_f64(v: f64) -> String {
    let mut buf = ryu::Buffer::new();
    buf.format(v).to_owned()
}

/// One CSV row per run: parameter columns, scalar counters, then the
/// per-node maps flattened to `field.node` columns (union over all runs).
pub fn reports_to_csv(param_names: &[&str], rows: &[(Vec<String>, MetricsReport)]) -> String {
    let mut drops = BTreeSet::new();
    let mut detect = BTreeSet::new();
    let mut energy = BTreeSet::new();
    for (_, r) in rows {
        drops.extend(r.drops_before_detection.keys().cloned());
        detect.extend(r.detection_time.keys().cloned());
        energy.extend(r.final_energy.keys().cloned());
    }
    let mut header: Vec<String> = param_names.iter().map(|s| s.to_string()).collect();
    header.extend(MetricsReport::default().counters().iter().map(|(n, _)| n.to_string()));
    header.extend(drops.iter().map(|n| format!("drops_before_detection.{n}")));
    header.extend(detect.iter().map(|n| format!("detection_time.{n}")));
    header.extend(energy.iter().map(|n| format!("final_energy.{n}")));

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for (params, r) in rows {
        let mut rec: Vec<String> = params.clone();
        rec.extend(r.counters().iter().map(|(_, v)| v.to_string()));
        rec.extend(
            drops
                .iter()
                .map(|n| r.drops_before_detection.get(n).map(u64::to_string).unwrap_or_default()),
        );
        rec.extend(
            detect
                .iter()
                .map(|n| r.detection_time.get(n).map(u64::to_string).unwrap_or_default()),
        );
        rec.extend(
            energy
                .iter()
                .map(|n| r.final_energy.get(n).copied().map(format_f64).unwrap_or_default()),
        );
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Live collector: every record is appended to the log and folded into
/// the counters in the same step.
#[derive(Debug, Clone)]
pub struct Metrics {
    attackers: BTreeSet<NodeId>,
    log: Vec<EventLogRecord>,
    report: MetricsReport,
}

impl Metrics {
    pub fn new(attackers: BTreeSet<NodeId>) -> Self {
        let report = MetricsReport {
            drops_before_detection: attackers.iter().map(|a| (a.clone(), 0)).collect(),
            ..MetricsReport::default()
        };
        Metrics {
            attackers,
            log: Vec::new(),
            report,
        }
    }

    pub fn record(&mut self, record: EventLogRecord) {
        debug_assert!(self.log.last().is_none_or(|l| l.time <= record.time));
        let r = &mut self.report;
        match record.kind {
            LogKind::Originate => r.packets_sent += 1,
            LogKind::Delivered => r.packets_delivered += 1,
            LogKind::LostPermanently => r.packets_lost_permanently += 1,
            LogKind::Retransmit => r.retransmissions += 1,
            LogKind::RtrDelivery => r.rtr_count += 1,
            LogKind::AckDelivery => r.ack_count += 1,
            LogKind::Election => r.elections_held += 1,
            LogKind::ForwardTimerExpiry if record.detail == TIMEOUT_RELAY => {
                if let Some(s) = &record.subject {
                    if !r.detection_time.contains_key(s) {
                        if let Some(c) = r.drops_before_detection.get_mut(s) {
                            *c += 1;
                        }
                    }
                }
            }
            LogKind::MaliciousBroadcast => {
                if let Some(s) = &record.subject {
                    if self.attackers.contains(s) {
                        r.detection_time.insert(s.clone(), record.time);
                    } else {
                        r.false_positives += 1;
                    }
                }
            }
            _ => {}
        }
        self.log.push(record);
    }

    pub fn log(&self) -> &[EventLogRecord] {
        &self.log
    }

    pub fn report(&self) -> &MetricsReport {
        &self.report
    }

    /// Closes the run: fills final energies and the false-negative count.
    pub fn finish(mut self, final_energy: BTreeMap<NodeId, f64>) -> (MetricsReport, Vec<EventLogRecord>) {
        self.report.final_energy = final_energy;
        self.report.false_negatives = self
            .attackers
            .iter()
            .filter(|a| !self.report.detection_time.contains_key(*a))
            .count() as u64;
        (self.report, self.log)
    }
}

/// Recomputes every log-derived counter from a finished log.
pub fn recount_from_log(log: &[EventLogRecord], attackers: &BTreeSet<NodeId>) -> MetricsReport {
    let count = |k: LogKind| log.iter().filter(|r| r.kind == k).count() as u64;
    let mut detection_time = BTreeMap::new();
    let mut false_positives = 0;
    for r in log.iter().filter(|r| r.kind == LogKind::MaliciousBroadcast) {
        let s = r.subject.clone().expect("broadcast names its offender");
        if attackers.contains(&s) {
            detection_time.insert(s, r.time);
        } else {
            false_positives += 1;
        }
    }
    let drops_before_detection = attackers
        .iter()
        .map(|a| {
            let n = log
                .iter()
                .take_while(|r| !(r.kind == LogKind::MaliciousBroadcast && r.subject.as_ref() == Some(a)))
                .filter(|r| {
                    r.kind == LogKind::ForwardTimerExpiry && r.detail == TIMEOUT_RELAY && r.subject.as_ref() == Some(a)
                })
                .count() as u64;
            (a.clone(), n)
        })
        .collect();
    let false_negatives = attackers.iter().filter(|a| !detection_time.contains_key(*a)).count() as u64;
    MetricsReport {
        packets_sent: count(LogKind::Originate),
        packets_delivered: count(LogKind::Delivered),
        packets_lost_permanently: count(LogKind::LostPermanently),
        retransmissions: count(LogKind::Retransmit),
        drops_before_detection,
        detection_time,
        false_positives,
        false_negatives,
        rtr_count: count(LogKind::RtrDelivery),
        ack_count: count(LogKind::AckDelivery),
        elections_held: count(LogKind::Election),
        final_energy: BTreeMap::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleState {
    pub streak: u32,
    pub tf: f64,
    pub detected: bool,
}

impl Default for OracleState {
    fn default() -> Self {
        OracleState {
            streak: 0,
            tf: FULL_TRUST,
            detected: false,
        }
    }
}

/// Final trust state per node, rebuilt from raw log records alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReplay {
    pub nodes: BTreeMap<NodeId, OracleState>,
}

impl OracleReplay {
    pub fn state(&self, id: &NodeId) -> OracleState {
        self.nodes.get(id).copied().unwrap_or_default()
    }
}

/// Second implementation of the trust law, driven by the event log.
///
/// Overheard forwards reset a node's run; relay timer expiries extend
/// it. The trust factor is rebuilt from the run length on every timeout.
pub fn oracle_replay(log: &[EventLogRecord], x: FaultTolerance, ttf: Threshold) -> OracleReplay {
    let mut nodes: BTreeMap<NodeId, OracleState> = BTreeMap::new();
    for r in log {
        let Some(subject) = &r.subject else { continue };
        let is_reset = r.kind == LogKind::Overhear && r.detail.starts_with(OVERHEAR_FORWARD);
        let is_drop = r.kind == LogKind::ForwardTimerExpiry && r.detail == TIMEOUT_RELAY;
        if !is_reset && !is_drop {
            continue;
        }
        let st = nodes.entry(subject.clone()).or_default();
        if st.detected {
            continue;
        }
        if is_reset {
            st.streak = 0;
            st.tf = FULL_TRUST;
        } else {
            st.streak += 1;
            let mut p = 1.0_f64;
            for _ in 0..st.streak {
                p *= x.get();
            }
            st.tf = FULL_TRUST * p;
            st.detected = st.tf <= ttf.get();
        }
    }
    OracleReplay { nodes }
}

/// Parses a log and replays it.
pub fn oracle_replay_text(text: &str, x: FaultTolerance, ttf: Threshold) -> Result<OracleReplay, LogParseError> {
    Ok(oracle_replay(&parse_log(text)?, x, ttf))
}
