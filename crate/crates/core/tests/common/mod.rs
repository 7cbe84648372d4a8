#![allow(dead_code)]

use std::path::PathBuf;

use bhs_core::metrics::oracle_replay;
use bhs_core::{LogKind, ScenarioConfig, SimOutcome};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn load(name: &str) -> ScenarioConfig {
    let text = std::fs::read_to_string(scenario_path(name)).expect("scenario file");
    ScenarioConfig::from_toml_str(&text).expect("scenario parses")
}

/// The five-node scenario with `behavior` (an inline TOML table) on M.
pub fn five_with(behavior: &str, packets: u64, interval: u64) -> ScenarioConfig {
    let text = format!(
        r#"
seed = 1
source = "S"
destinations = ["D"]

[topology]
nodes = ["S", "M", "B", "C", "D"]
edges = [
  {{ a = "S", b = "M" }},
  {{ a = "S", b = "B" }},
  {{ a = "B", b = "C" }},
  {{ a = "C", b = "D" }},
  {{ a = "M", b = "C" }},
]

[workload]
packets = {packets}
interval = {interval}

[behaviors]
M = {behavior}
"#
    );
    ScenarioConfig::from_toml_str(&text).expect("five-node scenario parses")
}

pub fn count(out: &SimOutcome, kind: LogKind, subject: &str) -> usize {
    out.log
        .iter()
        .filter(|r| r.kind == kind && r.subject.as_ref().is_some_and(|s| s.as_str() == subject))
        .count()
}

pub fn broadcasts(out: &SimOutcome) -> Vec<String> {
    out.log
        .iter()
        .filter(|r| r.kind == LogKind::MaliciousBroadcast)
        .filter_map(|r| r.subject.as_ref().map(|s| s.to_string()))
        .collect()
}

/// Replays the log and compares against the engine's final trust table.
pub fn assert_oracle_agrees(out: &SimOutcome) {
    let table = &out.final_trust;
    let replay = oracle_replay(&out.log, table.x(), table.ttf());
    for e in table.entries() {
        let o = replay.state(&e.node_id);
        assert_eq!(o.streak, e.streak, "streak of {}", e.node_id);
        assert_eq!(o.tf.to_bits(), e.tf.to_bits(), "tf of {}", e.node_id);
        assert_eq!(o.detected, table.is_detected(&e.node_id), "verdict on {}", e.node_id);
    }
}

/// Checks the invariants every finished run must satisfy.
pub fn assert_run_invariants(out: &SimOutcome) {
    let r = &out.report;
    assert_eq!(r.packets_sent, r.packets_delivered + r.packets_lost_permanently);
    let s = &out.stats;
    assert_eq!(s.timers_armed, s.timers_canceled + s.timers_fired);
    assert_eq!(s.in_flight_at_end, 0);
    for w in out.log.windows(2) {
        assert!(w[0].time <= w[1].time, "log out of order at t={}", w[1].time);
    }
    for a in &out.elections {
        assert!(
            a.holds(),
            "election at t={} broke the max-energy rule",
            a.result.elected_at
        );
    }
    assert_oracle_agrees(out);
}
