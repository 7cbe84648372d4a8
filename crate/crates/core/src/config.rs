//! Scenario files: TOML text, dotted-key overrides, validation into a
//! ready-to-run [`Scenario`], and the canonical echo.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{BehaviorKind, BehaviorSpec};
use crate::cluster::{EnergyCosts, EnergyTimerConfig, DEFAULT_PERIOD_TE};
use crate::ids::{NodeId, Tick};
use crate::topology::{Link, Topology};
use crate::trust::{FaultTolerance, Threshold, DEFAULT_TTF};

pub const DEFAULT_X: f64 = 0.95;
pub const DEFAULT_DELAY_TR: Tick = 4;
pub const DEFAULT_MAX_RETRANSMISSIONS: u32 = 5;
pub const DEFAULT_INITIAL_ENERGY: f64 = 100_000.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::x")]
    pub x: f64,
    #[serde(default = "defaults::ttf")]
    pub ttf: f64,
    #[serde(default = "defaults::delay_tr")]
    pub delay_tr: Tick,
    #[serde(default = "defaults::period_te")]
    pub period_te: Tick,
    #[serde(default)]
    pub channel_loss_p: f64,
    #[serde(default = "defaults::max_retransmissions")]
    pub max_retransmissions: u32,
    pub source: NodeId,
    pub destinations: Vec<NodeId>,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub energy: EnergyConfig,
    #[serde(default)]
    pub behaviors: BTreeMap<NodeId, BehaviorSpec>,
}

mod defaults {
    use super::*;
    pub fn x() -> f64 {
        DEFAULT_X
    }
    pub fn ttf() -> f64 {
        DEFAULT_TTF
    }
    pub fn delay_tr() -> Tick {
        DEFAULT_DELAY_TR
    }
    pub fn period_te() -> Tick {
        DEFAULT_PERIOD_TE
    }
    pub fn max_retransmissions() -> u32 {
        DEFAULT_MAX_RETRANSMISSIONS
    }
    pub fn latency() -> Tick {
        1
    }
    pub fn interval() -> Tick {
        1
    }
    pub fn initial() -> f64 {
        DEFAULT_INITIAL_ENERGY
    }
    pub fn c_tx() -> f64 {
        1.0
    }
    pub fn c_rx() -> f64 {
        0.5
    }
    pub fn c_oh() -> f64 {
        0.75
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<EdgeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub a: NodeId,
    pub b: NodeId,
    #[serde(default = "defaults::latency")]
    pub latency: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    RandomConnected { n: usize, degree: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    #[serde(default)]
    pub packets: u64,
    #[serde(default = "defaults::interval")]
    pub interval: Tick,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            packets: 0,
            interval: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    #[serde(default = "defaults::initial")]
    pub initial: f64,
    #[serde(default = "defaults::c_tx")]
    pub c_tx: f64,
    #[serde(default = "defaults::c_rx")]
    pub c_rx: f64,
    #[serde(default = "defaults::c_oh")]
    pub c_oh: f64,
    #[serde(default)]
    pub c_idle: f64,
    /// Initial energy overrides for individual nodes.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_node: BTreeMap<NodeId, f64>,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            initial: DEFAULT_INITIAL_ENERGY,
            c_tx: 1.0,
            c_rx: 0.5,
            c_oh: 0.75,
            c_idle: 0.0,
            per_node: BTreeMap::new(),
        }
    }
}

/// Validated scenario with every default resolved and the topology built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub x: FaultTolerance,
    pub ttf: Threshold,
    pub delay_tr: Tick,
    pub energy_timer: EnergyTimerConfig,
    pub channel_loss_p: f64,
    pub max_retransmissions: u32,
    pub source: NodeId,
    pub destinations: Vec<NodeId>,
    pub topology: Topology,
    pub packets: u64,
    pub interval: Tick,
    pub costs: EnergyCosts,
    pub initial_energy: BTreeMap<NodeId, f64>,
    pub behaviors: BTreeMap<NodeId, BehaviorSpec>,
    pub warnings: Vec<String>,
}

impl Scenario {
    pub fn behavior(&self, id: &NodeId) -> &BehaviorSpec {
        self.behaviors.get(id).expect("every node has a resolved behavior")
    }

    pub fn attackers(&self) -> BTreeSet<NodeId> {
        self.behaviors
            .iter()
            .filter(|(_, b)| b.is_attacker())
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// Sets `path` (dot separated) inside a TOML document.
///
/// The raw value is read as a TOML literal when it parses as one and as a
/// bare string otherwise, so `ttf=12.5`, `source=S` and
/// `destinations=["D","E"]` all work.
pub fn apply_override(doc: &mut toml::Table, path: &str, raw: &str) -> Result<(), ConfigError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(format!("{path}={raw}")));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut cur = doc;
    for k in parents {
        let entry = cur
            .entry((*k).to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(format!("{path}={raw}: `{k}` is not a section")))?;
    }
    cur.insert((*last).to_owned(), value);
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| ConfigError::Override(s.to_owned()))
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    /// Fully defaulted form with every behavior flag spelled out.
    pub fn canonical(&self) -> ScenarioConfig {
        let mut c = self.clone();
        for b in c.behaviors.values_mut() {
            *b = b.normalized();
        }
        c
    }

    pub fn to_canonical_toml(&self) -> String {
        toml::to_string(&self.canonical()).expect("scenario serializes")
    }

    /// Checks every constraint and reports all violations together.
    pub fn validate(&self) -> Result<Scenario, ConfigError> {
        let mut errs: Vec<String> = Vec::new();
        let mut warnings = Vec::new();

        let x = FaultTolerance::new(self.x)
            .map_err(|e| errs.push(format!("x: {e}")))
            .ok();
        let ttf = Threshold::new(self.ttf)
            .map_err(|e| errs.push(format!("ttf: {e}")))
            .ok();
        let energy_timer = EnergyTimerConfig::new(self.period_te);
        if energy_timer.is_none() {
            errs.push("period_te: must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.channel_loss_p) {
            errs.push(format!(
                "channel_loss_p: must lie in [0, 1], got {}",
                self.channel_loss_p
            ));
        }

        let topology = self.build_topology(&mut errs);
        if let Some(t) = &topology {
            if !t.is_connected() {
                warnings.push("topology is not connected".to_owned());
            }
            let max_lat = t.max_latency();
            if self.delay_tr <= 2 * max_lat {
                errs.push(format!(
                    "delay_tr: must exceed a received-plus-forwarded hop pair ({} ticks at max link latency {max_lat}), got {}",
                    2 * max_lat,
                    self.delay_tr
                ));
            }
        }
        let known = |id: &NodeId| topology.as_ref().is_none_or(|t| t.contains(id));

        if !known(&self.source) {
            errs.push(format!("source: unknown node {}", self.source));
        }
        if self.destinations.is_empty() {
            errs.push("destinations: at least one destination is required".into());
        }
        for d in &self.destinations {
            if !known(d) {
                errs.push(format!("destinations: unknown node {d}"));
            }
            if d == &self.source {
                errs.push(format!("destinations: {d} is also the source"));
            }
        }

        for (id, b) in &self.behaviors {
            let path = format!("behaviors.{id}");
            if !known(id) {
                errs.push(format!("{path}: unknown node {id}"));
            }
            errs.extend(b.violations(&path));
            let mut spec = b;
            loop {
                match &spec.kind {
                    BehaviorKind::CooperativeBlackHole { partner_ids } => {
                        for p in partner_ids {
                            if p == id {
                                errs.push(format!("{path}.partner_ids: a node cannot partner itself"));
                            } else if !known(p) {
                                errs.push(format!("{path}.partner_ids: unknown node {p}"));
                            }
                        }
                        break;
                    }
                    BehaviorKind::Turncoat { then, .. } => spec = then,
                    _ => break,
                }
            }
        }

        let e = &self.energy;
        for (name, v) in [
            ("c_tx", e.c_tx),
            ("c_rx", e.c_rx),
            ("c_oh", e.c_oh),
            ("c_idle", e.c_idle),
        ] {
            if v.is_nan() || v < 0.0 {
                errs.push(format!("energy.{name}: must be non-negative, got {v}"));
            }
        }
        if e.initial.is_nan() || e.initial <= 0.0 {
            errs.push(format!("energy.initial: must be positive, got {}", e.initial));
        }
        for (id, v) in &e.per_node {
            if !known(id) {
                errs.push(format!("energy.per_node: unknown node {id}"));
            }
            if v.is_nan() || *v <= 0.0 {
                errs.push(format!("energy.per_node.{id}: must be positive, got {v}"));
            }
        }
        if self.workload.packets > 0 && self.workload.interval == 0 {
            errs.push("workload.interval: must be positive".into());
        }

        if !errs.is_empty() {
            return Err(ConfigError::Invalid(errs));
        }
        let topology = topology.expect("no errors implies a topology");
        let behaviors = topology
            .nodes()
            .map(|id| (id.clone(), self.behaviors.get(id).cloned().unwrap_or_default()))
            .collect();
        let initial_energy = topology
            .nodes()
            .map(|id| (id.clone(), e.per_node.get(id).copied().unwrap_or(e.initial)))
            .collect();
        Ok(Scenario {
            seed: self.seed,
            x: x.expect("validated"),
            ttf: ttf.expect("validated"),
            delay_tr: self.delay_tr,
            energy_timer: energy_timer.expect("validated"),
            channel_loss_p: self.channel_loss_p,
            max_retransmissions: self.max_retransmissions,
            source: self.source.clone(),
            destinations: self.destinations.clone(),
            topology,
            packets: self.workload.packets,
            interval: self.workload.interval,
            costs: EnergyCosts {
                c_tx: e.c_tx,
                c_rx: e.c_rx,
                c_oh: e.c_oh,
                c_idle: e.c_idle,
            },
            initial_energy,
            behaviors,
            warnings,
        })
    }

    fn build_topology(&self, errs: &mut Vec<String>) -> Option<Topology> {
        let t = &self.topology;
        match (&t.generator, t.nodes.is_empty()) {
            (Some(_), false) => {
                errs.push("topology: give either `nodes`/`edges` or `generator`, not both".into());
                None
            }
            (None, true) => {
                errs.push("topology.nodes: no nodes listed and no generator given".into());
                None
            }
            (Some(GeneratorConfig::RandomConnected { n, degree, seed }), true) => {
                if !t.edges.is_empty() {
                    errs.push("topology.edges: not allowed together with a generator".into());
                }
                if *n < 2 {
                    errs.push("topology.generator.n: needs at least 2 nodes".into());
                    return None;
                }
                Some(Topology::random_connected(*n, *degree, *seed))
            }
            (None, false) => {
                let links = t.edges.iter().map(|e| Link {
                    a: e.a.clone(),
                    b: e.b.clone(),
                    latency: e.latency,
                });
                Topology::new(t.nodes.iter().cloned(), links)
                    .map_err(|p| errs.extend(p))
                    .ok()
            }
        }
    }
}
