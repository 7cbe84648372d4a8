//! Per-node forwarding behavior and route-discovery honesty.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, Tick};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorKind {
    Honest,
    BlackHole,
    GrayHole {
        drop_probability: f64,
    },
    /// Deterministic cycle: `drop_run` drops followed by `forward_run` forwards.
    OnOff {
        drop_run: u32,
        forward_run: u32,
    },
    /// Honest until `activation_time`, then behaves as `then`.
    Turncoat {
        activation_time: Tick,
        then: Box<BehaviorSpec>,
    },
    CooperativeBlackHole {
        partner_ids: BTreeSet<NodeId>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    #[serde(flatten)]
    pub kind: BehaviorKind,
    /// Unset means the kind's default: black holes lie, everyone else does not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advertise_false_route: Option<bool>,
}

impl Default for BehaviorSpec {
    fn default() -> Self {
        BehaviorSpec::honest()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Forward,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrepStrategy {
    /// Answer at once with a fabricated one-hop route to the destination.
    ImmediateFalseReply,
    HonestReply,
}

impl BehaviorSpec {
    pub fn new(kind: BehaviorKind) -> Self {
        BehaviorSpec {
            kind,
            advertise_false_route: None,
        }
    }

    pub fn honest() -> Self {
        BehaviorSpec::new(BehaviorKind::Honest)
    }

    pub fn black_hole() -> Self {
        BehaviorSpec::new(BehaviorKind::BlackHole)
    }

    pub fn gray_hole(drop_probability: f64) -> Self {
        BehaviorSpec::new(BehaviorKind::GrayHole { drop_probability })
    }

    pub fn on_off(drop_run: u32, forward_run: u32) -> Self {
        BehaviorSpec::new(BehaviorKind::OnOff { drop_run, forward_run })
    }

    pub fn turncoat(activation_time: Tick, then: BehaviorSpec) -> Self {
        BehaviorSpec::new(BehaviorKind::Turncoat {
            activation_time,
            then: Box::new(then),
        })
    }

    pub fn cooperative<I: IntoIterator<Item = NodeId>>(partners: I) -> Self {
        BehaviorSpec::new(BehaviorKind::CooperativeBlackHole {
            partner_ids: partners.into_iter().collect(),
        })
    }

    pub fn with_false_route(mut self, advertise: bool) -> Self {
        self.advertise_false_route = Some(advertise);
        self
    }

    pub fn advertises_false_route(&self) -> bool {
        self.advertise_false_route.unwrap_or(matches!(
            self.kind,
            BehaviorKind::BlackHole | BehaviorKind::CooperativeBlackHole { .. }
        ))
    }

    /// Same behavior with every defaulted flag written out.
    pub fn normalized(&self) -> BehaviorSpec {
        let kind = match &self.kind {
            BehaviorKind::Turncoat { activation_time, then } => BehaviorKind::Turncoat {
                activation_time: *activation_time,
                then: Box::new(then.normalized()),
            },
            other => other.clone(),
        };
        BehaviorSpec {
            kind,
            advertise_false_route: Some(self.advertises_false_route()),
        }
    }

    /// Whether this node counts as an attacker for false-positive and
    /// false-negative accounting.
    pub fn is_attacker(&self) -> bool {
        match &self.kind {
            BehaviorKind::Honest => false,
            BehaviorKind::GrayHole { drop_probability } => *drop_probability > 0.0,
            BehaviorKind::Turncoat { then, .. } => then.is_attacker(),
            _ => true,
        }
    }

    /// Constraint violations, each prefixed with `path`.
    pub fn violations(&self, path: &str) -> Vec<String> {
        let mut out = Vec::new();
        match &self.kind {
            BehaviorKind::Honest => {
                if self.advertise_false_route == Some(true) {
                    out.push(format!("{path}: honest nodes cannot advertise false routes"));
                }
            }
            BehaviorKind::GrayHole { drop_probability } => {
                if !(0.0..=1.0).contains(drop_probability) {
                    out.push(format!(
                        "{path}.drop_probability: must lie in [0, 1], got {drop_probability}"
                    ));
                }
            }
            BehaviorKind::OnOff { drop_run, forward_run } => {
                if *drop_run == 0 {
                    out.push(format!("{path}.drop_run: must be positive"));
                }
                if *forward_run == 0 {
                    out.push(format!("{path}.forward_run: must be positive"));
                }
            }
            BehaviorKind::Turncoat { then, .. } => {
                if self.advertise_false_route.is_some() {
                    out.push(format!(
                        "{path}.advertise_false_route: set it on `then`, which governs after activation"
                    ));
                }
                out.extend(then.violations(&format!("{path}.then")));
            }
            BehaviorKind::BlackHole | BehaviorKind::CooperativeBlackHole { .. } => {}
        }
        out
    }
}

/// Mutable per-node decision state.
#[derive(Debug, Clone)]
pub struct AdversaryState {
    cycle_position: u64,
    rng: ChaCha8Rng,
}

impl AdversaryState {
    /// State whose random stream depends only on the scenario seed and the node id.
    pub fn for_node(scenario_seed: u64, node: &NodeId) -> Self {
        AdversaryState {
            cycle_position: 0,
            rng: rng::stream(scenario_seed, &format!("node:{node}")),
        }
    }
}

pub fn decide_action(spec: &BehaviorSpec, state: &mut AdversaryState, now: Tick) -> Action {
    match &spec.kind {
        BehaviorKind::Honest => Action::Forward,
        BehaviorKind::BlackHole | BehaviorKind::CooperativeBlackHole { .. } => Action::Drop,
        BehaviorKind::GrayHole { drop_probability } => {
            if state.rng.gen::<f64>() < *drop_probability {
                Action::Drop
            } else {
                Action::Forward
            }
        }
        BehaviorKind::OnOff { drop_run, forward_run } => {
            let period = u64::from(*drop_run) + u64::from(*forward_run);
            let pos = state.cycle_position % period;
            state.cycle_position += 1;
            if pos < u64::from(*drop_run) {
                Action::Drop
            } else {
                Action::Forward
            }
        }
        BehaviorKind::Turncoat { activation_time, then } => {
            if now < *activation_time {
                Action::Forward
            } else {
                decide_action(then, state, now)
            }
        }
    }
}

pub fn rrep_strategy(spec: &BehaviorSpec, now: Tick) -> RrepStrategy {
    match &spec.kind {
        BehaviorKind::Turncoat { activation_time, then } => {
            if now < *activation_time {
                RrepStrategy::HonestReply
            } else {
                rrep_strategy(then, now)
            }
        }
        _ if spec.advertises_false_route() => RrepStrategy::ImmediateFalseReply,
        _ => RrepStrategy::HonestReply,
    }
}

/// Partners a lying node claims to reach the destination through.
pub fn vouching_partners(spec: &BehaviorSpec, now: Tick) -> Option<&BTreeSet<NodeId>> {
    match &spec.kind {
        BehaviorKind::CooperativeBlackHole { partner_ids } => Some(partner_ids),
        BehaviorKind::Turncoat { activation_time, then } if now >= *activation_time => vouching_partners(then, now),
        _ => None,
    }
}
