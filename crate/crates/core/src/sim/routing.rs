//! On-demand route discovery and per-node next-hop tables.
//!
//! A discovery floods a request from the origin. The destination answers
//! along the first-arrival path after one tick of processing. A node that
//! lies answers the instant the request reaches it, claiming the
//! destination one hop away (or two, through a vouching partner), so its
//! reply reaches the origin first whenever it sits at least as close.

use std::collections::{BTreeMap, BTreeSet};

use crate::adversary::{rrep_strategy, vouching_partners, BehaviorSpec, RrepStrategy};
use crate::ids::{NodeId, Tick};
use crate::topology::Topology;

/// Processing delay an honest destination adds before replying.
pub const HONEST_REPLY_DELAY: Tick = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteReply {
    pub replier: NodeId,
    /// Nodes the data will traverse, starting at the origin.
    pub path: Vec<NodeId>,
    pub claimed_hops: usize,
    pub arrival: Tick,
    pub is_false: bool,
}

impl RouteReply {
    pub fn next_hop(&self) -> &NodeId {
        &self.path[1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discovery {
    pub origin: NodeId,
    pub destination: NodeId,
    /// Every reply the origin received, in arrival order.
    pub replies: Vec<RouteReply>,
}

impl Discovery {
    /// The reply the origin adopts: earliest arrival, then fewest claimed
    /// hops, then lowest replier id.
    pub fn chosen(&self) -> Option<&RouteReply> {
        self.replies.first()
    }
}

pub fn discover_route<U>(
    origin: &NodeId,
    destination: &NodeId,
    topology: &Topology,
    behaviors: &BTreeMap<NodeId, BehaviorSpec>,
    usable: U,
    now: Tick,
) -> Discovery
where
    U: Fn(&NodeId) -> bool,
{
    let lies = |n: &NodeId| {
        n != origin
            && n != destination
            && behaviors
                .get(n)
                .is_some_and(|b| rrep_strategy(b, now) == RrepStrategy::ImmediateFalseReply)
    };
    let liars: BTreeSet<NodeId> = topology.nodes().filter(|n| usable(n) && lies(n)).cloned().collect();
    let flood = topology.flood(origin, &usable, |n| n != destination && !liars.contains(n));

    let mut replies = Vec::new();
    if let Some(p) = flood.get(destination) {
        replies.push(RouteReply {
            replier: destination.clone(),
            path: p.nodes.clone(),
            claimed_hops: p.hops(),
            arrival: 2 * p.latency + HONEST_REPLY_DELAY,
            is_false: false,
        });
    }
    for liar in &liars {
        let Some(p) = flood.get(liar) else { continue };
        let mut path = p.nodes.clone();
        let mut claimed = p.hops() + 1;
        let partner = behaviors
            .get(liar)
            .and_then(|b| vouching_partners(b, now))
            .and_then(|ps| {
                ps.iter()
                    .find(|q| *q != origin && !path.contains(q) && usable(q) && topology.latency(liar, q).is_some())
            });
        if let Some(q) = partner {
            path.push(q.clone());
            claimed += 1;
        }
        replies.push(RouteReply {
            replier: liar.clone(),
            path,
            claimed_hops: claimed,
            arrival: 2 * p.latency,
            is_false: true,
        });
    }
    replies.sort_by(|a, b| (a.arrival, a.claimed_hops, &a.replier).cmp(&(b.arrival, b.claimed_hops, &b.replier)));
    Discovery {
        origin: origin.clone(),
        destination: destination.clone(),
        replies,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteEntry {
    pub next_hop: NodeId,
    /// Full path of the discovery that installed this entry.
    pub via: Vec<NodeId>,
}

/// Next-hop entries keyed by (node, destination).
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    entries: BTreeMap<(NodeId, NodeId), RouteEntry>,
}

impl RoutingTable {
    pub fn next_hop(&self, node: &NodeId, destination: &NodeId) -> Option<&NodeId> {
        self.entries
            .get(&(node.clone(), destination.clone()))
            .map(|e| &e.next_hop)
    }

    /// Installs the chosen reply's path. A lying endpoint gets no entry of
    /// its own unless it claimed a partner as its next hop.
    pub fn install(&mut self, destination: &NodeId, reply: &RouteReply) {
        let mut via = reply.path.clone();
        if via.last() != Some(destination) {
            via.push(destination.clone());
        }
        for pair in reply.path.windows(2) {
            self.entries.insert(
                (pair[0].clone(), destination.clone()),
                RouteEntry {
                    next_hop: pair[1].clone(),
                    via: via.clone(),
                },
            );
        }
    }

    /// Drops every entry whose installing path runs through `node`.
    pub fn invalidate_through(&mut self, node: &NodeId) -> usize {
        let before = self.entries.len();
        self.entries
            .retain(|(owner, _), e| owner != node && !e.via.contains(node));
        before - self.entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
