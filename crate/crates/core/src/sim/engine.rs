use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adversary::{decide_action, Action, AdversaryState};
use crate::cluster::{consume_energy, Activity, ClusterManager, EnergyRecord};
use crate::config::Scenario;
use crate::ids::{NodeId, Tick};
use crate::metrics::{EventLogRecord, LogKind, Metrics, OVERHEAR_FORWARD, TIMEOUT_FINAL_HOP, TIMEOUT_RELAY};
use crate::rng;
use crate::trust::TrustTable;

use super::queue::EventQueue;
use super::routing::{discover_route, RoutingTable};
use super::{SimError, SimOutcome, SimStats};

/// Latency of the out-of-band ACK and RTR control messages.
pub const CONTROL_LATENCY: Tick = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Member,
    Head,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub energy: f64,
    pub alive: bool,
    pub role: Role,
    adversary: AdversaryState,
}

/// One transmission attempt of an original packet.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    /// Unique per attempt.
    pub seq: u64,
    /// Workload index of the packet this attempt carries.
    pub original: u64,
    pub source: NodeId,
    pub destination: NodeId,
    pub hop_trace: Vec<NodeId>,
    pub retransmission_count: u32,
}

#[derive(Debug, Clone)]
pub enum SimEvent {
    EnergyTimerExpiry {
        generation: u64,
    },
    EnergyBroadcast {
        node: NodeId,
    },
    Election,
    PacketSend {
        index: u64,
    },
    PacketReceive {
        node: NodeId,
        packet: Packet,
    },
    ChannelLoss {
        node: NodeId,
        seq: u64,
    },
    Overhear {
        transmitter: NodeId,
        receiver: NodeId,
        seq: u64,
        origination: bool,
    },
    ForwardTimerExpiry {
        seq: u64,
        suspect: NodeId,
    },
    AckDelivery {
        packet: Packet,
    },
    RtrDelivery {
        packet: Packet,
    },
}

pub struct Simulation<'a> {
    sc: &'a Scenario,
    queue: EventQueue<SimEvent>,
    now: Tick,
    nodes: BTreeMap<NodeId, NodeState>,
    cluster: ClusterManager,
    routing: RoutingTable,
    timers: BTreeMap<(u64, NodeId), Packet>,
    metrics: Metrics,
    channel: ChaCha8Rng,
    next_seq: u64,
    te_generation: u64,
    election_pending: bool,
    last_idle_charge: Tick,
    workload_sent: u64,
    outstanding: u64,
    resolved: BTreeSet<u64>,
    stats: SimStats,
    diagnostics: Vec<String>,
}

impl<'a> Simulation<'a> {
    pub fn new(sc: &'a Scenario) -> Result<Self, SimError> {
        let nodes = sc
            .topology
            .nodes()
            .map(|id| {
                let st = NodeState {
                    energy: sc.initial_energy[id],
                    alive: true,
                    role: Role::Member,
                    adversary: AdversaryState::for_node(sc.seed, id),
                };
                (id.clone(), st)
            })
            .collect();
        let table = TrustTable::with_nodes(sc.x, sc.ttf, sc.topology.nodes().cloned())?;
        let mut sim = Simulation {
            sc,
            queue: EventQueue::new(),
            now: 0,
            nodes,
            cluster: ClusterManager::new(sc.energy_timer, table),
            routing: RoutingTable::default(),
            timers: BTreeMap::new(),
            metrics: Metrics::new(sc.attackers()),
            channel: rng::stream(sc.seed, "channel"),
            next_seq: 0,
            te_generation: 0,
            election_pending: false,
            last_idle_charge: 0,
            workload_sent: 0,
            outstanding: 0,
            resolved: BTreeSet::new(),
            stats: SimStats::default(),
            diagnostics: sc.warnings.clone(),
        };
        if sc.packets > 0 {
            sim.queue.push(0, SimEvent::EnergyTimerExpiry { generation: 0 });
            sim.queue.push(0, SimEvent::PacketSend { index: 0 });
        }
        Ok(sim)
    }

    pub fn run(mut self) -> Result<SimOutcome, SimError> {
        while let Some((time, _, event)) = self.queue.pop() {
            debug_assert!(time >= self.now);
            self.now = time;
            self.stats.events_processed += 1;
            self.handle(event)?;
        }
        self.finish()
    }

    fn finish(self) -> Result<SimOutcome, SimError> {
        let stats = SimStats {
            in_flight_at_end: self.outstanding,
            ..self.stats
        };
        if !self.timers.is_empty() {
            return Err(SimError::Invariant(format!(
                "{} forward timers still armed after the queue drained",
                self.timers.len()
            )));
        }
        let final_energy = self.nodes.iter().map(|(id, n)| (id.clone(), n.energy)).collect();
        let (report, log) = self.metrics.finish(final_energy);
        Ok(SimOutcome {
            report,
            log,
            elections: self.cluster.audits().to_vec(),
            final_trust: self.cluster.table().clone(),
            stats,
            diagnostics: self.diagnostics,
        })
    }

    fn handle(&mut self, event: SimEvent) -> Result<(), SimError> {
        match event {
            SimEvent::EnergyTimerExpiry { generation } => self.on_energy_timer(generation),
            SimEvent::EnergyBroadcast { node } => self.on_energy_broadcast(node),
            SimEvent::Election => return self.on_election(),
            SimEvent::PacketSend { index } => self.on_packet_send(index),
            SimEvent::PacketReceive { node, packet } => self.on_packet_receive(node, packet),
            SimEvent::ChannelLoss { node, seq } => {
                self.log(LogKind::ChannelLoss, Some(&node), Some(seq), String::new())
            }
            SimEvent::Overhear {
                transmitter,
                receiver,
                seq,
                origination,
            } => return self.on_overhear(transmitter, receiver, seq, origination),
            SimEvent::ForwardTimerExpiry { seq, suspect } => return self.on_forward_timeout(seq, suspect),
            SimEvent::AckDelivery { packet } => {
                let detail = format!("orig={}", packet.original);
                self.log(LogKind::AckDelivery, Some(&packet.source), Some(packet.seq), detail)
            }
            SimEvent::RtrDelivery { packet } => self.on_rtr(packet),
        }
        Ok(())
    }

    fn log(&mut self, kind: LogKind, subject: Option<&NodeId>, seq: Option<u64>, detail: String) {
        self.metrics.record(EventLogRecord {
            time: self.now,
            kind,
            subject: subject.cloned(),
            seq,
            detail,
        });
    }

    fn warn(&mut self, subject: Option<&NodeId>, seq: Option<u64>, msg: String) {
        self.diagnostics.push(format!("t={} {msg}", self.now));
        self.log(LogKind::Warning, subject, seq, msg);
    }

    fn work_pending(&self) -> bool {
        self.workload_sent < self.sc.packets || self.outstanding > 0
    }

    fn is_alive(&self, id: &NodeId) -> bool {
        self.nodes.get(id).is_some_and(|n| n.alive)
    }

    fn is_excluded(&self, id: &NodeId) -> bool {
        self.cluster.table().is_detected(id)
    }

    fn live_head(&self) -> Option<NodeId> {
        self.cluster.head().filter(|h| self.is_alive(h)).cloned()
    }

    fn fresh_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    fn charge(&mut self, id: &NodeId, activity: Activity, count: u32) {
        let costs = self.sc.costs;
        let Some(node) = self.nodes.get_mut(id) else { return };
        if !node.alive {
            return;
        }
        node.energy = consume_energy(node.energy, activity, &costs, count);
        if node.energy == 0.0 {
            node.alive = false;
            self.log(LogKind::NodeDeath, Some(id), None, String::new());
            self.routing.invalidate_through(id);
            if self.cluster.head() == Some(id) {
                self.start_election_round();
            }
        }
    }

    // Broadcast round followed by an election, all at the current instant.
    fn start_election_round(&mut self) {
        if self.election_pending {
            return;
        }
        let live: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.alive)
            .map(|(id, _)| id.clone())
            .collect();
        let trigger = self.cluster.on_energy_timer(self.now, live.iter());
        for node in trigger.broadcasters {
            self.queue.push(self.now, SimEvent::EnergyBroadcast { node });
        }
        self.queue.push(self.now, SimEvent::Election);
        self.election_pending = true;
    }

    fn on_energy_timer(&mut self, generation: u64) {
        if generation != self.te_generation {
            return;
        }
        self.log(LogKind::EnergyTimerExpiry, None, None, String::new());
        let elapsed = self.now - self.last_idle_charge;
        self.last_idle_charge = self.now;
        if elapsed > 0 && self.sc.costs.c_idle > 0.0 {
            let ticks = u32::try_from(elapsed).unwrap_or(u32::MAX);
            let ids: Vec<NodeId> = self.nodes.keys().cloned().collect();
            for id in ids {
                self.charge(&id, Activity::IdleTick, ticks);
            }
        }
        self.start_election_round();
    }

    fn on_energy_broadcast(&mut self, node: NodeId) {
        let Some(st) = self.nodes.get(&node).filter(|n| n.alive) else {
            return;
        };
        let energy = st.energy;
        self.cluster.on_energy_broadcast(EnergyRecord {
            node_id: node.clone(),
            energy,
        });
        self.log(
            LogKind::EnergyBroadcast,
            Some(&node),
            None,
            format!("energy={}", crate::metrics::format_f64(energy)),
        );
    }

    fn on_election(&mut self) -> Result<(), SimError> {
        self.election_pending = false;
        let previous = self.cluster.head().cloned();
        let result = self.cluster.hold_election(self.now)?;
        let audit = self.cluster.audits().last().expect("election just recorded");
        if !audit.holds() {
            return Err(SimError::Invariant(format!(
                "election at t={} broke the max-energy rule",
                self.now
            )));
        }
        if let Some(p) = previous.and_then(|p| self.nodes.get_mut(&p)) {
            p.role = Role::Member;
        }
        let head = self.nodes.get_mut(&result.head).expect("head is a known node");
        head.role = Role::Head;
        let energy = head.energy;
        let detail = format!("term={} energy={}", result.term, crate::metrics::format_f64(energy));
        self.log(LogKind::Election, Some(&result.head), None, detail);

        self.te_generation += 1;
        if self.work_pending() {
            let at = self.now + self.sc.energy_timer.period_te;
            self.queue.push(
                at,
                SimEvent::EnergyTimerExpiry {
                    generation: self.te_generation,
                },
            );
        }
        Ok(())
    }

    fn on_packet_send(&mut self, index: u64) {
        let dests = &self.sc.destinations;
        let destination = dests[(index % dests.len() as u64) as usize].clone();
        let source = self.sc.source.clone();
        self.workload_sent += 1;
        self.outstanding += 1;
        self.log(
            LogKind::Originate,
            Some(&source),
            Some(index),
            format!("dest={destination}"),
        );
        if index + 1 < self.sc.packets {
            self.queue
                .push(self.now + self.sc.interval, SimEvent::PacketSend { index: index + 1 });
        }
        let packet = Packet {
            seq: self.fresh_seq(),
            original: index,
            hop_trace: vec![source.clone()],
            source,
            destination,
            retransmission_count: 0,
        };
        self.originate(packet);
    }

    fn originate(&mut self, packet: Packet) {
        if !self.is_alive(&packet.source) {
            self.lose(&packet, "source dead");
            return;
        }
        match self.route(&packet.source, &packet.destination) {
            Some(next) => self.transmit(&packet.source.clone(), next, packet),
            None => self.lose(&packet, "no route"),
        }
    }

    fn lose(&mut self, packet: &Packet, reason: &str) {
        if self.resolved.insert(packet.original) {
            self.outstanding -= 1;
            self.log(
                LogKind::LostPermanently,
                Some(&packet.source),
                Some(packet.original),
                reason.to_owned(),
            );
        }
    }

    /// Next hop from `node` toward `destination`, discovering on a miss.
    fn route(&mut self, node: &NodeId, destination: &NodeId) -> Option<NodeId> {
        if let Some(n) = self.routing.next_hop(node, destination) {
            return Some(n.clone());
        }
        self.stats.discoveries += 1;
        self.log(LogKind::RouteRequest, Some(node), None, format!("dest={destination}"));
        let discovery = {
            let nodes = &self.nodes;
            let table = self.cluster.table();
            discover_route(
                node,
                destination,
                &self.sc.topology,
                &self.sc.behaviors,
                |n| nodes.get(n).is_some_and(|s| s.alive) && !table.is_detected(n),
                self.now,
            )
        };
        for (i, r) in discovery.replies.iter().enumerate() {
            let detail = format!(
                "origin={node} next={} hops={} arrival={} false={} chosen={}",
                r.next_hop(),
                r.claimed_hops,
                r.arrival,
                u8::from(r.is_false),
                u8::from(i == 0)
            );
            self.log(LogKind::RouteReply, Some(&r.replier), None, detail);
        }
        let chosen = discovery.chosen()?;
        self.routing.install(destination, chosen);
        Some(chosen.next_hop().clone())
    }

    fn transmit(&mut self, from: &NodeId, to: NodeId, packet: Packet) {
        self.charge(from, Activity::Transmit, 1);
        self.stats.data_hops += 1;
        let detail = format!("to={to} orig={}", packet.original);
        self.log(LogKind::PacketSend, Some(from), Some(packet.seq), detail);

        let latency = self.sc.topology.latency(from, &to).expect("routes follow links");
        let arrival = self.now + latency;
        let lost = self.sc.channel_loss_p > 0.0 && self.channel.gen::<f64>() < self.sc.channel_loss_p;
        let seq = packet.seq;
        let origination = packet.hop_trace.len() == 1;
        if lost {
            self.queue
                .push(arrival, SimEvent::ChannelLoss { node: to.clone(), seq });
        } else {
            self.queue.push(
                arrival,
                SimEvent::PacketReceive {
                    node: to.clone(),
                    packet: packet.clone(),
                },
            );
        }
        self.queue.push(
            arrival,
            SimEvent::Overhear {
                transmitter: from.clone(),
                receiver: to.clone(),
                seq,
                origination,
            },
        );
        self.queue.push(
            self.now + self.sc.delay_tr,
            SimEvent::ForwardTimerExpiry {
                seq,
                suspect: to.clone(),
            },
        );
        self.stats.timers_armed += 1;
        self.log(LogKind::TimerArm, Some(&to), Some(seq), String::new());
        self.timers.insert((seq, to), packet);
    }

    fn cancel_timer(&mut self, seq: u64, node: &NodeId, why: &str) -> Option<Packet> {
        let p = self.timers.remove(&(seq, node.clone()))?;
        self.stats.timers_canceled += 1;
        self.log(LogKind::TimerCancel, Some(node), Some(seq), why.to_owned());
        Some(p)
    }

    fn on_packet_receive(&mut self, node: NodeId, mut packet: Packet) {
        if self.is_excluded(&node) {
            self.log(LogKind::Discard, Some(&node), Some(packet.seq), "excluded".into());
            return;
        }
        if !self.is_alive(&node) {
            self.log(LogKind::Discard, Some(&node), Some(packet.seq), "dead".into());
            return;
        }
        self.charge(&node, Activity::Receive, 1);
        self.log(
            LogKind::PacketReceive,
            Some(&node),
            Some(packet.seq),
            format!("orig={}", packet.original),
        );
        packet.hop_trace.push(node.clone());

        if node == packet.destination {
            self.cancel_timer(packet.seq, &node, "delivered");
            if self.resolved.insert(packet.original) {
                self.outstanding -= 1;
                self.log(
                    LogKind::Delivered,
                    Some(&node),
                    Some(packet.seq),
                    format!("orig={}", packet.original),
                );
            }
            self.queue
                .push(self.now + CONTROL_LATENCY, SimEvent::AckDelivery { packet });
            return;
        }

        let spec = self.sc.behavior(&node);
        let state = &mut self.nodes.get_mut(&node).expect("known node").adversary;
        match decide_action(spec, state, self.now) {
            Action::Drop => {
                self.log(LogKind::Drop, Some(&node), Some(packet.seq), String::new());
            }
            Action::Forward => match self.route(&node, &packet.destination) {
                Some(next) if !packet.hop_trace.contains(&next) => self.transmit(&node, next, packet),
                Some(next) => self.warn(
                    Some(&node),
                    Some(packet.seq),
                    format!("routing loop via {next}; packet held"),
                ),
                None => self.warn(Some(&node), Some(packet.seq), "no onward route; packet held".into()),
            },
        }
    }

    fn on_overhear(
        &mut self,
        transmitter: NodeId,
        receiver: NodeId,
        seq: u64,
        origination: bool,
    ) -> Result<(), SimError> {
        let Some(head) = self.live_head() else {
            self.warn(
                Some(&transmitter),
                Some(seq),
                "transmission not overheard: no live head".into(),
            );
            return Ok(());
        };
        self.charge(&head, Activity::Overhear, 1);
        if self.cancel_timer(seq, &transmitter, "forwarded").is_some() {
            self.stats.record_forward_calls += 1;
            self.cluster.table_mut().record_forward(&transmitter)?;
            self.log(
                LogKind::Overhear,
                Some(&transmitter),
                Some(seq),
                format!("{OVERHEAR_FORWARD} to={receiver}"),
            );
        } else if origination {
            self.log(
                LogKind::Overhear,
                Some(&transmitter),
                Some(seq),
                format!("origin to={receiver}"),
            );
        } else if self.is_excluded(&transmitter) {
            self.log(
                LogKind::Overhear,
                Some(&transmitter),
                Some(seq),
                format!("excluded to={receiver}"),
            );
        } else {
            self.log(
                LogKind::Overhear,
                Some(&transmitter),
                Some(seq),
                format!("unmatched to={receiver}"),
            );
            self.diagnostics.push(format!(
                "t={} overheard {transmitter} forward seq {seq} with no pending timer",
                self.now
            ));
        }
        Ok(())
    }

    fn on_forward_timeout(&mut self, seq: u64, suspect: NodeId) -> Result<(), SimError> {
        let Some(packet) = self.timers.remove(&(seq, suspect.clone())) else {
            return Ok(());
        };
        self.stats.timers_fired += 1;
        if suspect == packet.destination {
            // Nothing to forward at the last hop: the loss is resent but not held against anyone.
            self.log(
                LogKind::ForwardTimerExpiry,
                Some(&suspect),
                Some(seq),
                TIMEOUT_FINAL_HOP.into(),
            );
            self.queue
                .push(self.now + CONTROL_LATENCY, SimEvent::RtrDelivery { packet });
            return Ok(());
        }
        self.log(
            LogKind::ForwardTimerExpiry,
            Some(&suspect),
            Some(seq),
            TIMEOUT_RELAY.into(),
        );
        self.stats.record_drop_calls += 1;
        let verdict = self.cluster.table_mut().record_drop(&suspect)?;
        if verdict.is_malicious() {
            let detail = format!(
                "streak={} tf={}",
                verdict.streak_at_verdict,
                crate::metrics::format_f64(verdict.tf_at_verdict)
            );
            self.on_malicious_broadcast(&suspect, detail);
        }
        self.queue
            .push(self.now + CONTROL_LATENCY, SimEvent::RtrDelivery { packet });
        Ok(())
    }

    fn on_malicious_broadcast(&mut self, offender: &NodeId, detail: String) {
        self.log(LogKind::MaliciousBroadcast, Some(offender), None, detail);
        self.routing.invalidate_through(offender);
        let pending: Vec<u64> = self
            .timers
            .keys()
            .filter(|(_, n)| n == offender)
            .map(|(s, _)| *s)
            .collect();
        for seq in pending {
            if let Some(packet) = self.cancel_timer(seq, offender, "excluded") {
                self.queue
                    .push(self.now + CONTROL_LATENCY, SimEvent::RtrDelivery { packet });
            }
        }
        if self.cluster.head() == Some(offender) {
            self.start_election_round();
        }
    }

    fn on_rtr(&mut self, packet: Packet) {
        let detail = format!("orig={} attempt={}", packet.original, packet.retransmission_count);
        self.log(LogKind::RtrDelivery, Some(&packet.source), Some(packet.seq), detail);
        if self.resolved.contains(&packet.original) {
            return;
        }
        if packet.retransmission_count >= self.sc.max_retransmissions {
            self.lose(&packet, "retransmission budget exhausted");
            return;
        }
        let retry = Packet {
            seq: self.fresh_seq(),
            hop_trace: vec![packet.source.clone()],
            retransmission_count: packet.retransmission_count + 1,
            ..packet
        };
        let detail = format!("orig={} attempt={}", retry.original, retry.retransmission_count);
        self.log(LogKind::Retransmit, Some(&retry.source), Some(retry.seq), detail);
        self.originate(retry);
    }
}
