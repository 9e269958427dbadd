//! Output-queued SDN switch: one priority flow table with timed rules and a
//! set-CE action, an AQM queue per egress port, and pollable counters.

mod queue;
mod red;
mod table;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::net::{serialization_delay, Direction, FlowKey, NodeId, Packet, PortId};
use crate::sim::SimTime;

pub use queue::{EnqueueOutcome, PortQueue, PortQueueConfig, PortStats};
pub use red::{
    red_decision, red_mark_probability, red_update_avg, RedConfig, RedConfigError, RedVerdict,
};
pub use table::{Actions, FlowRule, FlowTable, InstallOutcome, Match, BASE_PRIORITY};

/// 100 full-sized packets.
pub const DEFAULT_BUFFER_BYTES: u64 = 150_000;

/// A packet that has started transmission on an egress port.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub packet: Packet,
    /// When the last bit reaches the peer.
    pub arrives_at: SimTime,
    /// When the port can start the next packet.
    pub port_free_at: SimTime,
}

/// The sending side of one link end: a queue feeding a serializer.
#[derive(Debug, Clone)]
pub struct EgressPort {
    pub peer: (NodeId, PortId),
    pub capacity_bps: u64,
    pub prop_delay_us: u64,
    pub queue: PortQueue,
    busy: bool,
}

impl EgressPort {
    pub fn new(
        peer: (NodeId, PortId),
        capacity_bps: u64,
        prop_delay_us: u64,
        queue: PortQueue,
    ) -> Self {
        EgressPort {
            peer,
            capacity_bps,
            prop_delay_us,
            queue,
            busy: false,
        }
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    /// Starts sending the head-of-line packet if the port is idle.
    pub fn begin_transmit(&mut self, now: SimTime) -> Option<Transmission> {
        if self.busy {
            return None;
        }
        let packet = self.queue.dequeue()?;
        self.busy = true;
        let ser = serialization_delay(packet.size_bytes as u64, self.capacity_bps);
        Some(Transmission {
            packet,
            arrives_at: now + ser + SimTime::from_micros(self.prop_delay_us),
            port_free_at: now + ser,
        })
    }

    /// The serializer finished; the caller should try `begin_transmit` next.
    pub fn transmit_done(&mut self, now: SimTime) {
        self.busy = false;
        if self.queue.is_empty() {
            self.queue.mark_idle(now);
        }
    }
}

/// Result of pushing an arriving packet through the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Forwarding {
    /// No live rule matched; the packet is dropped.
    Miss,
    Forwarded {
        port: PortId,
        rule: FlowRule,
        outcome: EnqueueOutcome,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowStatsEntry {
    pub flow: FlowKey,
    pub direction: Direction,
    pub out_port: PortId,
    pub tx_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortSnapshot {
    pub port: PortId,
    pub capacity_bps: u64,
    pub stats: PortStats,
    pub queue_bytes: u64,
    pub avg_queue_bytes: f64,
}

/// Point-in-time copy of a switch's counters and table, as a controller
/// would read them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchSnapshot {
    pub switch: NodeId,
    pub taken_at: SimTime,
    pub ports: Vec<PortSnapshot>,
    pub flows: Vec<FlowStatsEntry>,
    pub rules: Vec<FlowRule>,
}

impl SwitchSnapshot {
    pub fn port(&self, port: PortId) -> Option<&PortSnapshot> {
        self.ports.iter().find(|p| p.port == port)
    }
}

#[derive(Debug, Clone)]
pub struct Switch {
    pub id: NodeId,
    pub name: String,
    /// Indexed by `PortId`.
    pub ports: Vec<EgressPort>,
    pub table: FlowTable,
    flow_stats: BTreeMap<(FlowKey, Direction, PortId), u64>,
    pub table_misses: u64,
}

impl Switch {
    pub fn new(id: NodeId, name: impl Into<String>, ports: Vec<EgressPort>) -> Self {
        Switch {
            id,
            name: name.into(),
            ports,
            table: FlowTable::new(),
            flow_stats: BTreeMap::new(),
            table_misses: 0,
        }
    }

    pub fn port(&self, port: PortId) -> &EgressPort {
        &self.ports[port.0 as usize]
    }

    pub fn port_mut(&mut self, port: PortId) -> &mut EgressPort {
        &mut self.ports[port.0 as usize]
    }

    pub fn match_rule(&self, pkt: &Packet, now: SimTime) -> Option<&FlowRule> {
        self.table.lookup(pkt, now)
    }

    /// Matches `pkt` and queues it on the chosen port.
    pub fn receive(&mut self, pkt: Packet, now: SimTime) -> Forwarding {
        let Some(rule) = self.table.lookup(&pkt, now).copied() else {
            self.table_misses += 1;
            return Forwarding::Miss;
        };
        let port = rule.actions.forward_port;
        let outcome = self.ports[port.0 as usize]
            .queue
            .enqueue(pkt, rule.actions.set_ce, now);
        Forwarding::Forwarded {
            port,
            rule,
            outcome,
        }
    }

    /// Starts the next transmission on `port`, crediting the flow counters.
    pub fn begin_transmit(&mut self, port: PortId, now: SimTime) -> Option<Transmission> {
        let tx = self.ports[port.0 as usize].begin_transmit(now)?;
        let key = (tx.packet.flow, tx.packet.direction, port);
        *self.flow_stats.entry(key).or_default() += tx.packet.size_bytes as u64;
        Some(tx)
    }

    pub fn install_rule(&mut self, rule: FlowRule) -> InstallOutcome {
        self.table.install(rule)
    }

    pub fn expire_rules(&mut self, now: SimTime) -> Vec<FlowRule> {
        self.table.expire(now)
    }

    /// Total drops: queue drops on every port plus table misses.
    pub fn drops_total(&self) -> u64 {
        self.ports
            .iter()
            .map(|p| p.queue.stats.drops_total)
            .sum::<u64>()
            + self.table_misses
    }

    pub fn ce_marks_total(&self) -> u64 {
        self.ports
            .iter()
            .map(|p| p.queue.stats.ce_marks_total)
            .sum()
    }

    pub fn read_stats(&self, now: SimTime) -> SwitchSnapshot {
        SwitchSnapshot {
            switch: self.id,
            taken_at: now,
            ports: self
                .ports
                .iter()
                .enumerate()
                .map(|(i, p)| PortSnapshot {
                    port: PortId(i as u16),
                    capacity_bps: p.capacity_bps,
                    stats: p.queue.stats,
                    queue_bytes: p.queue.bytes(),
                    avg_queue_bytes: p.queue.avg_bytes(),
                })
                .collect(),
            flows: self
                .flow_stats
                .iter()
                .map(|(&(flow, direction, out_port), &tx_bytes)| FlowStatsEntry {
                    flow,
                    direction,
                    out_port,
                    tx_bytes,
                })
                .collect(),
            rules: self.table.rules().copied().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RandomStream;

    const MBPS_100: u64 = 100_000_000;

    fn key(i: u16) -> FlowKey {
        FlowKey::new(NodeId::host(i), NodeId::host(9), 0)
    }

    fn two_port_switch() -> Switch {
        let ports = (0..2)
            .map(|i| {
                EgressPort::new(
                    (NodeId::host(i), PortId(0)),
                    MBPS_100,
                    50,
                    PortQueue::new(
                        PortQueueConfig::DropTail {
                            limit_bytes: DEFAULT_BUFFER_BYTES,
                        },
                        MBPS_100,
                        RandomStream::new(0, "p"),
                    ),
                )
            })
            .collect();
        let mut sw = Switch::new(NodeId::switch(0), "sw", ports);
        for i in 0..3 {
            sw.install_rule(FlowRule::forward(
                Match::data(key(i)),
                BASE_PRIORITY,
                PortId(1),
            ));
        }
        sw
    }

    #[test]
    fn table_miss_counts_as_drop() {
        let mut sw = two_port_switch();
        let stray = Packet::data(key(7), 0, 1460);
        assert_eq!(sw.receive(stray, SimTime::ZERO), Forwarding::Miss);
        assert_eq!(sw.drops_total(), 1);
    }

    #[test]
    fn transmission_timing() {
        let mut sw = two_port_switch();
        sw.receive(Packet::data(key(0), 0, 1460), SimTime::ZERO);
        sw.receive(Packet::data(key(0), 1460, 1460), SimTime::ZERO);
        let tx = sw.begin_transmit(PortId(1), SimTime::ZERO).unwrap();
        assert_eq!(tx.port_free_at, SimTime(120));
        assert_eq!(tx.arrives_at, SimTime(170));
        // Busy until the serializer frees up.
        assert!(sw.begin_transmit(PortId(1), SimTime(60)).is_none());
        sw.port_mut(PortId(1)).transmit_done(SimTime(120));
        let tx2 = sw.begin_transmit(PortId(1), SimTime(120)).unwrap();
        assert_eq!(tx2.arrives_at - tx.arrives_at, SimTime(120));
        sw.port_mut(PortId(1)).transmit_done(SimTime(240));
        assert!(sw.begin_transmit(PortId(1), SimTime(240)).is_none());
    }

    #[test]
    fn stats_reads_are_pure_and_track_departures() {
        let mut sw = two_port_switch();
        let a = sw.read_stats(SimTime(5));
        let b = sw.read_stats(SimTime(5));
        assert_eq!(a, b);
        sw.receive(Packet::data(key(1), 0, 1460), SimTime::ZERO);
        sw.begin_transmit(PortId(1), SimTime::ZERO);
        let c = sw.read_stats(SimTime(10));
        let before = a.port(PortId(1)).unwrap().stats.tx_bytes;
        assert_eq!(c.port(PortId(1)).unwrap().stats.tx_bytes - before, 1500);
        assert_eq!(c.flows.len(), 1);
        assert_eq!(c.flows[0].tx_bytes, 1500);
        assert_eq!(c.rules.len(), 3);
    }

    #[test]
    fn cc_rule_marks_then_expires() {
        let mut sw = two_port_switch();
        let cc = FlowRule {
            matcher: Match::data(key(0)),
            priority: 200,
            actions: Actions {
                forward_port: PortId(1),
                set_ce: true,
            },
            hard_timeout: SimTime::from_millis(200),
            installed_at: SimTime::ZERO,
        };
        sw.install_rule(cc);
        let f = sw.receive(Packet::data(key(0), 0, 1460), SimTime(10));
        assert!(matches!(
            f,
            Forwarding::Forwarded {
                outcome: EnqueueOutcome::EnqueuedMarked(_),
                ..
            }
        ));
        let f = sw.receive(Packet::data(key(0), 1460, 1460), SimTime::from_millis(200));
        assert!(matches!(
            f,
            Forwarding::Forwarded {
                outcome: EnqueueOutcome::Enqueued,
                ..
            }
        ));
        assert_eq!(sw.expire_rules(SimTime::from_millis(200)).len(), 1);
    }
}
