use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::net::{Ecn, MarkOrigin, Packet};
use crate::sim::{RandomStream, SimTime};

use super::red::{red_decision, red_update_avg, RedConfig, RedVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "aqm", rename_all = "lowercase")]
pub enum PortQueueConfig {
    DropTail { limit_bytes: u64 },
    Red(RedConfig),
}

impl PortQueueConfig {
    pub fn limit_bytes(&self) -> u64 {
        match self {
            PortQueueConfig::DropTail { limit_bytes } => *limit_bytes,
            PortQueueConfig::Red(r) => r.limit_bytes,
        }
    }
}

/// Cumulative per-port counters; never reset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortStats {
    pub tx_bytes: u64,
    pub tx_packets: u64,
    pub drops_total: u64,
    pub ce_marks_total: u64,
    /// Packets offered to the queue.
    pub rx_packets: u64,
    /// Subset of `ce_marks_total` applied by a set-CE rule.
    pub cc_marks: u64,
    /// Dropped packets that already carried CE on arrival.
    pub ce_dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Enqueued,
    /// Accepted after this queue switched the codepoint from ECT0 to CE.
    EnqueuedMarked(MarkOrigin),
    Dropped,
}

#[derive(Debug, Clone, Default)]
struct RedState {
    avg: f64,
    count: i64,
    idle_since: Option<SimTime>,
}

/// FIFO with an active queue management policy.
#[derive(Debug, Clone)]
pub struct PortQueue {
    cfg: PortQueueConfig,
    capacity_bps: u64,
    fifo: VecDeque<Packet>,
    bytes: u64,
    red: RedState,
    rng: RandomStream,
    pub stats: PortStats,
}

impl PortQueue {
    pub fn new(cfg: PortQueueConfig, capacity_bps: u64, rng: RandomStream) -> Self {
        PortQueue {
            cfg,
            capacity_bps,
            fifo: VecDeque::new(),
            bytes: 0,
            red: RedState {
                avg: 0.0,
                count: -1,
                idle_since: Some(SimTime::ZERO),
            },
            rng,
            stats: PortStats::default(),
        }
    }

    pub fn config(&self) -> &PortQueueConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn avg_bytes(&self) -> f64 {
        self.red.avg
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.fifo.iter()
    }

    /// Offers a packet. A set-CE rule marks ECT0 packets before the AQM
    /// sees them.
    pub fn enqueue(&mut self, mut pkt: Packet, set_ce: bool, now: SimTime) -> EnqueueOutcome {
        self.stats.rx_packets += 1;
        let arrived_ce = pkt.ecn == Ecn::Ce;
        let size = pkt.size_bytes as u64;

        let mut mark = if set_ce && pkt.ecn == Ecn::Ect0 {
            Some(MarkOrigin::CcRule)
        } else {
            None
        };
        let mut drop = false;

        if let PortQueueConfig::Red(red) = self.cfg {
            self.red.avg = red_update_avg(
                self.red.avg,
                self.bytes,
                red.w_q,
                self.red.idle_since.filter(|_| self.fifo.is_empty()),
                now,
                self.capacity_bps,
            );
            self.red.idle_since = None;
            let verdict = if self.red.avg < red.min_th_bytes as f64 {
                self.red.count = -1;
                RedVerdict::Pass
            } else if self.red.avg >= red.max_th_bytes as f64 {
                self.red.count = 0;
                RedVerdict::MarkOrDrop
            } else {
                self.red.count += 1;
                let v = red_decision(self.red.avg, &red, self.red.count, &mut self.rng);
                if v == RedVerdict::MarkOrDrop {
                    self.red.count = 0;
                }
                v
            };
            if verdict == RedVerdict::MarkOrDrop {
                let markable = pkt.ecn != Ecn::NotEct;
                if red.ecn_mode && markable && self.red.avg < red.max_th_bytes as f64 {
                    if mark.is_none() && pkt.ecn == Ecn::Ect0 {
                        mark = Some(MarkOrigin::Red);
                    }
                } else {
                    drop = true;
                }
            }
        }

        if self.bytes + size > self.cfg.limit_bytes() {
            drop = true;
        }

        if drop {
            self.stats.drops_total += 1;
            if arrived_ce {
                self.stats.ce_dropped += 1;
            }
            return EnqueueOutcome::Dropped;
        }

        let outcome = match mark {
            Some(origin) => {
                let changed = pkt.mark_ce(origin);
                debug_assert!(changed);
                self.stats.ce_marks_total += 1;
                if origin == MarkOrigin::CcRule {
                    self.stats.cc_marks += 1;
                }
                EnqueueOutcome::EnqueuedMarked(origin)
            }
            None => EnqueueOutcome::Enqueued,
        };
        self.bytes += size;
        self.fifo.push_back(pkt);
        outcome
    }

    /// Removes the head packet for transmission and counts it as sent.
    pub fn dequeue(&mut self) -> Option<Packet> {
        let pkt = self.fifo.pop_front()?;
        self.bytes -= pkt.size_bytes as u64;
        self.stats.tx_bytes += pkt.size_bytes as u64;
        self.stats.tx_packets += 1;
        Some(pkt)
    }

    /// Records that the outgoing link went idle with nothing queued.
    pub fn mark_idle(&mut self, now: SimTime) {
        if self.fifo.is_empty() && self.red.idle_since.is_none() {
            self.red.idle_since = Some(now);
        }
    }
}
