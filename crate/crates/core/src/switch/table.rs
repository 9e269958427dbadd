use std::fmt;

use serde::{Deserialize, Serialize};

use crate::net::{Direction, FlowKey, Packet, PortId};
use crate::sim::SimTime;

/// Priority of the permanent shortest-path forwarding rules.
pub const BASE_PRIORITY: u16 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Match {
    /// One direction of one flow: data segments or its returning ACKs.
    Exact {
        flow: FlowKey,
        direction: Direction,
    },
    Wildcard,
}

impl Match {
    pub fn data(flow: FlowKey) -> Self {
        Match::Exact {
            flow,
            direction: Direction::Data,
        }
    }

    pub fn matches(&self, pkt: &Packet) -> bool {
        match *self {
            Match::Exact { flow, direction } => pkt.flow == flow && pkt.direction == direction,
            Match::Wildcard => true,
        }
    }
}

impl fmt::Display for Match {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Match::Exact { flow, direction } => {
                let d = match direction {
                    Direction::Data => "data",
                    Direction::Ack => "ack",
                };
                write!(f, "{flow}/{d}")
            }
            Match::Wildcard => f.write_str("*"),
        }
    }
}

/// Every rule forwards; `set_ce` additionally marks ECN-capable packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actions {
    pub forward_port: PortId,
    pub set_ce: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRule {
    pub matcher: Match,
    /// Higher wins.
    pub priority: u16,
    pub actions: Actions,
    /// Zero means permanent.
    pub hard_timeout: SimTime,
    pub installed_at: SimTime,
}

impl FlowRule {
    pub fn forward(matcher: Match, priority: u16, port: PortId) -> Self {
        FlowRule {
            matcher,
            priority,
            actions: Actions {
                forward_port: port,
                set_ce: false,
            },
            hard_timeout: SimTime::ZERO,
            installed_at: SimTime::ZERO,
        }
    }

    /// When a timed rule stops matching; `None` for permanent rules.
    pub fn expires_at(&self) -> Option<SimTime> {
        (self.hard_timeout > SimTime::ZERO).then(|| self.installed_at + self.hard_timeout)
    }

    pub fn is_live(&self, now: SimTime) -> bool {
        self.expires_at().is_none_or(|end| now < end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstallOutcome {
    Added,
    Refreshed,
}

/// A single OpenFlow-style table. Lookup picks the live matching rule of
/// highest priority; equal priorities go to the most recent install.
#[derive(Debug, Clone, Default)]
pub struct FlowTable {
    // (install sequence, rule)
    rules: Vec<(u64, FlowRule)>,
    next_seq: u64,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> impl Iterator<Item = &FlowRule> {
        self.rules.iter().map(|(_, r)| r)
    }

    /// Adds `rule`. An existing rule with the same match and priority is
    /// replaced, which restarts its timeout from `rule.installed_at`.
    pub fn install(&mut self, rule: FlowRule) -> InstallOutcome {
        let seq = self.next_seq;
        self.next_seq += 1;
        if let Some(slot) = self
            .rules
            .iter_mut()
            .find(|(_, r)| r.matcher == rule.matcher && r.priority == rule.priority)
        {
            *slot = (seq, rule);
            InstallOutcome::Refreshed
        } else {
            self.rules.push((seq, rule));
            InstallOutcome::Added
        }
    }

    /// Evicts timed rules whose hard timeout has passed.
    pub fn expire(&mut self, now: SimTime) -> Vec<FlowRule> {
        let mut evicted = Vec::new();
        self.rules.retain(|(_, r)| {
            if r.is_live(now) {
                true
            } else {
                evicted.push(*r);
                false
            }
        });
        evicted
    }

    pub fn lookup(&self, pkt: &Packet, now: SimTime) -> Option<&FlowRule> {
        self.rules
            .iter()
            .filter(|(_, r)| r.is_live(now) && r.matcher.matches(pkt))
            .max_by_key(|(seq, r)| (r.priority, *seq))
            .map(|(_, r)| r)
    }
}
