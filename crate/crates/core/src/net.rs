//! Network vocabulary shared by every component: node and flow identifiers,
//! packets with their ECN state, and the link transmission model.

use std::fmt;
use std::str::FromStr;

use bitflags::bitflags;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

/// TCP payload per full segment.
pub const MSS: u64 = 1460;
/// IP + TCP header bytes on every packet.
pub const HEADER_BYTES: u64 = 40;
pub const MAX_PACKET_BYTES: u64 = MSS + HEADER_BYTES;
pub const DEFAULT_PROP_DELAY_US: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Host,
    Switch,
}

/// A host or switch. Written `h<index>` / `s<index>` in files and logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: u16,
}

impl NodeId {
    pub const fn host(index: u16) -> Self {
        NodeId {
            kind: NodeKind::Host,
            index,
        }
    }

    pub const fn switch(index: u16) -> Self {
        NodeId {
            kind: NodeKind::Switch,
            index,
        }
    }

    pub fn is_host(&self) -> bool {
        self.kind == NodeKind::Host
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::Host => write!(f, "h{}", self.index),
            NodeKind::Switch => write!(f, "s{}", self.index),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid identifier `{0}`")]
pub struct ParseIdError(pub String);

impl FromStr for NodeId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseIdError(s.to_string());
        let (kind, rest) = match s.split_at_checked(1).ok_or_else(err)? {
            ("h", rest) => (NodeKind::Host, rest),
            ("s", rest) => (NodeKind::Switch, rest),
            _ => return Err(err()),
        };
        let index = rest.parse().map_err(|_| err())?;
        Ok(NodeId { kind, index })
    }
}

impl TryFrom<String> for NodeId {
    type Error = ParseIdError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<NodeId> for String {
    fn from(n: NodeId) -> String {
        n.to_string()
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct PortId(pub u16);

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// One TCP connection: data flows `src -> dst`, ACKs flow back.
///
/// Ordering is `(src, dst, flow_index)` and is used for deterministic
/// tie-breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FlowKey {
    pub src: NodeId,
    pub dst: NodeId,
    pub flow_index: u16,
}

impl FlowKey {
    pub fn new(src: NodeId, dst: NodeId, flow_index: u16) -> Self {
        FlowKey {
            src,
            dst,
            flow_index,
        }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}>{}#{}", self.src, self.dst, self.flow_index)
    }
}

impl FromStr for FlowKey {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseIdError(s.to_string());
        let (src, rest) = s.split_once('>').ok_or_else(err)?;
        let (dst, idx) = rest.split_once('#').ok_or_else(err)?;
        Ok(FlowKey {
            src: src.parse()?,
            dst: dst.parse()?,
            flow_index: idx.parse().map_err(|_| err())?,
        })
    }
}

impl TryFrom<String> for FlowKey {
    type Error = ParseIdError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FlowKey> for String {
    fn from(k: FlowKey) -> String {
        k.to_string()
    }
}

/// IP ECN codepoint. ECT(1) is never produced by these hosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ecn {
    NotEct,
    Ect0,
    Ce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Data,
    Ack,
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct TcpFlags: u8 {
        const ECE = 0b001;
        const CWR = 0b010;
        const FIN = 0b100;
    }
}

/// Who turned a packet's codepoint into CE. Simulation bookkeeping only; it
/// is not visible to the hosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkOrigin {
    CcRule,
    Red,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub flow: FlowKey,
    pub size_bytes: u32,
    pub ecn: Ecn,
    pub direction: Direction,
    pub seq_bytes: u64,
    pub ack_bytes: u64,
    pub flags: TcpFlags,
    pub marked_by: Option<MarkOrigin>,
}

impl Packet {
    pub fn data(flow: FlowKey, seq_bytes: u64, payload: u32) -> Self {
        let size = payload as u64 + HEADER_BYTES;
        debug_assert!(size <= MAX_PACKET_BYTES);
        Packet {
            flow,
            size_bytes: size as u32,
            ecn: Ecn::Ect0,
            direction: Direction::Data,
            seq_bytes,
            ack_bytes: 0,
            flags: TcpFlags::empty(),
            marked_by: None,
        }
    }

    pub fn ack(flow: FlowKey, ack_bytes: u64, flags: TcpFlags) -> Self {
        Packet {
            flow,
            size_bytes: HEADER_BYTES as u32,
            ecn: Ecn::NotEct,
            direction: Direction::Ack,
            seq_bytes: 0,
            ack_bytes,
            flags,
            marked_by: None,
        }
    }

    pub fn payload_bytes(&self) -> u64 {
        self.size_bytes as u64 - HEADER_BYTES
    }

    /// One-past-the-end sequence number of the data carried.
    pub fn end_seq(&self) -> u64 {
        self.seq_bytes + self.payload_bytes()
    }

    /// Sets CE if the packet is ECN-capable. Returns true only on an actual
    /// ECT0 -> CE transition.
    pub fn mark_ce(&mut self, origin: MarkOrigin) -> bool {
        if self.ecn == Ecn::Ect0 {
            self.ecn = Ecn::Ce;
            self.marked_by = Some(origin);
            true
        } else {
            false
        }
    }

    /// The node this packet is heading to.
    pub fn destination(&self) -> NodeId {
        match self.direction {
            Direction::Data => self.flow.dst,
            Direction::Ack => self.flow.src,
        }
    }
}

/// A bidirectional point-to-point link between two node ports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: (NodeId, PortId),
    pub b: (NodeId, PortId),
    pub capacity_bps: u64,
    #[serde(default = "default_prop_delay")]
    pub prop_delay_us: u64,
}

fn default_prop_delay() -> u64 {
    DEFAULT_PROP_DELAY_US
}

impl LinkSpec {
    pub fn new(a: (NodeId, PortId), b: (NodeId, PortId), capacity_bps: u64) -> Self {
        LinkSpec {
            a,
            b,
            capacity_bps,
            prop_delay_us: DEFAULT_PROP_DELAY_US,
        }
    }

    /// The endpoint opposite `from`, if `from` is one of this link's ends.
    pub fn peer(&self, from: (NodeId, PortId)) -> Option<(NodeId, PortId)> {
        if self.a == from {
            Some(self.b)
        } else if self.b == from {
            Some(self.a)
        } else {
            None
        }
    }

    /// Arrival time at the far end of a packet whose first bit leaves at
    /// `depart`. The sender's port must be idle at `depart`.
    pub fn deliver(&self, size_bytes: u64, depart: SimTime) -> SimTime {
        depart
            + serialization_delay(size_bytes, self.capacity_bps)
            + SimTime::from_micros(self.prop_delay_us)
    }
}

/// Time to clock `size_bytes` onto a link, rounded up to whole microseconds.
pub fn serialization_delay(size_bytes: u64, capacity_bps: u64) -> SimTime {
    assert!(capacity_bps > 0, "link capacity must be positive");
    let bits = size_bytes as u128 * 8 * 1_000_000;
    SimTime::from_micros(bits.div_ceil(capacity_bps as u128) as u64)
}
