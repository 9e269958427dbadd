//! End-host TCP: a byte-counting sender with Reno or Cubic window growth,
//! NewReno-style loss recovery and RFC 3168 ECN reaction, plus a receiver
//! that echoes CE marks.

mod cubic;
mod receiver;
mod sender;

use serde::{Deserialize, Serialize};

use crate::net::MSS;
use crate::sim::SimTime;

pub use cubic::{cubic_target, CubicState};
pub use receiver::TcpReceiver;
pub use sender::{CcState, SenderStats, TcpSender};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Reno,
    #[default]
    Cubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcpConfig {
    pub variant: Variant,
    pub mss: u64,
    pub initial_cwnd_segments: u64,
    pub min_rto: SimTime,
    pub initial_rto: SimTime,
    pub max_rto: SimTime,
    pub reno_beta: f64,
    pub cubic_beta: f64,
    /// Cubic scaling constant in MSS/s^3.
    pub cubic_c: f64,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig {
            variant: Variant::Cubic,
            mss: MSS,
            initial_cwnd_segments: 10,
            min_rto: SimTime::from_millis(200),
            initial_rto: SimTime::from_secs(1),
            max_rto: SimTime::from_secs(60),
            reno_beta: 0.5,
            cubic_beta: 0.7,
            cubic_c: 0.4,
        }
    }
}

impl TcpConfig {
    pub fn with_variant(variant: Variant) -> Self {
        TcpConfig {
            variant,
            ..Default::default()
        }
    }

    /// Multiplicative-decrease factor for the configured variant.
    pub fn beta(&self) -> f64 {
        match self.variant {
            Variant::Reno => self.reno_beta,
            Variant::Cubic => self.cubic_beta,
        }
    }
}

/// What the application offers the connection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FlowKind {
    /// Unlimited data for `duration_s` seconds, iperf style.
    Bulk { duration_s: f64 },
    /// A fixed-size transfer.
    Mice { size_bytes: u64 },
}

impl FlowKind {
    pub fn label(&self) -> &'static str {
        match self {
            FlowKind::Bulk { .. } => "bulk",
            FlowKind::Mice { .. } => "mice",
        }
    }
}

/// An application flow bound to a TCP connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppFlowSpec {
    pub key: crate::net::FlowKey,
    pub kind: FlowKind,
    pub start_at: SimTime,
}
