use std::collections::BTreeMap;

use crate::net::{Direction, Ecn, FlowKey, Packet, TcpFlags};

/// Receiving end of a flow: cumulative ACKs, an out-of-order buffer and the
/// ECN echo latch.
#[derive(Debug, Clone)]
pub struct TcpReceiver {
    pub flow: FlowKey,
    pub rcv_next: u64,
    pub ece_latched: bool,
    /// Buffered out-of-order ranges, start -> end.
    ooo: BTreeMap<u64, u64>,
}

impl TcpReceiver {
    pub fn new(flow: FlowKey) -> Self {
        TcpReceiver {
            flow,
            rcv_next: 0,
            ece_latched: false,
            ooo: BTreeMap::new(),
        }
    }

    /// Consumes a data segment and returns the ACK to send back.
    ///
    /// CWR clears the latch before CE is considered, so a segment carrying
    /// both leaves the latch set.
    pub fn on_data(&mut self, pkt: &Packet) -> Packet {
        debug_assert_eq!(pkt.direction, Direction::Data);
        if pkt.flags.contains(TcpFlags::CWR) {
            self.ece_latched = false;
        }
        if pkt.ecn == Ecn::Ce {
            self.ece_latched = true;
        }

        let (start, end) = (pkt.seq_bytes, pkt.end_seq());
        if start <= self.rcv_next {
            if end > self.rcv_next {
                self.rcv_next = end;
                self.drain_ooo();
            }
        } else {
            let slot = self.ooo.entry(start).or_insert(end);
            *slot = (*slot).max(end);
        }

        let flags = if self.ece_latched {
            TcpFlags::ECE
        } else {
            TcpFlags::empty()
        };
        Packet::ack(self.flow, self.rcv_next, flags)
    }

    fn drain_ooo(&mut self) {
        while let Some((&start, &end)) = self.ooo.first_key_value() {
            if start > self.rcv_next {
                break;
            }
            self.ooo.pop_first();
            self.rcv_next = self.rcv_next.max(end);
        }
    }

    pub fn buffered_segments(&self) -> usize {
        self.ooo.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NodeId;

    fn key() -> FlowKey {
        FlowKey::new(NodeId::host(0), NodeId::host(1), 0)
    }

    fn seg(seq: u64, ecn: Ecn, flags: TcpFlags) -> Packet {
        let mut p = Packet::data(key(), seq, 1460);
        p.ecn = ecn;
        p.flags = flags;
        p
    }

    #[test]
    fn plain_in_order_data() {
        let mut r = TcpReceiver::new(key());
        let ack = r.on_data(&seg(0, Ecn::Ect0, TcpFlags::empty()));
        assert_eq!(ack.ack_bytes, 1460);
        assert!(!ack.flags.contains(TcpFlags::ECE));
        assert_eq!(ack.direction, Direction::Ack);
        assert_eq!(ack.ecn, Ecn::NotEct);
    }

    #[test]
    fn ce_latches_until_cwr() {
        let mut r = TcpReceiver::new(key());
        assert!(r
            .on_data(&seg(0, Ecn::Ce, TcpFlags::empty()))
            .flags
            .contains(TcpFlags::ECE));
        assert!(r
            .on_data(&seg(1460, Ecn::Ect0, TcpFlags::empty()))
            .flags
            .contains(TcpFlags::ECE));
        let ack = r.on_data(&seg(2920, Ecn::Ect0, TcpFlags::CWR));
        assert!(!ack.flags.contains(TcpFlags::ECE));
        assert!(!r.ece_latched);
        assert!(!r
            .on_data(&seg(4380, Ecn::Ect0, TcpFlags::empty()))
            .flags
            .contains(TcpFlags::ECE));
    }

    #[test]
    fn ce_with_cwr_stays_latched() {
        let mut r = TcpReceiver::new(key());
        r.on_data(&seg(0, Ecn::Ce, TcpFlags::empty()));
        let ack = r.on_data(&seg(1460, Ecn::Ce, TcpFlags::CWR));
        assert!(ack.flags.contains(TcpFlags::ECE));
    }

    #[test]
    fn hole_fill_advances_cumulative_ack() {
        let mut r = TcpReceiver::new(key());
        assert_eq!(
            r.on_data(&seg(1460, Ecn::Ect0, TcpFlags::empty()))
                .ack_bytes,
            0
        );
        assert_eq!(
            r.on_data(&seg(2920, Ecn::Ect0, TcpFlags::empty()))
                .ack_bytes,
            0
        );
        assert_eq!(r.buffered_segments(), 2);
        assert_eq!(
            r.on_data(&seg(0, Ecn::Ect0, TcpFlags::empty())).ack_bytes,
            4380
        );
        assert_eq!(r.buffered_segments(), 0);
        // Duplicate of already received data repeats the cumulative ACK.
        assert_eq!(
            r.on_data(&seg(0, Ecn::Ect0, TcpFlags::empty())).ack_bytes,
            4380
        );
    }
}
