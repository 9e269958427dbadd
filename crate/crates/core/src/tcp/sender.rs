use crate::net::{Direction, FlowKey, Packet, TcpFlags};
use crate::sim::SimTime;

use super::{cubic_target, CubicState, TcpConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcState {
    SlowStart,
    CongAvoid,
    FastRecovery,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SenderStats {
    pub segments_sent: u64,
    pub retransmissions: u64,
    pub ecn_reductions: u64,
    pub fast_retransmits: u64,
    pub timeouts: u64,
}

/// Sending side of a flow.
///
/// Sequence space is in bytes starting at zero. `next_seq` is the next byte
/// to put on the wire (it rewinds on a timeout), `highest_sent` is the
/// highest byte ever sent.
#[derive(Debug, Clone)]
pub struct TcpSender {
    pub flow: FlowKey,
    pub cfg: TcpConfig,
    pub cwnd_bytes: u64,
    pub ssthresh_bytes: u64,
    pub state: CcState,
    pub srtt_us: Option<f64>,
    pub rttvar_us: f64,
    pub rto: SimTime,
    pub next_seq: u64,
    pub highest_sent: u64,
    pub highest_acked: u64,
    pub dup_ack_count: u32,
    pub ecn_cwr_pending: bool,
    pub ecn_reduced_until: u64,
    /// NewReno recovery point.
    pub recover: u64,
    pub cubic: CubicState,
    pub stats: SenderStats,
    app_limit: Option<u64>,
    closed: bool,
    rtt_probe: Option<(u64, SimTime)>,
    rto_deadline: Option<SimTime>,
}

impl TcpSender {
    /// `app_bytes` is the transfer size, `None` for an unlimited source.
    pub fn new(flow: FlowKey, cfg: TcpConfig, app_bytes: Option<u64>) -> Self {
        TcpSender {
            flow,
            cfg,
            cwnd_bytes: cfg.initial_cwnd_segments * cfg.mss,
            ssthresh_bytes: u64::MAX,
            state: CcState::SlowStart,
            srtt_us: None,
            rttvar_us: 0.0,
            rto: cfg.initial_rto,
            next_seq: 0,
            highest_sent: 0,
            highest_acked: 0,
            dup_ack_count: 0,
            ecn_cwr_pending: false,
            ecn_reduced_until: 0,
            recover: 0,
            cubic: CubicState::new(cfg.cubic_c, cfg.cubic_beta),
            stats: SenderStats::default(),
            app_limit: app_bytes,
            closed: false,
            rtt_probe: None,
            rto_deadline: None,
        }
    }

    fn mss(&self) -> u64 {
        self.cfg.mss
    }

    /// Bytes sent but not yet cumulatively acknowledged.
    pub fn flight(&self) -> u64 {
        self.next_seq - self.highest_acked
    }

    pub fn is_complete(&self) -> bool {
        matches!(self.app_limit, Some(n) if self.highest_acked >= n)
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Stops the connection: nothing more is sent and ACKs are ignored.
    pub fn close(&mut self) {
        self.closed = true;
        self.rto_deadline = None;
    }

    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.rto_deadline
    }

    pub fn start(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        self.fill_window(now, out);
    }

    /// Processes an ACK; segments to transmit are appended to `out`.
    pub fn on_ack(&mut self, ack: &Packet, now: SimTime, out: &mut Vec<Packet>) {
        debug_assert_eq!(ack.direction, Direction::Ack);
        if self.closed || self.is_complete() {
            return;
        }
        let ack_no = ack.ack_bytes;
        let ece = ack.flags.contains(TcpFlags::ECE);

        if ack_no > self.highest_acked {
            let acked = ack_no - self.highest_acked;
            self.highest_acked = ack_no;
            if self.next_seq < ack_no {
                // After a go-back-N rewind the receiver may already hold data
                // past the rewind point.
                self.next_seq = ack_no;
            }
            self.dup_ack_count = 0;
            if let Some((end, sent_at)) = self.rtt_probe {
                if ack_no >= end {
                    self.rtt_sample(now - sent_at);
                    self.rtt_probe = None;
                }
            }

            let reduced = ece && self.ecn_reduce(now);

            if self.state == CcState::FastRecovery {
                if ack_no >= self.recover {
                    self.cwnd_bytes = self.ssthresh_bytes.max(self.mss());
                    self.state = CcState::CongAvoid;
                } else {
                    // Partial ACK: the next hole is lost too.
                    self.cwnd_bytes =
                        (self.cwnd_bytes.saturating_sub(acked) + self.mss()).max(self.mss());
                    self.retransmit_head(now, out);
                }
            } else if !reduced {
                self.grow(acked, now);
            }

            self.rto_deadline = if self.highest_acked >= self.highest_sent {
                None
            } else {
                Some(now + self.rto)
            };
        } else if ack_no == self.highest_acked && self.highest_sent > self.highest_acked {
            if ece {
                self.ecn_reduce(now);
            }
            self.dup_ack_count += 1;
            if self.state == CcState::FastRecovery {
                self.cwnd_bytes += self.mss();
            } else if self.dup_ack_count == 3 && self.highest_acked >= self.recover {
                self.enter_fast_recovery(now, out);
            }
        }

        if !self.is_complete() {
            self.fill_window(now, out);
        } else {
            self.rto_deadline = None;
        }
    }

    /// Reaction to an ECN echo: one multiplicative decrease per window of
    /// data. Returns whether the window was reduced.
    pub fn ecn_reduce(&mut self, now: SimTime) -> bool {
        if self.state == CcState::FastRecovery || self.highest_acked < self.ecn_reduced_until {
            return false;
        }
        let old = self.cwnd_bytes;
        self.cwnd_bytes = self.scaled_by_beta(old);
        self.ssthresh_bytes = self.cwnd_bytes;
        self.ecn_reduced_until = self.highest_sent;
        self.ecn_cwr_pending = true;
        self.state = CcState::CongAvoid;
        if self.cfg.variant == Variant::Cubic {
            let mss = self.mss();
            self.cubic.begin_after_reduction(now, old, mss);
        }
        self.stats.ecn_reductions += 1;
        true
    }

    /// Retransmission timer expiry.
    pub fn on_rto(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        if self.closed || self.highest_acked >= self.highest_sent {
            self.rto_deadline = None;
            return;
        }
        let mss = self.mss();
        self.ssthresh_bytes = (self.cwnd_bytes / 2).max(2 * mss);
        if self.cfg.variant == Variant::Cubic {
            self.cubic.w_max_bytes = self.cwnd_bytes;
            self.cubic.epoch_start = None;
        }
        self.cwnd_bytes = mss;
        self.state = CcState::SlowStart;
        self.dup_ack_count = 0;
        self.next_seq = self.highest_acked;
        self.recover = self.highest_sent;
        self.ecn_reduced_until = self.highest_sent;
        self.rtt_probe = None;
        self.rto = SimTime(self.rto.0.saturating_mul(2)).min(self.cfg.max_rto);
        self.stats.timeouts += 1;
        self.rto_deadline = Some(now + self.rto);
        self.fill_window(now, out);
    }

    fn scaled_by_beta(&self, w: u64) -> u64 {
        // The epsilon keeps exact products such as 100 MSS * 0.7 from
        // flooring one byte low.
        let scaled = (w as f64 * self.cfg.beta() + 1e-6).floor() as u64;
        scaled.max(self.mss())
    }

    fn enter_fast_recovery(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        let mss = self.mss();
        let old = self.cwnd_bytes;
        self.ssthresh_bytes = ((old as f64 * self.cfg.beta() + 1e-6).floor() as u64).max(2 * mss);
        self.recover = self.highest_sent;
        self.ecn_reduced_until = self.highest_sent;
        if self.cfg.variant == Variant::Cubic {
            self.cubic.begin_after_reduction(now, old, mss);
        }
        self.cwnd_bytes = self.ssthresh_bytes + 3 * mss;
        self.state = CcState::FastRecovery;
        self.rtt_probe = None;
        self.stats.fast_retransmits += 1;
        self.retransmit_head(now, out);
    }

    fn retransmit_head(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        let seq = self.highest_acked;
        let len = self.segment_len(seq);
        if len == 0 {
            return;
        }
        out.push(self.make_segment(seq, len));
        self.stats.segments_sent += 1;
        self.stats.retransmissions += 1;
        self.rto_deadline = Some(now + self.rto);
    }

    fn grow(&mut self, acked: u64, now: SimTime) {
        let mss = self.mss();
        match self.state {
            CcState::SlowStart => {
                self.cwnd_bytes += acked.min(2 * mss);
                if self.cwnd_bytes >= self.ssthresh_bytes {
                    self.state = CcState::CongAvoid;
                }
            }
            CcState::CongAvoid => match self.cfg.variant {
                Variant::Reno => {
                    self.cwnd_bytes += (mss * acked / self.cwnd_bytes).max(1);
                }
                Variant::Cubic => {
                    let epoch = match self.cubic.epoch_start {
                        Some(t) => t,
                        None => {
                            self.cubic.begin_from(now, self.cwnd_bytes, mss);
                            now
                        }
                    };
                    let target = cubic_target(now - epoch, &self.cubic, mss);
                    let cwnd = self.cwnd_bytes as f64;
                    let inc = if target > self.cwnd_bytes {
                        // At most +50% per window.
                        let gap = (target - self.cwnd_bytes) as f64;
                        (gap / cwnd).min(0.5) * acked as f64
                    } else {
                        mss as f64 * acked as f64 / (100.0 * cwnd)
                    };
                    self.cwnd_bytes += inc.round().max(1.0) as u64;
                }
            },
            CcState::FastRecovery => {}
        }
    }

    fn rtt_sample(&mut self, rtt: SimTime) {
        let r = rtt.as_micros() as f64;
        match self.srtt_us {
            None => {
                self.srtt_us = Some(r);
                self.rttvar_us = r / 2.0;
            }
            Some(srtt) => {
                self.rttvar_us = 0.75 * self.rttvar_us + 0.25 * (srtt - r).abs();
                self.srtt_us = Some(0.875 * srtt + 0.125 * r);
            }
        }
        let raw = self.srtt_us.unwrap_or(r) + 4.0 * self.rttvar_us;
        self.rto = SimTime(raw.ceil() as u64).clamp(self.cfg.min_rto, self.cfg.max_rto);
    }

    fn app_end(&self) -> u64 {
        if self.closed {
            self.next_seq
        } else {
            self.app_limit.unwrap_or(u64::MAX)
        }
    }

    fn segment_len(&self, seq: u64) -> u64 {
        self.app_end().saturating_sub(seq).min(self.mss())
    }

    fn make_segment(&self, seq: u64, len: u64) -> Packet {
        let mut pkt = Packet::data(self.flow, seq, len as u32);
        if self.app_limit == Some(seq + len) {
            pkt.flags |= TcpFlags::FIN;
        }
        pkt
    }

    fn fill_window(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        if self.closed {
            return;
        }
        loop {
            let len = self.segment_len(self.next_seq);
            if len == 0 || self.flight() + len > self.cwnd_bytes {
                break;
            }
            let seq = self.next_seq;
            let mut pkt = self.make_segment(seq, len);
            let fresh = seq >= self.highest_sent;
            if fresh {
                if self.ecn_cwr_pending {
                    pkt.flags |= TcpFlags::CWR;
                    self.ecn_cwr_pending = false;
                }
                if self.rtt_probe.is_none() {
                    self.rtt_probe = Some((seq + len, now));
                }
            } else {
                self.stats.retransmissions += 1;
            }
            self.next_seq += len;
            self.highest_sent = self.highest_sent.max(self.next_seq);
            assert!(
                self.flight() <= self.cwnd_bytes,
                "flight {} exceeds cwnd {}",
                self.flight(),
                self.cwnd_bytes
            );
            self.stats.segments_sent += 1;
            if self.rto_deadline.is_none() {
                self.rto_deadline = Some(now + self.rto);
            }
            out.push(pkt);
        }
    }
}
