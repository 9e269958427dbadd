use std::collections::BTreeMap;
use std::io::{self, Write};

use crate::controller::Controller;
use crate::net::{Direction, Ecn, FlowKey, MarkOrigin, NodeId, NodeKind, Packet, PortId};
use crate::scenario::{SchemeSpec, TopologySpec, TrafficSpec};
use crate::sim::{Event, EventHandle, EventQueue, RandomStream, SimTime};
use crate::switch::{
    EgressPort, EnqueueOutcome, FlowRule, Forwarding, InstallOutcome, Match, PortQueue,
    PortQueueConfig, Switch, Transmission, BASE_PRIORITY, DEFAULT_BUFFER_BYTES,
};
use crate::tcp::{AppFlowSpec, FlowKind, TcpConfig, TcpReceiver, TcpSender};

use super::{FlowClass, FlowRecord, InvariantReport, SwitchTotals};

#[derive(Debug, Clone)]
pub(crate) enum Payload {
    Arrival { node: NodeId, packet: Packet },
    HostEnqueue { host: NodeId, packet: Packet },
    Dequeue { node: NodeId, port: PortId },
    FlowStart(usize),
    FlowStop(usize),
    TcpTimer(usize),
    Probe,
    RuleExpiry(NodeId),
    RunEnd,
}

impl Payload {
    fn kind(&self) -> &'static str {
        match self {
            Payload::Arrival { .. } => "packet-arrival",
            Payload::HostEnqueue { .. } => "host-enqueue",
            Payload::Dequeue { .. } => "packet-dequeue",
            Payload::FlowStart(_) => "flow-start",
            Payload::FlowStop(_) => "flow-stop",
            Payload::TcpTimer(_) => "tcp-timer",
            Payload::Probe => "controller-probe",
            Payload::RuleExpiry(_) => "rule-expiry",
            Payload::RunEnd => "run-end",
        }
    }
}

/// Optional log sinks for one run.
#[derive(Default)]
pub struct Tracer<'a> {
    pub events: Option<&'a mut dyn Write>,
    pub rules: Option<&'a mut dyn Write>,
}

struct FlowState {
    spec: AppFlowSpec,
    sender: TcpSender,
    receiver: TcpReceiver,
    end: Option<SimTime>,
    timer: Option<EventHandle>,
}

pub(crate) struct RunOutput {
    pub flows: Vec<FlowRecord>,
    pub switches: Vec<SwitchTotals>,
    pub cc_rule_installs: u64,
    pub run_end: SimTime,
    pub events_dispatched: u64,
    pub invariants: InvariantReport,
}

pub(crate) struct World<'t> {
    topo: TopologySpec,
    hosts: Vec<EgressPort>,
    send_jitter_us: u64,
    host_jitter: Vec<RandomStream>,
    /// Latest scheduled enqueue per host, so jitter never reorders.
    host_release: Vec<SimTime>,
    switches: Vec<Switch>,
    flows: Vec<FlowState>,
    flow_index: BTreeMap<FlowKey, usize>,
    controller: Option<Controller>,
    probe_interval: SimTime,
    end: SimTime,
    stop_when_mice_done: bool,
    mice_pending: usize,
    halted: bool,
    cc_windows: BTreeMap<(NodeId, FlowKey), Vec<(SimTime, SimTime)>>,
    cc_rule_installs: u64,
    cc_marks_checked: u64,
    cc_marks_outside_window: u64,
    ce_delivered: u64,
    ce_lost_on_miss: u64,
    tracer: Tracer<'t>,
    io_error: Option<io::Error>,
}

impl<'t> World<'t> {
    pub fn new(
        topo: &TopologySpec,
        traffic: &TrafficSpec,
        scheme: &SchemeSpec,
        seed: u64,
        end: SimTime,
        stop_when_mice_done: bool,
        tracer: Tracer<'t>,
    ) -> Self {
        let port_for = |node: NodeId, port: PortId, queue: PortQueueConfig| {
            let link = topo
                .ports_of(node)
                .into_iter()
                .find(|(p, _)| *p == port)
                .map(|(_, l)| l)
                .expect("validated topology");
            let label = format!("red/{node}/{port}");
            EgressPort::new(
                link.peer((node, port)).expect("link end"),
                link.capacity_bps,
                link.prop_delay_us,
                PortQueue::new(queue, link.capacity_bps, RandomStream::new(seed, &label)),
            )
        };
        let hosts: Vec<EgressPort> = topo
            .hosts
            .iter()
            .map(|h| {
                port_for(
                    h.id,
                    PortId(0),
                    PortQueueConfig::DropTail {
                        limit_bytes: DEFAULT_BUFFER_BYTES,
                    },
                )
            })
            .collect();
        let switches = topo
            .switches
            .iter()
            .map(|s| {
                let ports = topo
                    .ports_of(s.id)
                    .into_iter()
                    .map(|(p, _)| port_for(s.id, p, scheme.queue))
                    .collect();
                Switch::new(s.id, s.name.clone(), ports)
            })
            .collect();

        let tcp = TcpConfig::with_variant(scheme.host_variant);
        let flows: Vec<FlowState> = traffic
            .flows()
            .map(|spec| {
                let app = match spec.kind {
                    FlowKind::Bulk { .. } => None,
                    FlowKind::Mice { size_bytes } => Some(size_bytes),
                };
                FlowState {
                    spec: spec.clone(),
                    sender: TcpSender::new(spec.key, tcp, app),
                    receiver: TcpReceiver::new(spec.key),
                    end: None,
                    timer: None,
                }
            })
            .collect();
        let flow_index = flows
            .iter()
            .enumerate()
            .map(|(i, f)| (f.spec.key, i))
            .collect();
        let mice_pending = flows
            .iter()
            .filter(|f| matches!(f.spec.kind, FlowKind::Mice { .. }))
            .count();
        let (controller, probe_interval) = match &scheme.controller {
            Some(cfg) => (Some(Controller::new(cfg.clone())), cfg.probe_interval()),
            None => (None, SimTime::ZERO),
        };

        let host_jitter = topo
            .hosts
            .iter()
            .map(|h| RandomStream::new(seed, &format!("send-jitter/{}", h.id)))
            .collect();
        World {
            topo: topo.clone(),
            host_release: vec![SimTime::ZERO; hosts.len()],
            hosts,
            send_jitter_us: traffic.send_jitter_us,
            host_jitter,
            switches,
            flows,
            flow_index,
            controller,
            probe_interval,
            end,
            stop_when_mice_done,
            mice_pending,
            halted: false,
            cc_windows: BTreeMap::new(),
            cc_rule_installs: 0,
            cc_marks_checked: 0,
            cc_marks_outside_window: 0,
            ce_delivered: 0,
            ce_lost_on_miss: 0,
            tracer,
            io_error: None,
        }
    }

    fn write_rule_line(&mut self, now: SimTime, switch: NodeId, rule: &FlowRule, action: &str) {
        if let Some(w) = self.tracer.rules.as_mut() {
            let r = writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                now.as_micros(),
                switch,
                rule.matcher,
                rule.priority,
                rule.hard_timeout.as_micros(),
                action
            );
            if let Err(e) = r {
                self.io_error.get_or_insert(e);
            }
        }
    }

    fn write_event_line(&mut self, ev: &Event<Payload>) {
        let Some(w) = self.tracer.events.as_mut() else {
            return;
        };
        let summary = match &ev.payload {
            Payload::Arrival { node, packet } | Payload::HostEnqueue { host: node, packet } => {
                match packet.direction {
                    Direction::Data => format!(
                        "{node} {} data seq={} len={} ecn={:?} flags={:?}",
                        packet.flow,
                        packet.seq_bytes,
                        packet.payload_bytes(),
                        packet.ecn,
                        packet.flags
                    ),
                    Direction::Ack => format!(
                        "{node} {} ack={} flags={:?}",
                        packet.flow, packet.ack_bytes, packet.flags
                    ),
                }
            }
            Payload::Dequeue { node, port } => format!("{node} {port}"),
            Payload::FlowStart(i) | Payload::FlowStop(i) | Payload::TcpTimer(i) => {
                self.flows[*i].spec.key.to_string()
            }
            Payload::RuleExpiry(sw) => sw.to_string(),
            Payload::Probe | Payload::RunEnd => String::new(),
        };
        let r = writeln!(
            w,
            "{}\t{}\t{}\t{}",
            ev.fire_at.as_micros(),
            ev.seq,
            ev.payload.kind(),
            summary
        );
        if let Err(e) = r {
            self.io_error.get_or_insert(e);
        }
    }

    /// Installs the permanent shortest-path rules for both directions of
    /// every flow and schedules the run's initial events.
    pub fn prime(&mut self, q: &mut EventQueue<Payload>) {
        let mut base = Vec::new();
        for f in &self.flows {
            let key = f.spec.key;
            for (src, dst, direction) in [
                (key.src, key.dst, Direction::Data),
                (key.dst, key.src, Direction::Ack),
            ] {
                let hops = self.topo.route(src, dst).expect("validated traffic");
                for hop in hops {
                    let rule = FlowRule::forward(
                        Match::Exact {
                            flow: key,
                            direction,
                        },
                        BASE_PRIORITY,
                        hop.out_port,
                    );
                    base.push((hop.switch, rule));
                }
            }
        }
        for (sw, rule) in base {
            self.switches[sw.index as usize].install_rule(rule);
            self.write_rule_line(SimTime::ZERO, sw, &rule, "install");
        }

        for (i, f) in self.flows.iter().enumerate() {
            if f.spec.start_at <= self.end {
                q.schedule(f.spec.start_at, Payload::FlowStart(i));
            }
            if let FlowKind::Bulk { duration_s } = f.spec.kind {
                let stop = f.spec.start_at + SimTime::from_secs_f64(duration_s);
                if stop <= self.end {
                    q.schedule(stop, Payload::FlowStop(i));
                }
            }
        }
        if self.controller.is_some() {
            q.schedule(SimTime::ZERO, Payload::Probe);
        }
        q.schedule(self.end, Payload::RunEnd);
    }

    pub fn run(mut self, q: &mut EventQueue<Payload>) -> io::Result<RunOutput> {
        self.prime(q);
        let mut dispatched = 0;
        while let Some(ev) = q.pop_until(self.end) {
            dispatched += 1;
            self.write_event_line(&ev);
            self.dispatch(q, ev);
            if self.halted {
                break;
            }
        }
        let run_end = if self.halted { q.now() } else { self.end };
        if let Some(e) = self.io_error.take() {
            return Err(e);
        }
        Ok(self.finish(q, run_end, dispatched))
    }

    fn dispatch(&mut self, q: &mut EventQueue<Payload>, ev: Event<Payload>) {
        let now = ev.fire_at;
        match ev.payload {
            Payload::Arrival { node, packet } => match node.kind {
                NodeKind::Switch => self.switch_arrival(q, node, packet, now),
                NodeKind::Host => self.host_arrival(q, node, packet, now),
            },
            Payload::HostEnqueue { host, packet } => {
                self.hosts[host.index as usize]
                    .queue
                    .enqueue(packet, false, now);
                self.try_transmit(q, host, PortId(0), now);
            }
            Payload::Dequeue { node, port } => {
                self.egress_mut(node, port).transmit_done(now);
                self.try_transmit(q, node, port, now);
            }
            Payload::FlowStart(i) => {
                let mut out = Vec::new();
                self.flows[i].sender.start(now, &mut out);
                self.host_send(q, self.flows[i].spec.key.src, out, now);
                self.sync_timer(q, i);
            }
            Payload::FlowStop(i) => {
                let f = &mut self.flows[i];
                f.sender.close();
                f.end = Some(now);
                if let Some(h) = f.timer.take() {
                    q.cancel(h);
                }
            }
            Payload::TcpTimer(i) => {
                self.flows[i].timer = None;
                if self.flows[i]
                    .sender
                    .rto_deadline()
                    .is_some_and(|d| d <= now)
                {
                    let mut out = Vec::new();
                    self.flows[i].sender.on_rto(now, &mut out);
                    self.host_send(q, self.flows[i].spec.key.src, out, now);
                }
                self.sync_timer(q, i);
            }
            Payload::Probe => self.probe(q, now),
            Payload::RuleExpiry(sw) => {
                let expired = self.switches[sw.index as usize].expire_rules(now);
                for rule in expired {
                    self.write_rule_line(now, sw, &rule, "expire");
                }
            }
            Payload::RunEnd => {}
        }
    }

    fn egress_mut(&mut self, node: NodeId, port: PortId) -> &mut EgressPort {
        match node.kind {
            NodeKind::Host => &mut self.hosts[node.index as usize],
            NodeKind::Switch => self.switches[node.index as usize].port_mut(port),
        }
    }

    fn try_transmit(
        &mut self,
        q: &mut EventQueue<Payload>,
        node: NodeId,
        port: PortId,
        now: SimTime,
    ) {
        let tx = match node.kind {
            NodeKind::Host => self.hosts[node.index as usize].begin_transmit(now),
            NodeKind::Switch => self.switches[node.index as usize].begin_transmit(port, now),
        };
        let Some(Transmission {
            packet,
            arrives_at,
            port_free_at,
        }) = tx
        else {
            return;
        };
        let (peer, _) = self.egress_mut(node, port).peer;
        q.schedule(port_free_at, Payload::Dequeue { node, port });
        q.schedule(arrives_at, Payload::Arrival { node: peer, packet });
    }

    fn host_send(
        &mut self,
        q: &mut EventQueue<Payload>,
        host: NodeId,
        pkts: Vec<Packet>,
        now: SimTime,
    ) {
        if pkts.is_empty() {
            return;
        }
        let h = host.index as usize;
        if self.send_jitter_us == 0 {
            for p in pkts {
                self.hosts[h].queue.enqueue(p, false, now);
            }
            self.try_transmit(q, host, PortId(0), now);
            return;
        }
        for packet in pkts {
            let delay = self.host_jitter[h].uniform_u64_inclusive(self.send_jitter_us);
            let at = (now + SimTime(delay)).max(self.host_release[h]);
            self.host_release[h] = at;
            q.schedule(at, Payload::HostEnqueue { host, packet });
        }
    }

    fn switch_arrival(
        &mut self,
        q: &mut EventQueue<Payload>,
        sw: NodeId,
        pkt: Packet,
        now: SimTime,
    ) {
        let flow = pkt.flow;
        let was_ce = pkt.ecn == Ecn::Ce;
        match self.switches[sw.index as usize].receive(pkt, now) {
            Forwarding::Miss => {
                if was_ce {
                    self.ce_lost_on_miss += 1;
                }
            }
            Forwarding::Forwarded { port, outcome, .. } => {
                if outcome == EnqueueOutcome::EnqueuedMarked(MarkOrigin::CcRule) {
                    self.cc_marks_checked += 1;
                    let inside = self
                        .cc_windows
                        .get(&(sw, flow))
                        .is_some_and(|ws| ws.iter().any(|&(a, b)| a <= now && now < b));
                    if !inside {
                        self.cc_marks_outside_window += 1;
                    }
                }
                self.try_transmit(q, sw, port, now);
            }
        }
    }

    fn host_arrival(
        &mut self,
        q: &mut EventQueue<Payload>,
        host: NodeId,
        pkt: Packet,
        now: SimTime,
    ) {
        assert_eq!(
            pkt.destination(),
            host,
            "packet delivered to the wrong host"
        );
        let Some(&i) = self.flow_index.get(&pkt.flow) else {
            return;
        };
        match pkt.direction {
            Direction::Data => {
                if pkt.ecn == Ecn::Ce {
                    self.ce_delivered += 1;
                }
                let ack = self.flows[i].receiver.on_data(&pkt);
                self.host_send(q, host, vec![ack], now);
            }
            Direction::Ack => {
                let mut out = Vec::new();
                let f = &mut self.flows[i];
                f.sender.on_ack(&pkt, now, &mut out);
                let finished = f.end.is_none() && f.sender.is_complete();
                self.host_send(q, host, out, now);
                if finished {
                    let f = &mut self.flows[i];
                    f.end = Some(now);
                    if let Some(h) = f.timer.take() {
                        q.cancel(h);
                    }
                    self.mice_pending -= 1;
                    if self.stop_when_mice_done && self.mice_pending == 0 {
                        self.halted = true;
                    }
                } else {
                    self.sync_timer(q, i);
                }
            }
        }
    }

    /// Keeps at most one timer event per flow, no later than the sender's
    /// retransmission deadline. A timer that fires early just re-arms.
    fn sync_timer(&mut self, q: &mut EventQueue<Payload>, i: usize) {
        let f = &mut self.flows[i];
        match f.sender.rto_deadline() {
            None => {
                if let Some(h) = f.timer.take() {
                    q.cancel(h);
                }
            }
            Some(deadline) => {
                if f.timer.is_some_and(|h| h.fire_at() <= deadline) {
                    return;
                }
                if let Some(h) = f.timer.take() {
                    q.cancel(h);
                }
                f.timer = Some(q.schedule(deadline, Payload::TcpTimer(i)));
            }
        }
    }

    fn probe(&mut self, q: &mut EventQueue<Payload>, now: SimTime) {
        let snapshots: Vec<_> = self.switches.iter().map(|s| s.read_stats(now)).collect();
        let Some(controller) = self.controller.as_mut() else {
            return;
        };
        let outcome = controller.on_probe(now, &snapshots);
        for install in outcome.installs {
            let sw = install.switch;
            let rule = install.rule;
            let result = self.switches[sw.index as usize].install_rule(rule);
            self.cc_rule_installs += 1;
            let action = match result {
                InstallOutcome::Added => "install",
                InstallOutcome::Refreshed => "refresh",
            };
            self.write_rule_line(now, sw, &rule, action);
            if let (Match::Exact { flow, .. }, Some(expires)) = (rule.matcher, rule.expires_at()) {
                self.cc_windows
                    .entry((sw, flow))
                    .or_default()
                    .push((rule.installed_at, expires));
                q.schedule(expires, Payload::RuleExpiry(sw));
            }
        }
        let next = now + self.probe_interval;
        if self.probe_interval > SimTime::ZERO && next <= self.end {
            q.schedule(next, Payload::Probe);
        }
    }

    fn finish(self, q: &EventQueue<Payload>, run_end: SimTime, dispatched: u64) -> RunOutput {
        let mut inv = InvariantReport {
            cc_marks: self.cc_marks_checked,
            cc_marks_outside_window: self.cc_marks_outside_window,
            ce_delivered: self.ce_delivered,
            ..Default::default()
        };

        let mut ports: Vec<(String, &EgressPort)> = self
            .hosts
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("h{i}/p0"), p))
            .collect();
        for s in &self.switches {
            for (j, p) in s.ports.iter().enumerate() {
                ports.push((format!("{}/p{j}", s.id), p));
            }
        }
        let mut resident_ce = 0;
        let mut ce_dropped = 0;
        for (name, p) in &ports {
            let st = &p.queue.stats;
            let resident = p.queue.len() as u64;
            if st.rx_packets != st.tx_packets + st.drops_total + resident {
                inv.conservation_violations.push(format!(
                    "{name}: rx={} tx={} dropped={} resident={}",
                    st.rx_packets, st.tx_packets, st.drops_total, resident
                ));
            }
            resident_ce += p.queue.packets().filter(|p| p.ecn == Ecn::Ce).count() as u64;
            ce_dropped += st.ce_dropped;
        }
        let in_flight_ce = q
            .pending_payloads()
            .filter(|p| matches!(p, Payload::Arrival { packet, .. } if packet.ecn == Ecn::Ce))
            .count() as u64;
        inv.ce_marked = self.switches.iter().map(|s| s.ce_marks_total()).sum();
        inv.ce_accounted =
            self.ce_delivered + ce_dropped + resident_ce + in_flight_ce + self.ce_lost_on_miss;

        let flows: Vec<FlowRecord> = self
            .flows
            .iter()
            .map(|f| {
                let class = match f.spec.kind {
                    FlowKind::Bulk { .. } => FlowClass::Bulk,
                    FlowKind::Mice { .. } => FlowClass::Mice,
                };
                FlowRecord::new(
                    f.spec.key,
                    class,
                    f.sender.highest_acked,
                    f.spec.start_at,
                    f.end,
                    run_end,
                )
            })
            .collect();

        let mut delivered: BTreeMap<NodeId, u64> = BTreeMap::new();
        for r in &flows {
            *delivered.entry(r.key.dst).or_default() += r.bytes_acked;
        }
        for (host, bytes) in delivered {
            let (sw, port) = self.hosts[host.index as usize].peer;
            let wire = self.switches[sw.index as usize]
                .port(port)
                .queue
                .stats
                .tx_bytes;
            if bytes > wire {
                inv.phantom_violations.push(format!(
                    "{host}: acked {bytes} B but only {wire} B left {sw}/{port}"
                ));
            }
        }

        let switches = self
            .switches
            .iter()
            .map(|s| SwitchTotals {
                switch: s.id,
                name: s.name.clone(),
                drops: s.drops_total(),
                ce_marks: s.ce_marks_total(),
                cc_marks: s.ports.iter().map(|p| p.queue.stats.cc_marks).sum(),
            })
            .collect();

        RunOutput {
            flows,
            switches,
            cc_rule_installs: self.cc_rule_installs,
            run_end,
            events_dispatched: dispatched,
            invariants: inv,
        }
    }
}
