//! Property tests over the public API.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use ecnsim::controller::{Controller, ControllerConfig, PolicyFilter};
use ecnsim::experiment::{aggregate, FlowClass, FlowRecord, RunResult};
use ecnsim::net::{Direction, FlowKey, LinkSpec, NodeId, Packet, PortId, TcpFlags};
use ecnsim::scenario::{
    experiment_topology, named_topology, traffic_template, SchemeName, SchemeSpec, EXPERIMENTS,
};
use ecnsim::sim::{RandomStream, SimTime};
use ecnsim::switch::{
    FlowRule, FlowStatsEntry, Match, PortSnapshot, PortStats, SwitchSnapshot, BASE_PRIORITY,
};
use ecnsim::tcp::{cubic_target, CubicState, TcpConfig, TcpReceiver, TcpSender};

const MSS: u64 = 1460;

fn key(i: u16) -> FlowKey {
    FlowKey::new(NodeId::host(i), NodeId::host(99), 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Back-to-back departures on one link arrive in order, one per send.
    #[test]
    fn links_keep_fifo_order(sizes in prop::collection::vec(40u64..=1500, 1..60),
                             gaps in prop::collection::vec(0u64..400, 60),
                             prop_us in 0u64..5000) {
        let mut link = LinkSpec::new(
            (NodeId::host(0), PortId(0)),
            (NodeId::switch(0), PortId(0)),
            100_000_000,
        );
        link.prop_delay_us = prop_us;
        let mut free_at = SimTime::ZERO;
        let mut last_arrival = SimTime::ZERO;
        let mut delivered = 0;
        for (i, &size) in sizes.iter().enumerate() {
            let depart = free_at + SimTime(gaps[i]);
            let arrive = link.deliver(size, depart);
            prop_assert!(arrive > last_arrival || i == 0);
            last_arrival = arrive;
            free_at = arrive - SimTime(prop_us);
            delivered += 1;
        }
        prop_assert_eq!(delivered, sizes.len());
    }

    /// Random loss and CE on a looped-back transfer: new data never leaves
    /// more than cwnd outstanding, and completion means every byte was
    /// acknowledged.
    #[test]
    fn sender_respects_cwnd_and_completes(size in 1u64..400_000,
                                          p_loss in 0.0f64..0.2,
                                          p_ce in 0.0f64..0.5,
                                          seed: u64) {
        let flow = key(1);
        let mut rng = RandomStream::new(seed, "prop-sender");
        let mut tx = TcpSender::new(flow, TcpConfig::default(), Some(size));
        let mut rx = TcpReceiver::new(flow);
        let mut now = SimTime::ZERO;
        let mut out = Vec::new();
        tx.start(now, &mut out);
        for _ in 0..5000 {
            if tx.is_complete() {
                break;
            }
            now += SimTime::from_millis(1);
            if out.is_empty() {
                if let Some(d) = tx.rto_deadline() {
                    now = now.max(d);
                    tx.on_rto(now, &mut out);
                }
                continue;
            }
            for mut seg in std::mem::take(&mut out) {
                if rng.uniform() < p_loss {
                    continue;
                }
                if rng.uniform() < p_ce {
                    seg.ecn = ecnsim::net::Ecn::Ce;
                }
                let ack = rx.on_data(&seg);
                let sent_before = tx.highest_sent;
                tx.on_ack(&ack, now, &mut out);
                if tx.highest_sent > sent_before {
                    prop_assert!(tx.next_seq - tx.highest_acked <= tx.cwnd_bytes);
                }
            }
        }
        prop_assert!(tx.is_complete());
        prop_assert_eq!(tx.highest_acked, size);
    }

    /// The receiver acknowledges exactly the contiguous prefix it holds.
    #[test]
    fn receiver_acks_contiguous_prefix(order in Just((0..30u64).collect::<Vec<_>>()).prop_shuffle()) {
        let flow = key(2);
        let mut rx = TcpReceiver::new(flow);
        let mut have = BTreeSet::new();
        for &i in &order {
            have.insert(i);
            let ack = rx.on_data(&Packet::data(flow, i * MSS, MSS as u32));
            let prefix = (0..).take_while(|j| have.contains(j)).count() as u64;
            prop_assert_eq!(ack.ack_bytes, prefix * MSS);
            prop_assert!(!ack.flags.contains(TcpFlags::ECE));
        }
    }

    /// The cubic curve passes through w_max at K and is continuous there.
    #[test]
    fn cubic_hits_w_max_at_k(w_max_segments in 2u64..5000) {
        let mut s = CubicState::new(0.4, 0.7);
        s.begin_after_reduction(SimTime::ZERO, w_max_segments * MSS, MSS);
        let k = SimTime::from_secs_f64(s.k_secs);
        let w_max = (w_max_segments * MSS) as i64;
        for t in [k.saturating_sub(SimTime(1)), k, k + SimTime(1)] {
            let w = cubic_target(t, &s, MSS) as i64;
            prop_assert!((w - w_max).abs() <= 1, "W({:?}) = {} vs {}", t, w, w_max);
        }
    }

    /// Two controllers fed the same snapshots make the same decisions, and
    /// never penalize a protected flow.
    #[test]
    fn controller_is_a_function_of_snapshots(
        rounds in prop::collection::vec(prop::collection::vec(0u64..400_000, 6), 2..6),
        protected in prop::collection::btree_set(0u16..6, 0..4),
    ) {
        let cfg = ControllerConfig {
            policy: PolicyFilter {
                protected_flows: protected.iter().map(|&i| key(i)).collect(),
            },
            ..ControllerConfig::default()
        };
        let rules: Vec<FlowRule> = (0..6)
            .map(|i| FlowRule::forward(Match::data(key(i)), BASE_PRIORITY, PortId(1)))
            .collect();
        let mut totals = [0u64; 6];
        let mut snaps = Vec::new();
        for (r, deltas) in rounds.iter().enumerate() {
            for (t, d) in totals.iter_mut().zip(deltas) {
                *t += d;
            }
            snaps.push(SwitchSnapshot {
                switch: NodeId::switch(0),
                taken_at: SimTime::from_millis(100 * r as u64),
                ports: vec![PortSnapshot {
                    port: PortId(1),
                    capacity_bps: 100_000_000,
                    stats: PortStats { tx_bytes: totals.iter().sum(), ..Default::default() },
                    queue_bytes: 0,
                    avg_queue_bytes: 0.0,
                }],
                flows: (0..6)
                    .map(|i| FlowStatsEntry {
                        flow: key(i),
                        direction: Direction::Data,
                        out_port: PortId(1),
                        tx_bytes: totals[i as usize],
                    })
                    .collect(),
                rules: rules.clone(),
            });
        }
        let mut a = Controller::new(cfg.clone());
        let mut b = Controller::new(cfg.clone());
        for s in &snaps {
            let oa = a.on_probe(s.taken_at, std::slice::from_ref(s));
            let ob = b.on_probe(s.taken_at, std::slice::from_ref(s));
            prop_assert_eq!(&oa, &ob);
            for inst in &oa.installs {
                match inst.rule.matcher {
                    Match::Exact { flow, .. } => prop_assert!(!cfg.policy.protected_flows.contains(&flow)),
                    Match::Wildcard => prop_assert!(false, "wildcard CC rule"),
                }
            }
        }
    }

    /// Summaries do not depend on the order results are listed in.
    #[test]
    fn aggregation_is_permutation_invariant(
        fcts in prop::collection::vec((1u64..5_000_000, 0u64..200_000_000, any::<bool>()), 1..12),
        perm_seed: u64,
    ) {
        let results: Vec<RunResult> = fcts
            .iter()
            .enumerate()
            .map(|(i, &(fct, bulk_bytes, done))| fake_result(i as u64 + 1, fct, bulk_bytes, done))
            .collect();
        let mut shuffled = results.clone();
        let mut rng = RandomStream::new(perm_seed, "perm");
        for i in (1..shuffled.len()).rev() {
            let j = rng.uniform_u64_inclusive(i as u64) as usize;
            shuffled.swap(i, j);
        }
        let a = aggregate(&results);
        let b = aggregate(&shuffled);
        prop_assert_eq!(a.to_json(), b.to_json());
    }

    /// Jittered starts are a function of the seed and stay within bounds.
    #[test]
    fn jitter_depends_only_on_seed(seed: u64) {
        let base = traffic_template("t3-mice").unwrap();
        let a = base.jittered(&mut RandomStream::new(seed, "traffic-jitter"));
        let b = base.jittered(&mut RandomStream::new(seed, "traffic-jitter"));
        let c = base.jittered(&mut RandomStream::new(seed.wrapping_add(1), "traffic-jitter"));
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a, &c);
        for (j, f) in a.flows().zip(base.flows()) {
            prop_assert!(j.start_at >= f.start_at);
            prop_assert!(j.start_at <= f.start_at + SimTime(base.start_jitter_us));
        }
    }
}

fn fake_result(seed: u64, fct_us: u64, bulk_bytes: u64, mice_done: bool) -> RunResult {
    let start = SimTime::from_secs(10);
    let end = mice_done.then(|| start + SimTime(fct_us));
    let run_end = SimTime::from_secs(130);
    RunResult {
        run_id: format!("t1-mice/sdn-ecn/{seed}"),
        seed,
        scheme: SchemeName::SdnEcn,
        topology: "t1".into(),
        traffic: "t1-mice".into(),
        flows: vec![
            FlowRecord::new(
                key(0),
                FlowClass::Bulk,
                bulk_bytes,
                SimTime::ZERO,
                Some(SimTime::from_secs(120)),
                run_end,
            ),
            FlowRecord::new(
                key(1),
                FlowClass::Bulk,
                bulk_bytes / 2,
                SimTime::ZERO,
                Some(SimTime::from_secs(120)),
                run_end,
            ),
            FlowRecord::new(key(2), FlowClass::Mice, 2_000_000, start, end, run_end),
        ],
        switches: vec![],
        cc_rule_installs: 0,
        run_end_us: run_end.as_micros(),
        events_dispatched: 0,
        invariants: Default::default(),
    }
}

#[test]
fn catalog_routes_are_loop_free() {
    for name in EXPERIMENTS {
        let topo = experiment_topology(name).unwrap();
        let traffic = traffic_template(name).unwrap();
        for f in traffic.flows() {
            for (src, dst) in [(f.key.src, f.key.dst), (f.key.dst, f.key.src)] {
                let hops = topo.route(src, dst).unwrap();
                assert!(!hops.is_empty(), "{name}: {src}->{dst} has no hops");
                let switches: BTreeSet<NodeId> = hops.iter().map(|h| h.switch).collect();
                assert_eq!(
                    switches.len(),
                    hops.len(),
                    "{name}: {src}->{dst} revisits a switch"
                );
            }
        }
    }
}

#[test]
fn every_scheme_builds_on_every_topology() {
    for topo_name in ["t1", "t2", "t3"] {
        let topo = named_topology(topo_name).unwrap();
        topo.validate().unwrap();
        for scheme in SchemeName::ALL {
            SchemeSpec::named(scheme).validate().unwrap();
        }
    }
    let names: BTreeMap<&str, SchemeName> =
        SchemeName::ALL.iter().map(|s| (s.as_str(), *s)).collect();
    assert_eq!(names.len(), 4);
    for (text, s) in names {
        assert_eq!(text.parse::<SchemeName>().unwrap(), s);
    }
}
