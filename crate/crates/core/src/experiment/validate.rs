//! Self-checks behind `ecnsim validate`: randomized oracle comparisons for
//! the controller, RED and ECN logic, plus invariant and determinism checks
//! on short simulations.

use std::collections::BTreeMap;

use crate::controller::{
    compute_t, detect_congestion, select_flows, Controller, ControllerConfig, DirectedLink,
    PolicyFilter,
};
use crate::net::{Ecn, FlowKey, NodeId, Packet, PortId, TcpFlags};
use crate::scenario::SchemeName;
use crate::sim::{RandomStream, SimTime};
use crate::switch::{red_decision, PortSnapshot, PortStats, RedConfig, RedVerdict, SwitchSnapshot};
use crate::tcp::{TcpConfig, TcpReceiver, TcpSender};

use super::{run_experiment, write_results_csv, RunConfig};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, failures: Vec<String>, ok_detail: String) -> Self {
        let passed = failures.is_empty();
        let detail = if passed {
            ok_detail
        } else {
            let shown: Vec<_> = failures.iter().take(3).cloned().collect();
            format!("{} failure(s): {}", failures.len(), shown.join("; "))
        };
        Check {
            name,
            passed,
            detail,
        }
    }
}

/// Every check, with `sim_reps` seeded repetitions of the simulation checks.
pub fn run_all(seed: u64, sim_reps: u64) -> Vec<Check> {
    let mut rng = RandomStream::new(seed, "validate");
    vec![
        congestion_detection(&mut rng, 1000),
        flow_selection(&mut rng, 1000),
        penalized_fraction(),
        red_frequencies(seed, 100_000),
        ecn_echo(&mut rng, 1000),
        ecn_window_reductions(&mut rng, 200),
        simulation_invariants(seed, sim_reps),
    ]
}

fn key(i: u16) -> FlowKey {
    FlowKey::new(NodeId::host(i % 40), NodeId::host(40 + i / 40), i)
}

fn snapshot(at: SimTime, caps: &[u64], tx: &[u64]) -> SwitchSnapshot {
    SwitchSnapshot {
        switch: NodeId::switch(0),
        taken_at: at,
        ports: caps
            .iter()
            .zip(tx)
            .enumerate()
            .map(|(i, (&cap, &tx_bytes))| PortSnapshot {
                port: PortId(i as u16),
                capacity_bps: cap,
                stats: PortStats {
                    tx_bytes,
                    ..Default::default()
                },
                queue_bytes: 0,
                avg_queue_bytes: 0.0,
            })
            .collect(),
        flows: vec![],
        rules: vec![],
    }
}

/// Probe pipeline against the integer definition: a port is congested iff
/// `8·bytes / (capacity·interval) > 3/4`.
pub fn congestion_detection(rng: &mut RandomStream, cases: usize) -> Check {
    let caps = [10_000_000u64, 100_000_000, 1_000_000_000];
    let mut failures = Vec::new();
    let mut congested_total = 0;
    for case in 0..cases {
        let ports = 1 + rng.uniform_u64_inclusive(7) as usize;
        let interval_us = 100_000 + rng.uniform_u64_inclusive(3_900_000);
        let t0 = SimTime(rng.uniform_u64_inclusive(10_000_000));
        let cap: Vec<u64> = (0..ports)
            .map(|_| caps[rng.uniform_u64_inclusive(2) as usize])
            .collect();
        let before: Vec<u64> = (0..ports)
            .map(|_| rng.uniform_u64_inclusive(1 << 40))
            .collect();
        let delta: Vec<u64> = cap
            .iter()
            .map(|&c| {
                let full = c as u128 * interval_us as u128 / 8_000_000;
                let edge = full * 3 / 4;
                match rng.uniform_u64_inclusive(3) {
                    0 => edge as u64,
                    1 => edge as u64 + 1,
                    2 => (edge as u64).saturating_sub(1),
                    _ => rng.uniform_u64_inclusive((full * 6 / 5) as u64),
                }
            })
            .collect();
        let after: Vec<u64> = before.iter().zip(&delta).map(|(b, d)| b + d).collect();

        let mut c = Controller::new(ControllerConfig::default());
        c.probe(&[snapshot(t0, &cap, &before)]);
        let report = c.probe(&[snapshot(t0 + SimTime(interval_us), &cap, &after)]);
        let got = detect_congestion(&report.samples, 0.75);

        let want: Vec<DirectedLink> = (0..ports)
            .filter(|&i| {
                4 * 8 * delta[i] as u128 * 1_000_000 > 3 * cap[i] as u128 * interval_us as u128
            })
            .map(|i| DirectedLink {
                switch: NodeId::switch(0),
                port: PortId(i as u16),
            })
            .collect();
        congested_total += want.len();
        if got != want {
            failures.push(format!("case {case}: got {got:?}, want {want:?}"));
        }
    }
    Check::new(
        "congestion detection matches brute force",
        failures,
        format!("{cases} cases, {congested_total} congested links"),
    )
}

/// `select_flows` against a plain sort-and-take-k.
pub fn flow_selection(rng: &mut RandomStream, cases: usize) -> Check {
    let mut failures = Vec::new();
    for case in 0..cases {
        let n = rng.uniform_u64_inclusive(20) as u16;
        let mut map = BTreeMap::new();
        for i in 0..n {
            // Narrow byte range to force ties.
            map.insert(key(i), 1 + rng.uniform_u64_inclusive(5));
        }
        let mut policy = PolicyFilter::default();
        for i in 0..n {
            if rng.uniform() < 0.2 {
                policy.protected_flows.insert(key(i));
            }
        }
        let t = match rng.uniform_u64_inclusive(3) {
            0 => 0.5,
            1 => 0.0,
            _ => rng.uniform() * 0.5,
        };
        let got = select_flows(&map, t, &policy);

        let mut cands: Vec<(FlowKey, u64)> = map
            .iter()
            .filter(|(k, _)| !policy.protected_flows.contains(k))
            .map(|(k, v)| (*k, *v))
            .collect();
        let want = if cands.is_empty() {
            vec![]
        } else {
            let k = ((t * cands.len() as f64).round() as usize)
                .max(1)
                .min(cands.len());
            cands.sort_by_key(|&(fk, b)| (std::cmp::Reverse(b), fk));
            cands[..k].to_vec()
        };
        if got != want {
            failures.push(format!("case {case}: t={t} got {got:?}, want {want:?}"));
        }
    }
    Check::new(
        "flow selection matches sort-and-take-k",
        failures,
        format!("{cases} cases"),
    )
}

pub fn penalized_fraction() -> Check {
    let cfg = ControllerConfig::default();
    let mut failures = Vec::new();
    for (u, want) in [(1.0, 0.5), (0.875, 0.25)] {
        let got = compute_t(u, &cfg);
        if (got - want).abs() > 1e-9 {
            failures.push(format!("T({u}) = {got}, want {want}"));
        }
    }
    for i in 0..=750 {
        let u = i as f64 / 1000.0;
        if compute_t(u, &cfg) != 0.0 {
            failures.push(format!("T({u}) nonzero"));
        }
    }
    Check::new(
        "penalized fraction",
        failures,
        "T(1)=0.5, T(0.875)=0.25, T(<=0.75)=0".into(),
    )
}

/// Empirical RED decision frequency against `p_a` computed by hand.
pub fn red_frequencies(seed: u64, draws: u32) -> Check {
    let cfg = RedConfig::new(true);
    let (min, max) = (cfg.min_th_bytes as f64, cfg.max_th_bytes as f64);
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for avg in [min, (min + max) / 2.0, max - 1.0] {
        for count in [0i64, 5] {
            let p_b = cfg.max_p * (avg - min) / (max - min);
            let p_a = (p_b / (1.0 - count as f64 * p_b)).min(1.0);
            let mut rng = RandomStream::new(seed, &format!("red-oracle/{avg}/{count}"));
            let hits = (0..draws)
                .filter(|_| red_decision(avg, &cfg, count, &mut rng) == RedVerdict::MarkOrDrop)
                .count();
            let freq = hits as f64 / draws as f64;
            let se = (p_a * (1.0 - p_a) / draws as f64).sqrt();
            if (freq - p_a).abs() > 3.0 * se {
                failures.push(format!("avg={avg} count={count}: freq {freq} vs p_a {p_a}"));
            }
            detail.push(format!("{freq:.4}/{p_a:.4}"));
        }
    }
    for avg in [max, max + 1.0, 2.0 * max] {
        let mut rng = RandomStream::new(seed, "red-oracle/over");
        if (0..1000).any(|_| red_decision(avg, &cfg, 0, &mut rng) != RedVerdict::MarkOrDrop) {
            failures.push(format!("avg={avg} did not always mark"));
        }
    }
    Check::new("RED decision frequency", failures, detail.join(" "))
}

/// Receiver ECE flag against a table-driven echo automaton: the state is the
/// latch, each segment's (CWR, CE) bits select the next state, and the ACK
/// carries the new state.
pub fn ecn_echo(rng: &mut RandomStream, cases: usize) -> Check {
    // Index: latched * 4 + cwr * 2 + ce.
    const NEXT: [bool; 8] = [false, true, false, true, true, true, false, true];
    let flow = key(0);
    let mut failures = Vec::new();
    for case in 0..cases {
        let mut rx = TcpReceiver::new(flow);
        let mut latched = false;
        let len = 1 + rng.uniform_u64_inclusive(60);
        let p_ce = rng.uniform();
        let p_cwr = rng.uniform();
        for i in 0..len {
            let mut p = Packet::data(flow, i * 1460, 1460);
            let ce = rng.uniform() < p_ce;
            let cwr = rng.uniform() < p_cwr;
            if ce {
                p.ecn = Ecn::Ce;
            }
            if cwr {
                p.flags |= TcpFlags::CWR;
            }
            latched = NEXT[latched as usize * 4 + cwr as usize * 2 + ce as usize];
            let ack = rx.on_data(&p);
            if ack.flags.contains(TcpFlags::ECE) != latched {
                failures.push(format!("case {case} segment {i}"));
                break;
            }
        }
    }
    Check::new("ECN echo automaton", failures, format!("{cases} sequences"))
}

/// Sender and receiver in a lossless loop with random CE marking. Checks
/// that reductions are at least a window apart and that the first new
/// segment after each one carries CWR.
pub fn ecn_window_reductions(rng: &mut RandomStream, cases: usize) -> Check {
    let flow = key(0);
    let mut failures = Vec::new();
    let mut reductions = 0;
    for case in 0..cases {
        let p_ce = if case % 4 == 0 { 1.0 } else { rng.uniform() };
        let mut tx = TcpSender::new(flow, TcpConfig::default(), Some(3_000_000));
        let mut rx = TcpReceiver::new(flow);
        let mut now = SimTime::ZERO;
        let mut out = Vec::new();
        tx.start(now, &mut out);
        let mut window_end: Option<u64> = None;
        let mut cwr_due_from: Option<u64> = None;
        'rounds: for _ in 0..200 {
            if out.is_empty() {
                break;
            }
            now += SimTime::from_millis(10);
            for mut seg in std::mem::take(&mut out) {
                if rng.uniform() < p_ce {
                    seg.ecn = Ecn::Ce;
                }
                let ack = rx.on_data(&seg);
                let sent_before = tx.highest_sent;
                let red_before = tx.stats.ecn_reductions;
                let first_new = out.len();
                tx.on_ack(&ack, now, &mut out);
                if tx.stats.ecn_reductions > red_before {
                    reductions += 1;
                    if let Some(end) = window_end {
                        if tx.highest_acked < end {
                            failures.push(format!(
                                "case {case}: second reduction at ack {} inside window ending {end}",
                                tx.highest_acked
                            ));
                            break 'rounds;
                        }
                    }
                    window_end = Some(sent_before);
                    cwr_due_from = Some(sent_before);
                }
                for s in &out[first_new..] {
                    if let Some(from) = cwr_due_from {
                        if s.seq_bytes >= from {
                            if !s.flags.contains(TcpFlags::CWR) {
                                failures.push(format!("case {case}: no CWR on {}", s.seq_bytes));
                                break 'rounds;
                            }
                            cwr_due_from = None;
                        }
                    }
                }
            }
        }
    }
    Check::new(
        "one ECN reduction per window, CWR follows",
        failures,
        format!("{cases} transfers, {reductions} reductions"),
    )
}

/// Short t1-mice runs of every scheme: invariants hold and a repeat with the
/// same seed gives identical CSV.
pub fn simulation_invariants(seed: u64, reps: u64) -> Check {
    let mut failures = Vec::new();
    let mut runs = 0;
    for scheme in SchemeName::ALL {
        for rep in 0..reps {
            let mut cfg = RunConfig::catalog("t1-mice", scheme, seed + rep).expect("catalog");
            cfg.stop_when_mice_done = true;
            let csv = |cfg: &RunConfig| -> Result<(Vec<u8>, bool, String), String> {
                let r = run_experiment(cfg).map_err(|e| e.to_string())?;
                let mut buf = Vec::new();
                write_results_csv(&mut buf, std::slice::from_ref(&r)).map_err(|e| e.to_string())?;
                Ok((buf, r.invariants.holds(), format!("{:?}", r.invariants)))
            };
            match (csv(&cfg), csv(&cfg)) {
                (Ok((a, ok, inv)), Ok((b, _, _))) => {
                    runs += 1;
                    if !ok {
                        failures.push(format!("{}: {inv}", cfg.run_id()));
                    }
                    if a != b {
                        failures.push(format!("{}: CSV differs on rerun", cfg.run_id()));
                    }
                }
                (Err(e), _) | (_, Err(e)) => failures.push(format!("{}: {e}", cfg.run_id())),
            }
        }
    }
    Check::new(
        "simulation invariants and determinism",
        failures,
        format!("{runs} runs"),
    )
}
