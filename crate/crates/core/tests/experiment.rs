use std::io::Write;

use ecnsim::experiment::{
    aggregate, run_experiment, run_experiment_traced, FlowClass, RunConfig, Tracer,
};
use ecnsim::net::FlowKey;
use ecnsim::scenario::{build_topology1, SchemeName, SchemeSpec, TrafficSpec};
use ecnsim::sim::SimTime;
use ecnsim::tcp::{AppFlowSpec, FlowKind};

fn t1_flow(src: &str, index: u16) -> FlowKey {
    let topo = build_topology1();
    FlowKey::new(topo.host(src).unwrap(), topo.host("R1").unwrap(), index)
}

fn custom(name: &str, bulk: Vec<AppFlowSpec>, mice: Vec<AppFlowSpec>) -> TrafficSpec {
    TrafficSpec {
        name: name.into(),
        bulk,
        mice,
        start_jitter_us: 0,
        send_jitter_us: 0,
    }
}

fn bulk(key: FlowKey, secs: f64) -> AppFlowSpec {
    AppFlowSpec {
        key,
        kind: FlowKind::Bulk { duration_s: secs },
        start_at: SimTime::ZERO,
    }
}

#[test]
fn single_bulk_flow_fills_the_link() {
    let traffic = custom("solo", vec![bulk(t1_flow("S1", 0), 20.0)], vec![]);
    let cfg = RunConfig::new(
        build_topology1(),
        traffic,
        SchemeSpec::named(SchemeName::CubicDropTail),
        1,
    );
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.flows.len(), 1);
    let tput = r.flows[0].throughput_mbps;
    assert!(tput >= 90.0, "throughput {tput}");
    assert!(r.invariants.holds(), "{:?}", r.invariants);
}

#[test]
fn zero_flows_give_an_empty_result() {
    let cfg = RunConfig {
        duration: Some(SimTime::from_secs(1)),
        ..RunConfig::new(
            build_topology1(),
            custom("idle", vec![], vec![]),
            SchemeSpec::named(SchemeName::SdnEcn),
            1,
        )
    };
    let r = run_experiment(&cfg).unwrap();
    assert!(r.flows.is_empty());
    assert_eq!(r.drops_total(), 0);
    assert_eq!(r.cc_rule_installs, 0);
    assert!(r.invariants.holds());
}

#[test]
fn identical_configs_give_identical_results_and_event_logs() {
    let mut cfg = RunConfig::catalog("t1-mice", SchemeName::SdnEcn, 11).unwrap();
    cfg.stop_when_mice_done = true;
    let run = || {
        let mut events = Vec::new();
        let mut rules = Vec::new();
        let r = run_experiment_traced(
            &cfg,
            Tracer {
                events: Some(&mut events as &mut dyn Write),
                rules: Some(&mut rules as &mut dyn Write),
            },
        )
        .unwrap();
        (r, events, rules)
    };
    let (a, ea, ra) = run();
    let (b, eb, rb) = run();
    assert_eq!(a, b);
    assert!(!ea.is_empty() && ea == eb);
    assert!(!ra.is_empty() && ra == rb);

    // Event times never go backwards.
    let times: Vec<u64> = String::from_utf8(ea)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').next().unwrap().parse().unwrap())
        .collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn unfinished_mice_are_flagged_and_left_out_of_the_mean() {
    let mice = AppFlowSpec {
        key: t1_flow("S3", 0),
        kind: FlowKind::Mice {
            size_bytes: 50_000_000,
        },
        start_at: SimTime::ZERO,
    };
    let cfg = RunConfig {
        duration: Some(SimTime::from_secs(1)),
        ..RunConfig::new(
            build_topology1(),
            custom("big-mice", vec![], vec![mice]),
            SchemeSpec::named(SchemeName::RedEcn),
            3,
        )
    };
    let r = run_experiment(&cfg).unwrap();
    let f = &r.flows[0];
    assert_eq!(f.class, FlowClass::Mice);
    assert!(!f.is_complete());
    assert!(f.bytes_acked > 0 && f.bytes_acked < 50_000_000);
    let s = aggregate(&[r]);
    let g = &s.groups[0];
    assert_eq!(g.mice_completed, 0);
    assert_eq!(g.mice_incomplete, 1);
    assert_eq!(g.mice_fct_mean_s, None);
}

#[test]
fn mice_completion_means_every_byte_acked() {
    let mut cfg = RunConfig::catalog("t1-mice", SchemeName::RedDrop, 4).unwrap();
    cfg.stop_when_mice_done = true;
    let r = run_experiment(&cfg).unwrap();
    let m = r.flows.iter().find(|f| f.class == FlowClass::Mice).unwrap();
    assert!(m.is_complete());
    assert_eq!(m.bytes_acked, 2_000_000);
    assert_eq!(r.run_end_us, m.end_us.unwrap());
    assert!(r.invariants.phantom_violations.is_empty());
}

#[test]
fn duration_shorter_than_bulk_flows_is_rejected() {
    let mut cfg = RunConfig::catalog("t1-bulk", SchemeName::CubicDropTail, 1).unwrap();
    cfg.duration = Some(SimTime::from_secs(60));
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn controller_only_marks_under_sdn_ecn() {
    for scheme in SchemeName::ALL {
        let mut cfg = RunConfig::catalog("t1-mice", scheme, 2).unwrap();
        cfg.stop_when_mice_done = true;
        let r = run_experiment(&cfg).unwrap();
        let cc: u64 = r.switches.iter().map(|s| s.cc_marks).sum();
        assert_eq!(
            cc > 0,
            scheme == SchemeName::SdnEcn,
            "{scheme}: {cc} CC marks"
        );
        assert_eq!(r.cc_rule_installs > 0, scheme == SchemeName::SdnEcn);
        assert!(r.invariants.holds(), "{scheme}: {:?}", r.invariants);
    }
}
