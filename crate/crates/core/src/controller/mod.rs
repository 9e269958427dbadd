//! Centralized congestion controller.
//!
//! Every probe interval it reads all switch counters, turns counter deltas
//! into per-link utilization, flags congested links, picks the heaviest
//! flows on each congested link and installs short-lived, high-priority
//! rules that CE-mark those flows. The hosts then back off through their
//! ordinary ECN reaction.
//!
//! The controller only sees [`SwitchSnapshot`]s, so the whole pipeline can
//! be replayed from recorded snapshots without a running network.

mod config;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::net::{Direction, FlowKey, NodeId, PortId};
use crate::sim::SimTime;
use crate::switch::{Actions, FlowRule, Match, SwitchSnapshot};

pub use config::{ControllerConfig, ControllerConfigError, DetectorKind, PolicyFilter};

/// The egress side of a link, named by the switch port that feeds it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DirectedLink {
    pub switch: NodeId,
    pub port: PortId,
}

impl fmt::Display for DirectedLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.switch, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkUtilSample {
    pub link: DirectedLink,
    pub interval_tx_bytes: u64,
    pub interval_us: u64,
    pub capacity_bps: u64,
    /// `interval_tx_bytes * 8 / (capacity_bps * interval_seconds)`, unclamped.
    pub utilization: f64,
    /// Queue occupancy at the probe instant.
    pub queue_bytes: u64,
}

pub fn link_utilization(interval_tx_bytes: u64, capacity_bps: u64, interval: SimTime) -> f64 {
    let bits = interval_tx_bytes as f64 * 8.0;
    let capacity_bits = capacity_bps as f64 * interval.as_micros() as f64 / 1e6;
    bits / capacity_bits
}

/// Per-interval view produced by one probe.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub samples: Vec<LinkUtilSample>,
    /// Data-direction bytes each flow sent through each link this interval.
    /// Flows that sent nothing are absent.
    pub flow_bytes: BTreeMap<DirectedLink, BTreeMap<FlowKey, u64>>,
}

/// Links whose utilization is strictly above `util_threshold`.
pub fn detect_congestion(samples: &[LinkUtilSample], util_threshold: f64) -> Vec<DirectedLink> {
    samples
        .iter()
        .filter(|s| s.utilization.min(1.0) > util_threshold)
        .map(|s| s.link)
        .collect()
}

/// Pluggable congestion detection.
pub trait CongestionDetector {
    fn detect(&self, samples: &[LinkUtilSample]) -> Vec<DirectedLink>;
}

pub struct UtilizationDetector {
    pub threshold: f64,
}

impl CongestionDetector for UtilizationDetector {
    fn detect(&self, samples: &[LinkUtilSample]) -> Vec<DirectedLink> {
        detect_congestion(samples, self.threshold)
    }
}

pub struct QueueLengthDetector {
    pub threshold_bytes: u64,
}

impl CongestionDetector for QueueLengthDetector {
    fn detect(&self, samples: &[LinkUtilSample]) -> Vec<DirectedLink> {
        samples
            .iter()
            .filter(|s| s.queue_bytes > self.threshold_bytes)
            .map(|s| s.link)
            .collect()
    }
}

/// Fraction of flows to penalize: zero up to the threshold, then linear up
/// to `t_max` at full utilization.
pub fn compute_t(utilization: f64, cfg: &ControllerConfig) -> f64 {
    let u = utilization.min(1.0);
    if u <= cfg.util_threshold {
        return 0.0;
    }
    cfg.t_max * (u - cfg.util_threshold) / (1.0 - cfg.util_threshold)
}

/// The top `max(1, round(t * n))` unprotected flows by interval bytes.
/// Ties go to the smaller `FlowKey`.
pub fn select_flows(
    flow_bytes: &BTreeMap<FlowKey, u64>,
    t: f64,
    policy: &PolicyFilter,
) -> Vec<(FlowKey, u64)> {
    let mut candidates: Vec<(FlowKey, u64)> = flow_bytes
        .iter()
        .filter(|(k, _)| !policy.is_protected(k))
        .map(|(k, b)| (*k, *b))
        .collect();
    if candidates.is_empty() {
        return candidates;
    }
    let k = ((t * candidates.len() as f64).round() as usize).clamp(1, candidates.len());
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    candidates.truncate(k);
    candidates
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizationDecision {
    pub link: DirectedLink,
    pub utilization: f64,
    pub t_fraction: f64,
    /// Descending by interval bytes.
    pub selected: Vec<(FlowKey, u64)>,
}

/// CC rules for one decision. Each rule forwards like the flow's existing
/// base rule at that switch and adds set-CE. Flows without a base rule are
/// skipped and counted.
pub fn install_cc_rules(
    decision: &PenalizationDecision,
    snapshot: &SwitchSnapshot,
    cfg: &ControllerConfig,
    now: SimTime,
) -> (Vec<FlowRule>, u64) {
    let mut rules = Vec::with_capacity(decision.selected.len());
    let mut skipped = 0;
    for (flow, _) in &decision.selected {
        let matcher = Match::data(*flow);
        let base = snapshot
            .rules
            .iter()
            .filter(|r| r.matcher == matcher && !r.actions.set_ce && r.priority < cfg.cc_priority)
            .max_by_key(|r| r.priority);
        let Some(base) = base else {
            skipped += 1;
            continue;
        };
        rules.push(FlowRule {
            matcher,
            priority: cfg.cc_priority,
            actions: Actions {
                forward_port: base.actions.forward_port,
                set_ce: true,
            },
            hard_timeout: cfg.cc_rule_timeout(),
            installed_at: now,
        });
    }
    (rules, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleInstall {
    pub switch: NodeId,
    pub rule: FlowRule,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub at: SimTime,
    pub report: ProbeReport,
    pub congested: Vec<DirectedLink>,
    pub decisions: Vec<PenalizationDecision>,
    pub installs: Vec<RuleInstall>,
    pub skipped_no_base_rule: u64,
}

#[derive(Debug, Clone)]
struct Baseline {
    at: SimTime,
    port_tx: BTreeMap<PortId, u64>,
    flow_tx: BTreeMap<(FlowKey, Direction, PortId), u64>,
}

impl Baseline {
    fn of(snap: &SwitchSnapshot) -> Self {
        Baseline {
            at: snap.taken_at,
            port_tx: snap
                .ports
                .iter()
                .map(|p| (p.port, p.stats.tx_bytes))
                .collect(),
            flow_tx: snap
                .flows
                .iter()
                .map(|f| ((f.flow, f.direction, f.out_port), f.tx_bytes))
                .collect(),
        }
    }
}

pub struct Controller {
    cfg: ControllerConfig,
    baselines: BTreeMap<NodeId, Baseline>,
    pub installs_total: u64,
    pub skipped_total: u64,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Self {
        Controller {
            cfg,
            baselines: BTreeMap::new(),
            installs_total: 0,
            skipped_total: 0,
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    fn detector(&self) -> Box<dyn CongestionDetector> {
        match self.cfg.detector {
            DetectorKind::Utilization => Box::new(UtilizationDetector {
                threshold: self.cfg.util_threshold,
            }),
            DetectorKind::QueueLength { threshold_bytes } => {
                Box::new(QueueLengthDetector { threshold_bytes })
            }
        }
    }

    /// Turns snapshots into interval samples against the previous probe.
    /// Switches seen for the first time only record a baseline.
    pub fn probe(&mut self, snapshots: &[SwitchSnapshot]) -> ProbeReport {
        let mut report = ProbeReport::default();
        for snap in snapshots {
            let current = Baseline::of(snap);
            if let Some(prev) = self.baselines.get(&snap.switch) {
                let interval = snap.taken_at.saturating_sub(prev.at);
                if interval > SimTime::ZERO {
                    for p in &snap.ports {
                        let before = prev.port_tx.get(&p.port).copied().unwrap_or(0);
                        let delta = p.stats.tx_bytes - before;
                        report.samples.push(LinkUtilSample {
                            link: DirectedLink {
                                switch: snap.switch,
                                port: p.port,
                            },
                            interval_tx_bytes: delta,
                            interval_us: interval.as_micros(),
                            capacity_bps: p.capacity_bps,
                            utilization: link_utilization(delta, p.capacity_bps, interval),
                            queue_bytes: p.queue_bytes,
                        });
                    }
                    for f in snap.flows.iter().filter(|f| f.direction == Direction::Data) {
                        let key = (f.flow, f.direction, f.out_port);
                        let delta = f.tx_bytes - prev.flow_tx.get(&key).copied().unwrap_or(0);
                        if delta > 0 {
                            let link = DirectedLink {
                                switch: snap.switch,
                                port: f.out_port,
                            };
                            report
                                .flow_bytes
                                .entry(link)
                                .or_default()
                                .insert(f.flow, delta);
                        }
                    }
                }
            }
            self.baselines.insert(snap.switch, current);
        }
        report
    }

    /// One full detect / select / notify cycle.
    pub fn on_probe(&mut self, now: SimTime, snapshots: &[SwitchSnapshot]) -> ProbeOutcome {
        let report = self.probe(snapshots);
        let congested = self.detector().detect(&report.samples);
        let mut outcome = ProbeOutcome {
            at: now,
            congested: congested.clone(),
            ..Default::default()
        };
        let empty = BTreeMap::new();
        for link in congested {
            let sample = report
                .samples
                .iter()
                .find(|s| s.link == link)
                .expect("congested link has a sample");
            // The queue-length detector can fire below the utilization
            // threshold; it still penalizes at least the top flow.
            let t = compute_t(sample.utilization, &self.cfg).max(f64::MIN_POSITIVE);
            let flows = report.flow_bytes.get(&link).unwrap_or(&empty);
            let selected = select_flows(flows, t, &self.cfg.policy);
            if selected.is_empty() {
                continue;
            }
            let decision = PenalizationDecision {
                link,
                utilization: sample.utilization,
                t_fraction: t,
                selected,
            };
            let snap = snapshots
                .iter()
                .find(|s| s.switch == link.switch)
                .expect("snapshot for congested switch");
            let (rules, skipped) = install_cc_rules(&decision, snap, &self.cfg, now);
            outcome.skipped_no_base_rule += skipped;
            outcome
                .installs
                .extend(rules.into_iter().map(|rule| RuleInstall {
                    switch: link.switch,
                    rule,
                }));
            outcome.decisions.push(decision);
        }
        self.installs_total += outcome.installs.len() as u64;
        self.skipped_total += outcome.skipped_no_base_rule;
        outcome.report = report;
        outcome
    }
}
