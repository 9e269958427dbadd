//! Running experiments: one seeded simulation per [`RunConfig`], parallel
//! sweeps over seeds and schemes, and aggregation into a [`SummaryReport`].

mod report;
mod sweep;
pub mod validate;
mod world;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{FlowKey, NodeId};
use crate::scenario::{
    experiment_topology, traffic_template, ScenarioError, SchemeName, SchemeSpec, TopologySpec,
    TrafficSpec,
};
use crate::sim::{EventQueue, RandomStream, SimTime};
use crate::tcp::FlowKind;

pub use report::{
    aggregate, jain_index, mean_and_variance, read_results_csv, read_results_dir,
    write_results_csv, BulkFlowSummary, GroupSummary, SummaryReport,
};
pub use sweep::{sweep, SweepConfig};
pub use world::Tracer;

/// Stream label for per-repetition start jitter.
pub const JITTER_STREAM: &str = "traffic-jitter";

/// Mice flows get this long past their start when the traffic has no bulk
/// flow to set the horizon.
pub const MICE_GRACE: SimTime = SimTime::from_secs(60);

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("no results found in {0}")]
    Empty(String),
    #[error("malformed results: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub topology: TopologySpec,
    /// Unjittered traffic; the run applies its own seeded jitter.
    pub traffic: TrafficSpec,
    pub scheme: SchemeSpec,
    pub seed: u64,
    /// Defaults to [`RunConfig::default_duration`].
    pub duration: Option<SimTime>,
    /// End the run as soon as every mice flow has completed.
    #[serde(default)]
    pub stop_when_mice_done: bool,
}

impl RunConfig {
    pub fn new(
        topology: TopologySpec,
        traffic: TrafficSpec,
        scheme: SchemeSpec,
        seed: u64,
    ) -> Self {
        RunConfig {
            topology,
            traffic,
            scheme,
            seed,
            duration: None,
            stop_when_mice_done: false,
        }
    }

    /// A catalog experiment such as `t1-mice` under a named scheme.
    pub fn catalog(traffic: &str, scheme: SchemeName, seed: u64) -> Result<Self, ScenarioError> {
        Ok(RunConfig::new(
            experiment_topology(traffic)?,
            traffic_template(traffic)?,
            SchemeSpec::named(scheme),
            seed,
        ))
    }

    /// Latest bulk stop or mice grace period, plus the maximum start jitter.
    pub fn default_duration(&self) -> SimTime {
        let mice = self
            .traffic
            .mice
            .iter()
            .map(|f| f.start_at + MICE_GRACE)
            .max()
            .unwrap_or(SimTime::ZERO);
        self.traffic.bulk_horizon().max(mice) + SimTime(self.traffic.start_jitter_us)
    }

    pub fn duration(&self) -> SimTime {
        self.duration.unwrap_or_else(|| self.default_duration())
    }

    pub fn run_id(&self) -> String {
        format!("{}/{}/{}", self.traffic.name, self.scheme.name, self.seed)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.topology.validate()?;
        self.traffic.validate(&self.topology)?;
        self.scheme.validate()?;
        let needed = self.traffic.bulk_horizon() + SimTime(self.traffic.start_jitter_us);
        if self.duration() < needed {
            return Err(ExperimentError::Config(format!(
                "duration {} s ends before the bulk flows do ({} s)",
                self.duration().as_secs_f64(),
                needed.as_secs_f64()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowClass {
    Bulk,
    Mice,
}

impl From<&FlowKind> for FlowClass {
    fn from(k: &FlowKind) -> Self {
        match k {
            FlowKind::Bulk { .. } => FlowClass::Bulk,
            FlowKind::Mice { .. } => FlowClass::Mice,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub class: FlowClass,
    pub bytes_acked: u64,
    pub start_us: u64,
    /// Stop time for bulk flows, completion time for mice. `None` if the
    /// run ended first.
    pub end_us: Option<u64>,
    pub throughput_mbps: f64,
}

impl FlowRecord {
    pub fn new(
        key: FlowKey,
        class: FlowClass,
        bytes_acked: u64,
        start: SimTime,
        end: Option<SimTime>,
        run_end: SimTime,
    ) -> Self {
        let active = end.unwrap_or(run_end).saturating_sub(start).as_micros();
        FlowRecord {
            key,
            class,
            bytes_acked,
            start_us: start.as_micros(),
            end_us: end.map(|e| e.as_micros()),
            throughput_mbps: throughput_mbps(bytes_acked, active),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.end_us.is_some()
    }

    /// Flow completion time in seconds, for finished mice flows.
    pub fn fct_secs(&self) -> Option<f64> {
        match (self.class, self.end_us) {
            (FlowClass::Mice, Some(end)) => Some((end - self.start_us) as f64 / 1e6),
            _ => None,
        }
    }
}

/// Bits per microsecond is megabits per second.
pub fn throughput_mbps(bytes: u64, active_us: u64) -> f64 {
    if active_us == 0 {
        0.0
    } else {
        (bytes * 8) as f64 / active_us as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchTotals {
    pub switch: NodeId,
    pub name: String,
    pub drops: u64,
    pub ce_marks: u64,
    /// Marks applied by controller rules.
    pub cc_marks: u64,
}

/// End-of-run consistency checks. Everything here must come out clean.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// Ports where received != sent + dropped + queued.
    pub conservation_violations: Vec<String>,
    /// Controller-rule marks observed, and how many fell outside every
    /// installed rule's lifetime.
    pub cc_marks: u64,
    pub cc_marks_outside_window: u64,
    /// CE marks applied by switches, and where they ended up: delivered,
    /// dropped later, still queued or on a wire.
    pub ce_marked: u64,
    pub ce_delivered: u64,
    pub ce_accounted: u64,
    /// Receivers that acked more than their access link carried.
    pub phantom_violations: Vec<String>,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.conservation_violations.is_empty()
            && self.cc_marks_outside_window == 0
            && self.ce_marked == self.ce_accounted
            && self.phantom_violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub seed: u64,
    pub scheme: SchemeName,
    pub topology: String,
    pub traffic: String,
    pub flows: Vec<FlowRecord>,
    pub switches: Vec<SwitchTotals>,
    pub cc_rule_installs: u64,
    pub run_end_us: u64,
    pub events_dispatched: u64,
    pub invariants: InvariantReport,
}

impl RunResult {
    pub fn flow(&self, key: FlowKey) -> Option<&FlowRecord> {
        self.flows.iter().find(|f| f.key == key)
    }

    pub fn drops_total(&self) -> u64 {
        self.switches.iter().map(|s| s.drops).sum()
    }

    pub fn bulk_total_mbps(&self) -> f64 {
        self.flows
            .iter()
            .filter(|f| f.class == FlowClass::Bulk)
            .map(|f| f.throughput_mbps)
            .sum()
    }
}

pub fn run_experiment(cfg: &RunConfig) -> Result<RunResult, ExperimentError> {
    run_experiment_traced(cfg, Tracer::default())
}

pub fn run_experiment_traced(
    cfg: &RunConfig,
    tracer: Tracer<'_>,
) -> Result<RunResult, ExperimentError> {
    cfg.validate()?;
    let traffic = cfg
        .traffic
        .jittered(&mut RandomStream::new(cfg.seed, JITTER_STREAM));
    let world = world::World::new(
        &cfg.topology,
        &traffic,
        &cfg.scheme,
        cfg.seed,
        cfg.duration(),
        cfg.stop_when_mice_done,
        tracer,
    );
    let mut queue = EventQueue::new();
    let out = world.run(&mut queue)?;
    Ok(RunResult {
        run_id: cfg.run_id(),
        seed: cfg.seed,
        scheme: cfg.scheme.name,
        topology: cfg.topology.name.clone(),
        traffic: cfg.traffic.name.clone(),
        flows: out.flows,
        switches: out.switches,
        cc_rule_installs: out.cc_rule_installs,
        run_end_us: out.run_end.as_micros(),
        events_dispatched: out.events_dispatched,
        invariants: out.invariants,
    })
}
