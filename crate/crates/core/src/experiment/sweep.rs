use rayon::prelude::*;

use crate::scenario::{SchemeSpec, TopologySpec, TrafficSpec};
use crate::sim::SimTime;

use super::{run_experiment, ExperimentError, RunConfig, RunResult};

/// Repetitions `first_seed .. first_seed + reps` of every scheme on one
/// topology and traffic.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub topology: TopologySpec,
    pub traffic: TrafficSpec,
    pub schemes: Vec<SchemeSpec>,
    pub first_seed: u64,
    pub reps: u64,
    pub duration: Option<SimTime>,
    pub stop_when_mice_done: bool,
}

impl SweepConfig {
    pub fn run_configs(&self) -> Vec<RunConfig> {
        self.schemes
            .iter()
            .flat_map(|scheme| {
                (0..self.reps).map(move |i| RunConfig {
                    topology: self.topology.clone(),
                    traffic: self.traffic.clone(),
                    scheme: scheme.clone(),
                    seed: self.first_seed + i,
                    duration: self.duration,
                    stop_when_mice_done: self.stop_when_mice_done,
                })
            })
            .collect()
    }
}

/// Runs every configuration in parallel. Results come back ordered by
/// scheme, then seed.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<RunResult>, ExperimentError> {
    let mut results = cfg
        .run_configs()
        .par_iter()
        .map(run_experiment)
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by_key(|r| (r.scheme, r.seed));
    Ok(results)
}
