use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::net::FlowKey;
use crate::scenario::SchemeName;

use super::{ExperimentError, FlowClass, FlowRecord, RunResult};

/// Jain's fairness index `(Σx)² / (n·Σx²)`. `None` for empty or all-zero
/// input.
pub fn jain_index(xs: &[f64]) -> Option<f64> {
    let sum: f64 = xs.iter().sum();
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    if xs.is_empty() || sq == 0.0 {
        return None;
    }
    Some(sum * sum / (xs.len() as f64 * sq))
}

/// Mean and sample variance. The variance is `None` below two samples.
pub fn mean_and_variance(xs: &[f64]) -> Option<(f64, Option<f64>)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var =
        (xs.len() > 1).then(|| xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0));
    Some((mean, var))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkFlowSummary {
    pub flow: FlowKey,
    pub mean_mbps: f64,
}

/// Statistics for one (traffic, topology, scheme) combination across its
/// repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub traffic: String,
    pub topology: String,
    pub scheme: SchemeName,
    pub reps: usize,
    pub seeds: Vec<u64>,
    /// Over every completed mice flow of every repetition.
    pub mice_fct_mean_s: Option<f64>,
    pub mice_fct_variance: Option<f64>,
    pub mice_completed: usize,
    pub mice_incomplete: usize,
    pub bulk_flows: Vec<BulkFlowSummary>,
    /// Sum of the per-flow means.
    pub total_bulk_mbps: f64,
    /// Over the per-flow mean throughputs.
    pub jain: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub groups: Vec<GroupSummary>,
}

impl SummaryReport {
    pub fn group(&self, traffic: &str, scheme: SchemeName) -> Option<&GroupSummary> {
        self.groups
            .iter()
            .find(|g| g.traffic == traffic && g.scheme == scheme)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}

fn summarize(runs: &mut [&RunResult]) -> GroupSummary {
    runs.sort_by(|a, b| a.seed.cmp(&b.seed).then_with(|| a.run_id.cmp(&b.run_id)));
    let mut fcts = Vec::new();
    let mut incomplete = 0;
    let mut bulk: BTreeMap<FlowKey, Vec<f64>> = BTreeMap::new();
    for run in runs.iter() {
        let mut flows: Vec<&FlowRecord> = run.flows.iter().collect();
        flows.sort_by_key(|f| f.key);
        for f in flows {
            match f.class {
                FlowClass::Mice => match f.fct_secs() {
                    Some(t) => fcts.push(t),
                    None => incomplete += 1,
                },
                FlowClass::Bulk => bulk.entry(f.key).or_default().push(f.throughput_mbps),
            }
        }
    }
    let (fct_mean, fct_var) = match mean_and_variance(&fcts) {
        Some((m, v)) => (Some(m), v),
        None => (None, None),
    };
    let bulk_flows: Vec<BulkFlowSummary> = bulk
        .into_iter()
        .map(|(flow, xs)| BulkFlowSummary {
            flow,
            mean_mbps: xs.iter().sum::<f64>() / xs.len() as f64,
        })
        .collect();
    let means: Vec<f64> = bulk_flows.iter().map(|b| b.mean_mbps).collect();
    GroupSummary {
        traffic: runs[0].traffic.clone(),
        topology: runs[0].topology.clone(),
        scheme: runs[0].scheme,
        reps: runs.len(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        mice_fct_mean_s: fct_mean,
        mice_fct_variance: fct_var,
        mice_completed: fcts.len(),
        mice_incomplete: incomplete,
        total_bulk_mbps: means.iter().sum(),
        jain: jain_index(&means),
        bulk_flows,
    }
}

/// Groups results by traffic, topology and scheme and summarizes each
/// group. Input order does not matter.
pub fn aggregate(results: &[RunResult]) -> SummaryReport {
    let mut groups: BTreeMap<(&str, &str, SchemeName), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.traffic.as_str(), r.topology.as_str(), r.scheme))
            .or_default()
            .push(r);
    }
    SummaryReport {
        groups: groups
            .into_values()
            .map(|mut g| summarize(&mut g))
            .collect(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    run_id: String,
    seed: u64,
    scheme: SchemeName,
    topology: String,
    flow: FlowKey,
    kind: FlowClass,
    bytes_acked: u64,
    start_us: u64,
    end_us: Option<u64>,
    throughput_mbps: f64,
}

/// One row per flow per run, runs and flows in the order given.
pub fn write_results_csv<W: std::io::Write>(
    w: W,
    results: &[RunResult],
) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(w);
    for r in results {
        for f in &r.flows {
            out.serialize(CsvRow {
                run_id: r.run_id.clone(),
                seed: r.seed,
                scheme: r.scheme,
                topology: r.topology.clone(),
                flow: f.key,
                kind: f.class,
                bytes_acked: f.bytes_acked,
                start_us: f.start_us,
                end_us: f.end_us,
                throughput_mbps: f.throughput_mbps,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Rebuilds the per-flow part of each run from a results CSV. Switch totals
/// and invariant counters are not stored there and come back empty.
pub fn read_results_csv<R: std::io::Read>(r: R) -> Result<Vec<RunResult>, ExperimentError> {
    let mut reader = csv::Reader::from_reader(r);
    let mut runs: Vec<RunResult> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: CsvRow = row?;
        let i = match index.get(&row.run_id) {
            Some(&i) => i,
            None => {
                let traffic = row
                    .run_id
                    .rsplitn(3, '/')
                    .nth(2)
                    .ok_or_else(|| ExperimentError::Malformed(format!("run id `{}`", row.run_id)))?
                    .to_string();
                runs.push(RunResult {
                    run_id: row.run_id.clone(),
                    seed: row.seed,
                    scheme: row.scheme,
                    topology: row.topology.clone(),
                    traffic,
                    flows: Vec::new(),
                    switches: Vec::new(),
                    cc_rule_installs: 0,
                    run_end_us: 0,
                    events_dispatched: 0,
                    invariants: Default::default(),
                });
                index.insert(row.run_id.clone(), runs.len() - 1);
                runs.len() - 1
            }
        };
        runs[i].flows.push(FlowRecord {
            key: row.flow,
            class: row.kind,
            bytes_acked: row.bytes_acked,
            start_us: row.start_us,
            end_us: row.end_us,
            throughput_mbps: row.throughput_mbps,
        });
    }
    Ok(runs)
}

/// Reads every `*.csv` file in `dir`, in file-name order.
pub fn read_results_dir(dir: &Path) -> Result<Vec<RunResult>, ExperimentError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_results_csv(std::fs::File::open(&p)?)?);
    }
    if out.is_empty() {
        return Err(ExperimentError::Empty(dir.display().to_string()));
    }
    Ok(out)
}
