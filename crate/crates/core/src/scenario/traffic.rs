use serde::{Deserialize, Serialize};

use crate::net::FlowKey;
use crate::sim::{RandomStream, SimTime};
use crate::tcp::{AppFlowSpec, FlowKind};

use super::topology::{named_topology, TopologySpec};
use super::ScenarioError;

pub const BULK_DURATION_S: f64 = 120.0;
pub const MICE_BYTES: u64 = 2_000_000;
pub const MICE_START: SimTime = SimTime::from_secs(10);
pub const DEFAULT_JITTER_US: u64 = 100_000;

pub const EXPERIMENTS: [&str; 6] = [
    "t1-bulk", "t2-bulk", "t1-mice", "t2-mice", "t3-bulk", "t3-mice",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub name: String,
    #[serde(default)]
    pub bulk: Vec<AppFlowSpec>,
    #[serde(default)]
    pub mice: Vec<AppFlowSpec>,
    /// Each flow's start is delayed by a uniform draw from `[0, start_jitter_us]`.
    #[serde(default)]
    pub start_jitter_us: u64,
    /// Hosts hold each outgoing packet for a uniform draw from
    /// `[0, send_jitter_us]` before queueing it, keeping per-host order.
    #[serde(default)]
    pub send_jitter_us: u64,
}

impl TrafficSpec {
    pub fn flows(&self) -> impl Iterator<Item = &AppFlowSpec> {
        self.bulk.iter().chain(&self.mice)
    }

    pub fn validate(&self, topo: &TopologySpec) -> Result<(), ScenarioError> {
        let mut keys = std::collections::BTreeSet::new();
        for f in self.flows() {
            if !keys.insert(f.key) {
                return Err(ScenarioError::Traffic(format!("duplicate flow {}", f.key)));
            }
            match f.kind {
                FlowKind::Bulk { duration_s } if !duration_s.is_finite() || duration_s <= 0.0 => {
                    return Err(ScenarioError::Traffic(format!(
                        "bulk flow {} needs a positive duration",
                        f.key
                    )))
                }
                FlowKind::Mice { size_bytes: 0 } => {
                    return Err(ScenarioError::Traffic(format!(
                        "mice flow {} needs a positive size",
                        f.key
                    )))
                }
                _ => {}
            }
            topo.route(f.key.src, f.key.dst)?;
        }
        for f in &self.bulk {
            if !matches!(f.kind, FlowKind::Bulk { .. }) {
                return Err(ScenarioError::Traffic(format!("{} listed as bulk", f.key)));
            }
        }
        for f in &self.mice {
            if !matches!(f.kind, FlowKind::Mice { .. }) {
                return Err(ScenarioError::Traffic(format!("{} listed as mice", f.key)));
            }
        }
        Ok(())
    }

    /// Latest moment any bulk flow stops, before jitter.
    pub fn bulk_horizon(&self) -> SimTime {
        self.bulk
            .iter()
            .map(|f| match f.kind {
                FlowKind::Bulk { duration_s } => f.start_at + SimTime::from_secs_f64(duration_s),
                FlowKind::Mice { .. } => f.start_at,
            })
            .max()
            .unwrap_or(SimTime::ZERO)
    }

    /// Copy with every start time shifted by its jitter draw. Draws are
    /// taken in flow order, bulk first.
    pub fn jittered(&self, rng: &mut RandomStream) -> TrafficSpec {
        let mut out = self.clone();
        for f in out.bulk.iter_mut().chain(out.mice.iter_mut()) {
            f.start_at += SimTime(rng.uniform_u64_inclusive(self.start_jitter_us));
        }
        out
    }
}

fn flow_between(topo: &TopologySpec, src: &str, dst: &str) -> FlowKey {
    FlowKey::new(
        topo.host(src).expect("catalog host"),
        topo.host(dst).expect("catalog host"),
        0,
    )
}

fn bulk(topo: &TopologySpec, src: &str, dst: &str) -> AppFlowSpec {
    AppFlowSpec {
        key: flow_between(topo, src, dst),
        kind: FlowKind::Bulk {
            duration_s: BULK_DURATION_S,
        },
        start_at: SimTime::ZERO,
    }
}

fn mice(topo: &TopologySpec, src: &str, dst: &str) -> AppFlowSpec {
    AppFlowSpec {
        key: flow_between(topo, src, dst),
        kind: FlowKind::Mice {
            size_bytes: MICE_BYTES,
        },
        start_at: MICE_START,
    }
}

/// Topology the named experiment runs on.
pub fn experiment_topology(name: &str) -> Result<TopologySpec, ScenarioError> {
    match name.split_once('-') {
        Some((t @ ("t1" | "t2" | "t3"), "bulk" | "mice")) => named_topology(t),
        _ => Err(ScenarioError::UnknownTraffic(name.into())),
    }
}

/// Unjittered traffic for a catalog experiment.
pub fn traffic_template(name: &str) -> Result<TrafficSpec, ScenarioError> {
    let topo = experiment_topology(name)?;
    let t = &topo;
    let (bulk_flows, mice_flows) = match name {
        "t1-bulk" => (
            vec![
                bulk(t, "S1", "R1"),
                bulk(t, "S2", "R1"),
                bulk(t, "S3", "R1"),
            ],
            vec![],
        ),
        "t2-bulk" => (
            vec![
                bulk(t, "S1", "R1"),
                bulk(t, "S2", "R2"),
                bulk(t, "S3", "R3"),
            ],
            vec![],
        ),
        "t1-mice" => (
            vec![bulk(t, "S1", "R1"), bulk(t, "S2", "R1")],
            vec![mice(t, "S3", "R1")],
        ),
        "t2-mice" => (
            vec![bulk(t, "S1", "R1"), bulk(t, "S2", "R2")],
            vec![mice(t, "S3", "R3")],
        ),
        "t3-bulk" | "t3-mice" => {
            let b = vec![
                bulk(t, "H1", "H7"),
                bulk(t, "H2", "H8"),
                bulk(t, "H4", "H10"),
                bulk(t, "H5", "H11"),
            ];
            let m = if name == "t3-mice" {
                vec![mice(t, "H3", "H7"), mice(t, "H6", "H8")]
            } else {
                vec![]
            };
            (b, m)
        }
        other => return Err(ScenarioError::UnknownTraffic(other.into())),
    };
    Ok(TrafficSpec {
        name: name.into(),
        bulk: bulk_flows,
        mice: mice_flows,
        start_jitter_us: DEFAULT_JITTER_US,
        send_jitter_us: 0,
    })
}

/// Catalog traffic with this repetition's start jitter applied.
pub fn paper_traffic(name: &str, rng: &mut RandomStream) -> Result<TrafficSpec, ScenarioError> {
    Ok(traffic_template(name)?.jittered(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(topo: &TopologySpec, flows: &[AppFlowSpec]) -> Vec<(String, String)> {
        flows
            .iter()
            .map(|f| {
                (
                    topo.node_name(f.key.src).unwrap().to_string(),
                    topo.node_name(f.key.dst).unwrap().to_string(),
                )
            })
            .collect()
    }

    #[test]
    fn t1_bulk_is_three_two_minute_flows() {
        let t = traffic_template("t1-bulk").unwrap();
        assert_eq!(t.bulk.len(), 3);
        assert!(t.mice.is_empty());
        assert!(t
            .bulk
            .iter()
            .all(|f| f.kind == FlowKind::Bulk { duration_s: 120.0 }));
        let topo = experiment_topology("t1-bulk").unwrap();
        assert_eq!(
            names(&topo, &t.bulk),
            vec![
                ("S1".into(), "R1".into()),
                ("S2".into(), "R1".into()),
                ("S3".into(), "R1".into())
            ]
        );
    }

    #[test]
    fn t1_mice_flow_is_two_megabytes() {
        let t = traffic_template("t1-mice").unwrap();
        assert_eq!(t.bulk.len(), 2);
        assert_eq!(t.mice.len(), 1);
        assert_eq!(
            t.mice[0].kind,
            FlowKind::Mice {
                size_bytes: 2_000_000
            }
        );
        assert_eq!(t.mice[0].start_at, SimTime::from_secs(10));
    }

    #[test]
    fn t3_mice_layout() {
        let t = traffic_template("t3-mice").unwrap();
        let topo = experiment_topology("t3-mice").unwrap();
        let b: Vec<_> = names(&topo, &t.bulk);
        let m: Vec<_> = names(&topo, &t.mice);
        let pair = |a: &str, b: &str| (a.to_string(), b.to_string());
        assert_eq!(
            b,
            vec![
                pair("H1", "H7"),
                pair("H2", "H8"),
                pair("H4", "H10"),
                pair("H5", "H11")
            ]
        );
        assert_eq!(m, vec![pair("H3", "H7"), pair("H6", "H8")]);
    }

    #[test]
    fn catalog_routes_exist() {
        for name in EXPERIMENTS {
            let t = traffic_template(name).unwrap();
            let topo = experiment_topology(name).unwrap();
            t.validate(&topo).unwrap();
        }
        assert!(matches!(
            traffic_template("t4-mice"),
            Err(ScenarioError::UnknownTraffic(_))
        ));
        assert!(traffic_template("nope").is_err());
    }

    #[test]
    fn jitter_is_seeded_and_bounded() {
        let a = paper_traffic("t1-mice", &mut RandomStream::new(1, "jitter")).unwrap();
        let b = paper_traffic("t1-mice", &mut RandomStream::new(1, "jitter")).unwrap();
        let c = paper_traffic("t1-mice", &mut RandomStream::new(2, "jitter")).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for f in a.bulk.iter() {
            assert!(f.start_at <= SimTime::from_millis(100));
        }
        for f in a.mice.iter() {
            assert!(f.start_at >= SimTime::from_secs(10));
            assert!(f.start_at <= SimTime::from_millis(10_100));
        }
    }
}
