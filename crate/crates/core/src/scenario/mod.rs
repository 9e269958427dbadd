//! Topologies, traffic and named schemes for the experiments, plus loading
//! custom ones from TOML.

mod scheme;
mod topology;
mod traffic;

use std::path::Path;

use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::net::NodeId;

pub use scheme::{SchemeName, SchemeSpec};
pub use topology::{
    build_topology1, build_topology2, build_topology3, named_topology, Hop, NodeSpec, TopologySpec,
    LINK_100_MBPS,
};
pub use traffic::{
    experiment_topology, paper_traffic, traffic_template, TrafficSpec, BULK_DURATION_S,
    DEFAULT_JITTER_US, EXPERIMENTS, MICE_BYTES, MICE_START,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown topology `{0}`")]
    UnknownTopology(String),
    #[error("unknown traffic `{0}`")]
    UnknownTraffic(String),
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid traffic: {0}")]
    Traffic(String),
    #[error("invalid scheme: {0}")]
    Scheme(String),
    #[error("no route from {0} to {1}")]
    NoRoute(NodeId, NodeId),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
}

/// Reads a TOML file into any of the scenario types.
pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| ScenarioError::Parse {
        path: path.display().to_string(),
        source,
    })
}
