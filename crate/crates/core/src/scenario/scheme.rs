use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::switch::{PortQueueConfig, RedConfig, DEFAULT_BUFFER_BYTES};
use crate::tcp::Variant;

use super::ScenarioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchemeName {
    #[serde(rename = "cubic-droptail")]
    CubicDropTail,
    #[serde(rename = "red-drop")]
    RedDrop,
    #[serde(rename = "red-ecn")]
    RedEcn,
    #[serde(rename = "sdn-ecn")]
    SdnEcn,
}

impl SchemeName {
    pub const ALL: [SchemeName; 4] = [
        SchemeName::CubicDropTail,
        SchemeName::RedDrop,
        SchemeName::RedEcn,
        SchemeName::SdnEcn,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeName::CubicDropTail => "cubic-droptail",
            SchemeName::RedDrop => "red-drop",
            SchemeName::RedEcn => "red-ecn",
            SchemeName::SdnEcn => "sdn-ecn",
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeName {
    type Err = ScenarioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| ScenarioError::UnknownScheme(s.into()))
    }
}

/// Queue discipline, controller and host TCP bundled under one name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub name: SchemeName,
    pub queue: PortQueueConfig,
    pub controller: Option<ControllerConfig>,
    #[serde(default)]
    pub host_variant: Variant,
}

impl SchemeSpec {
    pub fn named(name: SchemeName) -> Self {
        let droptail = PortQueueConfig::DropTail {
            limit_bytes: DEFAULT_BUFFER_BYTES,
        };
        let (queue, controller) = match name {
            SchemeName::CubicDropTail => (droptail, None),
            SchemeName::RedDrop => (PortQueueConfig::Red(RedConfig::new(false)), None),
            SchemeName::RedEcn => (PortQueueConfig::Red(RedConfig::new(true)), None),
            SchemeName::SdnEcn => (droptail, Some(ControllerConfig::default())),
        };
        SchemeSpec {
            name,
            queue,
            controller,
            host_variant: Variant::Cubic,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if let PortQueueConfig::Red(r) = &self.queue {
            r.validate()
                .map_err(|e| ScenarioError::Scheme(e.to_string()))?;
        }
        if let Some(c) = &self.controller {
            c.validate()
                .map_err(|e| ScenarioError::Scheme(e.to_string()))?;
        }
        Ok(())
    }
}
