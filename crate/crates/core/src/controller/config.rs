use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::FlowKey;
use crate::sim::SimTime;

/// Flows an administrator exempts from penalization.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyFilter {
    #[serde(default)]
    pub protected_flows: BTreeSet<FlowKey>,
}

impl PolicyFilter {
    pub fn is_protected(&self, flow: &FlowKey) -> bool {
        self.protected_flows.contains(flow)
    }
}

/// Which signal flags a link as congested.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DetectorKind {
    /// Interval utilization strictly above `util_threshold`.
    #[default]
    Utilization,
    /// Queue occupancy at probe time strictly above a byte threshold.
    QueueLength { threshold_bytes: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub probe_interval_us: u64,
    pub util_threshold: f64,
    pub t_max: f64,
    pub cc_rule_timeout_us: u64,
    pub cc_priority: u16,
    pub policy: PolicyFilter,
    pub detector: DetectorKind,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            probe_interval_us: 2_000_000,
            util_threshold: 0.75,
            t_max: 0.5,
            cc_rule_timeout_us: 200_000,
            cc_priority: 200,
            policy: PolicyFilter::default(),
            detector: DetectorKind::Utilization,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ControllerConfigError {
    #[error("util_threshold must be in (0, 1), got {0}")]
    Threshold(f64),
    #[error("t_max must be in (0, 1], got {0}")]
    TMax(f64),
    #[error("probe_interval_us must be positive")]
    ProbeInterval,
    #[error("cc_rule_timeout_us must be positive")]
    RuleTimeout,
    #[error("cc_priority must exceed the base rule priority {0}")]
    Priority(u16),
}

impl ControllerConfig {
    pub fn probe_interval(&self) -> SimTime {
        SimTime::from_micros(self.probe_interval_us)
    }

    pub fn cc_rule_timeout(&self) -> SimTime {
        SimTime::from_micros(self.cc_rule_timeout_us)
    }

    pub fn validate(&self) -> Result<(), ControllerConfigError> {
        if !(self.util_threshold > 0.0 && self.util_threshold < 1.0) {
            return Err(ControllerConfigError::Threshold(self.util_threshold));
        }
        if !(self.t_max > 0.0 && self.t_max <= 1.0) {
            return Err(ControllerConfigError::TMax(self.t_max));
        }
        if self.probe_interval_us == 0 {
            return Err(ControllerConfigError::ProbeInterval);
        }
        if self.cc_rule_timeout_us == 0 {
            return Err(ControllerConfigError::RuleTimeout);
        }
        if self.cc_priority <= crate::switch::BASE_PRIORITY {
            return Err(ControllerConfigError::Priority(
                crate::switch::BASE_PRIORITY,
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ControllerConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.probe_interval(), SimTime::from_secs(2));
        assert_eq!(c.cc_rule_timeout(), SimTime::from_millis(200));
    }

    #[test]
    fn rejects_out_of_range() {
        let bad = [
            ControllerConfig {
                util_threshold: 1.0,
                ..Default::default()
            },
            ControllerConfig {
                t_max: 0.0,
                ..Default::default()
            },
            ControllerConfig {
                probe_interval_us: 0,
                ..Default::default()
            },
            ControllerConfig {
                cc_rule_timeout_us: 0,
                ..Default::default()
            },
            ControllerConfig {
                cc_priority: 100,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
