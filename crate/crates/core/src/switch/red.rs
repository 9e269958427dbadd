//! Random Early Detection: EWMA of the queue size and the marking/dropping
//! probability that rises between the two thresholds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{serialization_delay, MAX_PACKET_BYTES};
use crate::sim::{RandomStream, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedConfig {
    pub min_th_bytes: u64,
    pub max_th_bytes: u64,
    pub max_p: f64,
    pub w_q: f64,
    /// Mark ECN-capable packets instead of dropping them.
    pub ecn_mode: bool,
    pub limit_bytes: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum RedConfigError {
    #[error("RED thresholds must satisfy 0 < min_th < max_th <= limit")]
    Thresholds,
    #[error("RED max_p must be in (0, 1], got {0}")]
    MaxP(f64),
    #[error("RED w_q must be in (0, 1), got {0}")]
    Weight(f64),
}

impl RedConfig {
    pub fn new(ecn_mode: bool) -> Self {
        RedConfig {
            min_th_bytes: 30_000,
            max_th_bytes: 90_000,
            max_p: 0.1,
            w_q: 0.002,
            ecn_mode,
            limit_bytes: super::DEFAULT_BUFFER_BYTES,
        }
    }

    pub fn validate(&self) -> Result<(), RedConfigError> {
        if !(0 < self.min_th_bytes
            && self.min_th_bytes < self.max_th_bytes
            && self.max_th_bytes <= self.limit_bytes)
        {
            return Err(RedConfigError::Thresholds);
        }
        if !(self.max_p > 0.0 && self.max_p <= 1.0) {
            return Err(RedConfigError::MaxP(self.max_p));
        }
        if !(self.w_q > 0.0 && self.w_q < 1.0) {
            return Err(RedConfigError::Weight(self.w_q));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedVerdict {
    Pass,
    MarkOrDrop,
}

/// New average queue size in bytes.
///
/// An arrival to a queue that has been idle since `idle_since` decays the
/// average as if `m` empty-queue samples had been taken, where `m` is the
/// idle time over the service time of a full-sized packet.
pub fn red_update_avg(
    avg: f64,
    inst_q: u64,
    w_q: f64,
    idle_since: Option<SimTime>,
    now: SimTime,
    capacity_bps: u64,
) -> f64 {
    match idle_since {
        Some(since) if inst_q == 0 => {
            let service = serialization_delay(MAX_PACKET_BYTES, capacity_bps).as_micros() as f64;
            let m = (now - since).as_micros() as f64 / service;
            (1.0 - w_q).powf(m) * avg
        }
        _ => (1.0 - w_q) * avg + w_q * inst_q as f64,
    }
}

/// `p_b` scaled by the count of packets since the last mark, clamped to
/// `[p_b, 1]`. Only meaningful for `min_th <= avg < max_th`.
pub fn red_mark_probability(avg: f64, cfg: &RedConfig, count: i64) -> f64 {
    let min = cfg.min_th_bytes as f64;
    let max = cfg.max_th_bytes as f64;
    let p_b = cfg.max_p * (avg - min) / (max - min);
    let denom = 1.0 - count as f64 * p_b;
    if denom <= 0.0 {
        return 1.0;
    }
    (p_b / denom).clamp(p_b, 1.0)
}

/// RED's per-arrival decision. Draws from `rng` only in the probabilistic
/// band between the thresholds.
pub fn red_decision(avg: f64, cfg: &RedConfig, count: i64, rng: &mut RandomStream) -> RedVerdict {
    if avg < cfg.min_th_bytes as f64 {
        return RedVerdict::Pass;
    }
    if avg >= cfg.max_th_bytes as f64 {
        return RedVerdict::MarkOrDrop;
    }
    let p = red_mark_probability(avg, cfg, count);
    if p > 0.0 && rng.uniform() < p {
        RedVerdict::MarkOrDrop
    } else {
        RedVerdict::Pass
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MBPS_100: u64 = 100_000_000;

    #[test]
    fn avg_examples() {
        assert_eq!(
            red_update_avg(0.0, 0, 0.002, None, SimTime::ZERO, MBPS_100),
            0.0
        );
        let a = red_update_avg(10_000.0, 20_000, 0.002, None, SimTime::ZERO, MBPS_100);
        assert!((a - 10_020.0).abs() < 1e-9);
        // 100 service times of 120 us
        let a = red_update_avg(
            10_000.0,
            0,
            0.002,
            Some(SimTime::ZERO),
            SimTime(12_000),
            MBPS_100,
        );
        assert!((a - 10_000.0 * 0.998f64.powi(100)).abs() < 1e-6);
        assert!((a - 8186.0).abs() <= 1.0);
    }

    #[test]
    fn decision_regions() {
        let cfg = RedConfig::new(true);
        let mut rng = RandomStream::new(1, "t");
        assert_eq!(
            red_decision(cfg.min_th_bytes as f64, &cfg, 0, &mut rng),
            RedVerdict::Pass
        );
        assert_eq!(red_mark_probability(cfg.min_th_bytes as f64, &cfg, 0), 0.0);
        let mid = (cfg.min_th_bytes + cfg.max_th_bytes) as f64 / 2.0;
        assert!((red_mark_probability(mid, &cfg, 0) - cfg.max_p / 2.0).abs() < 1e-12);
        for _ in 0..100 {
            assert_eq!(
                red_decision(cfg.max_th_bytes as f64, &cfg, 0, &mut rng),
                RedVerdict::MarkOrDrop
            );
        }
    }

    #[test]
    fn count_raises_probability() {
        let cfg = RedConfig::new(false);
        let mid = 60_000.0;
        let p0 = red_mark_probability(mid, &cfg, 0);
        let p10 = red_mark_probability(mid, &cfg, 10);
        assert!((p10 - 0.05 / (1.0 - 0.5)).abs() < 1e-12);
        assert!(p10 > p0);
        assert_eq!(red_mark_probability(mid, &cfg, 20), 1.0);
        assert_eq!(red_mark_probability(mid, &cfg, 1000), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(RedConfig::new(true).validate().is_ok());
        let mut c = RedConfig::new(true);
        c.max_th_bytes = c.min_th_bytes;
        assert_eq!(c.validate(), Err(RedConfigError::Thresholds));
        let mut c = RedConfig::new(true);
        c.max_p = 0.0;
        assert!(c.validate().is_err());
        let mut c = RedConfig::new(true);
        c.w_q = 1.0;
        assert!(c.validate().is_err());
    }
}
