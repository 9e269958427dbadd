use crate::sim::SimTime;

/// Cubic window state. Windows are kept in bytes; the growth curve itself is
/// evaluated in MSS units with `c` in MSS/s^3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicState {
    pub w_max_bytes: u64,
    pub epoch_start: Option<SimTime>,
    /// Time from epoch start until the curve returns to `w_max`, in seconds.
    pub k_secs: f64,
    pub c: f64,
    pub beta: f64,
}

impl CubicState {
    pub fn new(c: f64, beta: f64) -> Self {
        CubicState {
            w_max_bytes: 0,
            epoch_start: None,
            k_secs: 0.0,
            c,
            beta,
        }
    }

    /// Starts an epoch right after a multiplicative decrease from `w_max`.
    /// `K = cbrt(w_max * (1 - beta) / C)`.
    pub fn begin_after_reduction(&mut self, now: SimTime, w_max_bytes: u64, mss: u64) {
        self.w_max_bytes = w_max_bytes;
        self.epoch_start = Some(now);
        let w_max = w_max_bytes as f64 / mss as f64;
        self.k_secs = (w_max * (1.0 - self.beta) / self.c).cbrt();
    }

    /// Starts an epoch from an arbitrary window, e.g. on entering congestion
    /// avoidance after a timeout. A window already at or above `w_max` puts
    /// the origin at the current window.
    pub fn begin_from(&mut self, now: SimTime, cwnd_bytes: u64, mss: u64) {
        self.epoch_start = Some(now);
        if cwnd_bytes >= self.w_max_bytes {
            self.w_max_bytes = cwnd_bytes;
            self.k_secs = 0.0;
        } else {
            let gap = (self.w_max_bytes - cwnd_bytes) as f64 / mss as f64;
            self.k_secs = (gap / self.c).cbrt();
        }
    }
}

/// `W(t) = C (t - K)^3 + w_max`, in bytes, never below one MSS.
pub fn cubic_target(t_since_epoch: SimTime, state: &CubicState, mss: u64) -> u64 {
    let t = t_since_epoch.as_secs_f64() - state.k_secs;
    let w_max = state.w_max_bytes as f64 / mss as f64;
    let w = state.c * t * t * t + w_max;
    ((w * mss as f64).round() as u64).max(mss)
}
