//! Performance-gated effort-weight schedule.
//!
//! Once per finished training episode the smoothed task return decides
//! whether the effort weight `alpha` grows, shrinks, or whether the step size
//! is first decayed because good performance has only just appeared:
//!
//! 1. `r_mean > threshold` and `c_mean < 0.5`: `delta <- decay * delta`
//! 2. `r_mean > threshold` and `c_mean >= 0.5`: `alpha <- alpha + delta`
//! 3. otherwise: `alpha <- max(0, alpha - delta)`
//!
//! `c_mean` tracks how long performance has stayed above the threshold.
//!
//! Snapshot encoding (41 bytes, little endian): magic `NWAD`, version byte
//! `1`, then `r_mean`, `alpha`, `delta`, `c_mean` as `f64`, then a CRC-32 of
//! everything before it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    /// Performance threshold on the smoothed task return.
    pub threshold: f64,
    /// Running-average smoothing in `[0, 1)`.
    pub smoothing: f64,
    /// Initial adaptation step.
    pub delta0: f64,
    /// Decay of the adaptation step in `[0, 1]`.
    pub decay: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            threshold: 1000.0,
            smoothing: 0.8,
            delta0: 9e-4,
            decay: 0.9,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(Error::Config("adapt threshold must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config("adapt smoothing must lie in [0, 1)".into()));
        }
        if !(self.delta0 > 0.0 && self.delta0.is_finite()) {
            return Err(Error::Config("adapt delta0 must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::Config("adapt decay must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptState {
    pub r_mean: f64,
    pub alpha: f64,
    pub delta: f64,
    pub c_mean: f64,
}

/// Which branch an update took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Performance newly high: the step size decays.
    SlowDown,
    /// Performance high for long: alpha grows.
    Increase,
    /// Performance too low: alpha shrinks.
    Decrease,
}

const MAGIC: &[u8; 4] = b"NWAD";
const VERSION: u8 = 1;
pub const SNAPSHOT_LEN: usize = 4 + 1 + 4 * 8 + 4;

impl AdaptState {
    pub fn new(cfg: &AdaptConfig) -> Self {
        Self {
            r_mean: 0.0,
            alpha: 0.0,
            delta: cfg.delta0,
            c_mean: 0.0,
        }
    }

    /// Feeds one episode return through the schedule.
    pub fn update(&self, episode_return: f64, cfg: &AdaptConfig) -> Result<(AdaptState, Branch)> {
        if !episode_return.is_finite() {
            return Err(Error::NonFinite(format!("episode return {episode_return}")));
        }
        let beta = cfg.smoothing;
        let mut next = *self;
        next.r_mean = beta * self.r_mean + (1.0 - beta) * episode_return;
        let high = next.r_mean > cfg.threshold;
        let branch = if high && self.c_mean < 0.5 {
            next.delta = cfg.decay * self.delta;
            Branch::SlowDown
        } else if high {
            next.alpha = self.alpha + self.delta;
            Branch::Increase
        } else {
            next.alpha = (self.alpha - self.delta).max(0.0);
            Branch::Decrease
        };
        let c_target = if high { 1.0 } else { 0.0 };
        next.c_mean = beta * self.c_mean + (1.0 - beta) * c_target;
        Ok((next, branch))
    }

    pub fn snapshot(&self) -> [u8; SNAPSHOT_LEN] {
        let mut out = [0u8; SNAPSHOT_LEN];
        out[..4].copy_from_slice(MAGIC);
        out[4] = VERSION;
        for (i, v) in [self.r_mean, self.alpha, self.delta, self.c_mean].iter().enumerate() {
            out[5 + 8 * i..13 + 8 * i].copy_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[..SNAPSHOT_LEN - 4]);
        out[SNAPSHOT_LEN - 4..].copy_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn restore(blob: &[u8]) -> Result<Self> {
        if blob.len() != SNAPSHOT_LEN {
            return Err(Error::CorruptSnapshot(format!(
                "expected {SNAPSHOT_LEN} bytes, got {}",
                blob.len()
            )));
        }
        if &blob[..4] != MAGIC {
            return Err(Error::CorruptSnapshot("bad magic".into()));
        }
        if blob[4] != VERSION {
            return Err(Error::CorruptSnapshot(format!("unknown version {}", blob[4])));
        }
        let stored = u32::from_le_bytes(blob[SNAPSHOT_LEN - 4..].try_into().unwrap());
        if crc32fast::hash(&blob[..SNAPSHOT_LEN - 4]) != stored {
            return Err(Error::CorruptSnapshot("checksum mismatch".into()));
        }
        let f = |i: usize| f64::from_le_bytes(blob[5 + 8 * i..13 + 8 * i].try_into().unwrap());
        let s = AdaptState {
            r_mean: f(0),
            alpha: f(1),
            delta: f(2),
            c_mean: f(3),
        };
        if !(s.alpha >= 0.0 && (0.0..=1.0).contains(&s.c_mean) && s.delta > 0.0 && s.r_mean.is_finite()) {
            return Err(Error::CorruptSnapshot("decoded state violates invariants".into()));
        }
        Ok(s)
    }
}
