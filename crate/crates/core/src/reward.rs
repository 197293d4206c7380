//! Walking reward `r = r_vel - c_effort - c_pain`.
//!
//! Per-step rewards are kept decomposed in a [`RewardBreakdown`]. The cubic
//! activity term is stored without its adaptive weight `alpha`; every other
//! cost is stored already weighted. [`total_reward`] is the single code path
//! that turns a breakdown and an `alpha` into a scalar, so recomposing a
//! stored breakdown is bit-identical to computing the reward fresh.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost coefficients and thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    /// Excitation smoothness weight (w1).
    pub smoothness: f64,
    /// Active-muscle count weight (w2).
    pub active_muscles: f64,
    /// Joint-limit torque weight (w3).
    pub limit_torque: f64,
    /// GRF excess weight (w4).
    pub grf_excess: f64,
    /// Target walking speed, m/s.
    pub v_target: f64,
    /// GRFs above this many body weights are penalized.
    pub grf_threshold: f64,
    /// A muscle counts as active above this activation.
    pub activity_threshold: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            smoothness: 0.097,
            active_muscles: 1.579,
            limit_torque: 0.131,
            grf_excess: 0.073,
            v_target: 1.2,
            grf_threshold: 1.2,
            activity_threshold: 0.15,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.smoothness,
            self.active_muscles,
            self.limit_torque,
            self.grf_excess,
            self.v_target,
            self.grf_threshold,
            self.activity_threshold,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("reward weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// All four cost weights zeroed, leaving only the velocity term.
    pub fn velocity_only(self) -> Self {
        Self {
            smoothness: 0.0,
            active_muscles: 0.0,
            limit_torque: 0.0,
            grf_excess: 0.0,
            ..self
        }
    }

    /// Effort weights (w1, w2) zeroed.
    pub fn without_effort(self) -> Self {
        Self {
            smoothness: 0.0,
            active_muscles: 0.0,
            ..self
        }
    }
}

/// Decomposed per-step reward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Task reward.
    pub r_vel: f64,
    /// Mean cubic activation, not yet multiplied by alpha.
    pub effort_activity: f64,
    /// `w1 * sum (u - u_prev)^2`.
    pub effort_smooth: f64,
    /// `w2 * N_active / n_muscles`.
    pub effort_nactive: f64,
    /// `w3 * sum |tau_lim|`.
    pub pain_limits: f64,
    /// `w4 * sum max(0, grf / BW - threshold)`.
    pub pain_grf: f64,
}

impl RewardBreakdown {
    /// Effort cost for a given alpha.
    pub fn effort(&self, alpha: f64) -> f64 {
        alpha * self.effort_activity + self.effort_smooth + self.effort_nactive
    }

    pub fn pain(&self) -> f64 {
        self.pain_limits + self.pain_grf
    }

    pub fn is_finite(&self) -> bool {
        [
            self.r_vel,
            self.effort_activity,
            self.effort_smooth,
            self.effort_nactive,
            self.pain_limits,
            self.pain_grf,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Unweighted-by-alpha effort components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EffortTerms {
    pub activity: f64,
    pub smooth: f64,
    pub nactive: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PainTerms {
    pub limits: f64,
    pub grf: f64,
}

/// `exp(-(v - v_target)^2)` below the target speed, 1 at or above it.
pub fn velocity_reward(v: f64, v_target: f64) -> f64 {
    if v < v_target {
        let d = v - v_target;
        (-(d * d)).exp()
    } else {
        1.0
    }
}

/// Number of activations strictly above `threshold`.
pub fn count_active(a: &[f64], threshold: f64) -> usize {
    a.iter().filter(|&&x| x > threshold).count()
}

/// Effort cost `alpha * mean(a^3) + w1 * sum (u - u_prev)^2 + w2 * N_active / n`.
pub fn effort_cost(
    a: &[f64],
    u: &[f64],
    u_prev: &[f64],
    alpha: f64,
    w: &RewardWeights,
) -> Result<(f64, EffortTerms)> {
    if u.len() != a.len() || u_prev.len() != a.len() {
        return Err(Error::DimensionMismatch {
            what: "effort inputs",
            expected: a.len(),
            got: if u.len() != a.len() { u.len() } else { u_prev.len() },
        });
    }
    if a.is_empty() {
        return Ok((0.0, EffortTerms::default()));
    }
    let n = a.len() as f64;
    let activity = a.iter().map(|x| x * x * x).sum::<f64>() / n;
    let smooth_raw: f64 = u.iter().zip(u_prev).map(|(x, y)| (x - y) * (x - y)).sum();
    let nactive_raw = count_active(a, w.activity_threshold) as f64 / n;
    let terms = EffortTerms {
        activity,
        smooth: w.smoothness * smooth_raw,
        nactive: w.active_muscles * nactive_raw,
    };
    let cost = alpha * terms.activity + terms.smooth + terms.nactive;
    Ok((cost, terms))
}

/// Pain cost `w3 * sum |tau_lim| + w4 * sum max(0, grf / BW - threshold)`.
pub fn pain_cost(limit_torques: &[f64], grfs: &[f64], body_weight: f64, w: &RewardWeights) -> Result<(f64, PainTerms)> {
    if !(body_weight > 0.0) {
        return Err(Error::InvalidArgument("body weight must be positive".into()));
    }
    let limits: f64 = limit_torques.iter().map(|t| t.abs()).sum();
    let excess: f64 = grfs
        .iter()
        .map(|g| (g / body_weight - w.grf_threshold).max(0.0))
        .sum();
    let terms = PainTerms {
        limits: w.limit_torque * limits,
        grf: w.grf_excess * excess,
    };
    Ok((terms.limits + terms.grf, terms))
}

/// Everything a walking step contributes to the reward.
#[derive(Debug, Clone, Copy)]
pub struct StepSignals<'a> {
    pub com_velocity: f64,
    pub activations: &'a [f64],
    pub excitations: &'a [f64],
    pub prev_excitations: &'a [f64],
    pub limit_torques: &'a [f64],
    pub grfs: &'a [f64],
    pub body_weight: f64,
}

/// Builds the breakdown for one walking step.
pub fn decompose(s: &StepSignals<'_>, w: &RewardWeights) -> Result<RewardBreakdown> {
    let (_, effort) = effort_cost(s.activations, s.excitations, s.prev_excitations, 0.0, w)?;
    let (_, pain) = pain_cost(s.limit_torques, s.grfs, s.body_weight, w)?;
    Ok(RewardBreakdown {
        r_vel: velocity_reward(s.com_velocity, w.v_target),
        effort_activity: effort.activity,
        effort_smooth: effort.smooth,
        effort_nactive: effort.nactive,
        pain_limits: pain.limits,
        pain_grf: pain.grf,
    })
}

/// `r_vel - c_effort(alpha) - c_pain`.
pub fn total_reward(b: &RewardBreakdown, alpha: f64) -> f64 {
    b.r_vel - b.effort(alpha) - b.pain()
}

/// Running task reward: the raw forward velocity minus a self-collision
/// penalty in body weights.
pub fn running_reward(v: f64, self_collision: f64, body_weight: f64, w_collision: f64) -> f64 {
    v - w_collision * (self_collision / body_weight)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn velocity_reward_cases() {
        assert_eq!(velocity_reward(1.2, 1.2), 1.0);
        assert_eq!(velocity_reward(2.0, 1.2), 1.0);
        assert!((velocity_reward(0.2, 1.2) - 0.36787944117144233).abs() < 1e-15);
    }

    #[test]
    fn effort_vanishes() {
        let w = RewardWeights::default();
        let a = [0.1, 0.15, 0.0];
        let u = [0.2, 0.3, 0.4];
        let (c, _) = effort_cost(&a, &u, &u, 0.0, &w).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn active_count_threshold() {
        assert_eq!(count_active(&[0.2, 0.1, 0.16], 0.15), 2);
    }

    #[test]
    fn activity_term_mean_cube() {
        let w = RewardWeights { active_muscles: 0.0, ..Default::default() };
        let a = [0.5; 7];
        let u = [0.1; 7];
        let (c, t) = effort_cost(&a, &u, &u, 1.0, &w).unwrap();
        assert_eq!(t.activity, 0.125);
        assert_eq!(c, 0.125);
    }

    #[test]
    fn effort_length_mismatch() {
        let w = RewardWeights::default();
        assert!(effort_cost(&[0.1, 0.2], &[0.1], &[0.1, 0.2], 0.0, &w).is_err());
    }

    #[test]
    fn pain_cases() {
        let w = RewardWeights::default();
        let bw = 735.75;
        let (c, _) = pain_cost(&[0.0, 0.0], &[1.2 * bw, 1.2 * bw], bw, &w).unwrap();
        assert_eq!(c, 0.0);
        let (c, t) = pain_cost(&[0.0], &[1.5 * bw, 0.0], bw, &w).unwrap();
        assert!((t.grf - 0.073 * 0.3).abs() < 1e-15);
        assert!((c - 0.0219).abs() < 1e-15);
        let (c, _) = pain_cost(&[1.0, -2.0], &[0.0], bw, &w).unwrap();
        assert!((c - 0.393).abs() < 1e-15);
        assert!(pain_cost(&[], &[], 0.0, &w).is_err());
    }

    #[test]
    fn total_is_affine_in_alpha() {
        let b = RewardBreakdown {
            r_vel: 1.0,
            effort_activity: 0.02,
            effort_smooth: 0.01,
            effort_nactive: 0.1,
            pain_limits: 0.05,
            pain_grf: 0.0,
        };
        let zero = RewardBreakdown { r_vel: 1.0, ..Default::default() };
        assert_eq!(total_reward(&zero, 3.0), 1.0);
        let d = total_reward(&b, 0.0) - total_reward(&b, 0.5);
        assert!((d - 0.5 * 0.02).abs() < 1e-15);
        assert!(total_reward(&b, 0.0) <= 1.0);
    }

    #[test]
    fn running_cases() {
        assert_eq!(running_reward(3.0, 0.0, 700.0, 1.0), 3.0);
        assert_eq!(running_reward(0.0, 0.0, 700.0, 1.0), 0.0);
        assert_eq!(running_reward(3.0, 350.0, 700.0, 1.0), 2.5);
    }

    #[test]
    fn ablation_weights() {
        let w = RewardWeights::default().velocity_only();
        assert_eq!([w.smoothness, w.active_muscles, w.limit_torque, w.grf_excess], [0.0; 4]);
        assert_eq!(w.v_target, 1.2);
        let w = RewardWeights::default().without_effort();
        assert_eq!(w.limit_torque, 0.131);
        assert_eq!(w.smoothness, 0.0);
    }
}
