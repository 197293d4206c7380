//! Hill-type muscle-tendon units with rigid tendons and constant moment arms.
//!
//! Musculotendon length is affine in the spanned joint angles,
//! `l_mt(q) = l_ref + l_slack - sum_j r_j * q_j`, where `l_ref` is the fiber
//! length in the reference posture (all joint angles zero; defaults to the
//! optimal length). A positive moment arm means muscle force produces
//! positive joint torque.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensionless width of the Gaussian active force-length curve.
pub const FL_WIDTH: f64 = 0.45;
/// Eccentric force plateau, in multiples of the isometric force.
pub const FV_ECCENTRIC_MAX: f64 = 1.5;
/// Curvature of the concentric Hill hyperbola.
const FV_HILL_CURVATURE: f64 = 0.25;
/// Controls how quickly the eccentric branch reaches its plateau. Chosen so
/// the slope of f_V is continuous at zero velocity.
const FV_ECCENTRIC_RATE: f64 = 0.1;
/// Passive element shape (exponential, engages above optimal length).
const PASSIVE_SHAPE: f64 = 4.0;
const PASSIVE_STRAIN_AT_ONE: f64 = 0.6;
/// Smallest fiber length the kinematics will report.
pub const MIN_FIBER_LENGTH: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentArm {
    pub joint: String,
    /// Signed arm in meters.
    pub arm: f64,
}

/// Parameters of one muscle-tendon unit, as they appear in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuscleSpec {
    pub name: String,
    /// Maximum isometric force, N.
    pub f_max: f64,
    /// Optimal fiber length, m.
    pub l_opt: f64,
    /// Tendon slack length, m. Tendons are rigid.
    pub l_slack: f64,
    /// Fiber length in the reference posture, m. Defaults to `l_opt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_fiber: Option<f64>,
    /// Maximum shortening velocity in optimal lengths per second.
    pub v_max: f64,
    #[serde(default = "default_tau_act")]
    pub tau_act: f64,
    #[serde(default = "default_tau_deact")]
    pub tau_deact: f64,
    pub arms: Vec<MomentArm>,
}

fn default_tau_act() -> f64 {
    0.01
}

fn default_tau_deact() -> f64 {
    0.04
}

impl MuscleSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidModel(format!("muscle `{}`: {what}", self.name)));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.f_max) {
            return bad("f_max must be positive");
        }
        if !pos(self.l_opt) {
            return bad("l_opt must be positive");
        }
        if !(self.l_slack.is_finite() && self.l_slack >= 0.0) {
            return bad("slack length must be non-negative");
        }
        if !pos(self.v_max) {
            return bad("v_max must be positive");
        }
        if self.ref_fiber.is_some_and(|l| !pos(l)) {
            return bad("reference fiber length must be positive");
        }
        if !pos(self.tau_act) || !pos(self.tau_deact) {
            return bad("time constants must be positive");
        }
        if self.tau_act > self.tau_deact {
            return bad("activation time constant exceeds deactivation constant");
        }
        if self.arms.is_empty() {
            return bad("at least one moment arm is required");
        }
        if self.arms.iter().any(|a| !a.arm.is_finite()) {
            return bad("moment arms must be finite");
        }
        Ok(())
    }

    /// Musculotendon length in the reference posture.
    pub fn reference_length(&self) -> f64 {
        self.reference_fiber() + self.l_slack
    }

    pub fn reference_fiber(&self) -> f64 {
        self.ref_fiber.unwrap_or(self.l_opt)
    }
}

/// A muscle spec with its joint names resolved to generalized-coordinate
/// indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Muscle {
    pub spec: MuscleSpec,
    /// (dof index, arm) pairs.
    pub dofs: Vec<(usize, f64)>,
}

/// Fiber kinematics for one muscle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberState {
    pub length: f64,
    /// Lengthening velocity, m/s.
    pub velocity: f64,
    /// Set when the affine path produced a non-positive fiber length.
    pub clamped: bool,
}

/// First-order activation dynamics, integrated exactly over `dt` with the
/// time constant selected by the direction of change.
pub fn activation_step(a: f64, u: f64, dt: f64, tau_act: f64, tau_deact: f64) -> f64 {
    let tau = if u > a { tau_act } else { tau_deact };
    let next = u + (a - u) * (-dt / tau).exp();
    next.clamp(0.0, 1.0)
}

/// Active force-length factor.
pub fn force_length(l_norm: f64) -> f64 {
    let x = (l_norm - 1.0) / FL_WIDTH;
    (-x * x).exp()
}

/// Force-velocity factor as a function of the normalized *shortening*
/// velocity `v_short` (1 = maximum shortening, negative = lengthening).
pub fn force_velocity(v_short: f64) -> f64 {
    if v_short >= 1.0 {
        0.0
    } else if v_short >= 0.0 {
        (1.0 - v_short) / (1.0 + v_short / FV_HILL_CURVATURE)
    } else {
        let s = -v_short;
        1.0 + (FV_ECCENTRIC_MAX - 1.0) * s / (s + FV_ECCENTRIC_RATE)
    }
}

/// Passive parallel-elastic force factor.
pub fn force_passive(l_norm: f64) -> f64 {
    if l_norm <= 1.0 {
        0.0
    } else {
        let strain = l_norm - 1.0;
        ((PASSIVE_SHAPE * strain / PASSIVE_STRAIN_AT_ONE).exp() - 1.0) / (PASSIVE_SHAPE.exp() - 1.0)
    }
}

/// Muscle force in N. `v_fiber` is the lengthening velocity (m/s), matching
/// what [`muscle_kinematics`] reports.
pub fn muscle_force(a: f64, l_fiber: f64, v_fiber: f64, spec: &MuscleSpec) -> f64 {
    let l_norm = l_fiber / spec.l_opt;
    let v_short = -v_fiber / (spec.v_max * spec.l_opt);
    let f = spec.f_max * (a * force_length(l_norm) * force_velocity(v_short) + force_passive(l_norm));
    f.max(0.0)
}

/// Fiber length and lengthening velocity from joint positions/velocities.
pub fn muscle_kinematics(q: &[f64], qdot: &[f64], muscle: &Muscle) -> FiberState {
    let mut length = muscle.spec.reference_length();
    let mut velocity = 0.0;
    for &(dof, arm) in &muscle.dofs {
        length -= arm * q[dof];
        velocity -= arm * qdot[dof];
    }
    let mut fiber = length - muscle.spec.l_slack;
    let clamped = fiber <= 0.0;
    if clamped {
        fiber = MIN_FIBER_LENGTH;
    }
    FiberState {
        length: fiber,
        velocity,
        clamped,
    }
}

/// Maps per-muscle forces onto generalized forces: `tau_j = sum arm * F`.
pub fn joint_torques(forces: &[f64], muscles: &[Muscle], n_dofs: usize) -> Result<Vec<f64>> {
    if forces.len() != muscles.len() {
        return Err(Error::DimensionMismatch {
            what: "muscle forces",
            expected: muscles.len(),
            got: forces.len(),
        });
    }
    let mut tau = vec![0.0; n_dofs];
    for (f, m) in forces.iter().zip(muscles) {
        for &(dof, arm) in &m.dofs {
            tau[dof] += arm * f;
        }
    }
    Ok(tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> MuscleSpec {
        MuscleSpec {
            name: "vas".into(),
            f_max: 6000.0,
            l_opt: 0.09,
            l_slack: 0.16,
            ref_fiber: None,
            v_max: 10.0,
            tau_act: 0.01,
            tau_deact: 0.04,
            arms: vec![MomentArm { joint: "knee_r".into(), arm: 0.05 }],
        }
    }

    fn muscle(arm: f64) -> Muscle {
        let mut s = spec();
        s.arms[0].arm = arm;
        Muscle { spec: s, dofs: vec![(0, arm)] }
    }

    #[test]
    fn activation_fixed_point_and_saturation() {
        assert_eq!(activation_step(0.3, 0.3, 1e-3, 0.01, 0.04), 0.3);
        let mut a = 0.0;
        for _ in 0..10_000 {
            a = activation_step(a, 1.0, 1e-3, 0.01, 0.04);
        }
        assert!((a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn activation_one_time_constant() {
        let a = activation_step(0.0, 1.0, 0.01, 0.01, 0.04);
        assert!((a - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((a - 0.632).abs() < 1e-3);
    }

    #[test]
    fn deactivation_uses_slower_constant() {
        let a = activation_step(1.0, 0.0, 0.04, 0.01, 0.04);
        assert!((a - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn isometric_optimal_force() {
        let s = spec();
        assert_eq!(force_passive(1.0), 0.0);
        assert_eq!(muscle_force(1.0, s.l_opt, 0.0, &s), s.f_max);
        assert_eq!(muscle_force(0.5, s.l_opt, 0.0, &s), 0.5 * s.f_max);
    }

    #[test]
    fn max_shortening_kills_active_force() {
        let s = spec();
        let v = -s.v_max * s.l_opt;
        assert_eq!(muscle_force(1.0, s.l_opt, v, &s), 0.0);
    }

    #[test]
    fn eccentric_plateau() {
        assert!(force_velocity(-0.5) > 1.0);
        assert!(force_velocity(-1e6) <= FV_ECCENTRIC_MAX);
        assert!((force_velocity(-1e9) - FV_ECCENTRIC_MAX).abs() < 1e-6);
        // slope continuity at zero
        let h = 1e-7;
        let left = (force_velocity(0.0) - force_velocity(-h)) / h;
        let right = (force_velocity(h) - force_velocity(0.0)) / h;
        assert!((left - right).abs() < 1e-4);
    }

    #[test]
    fn force_length_peak_is_unique() {
        let peak = force_length(1.0);
        for i in -200..=200 {
            let l = 1.0 + i as f64 * 0.001;
            if i != 0 {
                assert!(force_length(l) < peak);
            }
        }
    }

    #[test]
    fn kinematics_affine_path() {
        let m = muscle(0.05);
        let ref_state = muscle_kinematics(&[0.0], &[0.0], &m);
        assert!((ref_state.length - m.spec.l_opt).abs() < 1e-15);
        let rotated = muscle_kinematics(&[0.3], &[2.0], &m);
        assert!((rotated.length - ref_state.length - (-0.05 * 0.3)).abs() < 1e-15);
        assert!((rotated.velocity - (-0.05 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn kinematics_clamps_collapsed_fiber() {
        let m = muscle(0.5);
        let s = muscle_kinematics(&[1.0], &[0.0], &m);
        assert!(s.clamped);
        let mut shifted = muscle(0.05);
        shifted.spec.ref_fiber = Some(0.07);
        assert!((muscle_kinematics(&[0.0], &[0.0], &shifted).length - 0.07).abs() < 1e-15);
        assert_eq!(s.length, MIN_FIBER_LENGTH);
    }

    #[test]
    fn torques_from_forces() {
        let m = muscle(0.05);
        assert_eq!(joint_torques(&[0.0], std::slice::from_ref(&m), 1).unwrap(), vec![0.0]);
        let t = joint_torques(&[1000.0], std::slice::from_ref(&m), 1).unwrap();
        assert!((t[0] - 50.0).abs() < 1e-12);
        let pair = [muscle(0.05), muscle(-0.05)];
        assert_eq!(joint_torques(&[800.0, 800.0], &pair, 1).unwrap(), vec![0.0]);
        assert!(joint_torques(&[1.0, 2.0], std::slice::from_ref(&m), 1).is_err());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut s = spec();
        s.f_max = 0.0;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.tau_act = 0.05;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.arms.clear();
        assert!(s.validate().is_err());
        assert!(spec().validate().is_ok());
    }
}
