//! Compliant sphere contact: Hunt-Crossley normal force with a regularized
//! static/dynamic/viscous friction law.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground contact sphere rigidly attached to a segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSphere {
    pub segment: String,
    /// Center in the segment frame, m.
    pub offset: [f64; 2],
    pub radius: f64,
}

/// Sphere used for leg-leg (self) collision. `lateral` is the out-of-plane
/// offset of the sphere center; spheres on different legs only touch when
/// their 3-D distance is below the sum of radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionSphere {
    pub segment: String,
    pub offset: [f64; 2],
    pub radius: f64,
    #[serde(default)]
    pub lateral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactParams {
    /// Stiffness, N/m^exponent.
    pub stiffness: f64,
    /// Hertz exponent.
    pub exponent: f64,
    /// Hunt-Crossley damping, s/m.
    pub damping: f64,
    pub mu_static: f64,
    pub mu_dynamic: f64,
    /// Viscous friction coefficient, s/m (scaled by the normal force).
    pub mu_viscous: f64,
    /// Slip velocity scale of the friction regularization, m/s.
    pub slip_velocity: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness: 2e6,
            exponent: 1.5,
            damping: 1.0,
            mu_static: 0.9,
            mu_dynamic: 0.8,
            mu_viscous: 0.5,
            slip_velocity: 0.05,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.stiffness,
            self.exponent,
            self.damping,
            self.mu_static,
            self.mu_dynamic,
            self.mu_viscous,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidModel("contact parameters must be non-negative".into()));
        }
        if self.mu_static < self.mu_dynamic {
            return Err(Error::InvalidModel(
                "static friction must be at least the dynamic coefficient".into(),
            ));
        }
        if !(self.slip_velocity > 0.0) {
            return Err(Error::InvalidModel("slip velocity must be positive".into()));
        }
        Ok(())
    }
}

/// Hunt-Crossley normal force `k * d^n * (1 + c * d_dot)`, never pulling.
pub fn normal_force(penetration: f64, penetration_rate: f64, params: &ContactParams) -> f64 {
    if penetration <= 0.0 {
        return 0.0;
    }
    let elastic = params.stiffness * penetration.powf(params.exponent);
    (elastic * (1.0 + params.damping * penetration_rate)).max(0.0)
}

/// Signed tangential friction force opposing the slip velocity `v_t`.
///
/// The Coulomb part is `mu_d * tanh(s)` plus a Stribeck bump
/// `(mu_s - mu_d) * s * exp((1 - s^2) / 2)` that peaks at `s = 1`
/// (`s = |v_t| / slip_velocity`), so the coefficient never exceeds `mu_s`
/// and tends to `mu_d` at large slip. The viscous part adds `mu_v * |v_t|`.
pub fn friction_force(normal: f64, tangential_velocity: f64, params: &ContactParams) -> f64 {
    if normal <= 0.0 || tangential_velocity == 0.0 {
        return 0.0;
    }
    let speed = tangential_velocity.abs();
    let s = speed / params.slip_velocity;
    let coulomb = params.mu_dynamic * s.tanh()
        + (params.mu_static - params.mu_dynamic) * s * (0.5 * (1.0 - s * s)).exp();
    let mu = coulomb + params.mu_viscous * speed;
    -tangential_velocity.signum() * mu * normal
}

/// Force on a sphere resting against a terrain plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SphereContact {
    pub penetration: f64,
    /// World-frame force applied at the contact point.
    pub force: [f64; 2],
    /// World-frame contact point.
    pub point: [f64; 2],
}

/// Contact of one sphere (center `c`, center velocity `v`) with a locally
/// planar surface through `(c_x, ground_y)` with unit normal `n`. The contact
/// point lies on the sphere surface along `-n`; `v_point` is its velocity.
pub fn sphere_plane(
    center: [f64; 2],
    radius: f64,
    ground_y: f64,
    normal: [f64; 2],
    v_point: [f64; 2],
    params: &ContactParams,
) -> SphereContact {
    let dist = normal[1] * (center[1] - ground_y);
    let penetration = radius - dist;
    let point = [center[0] - radius * normal[0], center[1] - radius * normal[1]];
    if penetration <= 0.0 {
        return SphereContact { penetration, force: [0.0, 0.0], point };
    }
    let vn = v_point[0] * normal[0] + v_point[1] * normal[1];
    let fn_ = normal_force(penetration, -vn, params);
    let tangent = [normal[1], -normal[0]];
    let vt = v_point[0] * tangent[0] + v_point[1] * tangent[1];
    let ft = friction_force(fn_, vt, params);
    SphereContact {
        penetration,
        force: [
            fn_ * normal[0] + ft * tangent[0],
            fn_ * normal[1] + ft * tangent[1],
        ],
        point,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_penetration_no_force() {
        let p = ContactParams::default();
        assert_eq!(normal_force(0.0, 1.0, &p), 0.0);
        assert_eq!(normal_force(-1e-3, 0.0, &p), 0.0);
    }

    #[test]
    fn hertz_evaluation() {
        let p = ContactParams { stiffness: 1e6, exponent: 1.5, ..Default::default() };
        let f = normal_force(1e-3, 0.0, &p);
        assert!((f - 31.622776601683793).abs() < 1e-9);
    }

    #[test]
    fn suction_is_clamped() {
        let p = ContactParams::default();
        assert_eq!(normal_force(1e-3, -5.0, &p), 0.0);
    }

    #[test]
    fn friction_zero_cases_and_symmetry() {
        let p = ContactParams::default();
        assert_eq!(friction_force(0.0, 1.0, &p), 0.0);
        assert_eq!(friction_force(100.0, 0.0, &p), 0.0);
        for v in [1e-4, 0.01, 0.05, 0.3, 2.0] {
            assert_eq!(friction_force(100.0, v, &p), -friction_force(100.0, -v, &p));
            assert!(friction_force(100.0, v, &p) < 0.0);
        }
    }

    #[test]
    fn coulomb_limit() {
        let p = ContactParams { mu_dynamic: 0.8, mu_viscous: 0.0, ..Default::default() };
        let f = friction_force(100.0, 50.0, &p);
        assert!((f.abs() - 80.0).abs() < 1e-6);
    }

    #[test]
    fn friction_bounded_by_static_plus_viscous() {
        let p = ContactParams::default();
        for i in 1..2000 {
            let v = i as f64 * 1e-3;
            let bound = (p.mu_static + p.mu_viscous * v) * 100.0;
            assert!(friction_force(100.0, v, &p).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn static_friction_is_reached_near_reference_slip() {
        let p = ContactParams { mu_viscous: 0.0, ..Default::default() };
        let peak = (1..500)
            .map(|i| friction_force(1.0, i as f64 * 1e-3, &p).abs())
            .fold(0.0, f64::max);
        assert!(peak > p.mu_dynamic);
        assert!(peak <= p.mu_static);
    }

    #[test]
    fn params_validation() {
        assert!(ContactParams::default().validate().is_ok());
        let p = ContactParams { mu_static: 0.5, mu_dynamic: 0.8, ..Default::default() };
        assert!(p.validate().is_err());
        let p = ContactParams { stiffness: -1.0, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn sphere_on_flat_ground() {
        let p = ContactParams::default();
        let c = sphere_plane([0.0, 0.019], 0.02, 0.0, [0.0, 1.0], [0.0, 0.0], &p);
        assert!(c.penetration > 0.0);
        assert!(c.force[1] > 0.0);
        assert_eq!(c.force[0], 0.0);
        let c = sphere_plane([0.0, 0.05], 0.02, 0.0, [0.0, 1.0], [0.0, -1.0], &p);
        assert_eq!(c.force, [0.0, 0.0]);
    }
}
