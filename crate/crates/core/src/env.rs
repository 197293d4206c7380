//! Episodic walking (or running) task around the biped simulator.
//!
//! Observations are proprioceptive only: joint angles and velocities, pelvis
//! height above the lowest foot point, pelvis pitch and velocities, muscle
//! activations, per-foot contact flags and the previous action.

use serde::{Deserialize, Serialize};

use crate::biomech::{Model, SimState, StepReport};
use crate::error::{Error, Result};
use crate::reward::{self, RewardBreakdown, RewardWeights, StepSignals};
use crate::terrain::Terrain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Walk,
    Run,
}

impl Mode {
    /// Upper excitation bound.
    pub fn clip(self) -> f64 {
        match self {
            Mode::Walk => 0.5,
            Mode::Run => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub mode: Mode,
    /// Control (policy) rate, Hz.
    pub control_hz: f64,
    /// Physics step, s.
    pub physics_dt: f64,
    /// Episode length, s.
    pub horizon: f64,
    /// The episode ends when the pelvis drops below this fraction of the
    /// standing height above the terrain.
    pub fall_fraction: f64,
    /// Self-collision penalty weight (running).
    pub collision_weight: f64,
    /// Upper excitation bound; `None` uses the mode default.
    pub clip: Option<f64>,
    /// Whether the cubic activity term is recorded in the reward breakdown.
    pub activity_cost: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Walk,
            control_hz: 200.0,
            physics_dt: 1e-4,
            horizon: 10.0,
            fall_fraction: 0.7,
            collision_weight: 1.0,
            clip: None,
            activity_cost: true,
        }
    }
}

impl EnvConfig {
    pub fn clip(&self) -> f64 {
        self.clip.unwrap_or(self.mode.clip())
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz
    }

    pub fn substeps(&self) -> usize {
        (self.control_dt() / self.physics_dt).round() as usize
    }

    pub fn max_steps(&self) -> usize {
        (self.horizon * self.control_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.control_hz > 0.0 && self.physics_dt > 0.0 && self.horizon > 0.0) {
            return Err(Error::Config("control_hz, physics_dt and horizon must be positive".into()));
        }
        let ratio = self.control_dt() / self.physics_dt;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::Config(
                "control period must be an integer multiple of physics_dt".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.fall_fraction) {
            return Err(Error::Config("fall_fraction must lie in [0, 1)".into()));
        }
        let clip = self.clip();
        if !(clip > 0.0 && clip <= 1.0) {
            return Err(Error::Config("clip must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Outcome of one control step.
#[derive(Debug, Clone)]
pub struct EnvStep {
    pub obs: Vec<f32>,
    pub breakdown: RewardBreakdown,
    pub report: StepReport,
    /// Mean cubic activation at the new state.
    pub activity: f64,
    /// Episode ended by a fall or a simulation blow-up.
    pub fell: bool,
    /// Episode reached the time limit.
    pub truncated: bool,
    /// Divergence message when the simulation blew up.
    pub diverged: Option<String>,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.fell || self.truncated
    }
}

pub struct Env {
    model: Model,
    terrain: Terrain,
    weights: RewardWeights,
    cfg: EnvConfig,
    standing_height: f64,
    state: SimState,
    report: StepReport,
    u_prev: Vec<f64>,
    steps: usize,
    finished: bool,
}

impl Env {
    pub fn new(model: Model, terrain: Terrain, weights: RewardWeights, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        weights.validate()?;
        if model.legs().is_empty() || !model.is_floating() {
            return Err(Error::InvalidModel("the task needs a floating model with legs".into()));
        }
        let standing_height = model.standing_height();
        let state = model.zero_state();
        let report = model.report(&state, &terrain);
        let u_prev = vec![0.0; model.n_muscles()];
        Ok(Self {
            model,
            terrain,
            weights,
            cfg,
            standing_height,
            state,
            report,
            u_prev,
            steps: 0,
            finished: true,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn terrain(&self) -> &Terrain {
        &self.terrain
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &RewardWeights {
        &self.weights
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn report(&self) -> &StepReport {
        &self.report
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn obs_dim(&self) -> usize {
        let nj = self.model.n_dofs() - 3;
        2 * nj + 5 + self.model.n_muscles() + self.model.n_feet() + self.model.n_muscles()
    }

    pub fn act_dim(&self) -> usize {
        self.model.n_muscles()
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f32> {
        self.state = self.model.reset_on(&self.terrain, seed);
        self.report = self.model.report(&self.state, &self.terrain);
        self.u_prev.iter_mut().for_each(|u| *u = 0.0);
        self.steps = 0;
        self.finished = false;
        self.observe()
    }

    /// Whole-body center of mass x position.
    pub fn com_x(&self) -> f64 {
        let kin = self.model.kinematics(&self.state.q, &self.state.qdot);
        self.model.center_of_mass(&kin).0[0]
    }

    pub fn pelvis_clearance(&self) -> f64 {
        self.state.q[1] - self.terrain.height(self.state.q[0])
    }

    pub fn observe(&self) -> Vec<f32> {
        let (q, qd) = (&self.state.q, &self.state.qdot);
        let kin = self.model.kinematics(q, qd);
        let lowest_foot = (0..self.model.n_feet())
            .map(|f| self.model.foot_clearance(&kin, f, &Terrain::flat()))
            .fold(f64::INFINITY, f64::min);
        let mut o = Vec::with_capacity(self.obs_dim());
        o.extend(q[3..].iter().map(|&x| x as f32));
        o.extend(qd[3..].iter().map(|&x| (0.1 * x) as f32));
        // height of the pelvis above its lowest foot point, from kinematics only
        o.push((q[1] - lowest_foot - self.standing_height) as f32);
        o.push(q[2] as f32);
        o.push(qd[0] as f32);
        o.push(qd[1] as f32);
        o.push((0.1 * qd[2]) as f32);
        o.extend(self.state.a.iter().map(|&x| x as f32));
        let contact = 0.05 * self.model.body_weight();
        o.extend(self.report.grf_per_foot.iter().map(|&g| if g > contact { 1.0 } else { 0.0 }));
        o.extend(self.u_prev.iter().map(|&x| x as f32));
        o
    }

    /// Applies excitations `u` (clipped to the mode bound) for one control
    /// period.
    pub fn step(&mut self, u: &[f64]) -> Result<EnvStep> {
        if self.finished {
            return Err(Error::InvalidArgument("episode is over; call reset first".into()));
        }
        if u.len() != self.model.n_muscles() {
            return Err(Error::DimensionMismatch {
                what: "action",
                expected: self.model.n_muscles(),
                got: u.len(),
            });
        }
        let clip = self.cfg.clip();
        let u: Vec<f64> = u
            .iter()
            .map(|&x| if x.is_nan() { 0.0 } else { x.clamp(0.0, clip) })
            .collect();
        let outcome = self.model.advance(
            &self.state,
            &u,
            self.cfg.physics_dt,
            self.cfg.substeps(),
            &self.terrain,
        );
        self.steps += 1;
        let truncated = self.steps >= self.cfg.max_steps();
        let (next, report) = match outcome {
            Ok(x) => x,
            Err(Error::Diverged { time, reason }) => {
                self.finished = true;
                self.u_prev = u;
                return Ok(EnvStep {
                    obs: self.observe(),
                    breakdown: RewardBreakdown::default(),
                    report: self.report.clone(),
                    activity: mean_cube(&self.state.a),
                    fell: true,
                    truncated,
                    diverged: Some(format!("t = {time:.4} s: {reason}")),
                });
            }
            Err(e) => return Err(e),
        };
        let bw = self.model.body_weight();
        let mut breakdown = reward::decompose(
            &StepSignals {
                com_velocity: report.com_velocity,
                activations: &next.a,
                excitations: &u,
                prev_excitations: &self.u_prev,
                limit_torques: &report.joint_limit_torques,
                grfs: &report.grf_per_foot,
                body_weight: bw,
            },
            &self.weights,
        )?;
        if !self.cfg.activity_cost {
            breakdown.effort_activity = 0.0;
        }
        if self.cfg.mode == Mode::Run {
            breakdown.r_vel = reward::running_reward(
                report.com_velocity,
                report.self_collision_force,
                bw,
                self.cfg.collision_weight,
            );
        }
        let activity = mean_cube(&next.a);
        self.state = next;
        self.report = report;
        self.u_prev = u;
        let fell = self.pelvis_clearance() < self.cfg.fall_fraction * self.standing_height;
        self.finished = fell || truncated;
        Ok(EnvStep {
            obs: self.observe(),
            breakdown,
            report: self.report.clone(),
            activity,
            fell,
            truncated,
            diverged: None,
        })
    }

    pub fn prev_action(&self) -> &[f64] {
        &self.u_prev
    }
}

pub fn mean_cube(a: &[f64]) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        a.iter().map(|x| x * x * x).sum::<f64>() / a.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(cfg: EnvConfig) -> Env {
        Env::new(Model::default_h0918(), Terrain::flat(), RewardWeights::default(), cfg).unwrap()
    }

    #[test]
    fn dimensions_and_timing() {
        let cfg = EnvConfig::default();
        assert_eq!(cfg.substeps(), 50);
        assert_eq!(cfg.max_steps(), 2000);
        let mut e = env(cfg);
        let o = e.reset(3);
        assert_eq!(o.len(), e.obs_dim());
        assert_eq!(e.obs_dim(), 6 + 6 + 5 + 18 + 2 + 18);
        assert!(o.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn step_requires_reset_and_clips() {
        let mut e = env(EnvConfig::default());
        assert!(e.step(&[0.0; 18]).is_err());
        e.reset(0);
        e.step(&[0.9; 18]).unwrap();
        assert!(e.prev_action().iter().all(|&u| u == 0.5));
        assert!(e.step(&[0.0; 3]).is_err());
    }

    #[test]
    fn passive_model_falls_before_horizon() {
        let mut e = env(EnvConfig::default());
        e.reset(1);
        let mut n = 0;
        loop {
            let s = e.step(&[0.0; 18]).unwrap();
            n += 1;
            assert!(s.breakdown.is_finite());
            assert!(s.breakdown.r_vel >= 0.0 && s.breakdown.r_vel <= 1.0);
            if s.done() {
                assert!(s.fell);
                break;
            }
        }
        assert!(n < 2000);
    }

    #[test]
    fn running_reward_replaces_velocity_term() {
        let cfg = EnvConfig { mode: Mode::Run, activity_cost: false, ..Default::default() };
        let mut e = env(cfg);
        e.reset(0);
        let s = e.step(&[0.0; 18]).unwrap();
        assert_eq!(s.breakdown.r_vel, s.report.com_velocity);
        assert_eq!(s.breakdown.effort_activity, 0.0);
        assert_eq!(e.config().clip(), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(EnvConfig { physics_dt: 3e-3, ..Default::default() }.validate().is_err());
        assert!(EnvConfig { clip: Some(0.0), ..Default::default() }.validate().is_err());
        assert!(EnvConfig { control_hz: 100.0, ..Default::default() }.validate().is_ok());
    }
}
