//! Training loop: rollout collection, learner updates and per-episode effort
//! weight adaptation, with resumable checkpoints.

use std::io::{Read, Write};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptConfig, AdaptState, Branch};
use crate::agent::{Learner, LearnerConfig, OuNoise, TrainMetrics};
use crate::biomech::{Model, ModelSpec};
use crate::env::{Env, EnvConfig, Mode};
use crate::error::{Error, Result};
use crate::gaitlab::{self, ReferenceBand};
use crate::replay::{ReplayBuffer, Transition};
use crate::reward::{total_reward, RewardBreakdown, RewardWeights};
use crate::rollout::RolloutTable;
use crate::terrain::Terrain;

/// Reward ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Effort weight held at 0.
    NoAdapt,
    /// Whole effort cost removed and excitation clipping disabled.
    NoEffort,
    /// Velocity term only.
    OnlyVel,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::NoAdapt, Ablation::NoEffort, Ablation::OnlyVel];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "ours",
            Ablation::NoAdapt => "no-adapt",
            Ablation::NoEffort => "no-effort",
            Ablation::OnlyVel => "only-vel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" | "ours" => Ok(Ablation::None),
            "no-adapt" => Ok(Ablation::NoAdapt),
            "no-effort" => Ok(Ablation::NoEffort),
            "only-vel" => Ok(Ablation::OnlyVel),
            other => Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
    }
}

/// Reward weights, environment settings and whether the effort weight
/// adapts, for a mode and ablation.
pub fn resolve_variant(
    mode: Mode,
    ablation: Ablation,
    weights: RewardWeights,
    env: EnvConfig,
) -> (RewardWeights, EnvConfig, bool) {
    let mut env = EnvConfig { mode, ..env };
    let (mut w, mut adapt) = (weights, true);
    match ablation {
        Ablation::None => {}
        Ablation::NoAdapt => adapt = false,
        Ablation::NoEffort => {
            w = w.without_effort();
            env.activity_cost = false;
            env.clip = Some(1.0);
            adapt = false;
        }
        Ablation::OnlyVel => {
            w = w.velocity_only();
            env.activity_cost = false;
            adapt = false;
        }
    }
    if mode == Mode::Run {
        // energetic constraints removed
        w = w.without_effort();
        env.activity_cost = false;
        env.clip = Some(1.0);
        adapt = false;
    }
    (w, env, adapt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: u64,
    /// Environment steps collected so far.
    pub steps: u64,
    pub episode_steps: usize,
    /// Sum of the task reward.
    pub task_return: f64,
    /// Sum of the full reward at the effort weight used while collecting.
    pub total_return: f64,
    /// Mean of `a^3` over steps and muscles.
    pub mean_effort: f64,
    pub alpha_used: f64,
    /// Effort weight after the episode's adaptation update.
    pub alpha: f64,
    pub r_mean: f64,
    pub c_mean: f64,
    pub delta: f64,
    pub branch: Option<Branch>,
    pub fell: bool,
    pub distance: f64,
    pub clip: f64,
    pub exp_match: Option<f64>,
    pub updates: u64,
    pub critic_loss: f64,
}

impl EpisodeMetrics {
    pub const HEADER: [&'static str; 18] = [
        "episode",
        "steps",
        "episode_steps",
        "task_return",
        "total_return",
        "mean_effort",
        "alpha_used",
        "alpha",
        "r_mean",
        "c_mean",
        "delta",
        "branch",
        "fell",
        "distance",
        "clip",
        "exp_match",
        "updates",
        "critic_loss",
    ];

    pub fn record(&self) -> Vec<String> {
        let branch = match self.branch {
            Some(Branch::SlowDown) => "slow_down",
            Some(Branch::Increase) => "increase",
            Some(Branch::Decrease) => "decrease",
            None => "",
        };
        vec![
            self.episode.to_string(),
            self.steps.to_string(),
            self.episode_steps.to_string(),
            self.task_return.to_string(),
            self.total_return.to_string(),
            self.mean_effort.to_string(),
            self.alpha_used.to_string(),
            self.alpha.to_string(),
            self.r_mean.to_string(),
            self.c_mean.to_string(),
            self.delta.to_string(),
            branch.to_string(),
            (self.fell as u8).to_string(),
            self.distance.to_string(),
            self.clip.to_string(),
            self.exp_match.map(|v| v.to_string()).unwrap_or_default(),
            self.updates.to_string(),
            self.critic_loss.to_string(),
        ]
    }
}

/// Per-step reward log entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub episode: u64,
    pub step: usize,
    pub breakdown: RewardBreakdown,
    pub alpha: f64,
    pub clip: f64,
    pub max_u: f64,
}

impl StepRecord {
    pub const HEADER: [&'static str; 11] = [
        "episode",
        "step",
        "r_vel",
        "effort_activity",
        "effort_smooth",
        "effort_nactive",
        "pain_limits",
        "pain_grf",
        "alpha",
        "clip",
        "max_u",
    ];

    pub fn record(&self) -> Vec<String> {
        let b = &self.breakdown;
        [
            b.r_vel,
            b.effort_activity,
            b.effort_smooth,
            b.effort_nactive,
            b.pain_limits,
            b.pain_grf,
            self.alpha,
            self.clip,
            self.max_u,
        ]
        .iter()
        .fold(vec![self.episode.to_string(), self.step.to_string()], |mut v, x| {
            v.push(x.to_string());
            v
        })
    }
}

/// Everything needed to build a trainer.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub model: ModelSpec,
    pub weights: RewardWeights,
    pub env: EnvConfig,
    pub learner: LearnerConfig,
    pub adapt: AdaptConfig,
    pub ablation: Ablation,
    pub seed: u64,
    /// Identifies the configuration in checkpoints and file headers.
    pub fingerprint: String,
}

pub struct Trainer {
    env: Env,
    learner: Learner,
    buffer: ReplayBuffer,
    adapt_cfg: AdaptConfig,
    adapt: AdaptState,
    adapt_enabled: bool,
    ablation: Ablation,
    rng: ChaCha8Rng,
    noise: OuNoise,
    episode: u64,
    global_step: u64,
    since_update: u64,
    updates: u64,
    last_train: TrainMetrics,
    reference: Option<ReferenceBand>,
    fingerprint: String,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"NWCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub model: ModelSpec,
    pub weights: RewardWeights,
    pub env: EnvConfig,
    pub adapt_cfg: AdaptConfig,
    pub adapt: AdaptState,
    pub adapt_enabled: bool,
    pub ablation: Ablation,
    pub learner: Learner,
    pub rng: ChaCha8Rng,
    pub episode: u64,
    pub global_step: u64,
    pub since_update: u64,
    pub updates: u64,
    pub last_train: TrainMetrics,
    pub buffer: Option<ReplayBuffer>,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("checkpoint", e);
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        bincode::serialize_into(&mut w, self).map_err(|e| Error::CorruptSnapshot(format!("checkpoint encode: {e}")))?;
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head)
            .map_err(|e| Error::CheckpointMismatch(format!("checkpoint header: {e}")))?;
        if &head[..4] != CHECKPOINT_MAGIC {
            return Err(Error::CheckpointMismatch("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(head[4..].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!("checkpoint version {version}")));
        }
        bincode::deserialize_from(r).map_err(|e| Error::CorruptSnapshot(format!("checkpoint decode: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// Environment on `terrain` matching the checkpoint's task settings.
    pub fn make_env(&self, terrain: Terrain) -> Result<Env> {
        let env = Env::new(Model::from_spec(self.model.clone())?, terrain, self.weights, self.env)?;
        if env.obs_dim() != self.learner.obs_dim() || env.act_dim() != self.learner.act_dim() {
            return Err(Error::CheckpointMismatch(format!(
                "policy expects {}x{} observation/action sizes, model gives {}x{}",
                self.learner.obs_dim(),
                self.learner.act_dim(),
                env.obs_dim(),
                env.act_dim()
            )));
        }
        Ok(env)
    }
}

impl Trainer {
    pub fn new(setup: TrainSetup) -> Result<Self> {
        setup.adapt.validate()?;
        setup.learner.validate()?;
        let (weights, env_cfg, adapt_enabled) =
            resolve_variant(setup.env.mode, setup.ablation, setup.weights, setup.env);
        let model = Model::from_spec(setup.model)?;
        let env = Env::new(model, Terrain::flat(), weights, env_cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
        let learner = Learner::new(env.obs_dim(), env.act_dim(), env_cfg.clip(), setup.learner.clone(), &mut rng)?;
        let noise = OuNoise::new(env.act_dim(), setup.learner.noise_sigma, setup.learner.noise_tau, env_cfg.control_dt());
        Ok(Self {
            buffer: ReplayBuffer::new(setup.learner.replay_capacity)?,
            adapt: AdaptState::new(&setup.adapt),
            adapt_cfg: setup.adapt,
            adapt_enabled,
            ablation: setup.ablation,
            env,
            learner,
            rng,
            noise,
            episode: 0,
            global_step: 0,
            since_update: 0,
            updates: 0,
            last_train: TrainMetrics::default(),
            reference: None,
            fingerprint: setup.fingerprint,
        })
    }

    /// Scores each episode's gait against `band`.
    pub fn set_reference(&mut self, band: Option<ReferenceBand>) {
        self.reference = band;
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn adapt_state(&self) -> &AdaptState {
        &self.adapt
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    /// Collects one episode, training whenever an update phase is due.
    pub fn run_episode(&mut self, on_step: &mut dyn FnMut(&StepRecord)) -> Result<EpisodeMetrics> {
        let seed = self.rng.next_u64();
        let mut obs = self.env.reset(seed);
        self.noise.reset();
        let x0 = self.env.com_x();
        let alpha = self.adapt.alpha;
        let clip = self.env.config().clip();
        let mut table = self.reference.as_ref().map(|_| {
            let mut t = RolloutTable::for_env(&self.env);
            t.record(&self.env, &vec![0.0; self.env.act_dim()]);
            t
        });
        let (mut task_return, mut total_return, mut effort) = (0.0, 0.0, 0.0);
        let fell = loop {
            let noise = self.noise.sample(&mut self.rng).to_vec();
            let u = self.learner.act(&obs, Some(&noise))?;
            let step = self.env.step(&u)?;
            if let Some(t) = table.as_mut() {
                t.record(&self.env, &u);
            }
            let b = step.breakdown;
            task_return += b.r_vel;
            total_return += total_reward(&b, alpha);
            effort += step.activity;
            on_step(&StepRecord {
                episode: self.episode,
                step: self.env.steps() - 1,
                breakdown: b,
                alpha,
                clip,
                max_u: u.iter().copied().fold(0.0, f64::max),
            });
            self.buffer.push(Transition {
                obs: std::mem::take(&mut obs),
                action: u.iter().map(|&x| x as f32).collect(),
                next_obs: step.obs.clone(),
                breakdown: b,
                done: step.fell,
                episode: self.episode,
            });
            let done = step.done();
            let fell = step.fell;
            obs = step.obs;
            self.global_step += 1;
            self.since_update += 1;
            if self.learner.update_due(self.global_step, self.since_update, self.buffer.len()) {
                self.last_train = self.learner.train_phase(&self.buffer, self.adapt.alpha, &mut self.rng)?;
                self.updates += self.last_train.updates as u64;
                self.since_update = 0;
            }
            if done {
                break fell;
            }
        };
        let branch = if self.adapt_enabled {
            let (next, branch) = self.adapt.update(task_return, &self.adapt_cfg)?;
            self.adapt = next;
            Some(branch)
        } else {
            // the return statistics are still tracked for the logs
            let beta = self.adapt_cfg.smoothing;
            self.adapt.r_mean = beta * self.adapt.r_mean + (1.0 - beta) * task_return;
            None
        };
        let exp_match = match (&self.reference, &table) {
            (Some(band), Some(t)) => {
                let (report, _) = gaitlab::analyze(&[t.to_gait()?], Some(band), band.points().unwrap_or(gaitlab::DEFAULT_POINTS))?;
                Some(report.aggregate.unwrap_or(0.0))
            }
            _ => None,
        };
        let steps = self.env.steps();
        let m = EpisodeMetrics {
            episode: self.episode,
            steps: self.global_step,
            episode_steps: steps,
            task_return,
            total_return,
            mean_effort: effort / steps.max(1) as f64,
            alpha_used: alpha,
            alpha: self.adapt.alpha,
            r_mean: self.adapt.r_mean,
            c_mean: self.adapt.c_mean,
            delta: self.adapt.delta,
            branch,
            fell,
            distance: self.env.com_x() - x0,
            clip,
            exp_match,
            updates: self.updates,
            critic_loss: self.last_train.critic_loss,
        };
        self.episode += 1;
        Ok(m)
    }

    /// Runs whole episodes until at least `total_steps` steps were collected.
    pub fn run(
        &mut self,
        total_steps: u64,
        on_step: &mut dyn FnMut(&StepRecord),
        on_episode: &mut dyn FnMut(&EpisodeMetrics, &Trainer) -> Result<()>,
    ) -> Result<()> {
        while self.global_step < total_steps {
            let m = self.run_episode(on_step)?;
            on_episode(&m, self)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self, with_buffer: bool) -> Checkpoint {
        Checkpoint {
            fingerprint: self.fingerprint.clone(),
            model: self.env.model().spec().clone(),
            weights: *self.env.weights(),
            env: *self.env.config(),
            adapt_cfg: self.adapt_cfg,
            adapt: self.adapt,
            adapt_enabled: self.adapt_enabled,
            ablation: self.ablation,
            learner: self.learner.clone(),
            rng: self.rng.clone(),
            episode: self.episode,
            global_step: self.global_step,
            since_update: self.since_update,
            updates: self.updates,
            last_train: self.last_train,
            buffer: with_buffer.then(|| self.buffer.clone()),
        }
    }

    /// Continues a run from a checkpoint saved with its replay buffer.
    pub fn restore(ck: Checkpoint) -> Result<Self> {
        let buffer = ck
            .buffer
            .ok_or_else(|| Error::CheckpointMismatch("checkpoint has no replay buffer; cannot resume".into()))?;
        let model = Model::from_spec(ck.model)?;
        let env = Env::new(model, Terrain::flat(), ck.weights, ck.env)?;
        if env.obs_dim() != ck.learner.obs_dim() || env.act_dim() != ck.learner.act_dim() {
            return Err(Error::CheckpointMismatch("learner does not match the model".into()));
        }
        let noise = OuNoise::new(env.act_dim(), ck.learner.cfg.noise_sigma, ck.learner.cfg.noise_tau, ck.env.control_dt());
        Ok(Self {
            env,
            buffer,
            noise,
            adapt_cfg: ck.adapt_cfg,
            adapt: ck.adapt,
            adapt_enabled: ck.adapt_enabled,
            ablation: ck.ablation,
            learner: ck.learner,
            rng: ck.rng,
            episode: ck.episode,
            global_step: ck.global_step,
            since_update: ck.since_update,
            updates: ck.updates,
            last_train: ck.last_train,
            reference: None,
            fingerprint: ck.fingerprint,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(ablation: Ablation) -> TrainSetup {
        TrainSetup {
            model: ModelSpec::parse(crate::biomech::DEFAULT_MODEL).unwrap(),
            weights: RewardWeights::default(),
            env: EnvConfig { horizon: 0.25, ..Default::default() },
            learner: LearnerConfig {
                hidden: vec![16],
                batch_size: 16,
                steps_before_batches: 60,
                steps_between_batches: 20,
                batches_per_update: 2,
                replay_capacity: 10_000,
                ..Default::default()
            },
            adapt: AdaptConfig::default(),
            ablation,
            seed: 11,
            fingerprint: "test".into(),
        }
    }

    fn collect(t: &mut Trainer, steps: u64) -> Vec<EpisodeMetrics> {
        let mut out = Vec::new();
        t.run(steps, &mut |_| {}, &mut |m, _| {
            out.push(m.clone());
            Ok(())
        })
        .unwrap();
        out
    }

    #[test]
    fn deterministic_per_seed() {
        let a = collect(&mut Trainer::new(setup(Ablation::None)).unwrap(), 200);
        let b = collect(&mut Trainer::new(setup(Ablation::None)).unwrap(), 200);
        assert_eq!(a, b);
        assert!(a.last().unwrap().updates > 0);
        assert!(a.iter().all(|m| m.alpha == 0.0));
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let full = collect(&mut Trainer::new(setup(Ablation::None)).unwrap(), 240);
        let mut t = Trainer::new(setup(Ablation::None)).unwrap();
        let mut first = collect(&mut t, 100);
        let mut blob = Vec::new();
        t.checkpoint(true).write_to(&mut blob).unwrap();
        let mut t2 = Trainer::restore(Checkpoint::read_from(&blob[..]).unwrap()).unwrap();
        first.extend(collect(&mut t2, 240));
        assert_eq!(first, full);
    }

    #[test]
    fn variants() {
        let w = RewardWeights::default();
        let e = EnvConfig::default();
        let (w1, e1, a1) = resolve_variant(Mode::Walk, Ablation::NoEffort, w, e);
        assert_eq!((w1.smoothness, w1.active_muscles, e1.clip(), a1), (0.0, 0.0, 1.0, false));
        let (w2, e2, a2) = resolve_variant(Mode::Walk, Ablation::OnlyVel, w, e);
        assert_eq!(w2.limit_torque, 0.0);
        assert_eq!((e2.clip(), a2), (0.5, false));
        let (_, e3, a3) = resolve_variant(Mode::Run, Ablation::None, w, e);
        assert_eq!((e3.clip(), a3), (1.0, false));
        assert_eq!(Ablation::parse("no-adapt").unwrap(), Ablation::NoAdapt);
        assert!(Ablation::parse("nope").is_err());
    }

    #[test]
    fn only_vel_logs_no_costs() {
        let mut t = Trainer::new(setup(Ablation::OnlyVel)).unwrap();
        let mut rows = Vec::new();
        t.run(100, &mut |s| rows.push(*s), &mut |_, _| Ok(())).unwrap();
        assert!(rows.len() >= 100);
        for r in rows {
            let b = r.breakdown;
            assert_eq!([b.effort_activity, b.effort_smooth, b.effort_nactive, b.pain_limits, b.pain_grf], [0.0; 5]);
            assert!(r.max_u <= 0.5);
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(Checkpoint::read_from(&b"NOPE0000"[..]).is_err());
        let t = Trainer::new(setup(Ablation::None)).unwrap();
        let ck = t.checkpoint(false);
        let mut blob = Vec::new();
        ck.write_to(&mut blob).unwrap();
        let back = Checkpoint::read_from(&blob[..]).unwrap();
        assert!(back.make_env(Terrain::flat()).is_ok());
        assert!(Trainer::restore(back).is_err());
    }
}
