//! Run configuration file.
//!
//! A single TOML document covers every experiment. Sections `[env]`,
//! `[reward]`, `[adapt]`, `[learner]` and `[eval]` map onto the library
//! configs; `[dep]` and `[mpo]` hold hyperparameters of exploration and
//! learner variants that this crate does not implement. Those are accepted,
//! kept in the resolved config and reported by [`RunConfig::unsupported_keys`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::AdaptConfig;
use crate::agent::LearnerConfig;
use crate::biomech::{ModelSpec, DEFAULT_MODEL};
use crate::env::{EnvConfig, Mode};
use crate::error::{Error, Result};
use crate::reward::RewardWeights;
use crate::terrain::TileParams;
use crate::train::Ablation;

/// Recognized keys of the reserved sections.
pub const DEP_KEYS: [&str; 10] = [
    "kappa",
    "tau",
    "buffer_size",
    "bias_rate",
    "s4avg",
    "time_dist",
    "p_switch",
    "h_dep",
    "test_episode",
    "force_scale",
];
pub const MPO_KEYS: [&str; 4] = ["lr_dual", "n_step_return", "n_parallel", "n_sequential"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub rollouts: usize,
    pub seed: u64,
    /// Seed of the rough evaluation course, fixed across evaluations.
    pub terrain_seed: u64,
    pub tiles: TileParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rollouts: 20,
            seed: 0,
            terrain_seed: 0,
            tiles: TileParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model file; the built-in planar model when absent.
    pub model: Option<PathBuf>,
    /// Walk or run; overrides `env.mode`.
    pub mode: Mode,
    pub ablation: Ablation,
    pub seed: u64,
    /// Environment steps to collect.
    pub total_steps: u64,
    pub out: PathBuf,
    /// Episodes between policy checkpoints (0 disables them).
    pub checkpoint_every: u64,
    /// Store the replay buffer in the final checkpoint so the run can resume.
    pub save_replay: bool,
    /// Write the per-step reward breakdown log.
    pub step_log: bool,
    /// Reference band for the per-episode experimental match.
    pub reference: Option<PathBuf>,
    pub env: EnvConfig,
    pub reward: RewardWeights,
    pub adapt: AdaptConfig,
    pub learner: LearnerConfig,
    pub eval: EvalConfig,
    pub dep: BTreeMap<String, toml::Value>,
    pub mpo: BTreeMap<String, toml::Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            mode: Mode::Walk,
            ablation: Ablation::None,
            seed: 0,
            total_steps: 2_000_000,
            out: PathBuf::from("runs/default"),
            checkpoint_every: 100,
            save_replay: true,
            step_log: false,
            reference: None,
            env: EnvConfig::default(),
            reward: RewardWeights::default(),
            adapt: AdaptConfig::default(),
            learner: LearnerConfig::default(),
            eval: EvalConfig::default(),
            dep: BTreeMap::new(),
            mpo: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // relative paths inside the file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.model, &mut cfg.reference].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.reward.validate()?;
        self.adapt.validate()?;
        self.learner.validate()?;
        for (section, known, keys) in [("dep", &DEP_KEYS[..], &self.dep), ("mpo", &MPO_KEYS[..], &self.mpo)] {
            if let Some(k) = keys.keys().find(|k| !known.contains(&k.as_str())) {
                return Err(Error::Config(format!("unknown key `{section}.{k}`")));
            }
        }
        Ok(())
    }

    /// Reserved keys that were set but have no effect.
    pub fn unsupported_keys(&self) -> Vec<String> {
        let dep = self.dep.keys().map(|k| format!("dep.{k}"));
        let mpo = self
            .mpo
            .iter()
            .filter(|(k, v)| !(k.as_str() == "n_step_return" && v.as_integer() == Some(1)))
            .map(|(k, _)| format!("mpo.{k}"));
        dep.chain(mpo).collect()
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        match &self.model {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                ModelSpec::parse(&text)
            }
            None => ModelSpec::parse(DEFAULT_MODEL),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Short hash of the settings that shape training. Run length, output
    /// and logging options and the `[eval]` section are left out so a run
    /// can be extended from its checkpoint.
    pub fn hash(&self) -> String {
        let d = RunConfig::default();
        let core = RunConfig {
            total_steps: d.total_steps,
            out: d.out,
            checkpoint_every: d.checkpoint_every,
            save_replay: d.save_replay,
            step_log: d.step_log,
            eval: d.eval,
            ..self.clone()
        };
        let digest = Sha256::digest(core.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(c.hash().len(), 16);
        assert!(RunConfig::parse("").is_ok());
    }

    #[test]
    fn sections_and_flags() {
        let c = RunConfig::parse(
            r#"
            mode = "run"
            ablation = "only-vel"
            total_steps = 5000
            [learner]
            hidden = [32, 32]
            batch_size = 64
            [adapt]
            threshold = 500.0
            [dep]
            kappa = 1200
            tau = 40
            [mpo]
            n_step_return = 1
            n_parallel = 20
            "#,
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Run);
        assert_eq!(c.ablation, Ablation::OnlyVel);
        assert_eq!(c.learner.hidden, vec![32, 32]);
        assert_eq!(c.learner.steps_before_batches, 200_000);
        assert_eq!(c.adapt.smoothing, 0.8);
        assert_eq!(c.unsupported_keys(), vec!["dep.kappa", "dep.tau", "mpo.n_parallel"]);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::parse("totl_steps = 3").is_err());
        assert!(RunConfig::parse("[dep]\nfoo = 1").is_err());
        assert!(RunConfig::parse("[adapt]\nsmoothing = 1.5").is_err());
        assert!(RunConfig::parse("mode = \"fly\"").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::default().hash());
        let longer = RunConfig { total_steps: 10, step_log: true, ..RunConfig::default() };
        assert_eq!(a.hash(), longer.hash());
    }
}
