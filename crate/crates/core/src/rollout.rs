//! Rollout logs and policy evaluation.
//!
//! A rollout CSV has one row per control step with columns `t`, `q_<dof>`,
//! `qdot_<dof>`, `a_<muscle>`, `u_<muscle>`, `grf_<side>` per foot, `com_vx`
//! and `com_x`. Leading `# key=value` lines carry provenance and the leg
//! layout needed for gait analysis (`leg.<side>=<hip>,<knee>,<ankle>`).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Learner;
use crate::env::{mean_cube, Env};
use crate::error::{Error, Result};
use crate::gaitlab::{LegSeries, Rollout};

/// `r` and `l` leg names become `right` and `left`.
pub fn side_name(leg: &str) -> String {
    match leg {
        "r" => "right".into(),
        "l" => "left".into(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutTable {
    pub meta: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl RolloutTable {
    /// Empty table with the column layout of `env`'s model.
    pub fn for_env(env: &Env) -> Self {
        let m = env.model();
        let mut columns = vec!["t".to_string()];
        columns.extend(m.dof_names().iter().map(|d| format!("q_{d}")));
        columns.extend(m.dof_names().iter().map(|d| format!("qdot_{d}")));
        columns.extend(m.muscle_names().iter().map(|n| format!("a_{n}")));
        columns.extend(m.muscle_names().iter().map(|n| format!("u_{n}")));
        let mut meta = BTreeMap::new();
        for leg in m.legs() {
            columns.push(format!("grf_{}", side_name(&leg.name)));
        }
        for leg in m.legs() {
            let d = m.dof_names();
            meta.insert(
                format!("leg.{}", side_name(&leg.name)),
                format!("{},{},{}", d[leg.hip], d[leg.knee], d[leg.ankle]),
            );
        }
        columns.push("com_vx".into());
        columns.push("com_x".into());
        meta.insert("body_weight".into(), m.body_weight().to_string());
        meta.insert("dt".into(), env.config().control_dt().to_string());
        Self { meta, columns, rows: Vec::new() }
    }

    /// Appends the current state of `env` with excitations `u`.
    pub fn record(&mut self, env: &Env, u: &[f64]) {
        let s = env.state();
        let mut row = Vec::with_capacity(self.columns.len());
        row.push(s.t);
        row.extend(&s.q);
        row.extend(&s.qdot);
        row.extend(&s.a);
        row.extend(u);
        for leg in env.model().legs() {
            row.push(env.report().grf_per_foot[leg.foot]);
        }
        row.push(env.report().com_velocity);
        row.push(env.com_x());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingSignal(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("rollout csv", e);
        for (k, v) in &self.meta {
            writeln!(w, "# {k}={v}").map_err(io)?;
        }
        let mut wtr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Parse(e.to_string());
        wtr.write_record(&self.columns).map_err(err)?;
        for r in &self.rows {
            wtr.write_record(r.iter().map(|v| v.to_string())).map_err(err)?;
        }
        wtr.flush().map_err(io)
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut body = String::new();
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("rollout csv", e))?;
            if let Some(c) = line.strip_prefix('#') {
                if let Some((k, v)) = c.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let columns: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("rollout header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse(format!("rollout row: {e}")))?;
            let row = rec
                .iter()
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Parse(format!("rollout value `{v}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != columns.len() {
                return Err(Error::DimensionMismatch { what: "rollout row", expected: columns.len(), got: row.len() });
            }
            rows.push(row);
        }
        Ok(Self { meta, columns, rows })
    }

    /// Gait-analysis view. Legs come from the `leg.<side>` header entries.
    pub fn to_gait(&self) -> Result<Rollout> {
        let bw: f64 = self
            .meta
            .get("body_weight")
            .ok_or_else(|| Error::MissingSignal("body_weight header".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("body_weight: {e}")))?;
        let t = self.column("t")?;
        let dt = match self.meta.get("dt") {
            Some(v) => v.parse().map_err(|e| Error::Parse(format!("dt: {e}")))?,
            None if t.len() >= 2 => t[1] - t[0],
            None => return Err(Error::MissingSignal("dt".into())),
        };
        let mut legs = Vec::new();
        for (k, v) in &self.meta {
            let Some(side) = k.strip_prefix("leg.") else { continue };
            let dofs: Vec<&str> = v.split(',').map(str::trim).collect();
            if dofs.len() != 3 {
                return Err(Error::Parse(format!("leg layout `{v}`")));
            }
            legs.push(LegSeries {
                name: side.to_string(),
                hip: self.column(&format!("q_{}", dofs[0]))?,
                knee: self.column(&format!("q_{}", dofs[1]))?,
                ankle: self.column(&format!("q_{}", dofs[2]))?,
                grf: self.column(&format!("grf_{side}"))?,
            });
        }
        let a_idx: Vec<usize> = (0..self.columns.len()).filter(|&i| self.columns[i].starts_with("a_")).collect();
        let r = Rollout {
            dt,
            body_weight: bw,
            legs,
            activations: self.rows.iter().map(|r| a_idx.iter().map(|&i| r[i]).collect()).collect(),
            com_x: self.column("com_x")?,
            com_vx: self.column("com_vx")?,
        };
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub steps: usize,
    pub duration: f64,
    pub distance: f64,
    pub mean_velocity: f64,
    pub effort: f64,
    pub fell: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub rollouts: usize,
    pub falls: usize,
    pub distance: MeanStd,
    pub effort: MeanStd,
    pub velocity: MeanStd,
    pub episodes: Vec<EpisodeSummary>,
}

/// Seeds of `n` evaluation episodes derived from `seed`.
pub fn episode_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Runs one noise-free episode and logs it.
pub fn run_episode(learner: &Learner, env: &mut Env, seed: u64) -> Result<(RolloutTable, EpisodeSummary)> {
    let mut obs = env.reset(seed);
    let mut table = RolloutTable::for_env(env);
    table.record(env, &vec![0.0; env.act_dim()]);
    let x0 = env.com_x();
    let mut effort = mean_cube(&env.state().a);
    let fell = loop {
        let u = learner.act(&obs, None)?;
        let step = env.step(&u)?;
        table.record(env, env.prev_action());
        effort += step.activity;
        if step.done() {
            break step.fell;
        }
        obs = step.obs;
    };
    let steps = env.steps();
    let duration = env.state().t;
    let distance = env.com_x() - x0;
    let summary = EpisodeSummary {
        seed,
        steps,
        duration,
        distance,
        mean_velocity: if duration > 0.0 { distance / duration } else { 0.0 },
        effort: effort / (steps + 1) as f64,
        fell,
    };
    Ok((table, summary))
}

/// Evaluates `n` noise-free episodes.
pub fn evaluate(learner: &Learner, env: &mut Env, seed: u64, n: usize) -> Result<(Vec<RolloutTable>, EvalSummary)> {
    let mut tables = Vec::with_capacity(n);
    let mut episodes = Vec::with_capacity(n);
    for s in episode_seeds(seed, n) {
        let (t, e) = run_episode(learner, env, s)?;
        tables.push(t);
        episodes.push(e);
    }
    let col = |f: fn(&EpisodeSummary) -> f64| episodes.iter().map(f).collect::<Vec<_>>();
    let summary = EvalSummary {
        rollouts: n,
        falls: episodes.iter().filter(|e| e.fell).count(),
        distance: MeanStd::of(&col(|e| e.distance)),
        effort: MeanStd::of(&col(|e| e.effort)),
        velocity: MeanStd::of(&col(|e| e.mean_velocity)),
        episodes,
    };
    Ok((tables, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::LearnerConfig;
    use crate::biomech::Model;
    use crate::env::EnvConfig;
    use crate::reward::RewardWeights;
    use crate::terrain::Terrain;

    fn setup() -> (Learner, Env) {
        let env = Env::new(
            Model::default_h0918(),
            Terrain::flat(),
            RewardWeights::default(),
            EnvConfig { horizon: 0.2, ..Default::default() },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = LearnerConfig { hidden: vec![8], ..Default::default() };
        let l = Learner::new(env.obs_dim(), env.act_dim(), 0.5, cfg, &mut rng).unwrap();
        (l, env)
    }

    #[test]
    fn csv_round_trip_and_gait_view() {
        let (l, mut env) = setup();
        let (table, summary) = run_episode(&l, &mut env, 4).unwrap();
        assert_eq!(table.rows.len(), summary.steps + 1);
        assert!(table.columns.contains(&"grf_left".to_string()));
        assert!(table.columns.contains(&"grf_right".to_string()));
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let back = RolloutTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back.columns, table.columns);
        assert_eq!(back.meta, table.meta);
        assert_eq!(back.rows, table.rows);
        let g = back.to_gait().unwrap();
        assert_eq!(g.legs.len(), 2);
        assert_eq!(g.len(), table.rows.len());
        let u = table.column("u_glu_r").unwrap();
        assert!(u.iter().all(|&x| (0.0..=0.5).contains(&x)));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (l, mut env) = setup();
        let (_, a) = evaluate(&l, &mut env, 9, 2).unwrap();
        let (_, b) = evaluate(&l, &mut env, 9, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.episodes.len(), 2);
        assert_ne!(a.episodes[0].seed, a.episodes[1].seed);
    }
}
