//! Command implementations behind the `natwalk` binary.
//!
//! Every emitted CSV starts with `# config_hash=...` and `# seed=...` lines
//! and every JSON document carries the same two fields.
//!
//! Training output layout (`<out>/`):
//!
//! - `config.toml`: the resolved run configuration
//! - `metrics.csv`: one row per episode
//! - `rewards.csv`: per-step reward breakdown (when `step_log` is set)
//! - `checkpoints/ep_<n>.bin`: policy checkpoints every `checkpoint_every` episodes
//! - `checkpoints/final.bin`: last checkpoint, with the replay buffer when
//!   `save_replay` is set

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gaitlab::{self, MatchReport, ReferenceBand};
use crate::rollout::{self, EvalSummary, RolloutTable};
use crate::terrain::{Terrain, TileParams};
use crate::train::{Ablation, Checkpoint, EpisodeMetrics, StepRecord, TrainSetup, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerrainChoice {
    Flat,
    Rough,
}

impl TerrainChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Self::Flat),
            "rough" => Ok(Self::Rough),
            other => Err(Error::InvalidArgument(format!("unknown terrain `{other}`"))),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// CSV writer with the provenance header already written. With `append`
/// an existing file is continued instead.
fn csv_out(path: &Path, hash: &str, seed: u64, header: &[&str], append: bool) -> Result<csv::Writer<BufWriter<File>>> {
    if append && path.exists() {
        let f = fs::OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        return Ok(csv::Writer::from_writer(BufWriter::new(f)));
    }
    let mut f = create(path)?;
    writeln!(f, "# config_hash={hash}\n# seed={seed}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(w)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(f).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub config_hash: String,
    pub seed: u64,
    pub out: PathBuf,
    pub episodes: u64,
    pub steps: u64,
    pub final_alpha: f64,
    pub final_checkpoint: PathBuf,
    pub unsupported_keys: Vec<String>,
}

/// Trains with `cfg`, optionally continuing from a resumable checkpoint.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>, progress: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    let out = cfg.out.clone();
    let ck_dir = out.join("checkpoints");
    create_dir(&ck_dir)?;
    fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(out.join("config.toml"), e))?;
    let unsupported = cfg.unsupported_keys();
    if progress && !unsupported.is_empty() {
        eprintln!("note: ignoring unsupported keys {}", unsupported.join(", "));
    }
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.fingerprint != hash {
                return Err(Error::CheckpointMismatch(format!(
                    "checkpoint was written by config {}, current config is {hash}",
                    ck.fingerprint
                )));
            }
            Trainer::restore(ck)?
        }
        None => Trainer::new(TrainSetup {
            model: cfg.model_spec()?,
            weights: cfg.reward,
            env: crate::env::EnvConfig { mode: cfg.mode, ..cfg.env },
            learner: cfg.learner.clone(),
            adapt: cfg.adapt,
            ablation: cfg.ablation,
            seed: cfg.seed,
            fingerprint: hash.clone(),
        })?,
    };
    if let Some(p) = &cfg.reference {
        let f = File::open(p).map_err(|e| Error::io(p, e))?;
        trainer.set_reference(Some(ReferenceBand::from_csv(BufReader::new(f))?));
    }
    let mut metrics = csv_out(&out.join("metrics.csv"), &hash, cfg.seed, &EpisodeMetrics::HEADER, resume.is_some())?;
    let mut rewards = if cfg.step_log {
        Some(csv_out(&out.join("rewards.csv"), &hash, cfg.seed, &StepRecord::HEADER, resume.is_some())?)
    } else {
        None
    };
    let mut step_err: Option<Error> = None;
    let mut on_step = |s: &StepRecord| {
        if let Some(w) = rewards.as_mut() {
            if let Err(e) = w.write_record(s.record()) {
                step_err.get_or_insert(Error::Parse(e.to_string()));
            }
        }
    };
    let every = cfg.checkpoint_every;
    let mut on_episode = |m: &EpisodeMetrics, t: &Trainer| -> Result<()> {
        metrics.write_record(m.record()).map_err(|e| Error::Parse(e.to_string()))?;
        if every > 0 && (m.episode + 1).is_multiple_of(every) {
            metrics.flush().map_err(|e| Error::io("metrics.csv", e))?;
            t.checkpoint(false).save(&ck_dir.join(format!("ep_{:06}.bin", m.episode + 1)))?;
        }
        if progress && m.episode.is_multiple_of(20) {
            eprintln!(
                "episode {:>6} steps {:>9} task {:>8.2} effort {:.4} alpha {:.5} r_mean {:.1}",
                m.episode, m.steps, m.task_return, m.mean_effort, m.alpha, m.r_mean
            );
        }
        Ok(())
    };
    trainer.run(cfg.total_steps, &mut on_step, &mut on_episode)?;
    if let Some(e) = step_err {
        return Err(e);
    }
    metrics.flush().map_err(|e| Error::io("metrics.csv", e))?;
    if let Some(w) = rewards.as_mut() {
        w.flush().map_err(|e| Error::io("rewards.csv", e))?;
    }
    let final_ck = ck_dir.join("final.bin");
    trainer.checkpoint(cfg.save_replay).save(&final_ck)?;
    Ok(TrainOutcome {
        config_hash: hash,
        seed: cfg.seed,
        out,
        episodes: trainer.episode(),
        steps: trainer.global_step(),
        final_alpha: trainer.adapt_state().alpha,
        final_checkpoint: final_ck,
        unsupported_keys: unsupported,
    })
}

pub fn make_terrain(choice: TerrainChoice, terrain_seed: u64, tiles: TileParams) -> Result<Terrain> {
    match choice {
        TerrainChoice::Flat => Ok(Terrain::flat()),
        TerrainChoice::Rough => Terrain::sloped_tiles(terrain_seed, tiles),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub terrain: String,
    pub terrain_seed: u64,
    #[serde(flatten)]
    pub summary: EvalSummary,
}

/// Evaluates a checkpoint: one rollout CSV per episode plus `summary.json`.
pub fn cmd_eval(
    checkpoint: &Path,
    terrain: TerrainChoice,
    rollouts: usize,
    seed: u64,
    eval: &crate::config::EvalConfig,
    out: &Path,
) -> Result<EvalReport> {
    if rollouts == 0 {
        return Err(Error::InvalidArgument("need at least one rollout".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let ground = make_terrain(terrain, eval.terrain_seed, eval.tiles)?;
    let mut env = ck.make_env(ground.clone())?;
    let (tables, summary) = rollout::evaluate(&ck.learner, &mut env, seed, rollouts)?;
    create_dir(out)?;
    for (i, mut t) in tables.into_iter().enumerate() {
        t.meta.insert("config_hash".into(), ck.fingerprint.clone());
        t.meta.insert("seed".into(), summary.episodes[i].seed.to_string());
        let path = out.join(format!("rollout_{i:03}.csv"));
        t.write_csv(create(&path)?)?;
    }
    let name = match terrain {
        TerrainChoice::Flat => "flat",
        TerrainChoice::Rough => "rough",
    };
    if terrain == TerrainChoice::Rough {
        let path = out.join("terrain.csv");
        let mut f = create(&path)?;
        write!(f, "# config_hash={}\n# seed={}\n{}", ck.fingerprint, eval.terrain_seed, ground.to_csv())
            .map_err(|e| Error::io(&path, e))?;
    }
    let report = EvalReport {
        config_hash: ck.fingerprint.clone(),
        seed,
        terrain: name.into(),
        terrain_seed: eval.terrain_seed,
        summary,
    };
    write_json(&out.join("summary.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub config_hash: String,
    pub seed: u64,
    pub pooled: MatchReport,
    pub per_rollout: Vec<(String, MatchReport)>,
}

/// Rollout CSVs in `dir`, sorted by name.
pub fn rollout_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("rollout"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Gait analysis of every rollout in `dir`. Writes `match_report.json`,
/// `match_report.csv` and, when cycles exist, `mean_trace.csv` to `out`.
pub fn cmd_analyze(dir: &Path, reference: Option<&Path>, out: &Path) -> Result<AnalyzeReport> {
    let band = match reference {
        Some(p) => Some(ReferenceBand::from_csv(BufReader::new(File::open(p).map_err(|e| Error::io(p, e))?))?),
        None => None,
    };
    let files = rollout_files(dir)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no rollout CSVs in {}", dir.display())));
    }
    let points = band.as_ref().and_then(|b| b.points()).unwrap_or(gaitlab::DEFAULT_POINTS);
    let mut rollouts = Vec::new();
    let mut per_rollout = Vec::new();
    let mut hash = String::new();
    let mut seed = 0;
    for f in &files {
        let table = RolloutTable::read_csv(BufReader::new(File::open(f).map_err(|e| Error::io(f, e))?))?;
        if hash.is_empty() {
            hash = table.meta.get("config_hash").cloned().unwrap_or_default();
            seed = table.meta.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
        }
        let r = table.to_gait()?;
        let (rep, _) = gaitlab::analyze(std::slice::from_ref(&r), band.as_ref(), points)?;
        per_rollout.push((f.file_name().unwrap().to_string_lossy().into_owned(), rep));
        rollouts.push(r);
    }
    let (pooled, mean) = gaitlab::analyze(&rollouts, band.as_ref(), points)?;
    create_dir(out)?;
    let report = AnalyzeReport { config_hash: hash.clone(), seed, pooled, per_rollout };
    write_json(&out.join("match_report.json"), &report)?;
    let path = out.join("match_report.csv");
    let mut f = create(&path)?;
    writeln!(f, "# config_hash={hash}\n# seed={seed}").map_err(|e| Error::io(&path, e))?;
    report.pooled.to_csv(f)?;
    if let Some(mean) = mean {
        let path = out.join("mean_trace.csv");
        let mut f = create(&path)?;
        writeln!(f, "# config_hash={hash}\n# seed={seed}").map_err(|e| Error::io(&path, e))?;
        gaitlab::mean_trace_csv(&mean, f)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub episodes: u64,
    pub steps: u64,
    pub mean_task_return: f64,
    pub mean_effort: f64,
    pub final_alpha: f64,
    pub max_alpha: f64,
    pub clip: f64,
    pub exp_match: Option<f64>,
}

/// Trains the four reward variants with shared seeds into `<out>/<variant>/`
/// and writes `<out>/ablation.csv`.
pub fn cmd_ablate(base: &RunConfig, progress: bool) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for ab in Ablation::ALL {
        let cfg = RunConfig {
            ablation: ab,
            step_log: true,
            out: base.out.join(ab.name()),
            ..base.clone()
        };
        if progress {
            eprintln!("variant {}", ab.name());
        }
        let outcome = cmd_train(&cfg, None, progress)?;
        let metrics = read_metrics(&cfg.out.join("metrics.csv"))?;
        let n = metrics.len().max(1) as f64;
        let col = |name: &str| -> Vec<f64> {
            let i = EpisodeMetrics::HEADER.iter().position(|h| *h == name).unwrap();
            metrics.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect()
        };
        let matches: Vec<f64> = col("exp_match").into_iter().filter(|v| v.is_finite()).collect();
        rows.push(AblationRow {
            variant: ab.name().into(),
            episodes: outcome.episodes,
            steps: outcome.steps,
            mean_task_return: col("task_return").iter().sum::<f64>() / n,
            mean_effort: col("mean_effort").iter().sum::<f64>() / n,
            final_alpha: outcome.final_alpha,
            max_alpha: col("alpha").into_iter().fold(0.0, f64::max),
            clip: col("clip").first().copied().unwrap_or(f64::NAN),
            exp_match: (!matches.is_empty()).then(|| matches.iter().sum::<f64>() / matches.len() as f64),
        });
    }
    let mut w = csv_out(
        &base.out.join("ablation.csv"),
        &base.hash(),
        base.seed,
        &["variant", "episodes", "steps", "mean_task_return", "mean_effort", "final_alpha", "max_alpha", "clip", "exp_match"],
        false,
    )?;
    for r in &rows {
        w.write_record([
            r.variant.clone(),
            r.episodes.to_string(),
            r.steps.to_string(),
            r.mean_task_return.to_string(),
            r.mean_effort.to_string(),
            r.final_alpha.to_string(),
            r.max_alpha.to_string(),
            r.clip.to_string(),
            r.exp_match.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("ablation.csv", e))?;
    Ok(rows)
}

/// Data rows of a provenance-headed CSV as strings.
pub fn read_metrics(path: &Path) -> Result<Vec<Vec<String>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(BufReader::new(f));
    rdr.records()
        .map(|r| {
            r.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Writes to stdout; a reader that went away early is not an error.
pub fn write_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("stdout", e)),
        _ => Ok(()),
    }
}

/// Writes the knots of a sloped-tile course as CSV.
pub fn cmd_terrain_gen(seed: u64, tiles: TileParams, out: Option<&Path>) -> Result<Terrain> {
    let t = Terrain::sloped_tiles(seed, tiles)?;
    let text = format!("# seed={seed}\n{}", t.to_csv());
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e))?,
        None => write_stdout(&text)?,
    }
    Ok(t)
}
