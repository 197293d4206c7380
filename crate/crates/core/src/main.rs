use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use natwalk::cli::{self, TerrainChoice};
use natwalk::config::RunConfig;
use natwalk::env::Mode;
use natwalk::train::Ablation;
use natwalk::{Error, Result};

#[derive(Parser)]
#[command(name = "natwalk", version, about = "Train and analyze a planar muscle-driven walker")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum TerrainArg {
    Flat,
    Rough,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Walk,
    Run,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblateArg {
    None,
    NoAdapt,
    NoEffort,
    OnlyVel,
}

/// Options shared by `train` and `ablate`.
#[derive(clap::Args)]
struct RunOpts {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of environment steps.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy.
    Train {
        #[command(flatten)]
        run: RunOpts,
        #[arg(long, value_enum)]
        ablate: Option<AblateArg>,
        /// Resume from a checkpoint that holds the replay buffer.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Roll out a trained policy without exploration noise.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "flat")]
        terrain: TerrainArg,
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Supplies the `[eval]` section (terrain seed and tile sizes).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Gait cycle analysis of a directory of rollout CSVs.
    Analyze {
        dir: PathBuf,
        /// Reference band CSV (signal, percent, mean, std).
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print or write a sloped-tile course.
    TerrainGen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train all four reward variants with the same seed.
    Ablate {
        #[command(flatten)]
        run: RunOpts,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply(opts: &RunOpts) -> Result<RunConfig> {
    let mut cfg = load_config(opts.config.as_deref())?;
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(m) = opts.mode {
        cfg.mode = match m {
            ModeArg::Walk => Mode::Walk,
            ModeArg::Run => Mode::Run,
        };
    }
    if let Some(o) = &opts.out {
        cfg.out = o.clone();
    }
    if let Some(n) = opts.steps {
        cfg.total_steps = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    cli::write_stdout(&format!("{s}\n"))
}

fn run(args: Args) -> Result<()> {
    match args.cmd {
        Cmd::Train { run, ablate, checkpoint } => {
            let mut cfg = apply(&run)?;
            if let Some(a) = ablate {
                cfg.ablation = match a {
                    AblateArg::None => Ablation::None,
                    AblateArg::NoAdapt => Ablation::NoAdapt,
                    AblateArg::NoEffort => Ablation::NoEffort,
                    AblateArg::OnlyVel => Ablation::OnlyVel,
                };
            }
            print_json(&cli::cmd_train(&cfg, checkpoint.as_deref(), !run.quiet)?)
        }
        Cmd::Eval { checkpoint, terrain, rollouts, seed, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let choice = match terrain {
                TerrainArg::Flat => TerrainChoice::Flat,
                TerrainArg::Rough => TerrainChoice::Rough,
            };
            let n = rollouts.unwrap_or(cfg.eval.rollouts);
            let seed = seed.unwrap_or(cfg.eval.seed);
            let rep = cli::cmd_eval(&checkpoint, choice, n, seed, &cfg.eval, &out)?;
            print_json(&serde_json::json!({
                "config_hash": rep.config_hash,
                "seed": rep.seed,
                "terrain": rep.terrain,
                "rollouts": rep.summary.rollouts,
                "falls": rep.summary.falls,
                "distance": rep.summary.distance,
                "effort": rep.summary.effort,
                "velocity": rep.summary.velocity,
                "out": out,
            }))
        }
        Cmd::Analyze { dir, reference, out } => {
            let out = out.unwrap_or_else(|| dir.clone());
            let rep = cli::cmd_analyze(&dir, reference.as_deref(), &out)?;
            print_json(&serde_json::json!({
                "config_hash": rep.config_hash,
                "seed": rep.seed,
                "report": rep.pooled,
            }))
        }
        Cmd::TerrainGen { seed, config, out } => {
            let cfg = load_config(config.as_deref())?;
            cli::cmd_terrain_gen(seed, cfg.eval.tiles, out.as_deref()).map(|_| ())
        }
        Cmd::Ablate { run } => {
            let cfg = apply(&run)?;
            print_json(&cli::cmd_ablate(&cfg, !run.quiet)?)
        }
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(match e {
                Error::Config(_) | Error::InvalidArgument(_) => 2,
                _ => 1,
            })
        }
    }
}
