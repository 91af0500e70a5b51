//! Argument parsing, config resolution and error formatting.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "f3dgs",
    version,
    about = "Federated Gaussian splatting experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Flat TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corridor scene.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Frames per client chunk.
        #[arg(long)]
        chunk: Option<usize>,
    },
    /// Stitch, initialise and run federated training on a scene.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        /// Train one client on the union of all frames.
        #[arg(long)]
        centralized: bool,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        local_steps: Option<usize>,
    },
    /// Compare round schedules under a fixed step budget.
    AblateRounds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        /// Comma-separated `RxT` pairs, e.g. `1x2000,4x500`.
        #[arg(long)]
        schedules: Option<String>,
    },
    /// Render a saved model at selected frames.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Comma-separated frame indices; empty renders nothing.
        #[arg(long, default_value = "")]
        frames: String,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate { common, .. }
            | Command::Train { common, .. }
            | Command::AblateRounds { common, .. }
            | Command::Render { common, .. } => common,
        }
    }
}

/// Defaults, then `--config`, then `F3DGS_*`, then flags.
pub fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), std::env::vars())?;
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    Ok(cfg)
}

fn parse_indices(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().with_context(|| format!("bad frame index '{s}'")))
        .collect()
}

/// Fills the missing half of a schedule from the budget.
fn apply_schedule(cfg: &mut ExperimentConfig, rounds: Option<usize>, steps: Option<usize>) {
    match (rounds, steps) {
        (Some(r), Some(t)) => {
            cfg.rounds = r;
            cfg.local_steps = t;
        }
        (Some(r), None) => {
            cfg.rounds = r;
            if r > 0 && cfg.budget.is_multiple_of(r) {
                cfg.local_steps = cfg.budget / r;
            }
        }
        (None, Some(t)) => {
            cfg.local_steps = t;
            if t > 0 && cfg.budget.is_multiple_of(t) {
                cfg.rounds = cfg.budget / t;
            }
        }
        (None, None) => {}
    }
}

fn execute(cmd: Command, mut cfg: ExperimentConfig) -> Result<()> {
    match cmd {
        Command::Generate { chunk, .. } => {
            if let Some(c) = chunk {
                cfg.chunk = c;
            }
            let dir = commands::generate(&cfg)?;
            println!("scene written to {}", dir.display());
        }
        Command::Train {
            scene,
            centralized,
            rounds,
            local_steps,
            ..
        } => {
            cfg.centralized |= centralized;
            apply_schedule(&mut cfg, rounds, local_steps);
            let res = commands::train(&cfg, &scene)?;
            if let Some(last) = res.outcome.history.last() {
                println!(
                    "round {}: local {:.3} dB, global {:.3} dB ({})",
                    last.round,
                    last.local_mean.psnr,
                    last.global.psnr,
                    res.dir.display()
                );
            }
        }
        Command::AblateRounds {
            scene, schedules, ..
        } => {
            if let Some(s) = schedules {
                cfg.schedules = s;
            }
            for r in commands::ablate_rounds(&cfg, &scene)? {
                println!(
                    "{}x{}: local {:.3} dB, global {:.3} dB",
                    r.rounds, r.local_steps, r.local.psnr, r.global.psnr
                );
            }
        }
        Command::Render {
            model,
            scene,
            frames,
            ..
        } => {
            let indices = parse_indices(&frames)?;
            for r in commands::render_model(&cfg, &model, &scene, &indices)? {
                println!("frame {}: psnr {:.6} ssim {:.6}", r.index, r.psnr, r.ssim);
            }
        }
    }
    Ok(())
}

/// Runs a parsed command inside a pool capped at `threads` workers.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(cli.command.common())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .context("building the worker pool")?;
    pool.install(|| execute(cli.command, cfg))
}

/// `error[kind]: message: cause: ...` on one line.
pub fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<f3dgs::Error>())
        .map(f3dgs::Error::kind)
        .or_else(|| {
            err.chain().find_map(|e| {
                if e.is::<ConfigError>() || e.is::<toml::de::Error>() {
                    Some("config")
                } else if e.is::<std::io::Error>() {
                    Some("io")
                } else {
                    None
                }
            })
        })
        .unwrap_or("usage");
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let msg = cause.to_string().replace('\n', " ");
        if parts.last().is_some_and(|prev| prev.contains(&msg)) {
            continue;
        }
        parts.push(msg);
    }
    format!("error[{kind}]: {}", parts.join(": "))
}
