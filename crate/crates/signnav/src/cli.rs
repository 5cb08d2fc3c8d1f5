//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use signnav_core::episode::SplitCounts;

use crate::commands::{self, emit, EvalArgs, RolloutArgs, Stage, TrainArgs};
use crate::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "signnav", version, about = "Sign-guided navigation: data generation, training and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Run seed; shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate procedural scenes and an index.
    GenScenes {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate train/val_seen/val_unseen episodes over a scene directory.
    GenEpisodes {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        train: usize,
        #[arg(long, default_value_t = 0)]
        val_seen: usize,
        #[arg(long, default_value_t = 0)]
        val_unseen: usize,
    },
    /// Train the policy by teacher forcing or DAgger fine-tuning.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// `tf` or `dagger`.
        #[arg(long, default_value = "tf")]
        stage: String,
        /// Checkpoint to start from (required for `dagger`).
        #[arg(long)]
        from: Option<PathBuf>,
        /// Epoch log; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a policy on a dataset split.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "val_seen")]
        split: String,
        /// `oracle`, `rule`, `stop` or `start:<checkpoint>`.
        #[arg(long)]
        policy: String,
        /// Directory for report.txt and report.json.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for per-episode SVG trajectory overlays.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Roll a policy out in one scene and dump the trace.
    Rollout {
        /// Scene file.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        goal: String,
        #[arg(long, default_value = "oracle")]
        policy: String,
        /// Directory for trace.jsonl and frames; without it the trace goes to stdout.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let text = match &c.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut overrides = Vec::with_capacity(c.set.len() + 1);
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(s) = c.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    RunConfig::load(text.as_deref(), &overrides)
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = run_config(&cli.common)?;
    let quiet = cli.common.quiet;
    match &cli.command {
        Command::GenScenes { count, out } => {
            let idx = commands::gen_scenes(&cfg, *count, out)?;
            if !quiet {
                eprintln!("wrote {} scenes to {}", idx.scenes.len(), out.display());
            }
        }
        Command::GenEpisodes {
            scenes,
            out,
            train,
            val_seen,
            val_unseen,
        } => {
            let counts = SplitCounts {
                train: *train,
                val_seen: *val_seen,
                val_unseen: *val_unseen,
            };
            let n = commands::gen_episodes(&cfg, scenes, out, &counts)?;
            if !quiet {
                eprintln!("wrote {n} episodes to {}", out.display());
            }
        }
        Command::Train {
            dataset,
            out,
            stage,
            from,
            log,
        } => {
            let stage = Stage::parse(stage).ok_or_else(|| Error::Usage(format!("unknown stage {stage:?} (tf, dagger)")))?;
            let args = TrainArgs {
                dataset,
                out,
                stage,
                from: from.as_deref(),
                log: log.as_deref(),
            };
            commands::train(&cfg, &args, &mut |r| {
                if !quiet {
                    eprintln!("{} epoch {:>3}  loss {:.4}  acc {:.4}  n {}", r.stage, r.epoch, r.loss, r.accuracy, r.dataset_size);
                }
            })?;
        }
        Command::Eval {
            dataset,
            split,
            policy,
            report,
            plots,
        } => {
            let args = EvalArgs {
                dataset,
                split,
                policy,
                report: report.as_deref(),
                plots: plots.as_deref(),
            };
            emit(&commands::eval(&cfg, &args)?);
        }
        Command::Rollout {
            scene,
            goal,
            policy,
            dump,
        } => {
            let args = RolloutArgs {
                scene,
                goal,
                policy,
                seed: cfg.seed(),
                dump: dump.as_deref(),
            };
            let r = commands::rollout(&cfg, &args)?;
            if dump.is_none() {
                emit(&r.trace);
            } else if !quiet {
                eprintln!("{}: {} steps, {} frame pairs", r.outcome.as_str(), r.episode.steps.len(), r.frames);
            }
        }
    }
    Ok(())
}

/// Parses `argv` and runs it; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
