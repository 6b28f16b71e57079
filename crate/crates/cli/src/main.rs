use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mergesim::commands::{self, OUTPUT_ENV};
use mergesim::{RunConfig, TrafficLevel};

#[derive(Parser)]
#[command(
    name = "mergesim",
    version,
    about = "Shielded multi-agent RL for on-ramp merging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy per seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// Total environment steps per seed.
        #[arg(long)]
        steps: Option<usize>,
        /// Initialize from an Easy-mode checkpoint.
        #[arg(long)]
        curriculum_from: Option<PathBuf>,
        /// Learn from shield-corrected actions instead of proposals.
        #[arg(long)]
        store_corrected: bool,
    },
    /// Evaluate a checkpoint with the greedy policy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Recompute metrics from a replay log.
    Replay {
        log: PathBuf,
        /// Config file; defaults to the config echoed next to the log.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the recomputed metrics.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the fully resolved configuration.
    ShowConfig {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config file; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_level)]
    mode: Option<TrafficLevel>,
    /// Heterogeneous HV driving styles.
    #[arg(long)]
    hetero: bool,
    /// Seeds to run; repeatable. Defaults to the config seeds.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    no_sem: bool,
    #[arg(long)]
    no_igm: bool,
    /// Output root.
    #[arg(long, env = OUTPUT_ENV)]
    out: Option<PathBuf>,
    /// Run directory name under the output root.
    #[arg(long)]
    run_id: Option<String>,
}

fn parse_level(s: &str) -> std::result::Result<TrafficLevel, String> {
    s.parse::<TrafficLevel>().map_err(|e| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

impl Common {
    /// File values overridden by flags, then validated.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(level) = self.mode {
            cfg.mode.level = level;
        }
        if self.hetero {
            cfg.mode.heterogeneous = true;
        }
        if self.no_sem {
            cfg.env.sem_enabled = false;
        }
        if self.no_igm {
            cfg.env.igm_enabled = false;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if !self.seeds.is_empty() {
            cfg.train.seeds = self.seeds.clone();
        }
        Ok(cfg)
    }
}

fn print_summary(m: &mergesim::EvaluationMetrics) {
    let s = &m.summary;
    println!("episodes        {}", s.episodes);
    println!("eval reward     {:.4}", s.mean_reward);
    println!("collision rate  {:.4}", s.collision_rate);
    println!("average speed   {:.4}", s.average_speed);
    match s.mean_pet {
        Some(p) => println!("mean PET        {p:.4} s over {} pairs", s.pet_count),
        None => println!("mean PET        n/a"),
    }
    println!("TMS breakdowns  {}", s.breakdowns);
    println!("corrections     {}", s.corrections);
    println!("seed                  reward  corrections  collision");
    for (seed, reward, corrections, collided) in &m.episodes {
        println!("{seed:<20} {reward:>8.3} {corrections:>12} {collided:>10}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            steps,
            curriculum_from,
            store_corrected,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            if curriculum_from.is_some() {
                cfg.curriculum_from = curriculum_from;
            }
            if store_corrected {
                cfg.train.store_corrected_action = true;
            }
            cfg.validate()?;
            let seeds = cfg.train.seeds.clone();
            let runs =
                commands::cmd_train(&cfg, &seeds, &cfg.output_dir, common.run_id.as_deref())?;
            for r in runs {
                let last = r.curve.last();
                println!(
                    "seed {}: {} steps, {} episodes, final eval reward {:.3}, checkpoint {}",
                    r.seed,
                    r.steps,
                    r.episodes,
                    last.map_or(f64::NAN, |p| p.mean_reward),
                    r.checkpoint.display()
                );
            }
        }
        Command::Eval {
            common,
            checkpoint,
            episodes,
        } => {
            let cfg = common.resolve()?;
            cfg.validate()?;
            let seed = cfg.train.seeds[0];
            let n = episodes.unwrap_or(cfg.eval_episodes);
            let out = commands::cmd_eval(
                &cfg,
                &checkpoint,
                seed,
                n,
                &cfg.output_dir,
                common.run_id.as_deref(),
            )?;
            print_summary(&out.metrics);
            println!("replay log      {}", out.replay.display());
        }
        Command::Replay { log, config, out } => {
            let config_path = config.or_else(|| commands::echoed_config_for(&log));
            let cfg = load_config(config_path.as_deref())?;
            let dir = match out {
                Some(d) => d,
                None => log
                    .parent()
                    .and_then(Path::parent)
                    .unwrap_or(Path::new("."))
                    .join("metrics-replay"),
            };
            let metrics = commands::cmd_replay(&cfg, &log, &dir)?;
            print_summary(&metrics);
            println!("metrics         {}", dir.display());
        }
        Command::ShowConfig { common } => {
            let cfg = common.resolve()?;
            cfg.validate()?;
            println!("{}", cfg.to_json()?);
            eprintln!("hash {}", cfg.hash());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
