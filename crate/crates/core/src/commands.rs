//! Train, evaluate and replay commands with their on-disk layout:
//! `<root>/<run-id>/{config.json, checkpoints/, curves.csv, replays/, metrics/}`.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::env::{TrafficLevel, TrafficMode};
use crate::error::{Error, Result};
use crate::geometry::build_layout;
use crate::mappo::{self, Architecture, Checkpoint, CurvePoint, TrainOutcome};
use crate::metrics::{
    evaluate_records, write_metrics_csv, EpisodeRecord, EvaluationMetrics, MetricsConfig,
};
use crate::replay;
use crate::rng::{derive_seed, tags};

/// Environment variable overriding the output root configured in the file.
pub const OUTPUT_ENV: &str = "MERGESIM_OUT";

fn variant(config: &RunConfig) -> &'static str {
    match (config.env.sem_enabled, config.env.igm_enabled) {
        (true, true) => "pis",
        (true, false) => "sem-noigm",
        (false, _) => "mappo",
    }
}

fn mode_label(mode: TrafficMode) -> String {
    let level = match mode.level {
        TrafficLevel::Easy => "easy",
        TrafficLevel::Hard => "hard",
    };
    if mode.heterogeneous {
        format!("{level}-hetero")
    } else {
        level.to_string()
    }
}

pub fn default_run_id(command: &str, config: &RunConfig, seed: u64) -> String {
    format!(
        "{command}-{}-{}-s{seed}",
        mode_label(config.mode),
        variant(config)
    )
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn echo_config(config: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_json()?).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub seed: u64,
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub curve: Vec<CurvePoint>,
    pub steps: usize,
    pub episodes: usize,
}

/// Loads the curriculum checkpoint, if any, for `config`.
pub fn curriculum_init(config: &RunConfig) -> Result<Option<mappo::ActorCritic>> {
    let Some(path) = &config.curriculum_from else {
        return Ok(None);
    };
    let ck = Checkpoint::load(path)?;
    if ck.mode.level != TrafficLevel::Easy {
        log::warn!(
            "curriculum checkpoint {} was trained in {:?} mode",
            path.display(),
            ck.mode.level
        );
    }
    let arch = Architecture::for_env(&config.env, &config.train.hidden);
    Ok(Some(ck.into_model(&arch)?))
}

/// Trains one policy per seed, each in its own run directory under `root`.
pub fn cmd_train(
    config: &RunConfig,
    seeds: &[u64],
    root: &Path,
    run_id: Option<&str>,
) -> Result<Vec<TrainArtifacts>> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds to train".into()));
    }
    let init = curriculum_init(config)?;
    let hash = config.hash();
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let id = match run_id {
            Some(id) if seeds.len() == 1 => id.to_string(),
            Some(id) => format!("{id}-s{seed}"),
            None => default_run_id("train", config, seed),
        };
        let dir = root.join(id);
        create_dir(&dir.join("checkpoints"))?;
        echo_config(config, &dir)?;
        log::info!("training seed {seed} into {}", dir.display());
        let TrainOutcome {
            model,
            curve,
            steps,
            episodes,
            ..
        } = mappo::train(
            &config.train,
            &config.env,
            config.mode,
            seed,
            init.clone(),
            |p| {
                log::info!(
                    "seed {seed} step {} episodes {}: reward {:.3} speed {:.2} collisions {:.3}",
                    p.step,
                    p.episodes,
                    p.mean_reward,
                    p.avg_speed,
                    p.collision_rate
                );
            },
        )?;
        mappo::write_curve_csv(&curve, &dir.join("curves.csv"))?;
        let checkpoint = dir.join("checkpoints").join("final.json");
        Checkpoint::new(&model, config.mode, seed, steps, hash.clone()).save(&checkpoint)?;
        out.push(TrainArtifacts {
            seed,
            dir,
            checkpoint,
            curve,
            steps,
            episodes,
        });
    }
    Ok(out)
}

/// Scenario seeds of an evaluation run.
pub fn test_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    (0..episodes as u64)
        .map(|i| derive_seed(seed, &[tags::TEST, i]))
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalArtifacts {
    pub dir: PathBuf,
    pub replay: PathBuf,
    pub metrics: EvaluationMetrics,
    pub records: Vec<EpisodeRecord>,
}

/// Greedy evaluation of a checkpoint over `episodes` scenarios.
pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: &Path,
    seed: u64,
    episodes: usize,
    root: &Path,
    run_id: Option<&str>,
) -> Result<EvalArtifacts> {
    config.validate()?;
    if episodes == 0 {
        return Err(Error::InvalidArgument(
            "evaluation needs at least one episode".into(),
        ));
    }
    let ck = Checkpoint::load(checkpoint)?;
    if ck.config_hash != config.hash() {
        log::info!(
            "checkpoint was trained under a different config hash ({})",
            ck.config_hash
        );
    }
    let model = ck.into_model(&Architecture::for_env(&config.env, &config.train.hidden))?;
    let records = mappo::run_episodes(
        &model,
        &config.env,
        config.mode,
        &test_seeds(seed, episodes),
    )?;
    let layout = build_layout(&config.env.layout)?;
    let metrics = evaluate_records(&records, &layout, &MetricsConfig::default())?;

    let id = run_id.map_or_else(|| default_run_id("eval", config, seed), String::from);
    let dir = root.join(id);
    create_dir(&dir.join("replays"))?;
    echo_config(config, &dir)?;
    let replay = dir.join("replays").join("episodes.jsonl");
    replay::write_log(&replay, &records)?;
    write_metrics_csv(&metrics, &dir.join("metrics"))?;
    Ok(EvalArtifacts {
        dir,
        replay,
        metrics,
        records,
    })
}

/// Recomputes metrics from a replay log and writes them to `out_dir`.
pub fn cmd_replay(config: &RunConfig, log: &Path, out_dir: &Path) -> Result<EvaluationMetrics> {
    let records = replay::read_log(log)?;
    if records.is_empty() {
        return Err(Error::Replay {
            path: log.to_path_buf(),
            line: 1,
            reason: "log contains no episodes".into(),
        });
    }
    let layout = build_layout(&config.env.layout)?;
    let metrics = evaluate_records(&records, &layout, &MetricsConfig::default())?;
    write_metrics_csv(&metrics, out_dir)?;
    Ok(metrics)
}

/// Config echoed next to a replay log written by [`cmd_eval`], if present.
pub fn echoed_config_for(log: &Path) -> Option<PathBuf> {
    let candidate = log.parent()?.parent()?.join("config.json");
    candidate.is_file().then_some(candidate)
}
