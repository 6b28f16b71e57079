//! Run configuration: one JSON document covering the scenario, the shield,
//! the reward and the trainer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{EnvConfig, TrafficLevel, TrafficMode};
use crate::error::{Error, Result};
use crate::geometry::build_layout;
use crate::mappo::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub mode: TrafficMode,
    /// Output root; not part of the config hash.
    pub output_dir: PathBuf,
    /// Easy-mode checkpoint to initialize training from.
    pub curriculum_from: Option<PathBuf>,
    /// Episodes per evaluation command.
    pub eval_episodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            mode: TrafficMode::default(),
            output_dir: PathBuf::from("out"),
            curriculum_from: None,
            eval_episodes: 30,
        }
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(
            path,
            format!("must be a positive number, got {v}"),
        ))
    }
}

fn non_negative(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(
            path,
            format!("must be non-negative, got {v}"),
        ))
    }
}

fn at_least(path: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::config(
            path,
            format!("must be at least {min}, got {v}"),
        ))
    }
}

fn unit_interval(path: &str, v: f64, include_one: bool) -> Result<()> {
    let ok = v > 0.0 && (v < 1.0 || (include_one && v == 1.0));
    if ok {
        Ok(())
    } else {
        let upper = if include_one { "1]" } else { "1)" };
        Err(Error::config(
            path,
            format!("must lie in (0, {upper}, got {v}"),
        ))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::config(path.display().to_string(), j.to_string()),
            other => other,
        })?;
        Ok(cfg)
    }

    /// Parses and validates; blank text gives the defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = if text.trim().is_empty() {
            RunConfig::default()
        } else {
            serde_json::from_str(text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.env;
        build_layout(&e.layout).map_err(|err| Error::config("env.layout", err.to_string()))?;
        positive("env.dynamics.dt", e.dynamics.dt)?;
        at_least(
            "env.dynamics.substeps_per_decision",
            e.dynamics.substeps_per_decision,
            1,
        )?;
        positive("env.dynamics.speed_step", e.dynamics.speed_step)?;
        non_negative("env.dynamics.min_target_speed", e.dynamics.min_target_speed)?;
        if e.dynamics.max_target_speed < e.dynamics.min_target_speed {
            return Err(Error::config(
                "env.dynamics.max_target_speed",
                "must not be below min_target_speed",
            ));
        }
        positive("env.dynamics.gains.speed", e.dynamics.gains.speed)?;
        positive("env.dynamics.gains.lateral", e.dynamics.gains.lateral)?;
        positive("env.dynamics.gains.heading", e.dynamics.gains.heading)?;
        for (name, style) in [
            ("aggressive", &e.styles.aggressive),
            ("normal", &e.styles.normal),
            ("timid", &e.styles.timid),
        ] {
            let p = |f: &str| format!("env.styles.{name}.idm.{f}");
            positive(&p("desired_speed"), style.idm.desired_speed)?;
            positive(&p("time_gap"), style.idm.time_gap)?;
            non_negative(&p("jam_distance"), style.idm.jam_distance)?;
            positive(&p("max_accel"), style.idm.max_accel)?;
            positive(&p("comfortable_decel"), style.idm.comfortable_decel)?;
            positive(&p("exponent"), style.idm.exponent)?;
            non_negative(
                &format!("env.styles.{name}.mobil.politeness"),
                style.mobil.politeness,
            )?;
            positive(
                &format!("env.styles.{name}.mobil.safe_decel"),
                style.mobil.safe_decel,
            )?;
        }
        for (i, a) in e.sem.alpha.iter().enumerate() {
            positive(&format!("env.sem.alpha[{i}]"), *a)?;
        }
        non_negative("env.sem.noise_variance", e.sem.noise_variance)?;
        positive("env.sem.headway_clamp", e.sem.headway_clamp)?;
        positive("env.sem.min_speed", e.sem.min_speed)?;
        positive("env.sem.perception_range", e.sem.perception_range)?;
        non_negative("env.sem.conflict_margin", e.sem.conflict_margin)?;
        for (i, w) in e.reward.weights.iter().enumerate() {
            positive(&format!("env.reward.weights[{i}]"), *w)?;
        }
        positive("env.reward.headway_threshold", e.reward.headway_threshold)?;
        if e.reward.speed_high <= e.reward.speed_low {
            return Err(Error::config(
                "env.reward.speed_high",
                "must exceed speed_low",
            ));
        }
        positive("env.reward.headway_clamp", e.reward.headway_clamp)?;
        positive("env.reward.min_speed", e.reward.min_speed)?;
        at_least("env.observation.rows", e.observation.rows, 1)?;
        positive(
            "env.observation.perception_range",
            e.observation.perception_range,
        )?;
        positive(
            "env.observation.position_scale",
            e.observation.position_scale,
        )?;
        positive("env.observation.speed_scale", e.observation.speed_scale)?;
        positive("env.spawn.base_speed", e.spawn.base_speed)?;
        non_negative("env.spawn.speed_noise", e.spawn.speed_noise)?;
        non_negative("env.spawn.min_spacing", e.spawn.min_spacing)?;
        at_least("env.spawn.max_attempts", e.spawn.max_attempts, 1)?;
        for (name, r) in [
            ("through_range", e.spawn.through_range),
            ("ramp_range", e.spawn.ramp_range),
        ] {
            if r[0].is_nan() || r[1].is_nan() || r[0] > r[1] {
                return Err(Error::config(
                    format!("env.spawn.{name}"),
                    "lower bound exceeds upper bound",
                ));
            }
        }
        at_least("env.horizon", e.horizon, 1)?;
        at_least("env.intent_horizon", e.intent_horizon, 1)?;
        let most_cavs = TrafficLevel::Hard
            .count_range()
            .1
            .max(TrafficLevel::Easy.count_range().1);
        at_least("env.max_agents", e.max_agents, most_cavs)?;

        let t = &self.train;
        at_least("train.total_steps", t.total_steps, 1)?;
        if t.seeds.is_empty() {
            return Err(Error::config(
                "train.seeds",
                "at least one seed is required",
            ));
        }
        unit_interval("train.gamma", t.gamma, true)?;
        unit_interval("train.lambda", t.lambda, true)?;
        unit_interval("train.clip_eps", t.clip_eps, false)?;
        positive("train.optimizer.lr", t.optimizer.lr)?;
        unit_interval("train.optimizer.beta1", t.optimizer.beta1, false)?;
        unit_interval("train.optimizer.beta2", t.optimizer.beta2, false)?;
        positive("train.optimizer.eps", t.optimizer.eps)?;
        at_least("train.epochs", t.epochs, 1)?;
        at_least("train.minibatch", t.minibatch, 1)?;
        non_negative("train.value_coef", t.value_coef)?;
        non_negative("train.entropy_coef", t.entropy_coef)?;
        positive("train.max_grad_norm", t.max_grad_norm)?;
        at_least("train.rollout_steps", t.rollout_steps, 1)?;
        if t.hidden.is_empty() || t.hidden.contains(&0) {
            return Err(Error::config(
                "train.hidden",
                "needs at least one non-empty hidden layer",
            ));
        }
        at_least("train.eval_interval_episodes", t.eval_interval_episodes, 1)?;
        at_least("eval_episodes", self.eval_episodes, 1)?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON of every field except the output
    /// directory.
    pub fn hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&semantic).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
