//! Simulation, shielding and multi-agent training for highway on-ramp merging.

pub mod behavior;
pub mod commands;
pub mod config;
pub mod env;
pub mod error;
pub mod geometry;
pub mod intent;
pub mod mappo;
pub mod metrics;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod safety;
pub mod vehicle;

pub use config::RunConfig;
pub use env::{EnvConfig, MergingEnv, TrafficLevel, TrafficMode};
pub use error::{Error, Result};
pub use geometry::{build_layout, LaneKind, LaneRef, LayoutConfig, RoadLayout};
pub use mappo::{ActorCritic, Checkpoint, TrainConfig};
pub use metrics::{EpisodeRecord, EvaluationMetrics, MetricsSummary};
pub use vehicle::{DrivingStyle, HighLevelAction, VehicleId, VehicleKind, VehicleState};
