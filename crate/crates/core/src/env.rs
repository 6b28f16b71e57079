//! The multi-agent on-ramp merging environment: spawning, observations,
//! rewards and the shielded decision step.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{hv_accel, hv_lane_decision, lane_neighbors, StyleTable};
use crate::error::{Error, Result};
use crate::geometry::{build_layout, ramp_progress, LaneRef, LayoutConfig, RoadLayout};
use crate::intent::{RolloutContext, DEFAULT_HORIZON};
use crate::metrics::{
    CorrectionEntry, DecisionRecord, EpisodeRecord, Frame, TerminalCause, VehicleFrame, VehicleInfo,
};
use crate::rng;
use crate::safety::{log_headway_ratio, run_sem, NoiseKey, SemConfig, SemContext};
use crate::vehicle::{
    control_substep, execute_action, tracked_substep, ActionTarget, DrivingStyle, DynamicsConfig,
    HighLevelAction, VehicleId, VehicleKind, VehicleState,
};

/// Features per observation row.
pub const FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficLevel {
    Easy,
    Hard,
}

impl TrafficLevel {
    /// Inclusive range of spawned CAVs, and separately of HVs.
    pub fn count_range(self) -> (usize, usize) {
        match self {
            TrafficLevel::Easy => (1, 3),
            TrafficLevel::Hard => (3, 6),
        }
    }
}

impl std::str::FromStr for TrafficLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Self::Easy),
            "hard" => Ok(Self::Hard),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficMode {
    pub level: TrafficLevel,
    pub heterogeneous: bool,
}

impl Default for TrafficMode {
    fn default() -> Self {
        Self {
            level: TrafficLevel::Easy,
            heterogeneous: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Collision, speed, headway and merge weights.
    pub weights: [f64; 4],
    pub headway_threshold: f64,
    pub speed_low: f64,
    pub speed_high: f64,
    pub headway_clamp: f64,
    pub min_speed: f64,
    /// Apply the merge term as a penalty (negative) rather than a bonus.
    pub merge_penalty: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: [200.0, 1.0, 4.0, 4.0],
            headway_threshold: 1.2,
            speed_low: 10.0,
            speed_high: 30.0,
            headway_clamp: 5.0,
            min_speed: 0.1,
            merge_penalty: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub rows: usize,
    pub perception_range: f64,
    pub position_scale: f64,
    pub speed_scale: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            rows: 5,
            perception_range: 150.0,
            position_scale: 100.0,
            speed_scale: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpawnConfig {
    pub base_speed: f64,
    pub speed_noise: f64,
    pub min_spacing: f64,
    pub max_attempts: usize,
    pub through_range: [f64; 2],
    pub ramp_range: [f64; 2],
}

impl Default for SpawnConfig {
    fn default() -> Self {
        Self {
            base_speed: 25.0,
            speed_noise: 2.0,
            min_spacing: 15.0,
            max_attempts: 100,
            through_range: [0.0, 220.0],
            ramp_range: [100.0, 250.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub layout: LayoutConfig,
    pub dynamics: DynamicsConfig,
    pub styles: StyleTable,
    pub sem: SemConfig,
    pub reward: RewardConfig,
    pub observation: ObservationConfig,
    pub spawn: SpawnConfig,
    /// Decision steps per episode.
    pub horizon: usize,
    /// Intent horizon in decision steps.
    pub intent_horizon: usize,
    /// Agent slots in the centralized critic input.
    pub max_agents: usize,
    pub sem_enabled: bool,
    /// When false, the shield sees other CAVs through constant-velocity
    /// extrapolation instead of their shared intents.
    pub igm_enabled: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            layout: LayoutConfig::default(),
            dynamics: DynamicsConfig::default(),
            styles: StyleTable::default(),
            sem: SemConfig::default(),
            reward: RewardConfig::default(),
            observation: ObservationConfig::default(),
            spawn: SpawnConfig::default(),
            horizon: 100,
            intent_horizon: DEFAULT_HORIZON,
            max_agents: 6,
            sem_enabled: true,
            igm_enabled: true,
        }
    }
}

impl EnvConfig {
    pub fn observation_len(&self) -> usize {
        self.observation.rows * FEATURES
    }

    pub fn critic_input_len(&self) -> usize {
        self.max_agents * self.observation_len()
    }
}

/// Per-agent observation: `rows` x [`FEATURES`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    pub rows: usize,
    pub data: Vec<f64>,
}

impl ObservationMatrix {
    pub fn zeros(rows: usize) -> Self {
        Self {
            rows,
            data: vec![0.0; rows * FEATURES],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * FEATURES..(i + 1) * FEATURES]
    }
}

/// Unweighted reward terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub collision: f64,
    pub speed: f64,
    pub headway: f64,
    pub merge: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn weighted(&self, weights: &[f64; 4]) -> [f64; 4] {
        [
            weights[0] * self.collision,
            weights[1] * self.speed,
            weights[2] * self.headway,
            weights[3] * self.merge,
        ]
    }
}

pub fn speed_reward(v: f64, cfg: &RewardConfig) -> f64 {
    ((v - cfg.speed_low) / (cfg.speed_high - cfg.speed_low)).min(1.0)
}

/// Log time-headway ratio; zero without a leader.
pub fn headway_reward(distance: Option<f64>, v: f64, cfg: &RewardConfig) -> f64 {
    distance.map_or(0.0, |d| {
        log_headway_ratio(
            d,
            v,
            cfg.headway_threshold,
            cfg.min_speed,
            cfg.headway_clamp,
        )
    })
}

/// Gaussian bump in ramp progress centered on the ramp end, zero off the
/// ramp. Negative when used as a penalty.
pub fn merge_reward(agent: &VehicleState, layout: &RoadLayout, cfg: &RewardConfig) -> f64 {
    let Ok(x) = ramp_progress(layout, agent) else {
        return 0.0;
    };
    let l = layout.total_ramp_length();
    let bump = (-(x - l).powi(2) / (10.0 * l)).exp();
    if cfg.merge_penalty {
        -bump
    } else {
        bump
    }
}

pub fn reward(
    agent: &VehicleState,
    vehicles: &[VehicleState],
    collided: bool,
    layout: &RoadLayout,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let leader = lane_neighbors(agent, agent.lane, vehicles)
        .0
        .map(|l| l.x - agent.x);
    let mut b = RewardBreakdown {
        collision: if collided { -1.0 } else { 0.0 },
        speed: speed_reward(agent.speed, cfg),
        headway: headway_reward(leader, agent.speed, cfg),
        merge: merge_reward(agent, layout, cfg),
        total: 0.0,
    };
    b.total = b.weighted(&cfg.weights).iter().sum();
    b
}

/// Observation of `ego`: absolute ego row, then the nearest vehicles within
/// perception range by longitudinal distance, relative to the ego.
pub fn observe(
    ego: &VehicleState,
    vehicles: &[VehicleState],
    cfg: &ObservationConfig,
) -> ObservationMatrix {
    let mut m = ObservationMatrix::zeros(cfg.rows);
    if cfg.rows == 0 {
        return m;
    }
    let clip = |v: f64| v.clamp(-1.0, 1.0);
    let (vx, vy) = ego.velocity();
    let pos = cfg.position_scale;
    let spd = cfg.speed_scale;
    m.data[..FEATURES].copy_from_slice(&[
        1.0,
        clip(ego.x / pos),
        clip(ego.y / pos),
        clip(vx / spd),
        clip(vy / spd),
    ]);
    let mut near: Vec<&VehicleState> = vehicles
        .iter()
        .filter(|o| o.id != ego.id && (o.x - ego.x).abs() <= cfg.perception_range)
        .collect();
    near.sort_by(|a, b| {
        (a.x - ego.x)
            .abs()
            .total_cmp(&(b.x - ego.x).abs())
            .then(a.id.cmp(&b.id))
    });
    for (row, o) in near.into_iter().take(cfg.rows - 1).enumerate() {
        let (ox, oy) = o.velocity();
        let r = (row + 1) * FEATURES;
        m.data[r..r + FEATURES].copy_from_slice(&[
            1.0,
            clip((o.x - ego.x) / pos),
            clip((o.y - ego.y) / pos),
            clip((ox - vx) / spd),
            clip((oy - vy) / spd),
        ]);
    }
    m
}

/// Pairs of vehicles whose footprints overlap.
pub fn detect_collisions(vehicles: &[VehicleState]) -> Vec<(VehicleId, VehicleId)> {
    let rects: Vec<_> = vehicles.iter().map(|v| v.footprint()).collect();
    let mut out = Vec::new();
    for i in 0..vehicles.len() {
        for j in i + 1..vehicles.len() {
            if vehicles[i].kind == VehicleKind::Obstacle
                && vehicles[j].kind == VehicleKind::Obstacle
            {
                continue;
            }
            if (vehicles[i].x - vehicles[j].x).abs() < vehicles[i].length + vehicles[j].length
                && rects[i].overlaps(&rects[j])
            {
                out.push((vehicles[i].id, vehicles[j].id));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<ObservationMatrix>,
    pub rewards: Vec<f64>,
    pub breakdowns: Vec<RewardBreakdown>,
    /// Agents that acted in this step.
    pub acted: Vec<bool>,
    /// Per-agent terminal flag: episode over, or the agent left the road.
    pub agent_done: Vec<bool>,
    pub done: bool,
    pub cause: Option<TerminalCause>,
    pub collisions: Vec<(VehicleId, VehicleId)>,
    pub executed: Vec<Option<HighLevelAction>>,
    pub corrections: usize,
    /// Some agent had no conflict-free action.
    pub flagged: bool,
}

/// Vehicles placed by a spawn, before the obstacle is added.
pub fn spawn_vehicles(
    mode: TrafficMode,
    seed: u64,
    cfg: &SpawnConfig,
    layout: &RoadLayout,
) -> Vec<VehicleState> {
    let mut r = rng::stream(seed, &[rng::tags::SPAWN]);
    let (lo, hi) = mode.level.count_range();
    let n_cav = r.random_range(lo..=hi);
    let n_hv = r.random_range(lo..=hi);
    let mut placed: Vec<VehicleState> = Vec::new();
    let mut next_id = 0u32;
    for (kind, count) in [(VehicleKind::Cav, n_cav), (VehicleKind::Hv, n_hv)] {
        for _ in 0..count {
            let mut spot = None;
            for _ in 0..cfg.max_attempts {
                let side = r.random_bool(0.5);
                let [a, b] = if side {
                    cfg.ramp_range
                } else {
                    cfg.through_range
                };
                let x = r.random_range(a..=b);
                let lane = if side {
                    layout.side_lane_at(x)
                } else {
                    LaneRef::THROUGH
                };
                if placed
                    .iter()
                    .all(|p| !p.lane.same_group(lane) || (p.x - x).abs() >= cfg.min_spacing)
                {
                    spot = Some((x, lane));
                    break;
                }
            }
            let Some((x, lane)) = spot else {
                log::warn!(
                    "no free spawn slot after {} attempts; dropping one {kind:?}",
                    cfg.max_attempts
                );
                continue;
            };
            let speed = cfg.base_speed + r.random_range(0.0..=cfg.speed_noise);
            let style = if kind == VehicleKind::Hv && mode.heterogeneous {
                DrivingStyle::ALL[r.random_range(0..DrivingStyle::ALL.len())]
            } else {
                DrivingStyle::Normal
            };
            let y = layout.lane_center_y(lane);
            placed.push(
                VehicleState::new(VehicleId(next_id), kind, x, y, speed, lane).with_style(style),
            );
            next_id += 1;
        }
    }
    placed
}

pub struct MergingEnv {
    config: EnvConfig,
    layout: RoadLayout,
    mode: TrafficMode,
    seed: u64,
    vehicles: Vec<VehicleState>,
    agents: Vec<VehicleId>,
    alive: Vec<bool>,
    step_count: usize,
    done: bool,
    record: Option<EpisodeRecord>,
    recording: bool,
}

impl MergingEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        let layout = build_layout(&config.layout)?;
        Ok(Self {
            config,
            layout,
            mode: TrafficMode::default(),
            seed: 0,
            vehicles: Vec::new(),
            agents: Vec::new(),
            alive: Vec::new(),
            step_count: 0,
            done: true,
            record: None,
            recording: false,
        })
    }

    /// Keep an [`EpisodeRecord`] of subsequent episodes.
    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn layout(&self) -> &RoadLayout {
        &self.layout
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn agents(&self) -> &[VehicleId] {
        &self.agents
    }

    pub fn alive(&self) -> &[bool] {
        &self.alive
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn rollout_context(&self) -> RolloutContext<'_> {
        RolloutContext {
            layout: &self.layout,
            dynamics: &self.config.dynamics,
            styles: &self.config.styles,
            horizon: self.config.intent_horizon,
        }
    }

    pub fn take_record(&mut self) -> Option<EpisodeRecord> {
        self.record.take()
    }

    pub fn record(&self) -> Option<&EpisodeRecord> {
        self.record.as_ref()
    }

    pub fn reset(&mut self, mode: TrafficMode, seed: u64) -> Vec<ObservationMatrix> {
        let placed = spawn_vehicles(mode, seed, &self.config.spawn, &self.layout);
        self.reset_with(mode, seed, placed)
    }

    /// Starts an episode from given vehicles. CAVs become agents in the order
    /// given; the merge-end obstacle is appended.
    pub fn reset_with(
        &mut self,
        mode: TrafficMode,
        seed: u64,
        mut vehicles: Vec<VehicleState>,
    ) -> Vec<ObservationMatrix> {
        let next_id = vehicles.iter().map(|v| v.id.0 + 1).max().unwrap_or(0);
        let ox = self.layout.merge_end_obstacle_x();
        vehicles.push(VehicleState::new(
            VehicleId(next_id),
            VehicleKind::Obstacle,
            ox,
            self.layout.lane_center_y(LaneRef::MERGE),
            0.0,
            LaneRef::MERGE,
        ));
        self.mode = mode;
        self.seed = seed;
        self.agents = vehicles
            .iter()
            .filter(|v| v.is_cav())
            .map(|v| v.id)
            .collect();
        self.alive = vec![true; self.agents.len()];
        self.vehicles = vehicles;
        self.step_count = 0;
        self.done = self.agents.is_empty();
        self.record = self.recording.then(|| EpisodeRecord {
            seed,
            substeps_per_decision: self.config.dynamics.substeps_per_decision,
            vehicles: self
                .vehicles
                .iter()
                .map(|v| VehicleInfo {
                    id: v.id,
                    kind: v.kind,
                    length: v.length,
                    width: v.width,
                })
                .collect(),
            initial: self.frame(0.0),
            substeps: Vec::new(),
            decisions: Vec::new(),
            cause: None,
        });
        self.observe_all()
    }

    fn frame(&self, t: f64) -> Frame {
        Frame {
            t,
            vehicles: self.vehicles.iter().map(VehicleFrame::of).collect(),
        }
    }

    fn agent_state(&self, slot: usize) -> Option<&VehicleState> {
        if !self.alive[slot] {
            return None;
        }
        self.vehicles.iter().find(|v| v.id == self.agents[slot])
    }

    pub fn observe(&self, slot: usize) -> ObservationMatrix {
        match self.agent_state(slot) {
            Some(ego) => observe(ego, &self.vehicles, &self.config.observation),
            None => ObservationMatrix::zeros(self.config.observation.rows),
        }
    }

    pub fn observe_all(&self) -> Vec<ObservationMatrix> {
        (0..self.agents.len()).map(|i| self.observe(i)).collect()
    }

    /// Centralized critic input for `slot`: its own observation first, the
    /// other agents in slot order, zero padding up to `max_agents` slots.
    pub fn critic_input(
        observations: &[ObservationMatrix],
        slot: usize,
        max_agents: usize,
        obs_len: usize,
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(max_agents * obs_len);
        out.extend_from_slice(&observations[slot].data);
        for (i, o) in observations.iter().enumerate() {
            if i != slot && out.len() < max_agents * obs_len {
                out.extend_from_slice(&o.data);
            }
        }
        out.resize(max_agents * obs_len, 0.0);
        out
    }

    /// One decision step. `actions` holds one proposal per agent slot;
    /// entries of agents no longer on the road are ignored.
    pub fn step(&mut self, actions: &[HighLevelAction]) -> Result<StepOutcome> {
        let n = self.agents.len();
        if actions.len() != n {
            return Err(Error::LengthMismatch(format!(
                "{} actions for {n} agents",
                actions.len()
            )));
        }
        if self.done {
            return Ok(StepOutcome {
                observations: self.observe_all(),
                rewards: vec![0.0; n],
                breakdowns: vec![RewardBreakdown::default(); n],
                acted: vec![false; n],
                agent_done: vec![true; n],
                done: true,
                cause: self.record.as_ref().and_then(|r| r.cause),
                collisions: Vec::new(),
                executed: vec![None; n],
                corrections: 0,
                flagged: false,
            });
        }
        let acted = self.alive.clone();
        let proposed: Vec<Option<HighLevelAction>> =
            (0..n).map(|i| acted[i].then_some(actions[i])).collect();
        for (i, a) in actions.iter().enumerate() {
            if !acted[i] {
                log::debug!(
                    "ignoring {a:?} for agent {} which left the road",
                    self.agents[i]
                );
            }
        }

        // shield
        let proposal_map: BTreeMap<VehicleId, HighLevelAction> = (0..n)
            .filter_map(|i| proposed[i].map(|a| (self.agents[i], a)))
            .collect();
        let (executed_map, fixes, flagged, reports, intents) = if self.config.sem_enabled {
            let ctx = SemContext {
                rollout: self.rollout_context(),
                config: &self.config.sem,
                headway_threshold: self.config.reward.headway_threshold,
                share_intents: self.config.igm_enabled,
            };
            let out = run_sem(
                &self.vehicles,
                &proposal_map,
                &ctx,
                NoiseKey {
                    seed: self.seed,
                    step: self.step_count,
                },
            );
            let fixes: Vec<CorrectionEntry> = out
                .checks
                .iter()
                .filter(|c| c.corrected)
                .map(|c| CorrectionEntry {
                    id: c.ego,
                    proposed: c.proposed,
                    executed: c.final_action,
                    all_conflicted: c.all_conflicted,
                })
                .collect();
            let flagged = out.flagged();
            (
                out.actions,
                fixes,
                flagged,
                out.reports,
                out.intents.into_values().collect(),
            )
        } else {
            (proposal_map, Vec::new(), false, Vec::new(), Vec::new())
        };
        let corrections = fixes.len();
        let executed: Vec<Option<HighLevelAction>> = (0..n)
            .map(|i| {
                if acted[i] {
                    executed_map.get(&self.agents[i]).copied()
                } else {
                    None
                }
            })
            .collect();

        // targets held for the whole decision interval
        let cav_targets: BTreeMap<VehicleId, ActionTarget> = self
            .vehicles
            .iter()
            .filter_map(|v| {
                executed_map.get(&v.id).map(|a| {
                    (
                        v.id,
                        execute_action(v, *a, &self.layout, &self.config.dynamics),
                    )
                })
            })
            .collect();
        let hv_targets: BTreeMap<VehicleId, LaneRef> = self
            .vehicles
            .iter()
            .filter(|v| v.kind == VehicleKind::Hv)
            .map(|v| {
                (
                    v.id,
                    hv_lane_decision(v, &self.vehicles, &self.layout, &self.config.styles),
                )
            })
            .collect();

        let dt = self.config.dynamics.dt;
        let spd = self.config.dynamics.substeps_per_decision;
        let mut collisions = Vec::new();
        for sub in 0..spd {
            let snapshot = self.vehicles.clone();
            for v in self.vehicles.iter_mut() {
                *v = match v.kind {
                    VehicleKind::Obstacle => continue,
                    VehicleKind::Cav => match cav_targets.get(&v.id) {
                        Some(t) => tracked_substep(v, t, &self.layout, &self.config.dynamics),
                        None => continue,
                    },
                    VehicleKind::Hv => {
                        let target = hv_targets[&v.id];
                        let accel = hv_accel(v, target, &snapshot, &self.config.styles);
                        control_substep(v, accel, target, &self.layout, &self.config.dynamics)
                    }
                };
            }
            collisions = detect_collisions(&self.vehicles);
            let end = self.layout.through_length();
            self.vehicles.retain(|v| v.x <= end);
            let t = (self.step_count * spd + sub + 1) as f64 * dt;
            if self.record.is_some() {
                let frame = self.frame(t);
                if let Some(r) = self.record.as_mut() {
                    r.substeps.push(frame);
                }
            }
            if !collisions.is_empty() {
                break;
            }
        }

        let collided: Vec<VehicleId> = collisions.iter().flat_map(|&(a, b)| [a, b]).collect();
        let mut rewards = vec![0.0; n];
        let mut breakdowns = vec![RewardBreakdown::default(); n];
        let mut agent_done = vec![false; n];
        for i in 0..n {
            if !acted[i] {
                agent_done[i] = true;
                continue;
            }
            let id = self.agents[i];
            match self.vehicles.iter().find(|v| v.id == id) {
                Some(state) => {
                    let b = reward(
                        state,
                        &self.vehicles,
                        collided.contains(&id),
                        &self.layout,
                        &self.config.reward,
                    );
                    rewards[i] = b.total;
                    breakdowns[i] = b;
                }
                None => {
                    self.alive[i] = false;
                    agent_done[i] = true;
                }
            }
        }
        self.step_count += 1;
        let cause = if !collisions.is_empty() {
            Some(TerminalCause::Collision)
        } else if !self.alive.iter().any(|a| *a) {
            Some(TerminalCause::AllExited)
        } else if self.step_count >= self.config.horizon {
            Some(TerminalCause::Horizon)
        } else {
            None
        };
        self.done = cause.is_some();
        if self.done {
            agent_done.iter_mut().for_each(|d| *d = true);
        }
        if let Some(r) = self.record.as_mut() {
            r.decisions.push(DecisionRecord {
                step: self.step_count - 1,
                proposed: proposed.clone(),
                executed: executed.clone(),
                corrections,
                fixes,
                rewards: rewards.clone(),
                collision: !collisions.is_empty(),
                reports,
                intents,
            });
            r.cause = cause;
        }
        Ok(StepOutcome {
            observations: self.observe_all(),
            rewards,
            breakdowns,
            acted,
            agent_done,
            done: self.done,
            cause,
            collisions,
            executed,
            corrections,
            flagged,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env() -> MergingEnv {
        MergingEnv::new(EnvConfig::default()).unwrap()
    }

    fn vehicle(id: u32, kind: VehicleKind, x: f64, lane: LaneRef, v: f64) -> VehicleState {
        let y = RoadLayout::default().lane_center_y(lane);
        VehicleState::new(VehicleId(id), kind, x, y, v, lane)
    }

    const EASY: TrafficMode = TrafficMode {
        level: TrafficLevel::Easy,
        heterogeneous: false,
    };
    const HARD: TrafficMode = TrafficMode {
        level: TrafficLevel::Hard,
        heterogeneous: true,
    };

    #[test]
    fn reset_is_deterministic() {
        let mut a = env();
        let mut b = env();
        let oa = a.reset(EASY, 0);
        let ob = b.reset(EASY, 0);
        assert_eq!(oa, ob);
        assert_eq!(a.vehicles(), b.vehicles());
    }

    #[test]
    fn spawn_counts_speeds_and_spacing() {
        let layout = RoadLayout::default();
        for seed in 0..200 {
            for mode in [EASY, HARD] {
                let vs = spawn_vehicles(mode, seed, &SpawnConfig::default(), &layout);
                let (lo, hi) = mode.level.count_range();
                let cavs = vs.iter().filter(|v| v.is_cav()).count();
                let hvs = vs.len() - cavs;
                assert!(
                    (lo..=hi).contains(&cavs) && (lo..=hi).contains(&hvs),
                    "{mode:?} {seed}"
                );
                for v in &vs {
                    assert!((25.0..=27.0).contains(&v.speed));
                    if !mode.heterogeneous {
                        assert_eq!(v.style, DrivingStyle::Normal);
                    }
                }
                for (i, a) in vs.iter().enumerate() {
                    for b in &vs[i + 1..] {
                        if a.lane.same_group(b.lane) {
                            assert!((a.x - b.x).abs() >= 15.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn crowded_spawn_drops_vehicles() {
        let layout = RoadLayout::default();
        let cfg = SpawnConfig {
            min_spacing: 200.0,
            ..SpawnConfig::default()
        };
        let vs = spawn_vehicles(HARD, 1, &cfg, &layout);
        // at most two vehicles fit per lane group with 200 m spacing
        assert!(vs.len() <= 4);
        assert!(!vs.is_empty());
    }

    #[test]
    fn lone_cav_observation_is_padded() {
        let mut e = env();
        let obs = e.reset_with(
            EASY,
            0,
            vec![vehicle(0, VehicleKind::Cav, 50.0, LaneRef::THROUGH, 25.0)],
        );
        assert_eq!(obs[0].row(0), &[1.0, 0.5, 0.0, 25.0 / 30.0, 0.0]);
        for r in 1..5 {
            assert!(obs[0].row(r).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn observation_range_and_normalization() {
        let cfg = ObservationConfig::default();
        let ego = vehicle(0, VehicleKind::Cav, 10.0, LaneRef::THROUGH, 25.0);
        let far = vehicle(1, VehicleKind::Hv, 161.0, LaneRef::THROUGH, 25.0);
        let edge = vehicle(2, VehicleKind::Hv, 160.0, LaneRef::THROUGH, 25.0);
        let m = observe(&ego, &[ego.clone(), far.clone()], &cfg);
        assert!(m.row(1).iter().all(|v| *v == 0.0));
        let m = observe(&ego, &[ego.clone(), edge], &cfg);
        assert_eq!(m.row(1)[0], 1.0);

        let side = vehicle(3, VehicleKind::Hv, 200.0, LaneRef::RAMP, 25.0);
        let ego = vehicle(0, VehicleKind::Cav, 150.0, LaneRef::THROUGH, 25.0);
        let m = observe(&ego, &[ego.clone(), side], &cfg);
        assert_eq!(m.row(1), &[1.0, 0.5, -4.0 / 100.0, 0.0, 0.0]);
    }

    #[test]
    fn observation_rows_are_nearest_first() {
        let cfg = ObservationConfig::default();
        let ego = vehicle(0, VehicleKind::Cav, 100.0, LaneRef::THROUGH, 25.0);
        let mut vs = vec![ego.clone()];
        for (i, x) in [190.0, 60.0, 110.0, 30.0, 135.0, 99.0].iter().enumerate() {
            vs.push(vehicle(
                i as u32 + 1,
                VehicleKind::Hv,
                *x,
                LaneRef::THROUGH,
                20.0,
            ));
        }
        let m = observe(&ego, &vs, &cfg);
        let dx: Vec<f64> = (1..5).map(|r| m.row(r)[1] * 100.0).collect();
        let expect = [-1.0, 10.0, 35.0, -40.0];
        for (d, e) in dx.iter().zip(expect) {
            assert!((d - e).abs() < 1e-9);
        }
    }

    #[test]
    fn reward_examples() {
        let layout = RoadLayout::default();
        let cfg = RewardConfig::default();
        let a = vehicle(0, VehicleKind::Cav, 100.0, LaneRef::THROUGH, 20.0);
        let r = reward(&a, std::slice::from_ref(&a), false, &layout, &cfg);
        assert_eq!(r.total, 0.5);
        let b = vehicle(0, VehicleKind::Cav, 100.0, LaneRef::THROUGH, 25.0);
        let r = reward(&b, std::slice::from_ref(&b), true, &layout, &cfg);
        assert_eq!(r.total, -199.25);
        assert_eq!(headway_reward(Some(1.2 * 25.0), 25.0, &cfg), 0.0);
        assert_eq!(headway_reward(None, 25.0, &cfg), 0.0);
    }

    #[test]
    fn merge_term_peaks_at_ramp_end() {
        let layout = RoadLayout::default();
        let cfg = RewardConfig::default();
        let at_end = vehicle(
            0,
            VehicleKind::Cav,
            layout.merge_end(),
            LaneRef::MERGE,
            25.0,
        );
        assert_eq!(merge_reward(&at_end, &layout, &cfg), -1.0);
        let early = vehicle(0, VehicleKind::Cav, 150.0, LaneRef::RAMP, 25.0);
        let expect = -(-(50.0f64 - 320.0).powi(2) / 3200.0).exp();
        assert_eq!(merge_reward(&early, &layout, &cfg), expect);
        let through = vehicle(0, VehicleKind::Cav, 400.0, LaneRef::THROUGH, 25.0);
        assert_eq!(merge_reward(&through, &layout, &cfg), 0.0);
        let bonus = RewardConfig {
            merge_penalty: false,
            ..cfg
        };
        assert_eq!(merge_reward(&at_end, &layout, &bonus), 1.0);
    }

    #[test]
    fn done_env_returns_immediately() {
        let mut e = env();
        e.reset_with(EASY, 0, vec![]);
        let out = e.step(&[]).unwrap();
        assert!(out.done);
    }

    #[test]
    fn wrong_action_count_rejected() {
        let mut e = env();
        e.reset(EASY, 3);
        assert!(matches!(e.step(&[]), Err(Error::LengthMismatch(_))));
    }

    fn rear_end_scene() -> Vec<VehicleState> {
        vec![
            vehicle(0, VehicleKind::Cav, 100.0, LaneRef::THROUGH, 30.0),
            vehicle(1, VehicleKind::Cav, 230.0, LaneRef::THROUGH, 10.0),
        ]
    }

    fn run_scripted(sem: bool) -> (bool, Vec<f64>) {
        let cfg = EnvConfig {
            sem_enabled: sem,
            ..EnvConfig::default()
        };
        let mut e = MergingEnv::new(cfg).unwrap();
        e.reset_with(EASY, 5, rear_end_scene());
        let script = [HighLevelAction::SpeedUp, HighLevelAction::SlowDown];
        let mut collided = false;
        let mut collision_terms = Vec::new();
        while !e.is_done() {
            let out = e.step(&script).unwrap();
            collided |= !out.collisions.is_empty();
            collision_terms.extend(out.breakdowns.iter().map(|b| b.collision));
        }
        (collided, collision_terms)
    }

    #[test]
    fn scripted_rear_end_collides_without_shield() {
        let (collided, terms) = run_scripted(false);
        assert!(collided);
        assert!(terms.contains(&-1.0));
    }

    #[test]
    fn scripted_rear_end_avoided_with_shield() {
        let (collided, _) = run_scripted(true);
        assert!(!collided);
    }

    #[test]
    fn recording_tracks_substeps() {
        let mut e = env();
        e.set_recording(true);
        e.reset(EASY, 11);
        let n = e.agents().len();
        while !e.is_done() {
            e.step(&vec![HighLevelAction::Cruising; n]).unwrap();
        }
        let r = e.take_record().unwrap();
        assert!(r.substeps.len() <= r.decisions.len() * 10);
        assert!(r.cause.is_some());
        assert_eq!(r.decisions.len(), e.step_count());
    }

    #[test]
    fn critic_input_puts_own_observation_first() {
        let a = ObservationMatrix {
            rows: 1,
            data: vec![1.0; 5],
        };
        let b = ObservationMatrix {
            rows: 1,
            data: vec![2.0; 5],
        };
        let obs = [a, b];
        let x = MergingEnv::critic_input(&obs, 1, 3, 5);
        assert_eq!(x.len(), 15);
        assert_eq!(&x[..5], &[2.0; 5]);
        assert_eq!(&x[5..10], &[1.0; 5]);
        assert_eq!(&x[10..], &[0.0; 5]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn episodes_are_deterministic_and_bounded(seed in 0u64..10_000, hard in any::<bool>(), script in proptest::collection::vec(0usize..5, 1..30)) {
            let mode = if hard { HARD } else { EASY };
            let cfg = RewardConfig::default();
            let run = || {
                let mut e = env();
                e.reset(mode, seed);
                let n = e.agents().len();
                let mut log = Vec::new();
                for (k, a) in script.iter().cycle().take(40).enumerate() {
                    if e.is_done() { break; }
                    let acts: Vec<HighLevelAction> = (0..n).map(|i| HighLevelAction::ALL[(a + i + k) % 5]).collect();
                    let out = e.step(&acts).unwrap();
                    log.push((out.rewards.clone(), out.observations.clone(), e.vehicles().to_vec()));
                    for (r, b) in out.rewards.iter().zip(&out.breakdowns) {
                        let sum: f64 = b.weighted(&cfg.weights).iter().sum();
                        assert!((sum - r).abs() <= 1e-12);
                        assert!((-0.5..=1.0).contains(&b.speed));
                        assert!((-224.5..=21.0).contains(r));
                    }
                    for o in &out.observations {
                        for row in 0..o.rows {
                            let r = o.row(row);
                            assert!(r[0] == 0.0 || r[0] == 1.0);
                            if r[0] == 0.0 { assert!(r.iter().all(|v| *v == 0.0)); }
                            if row > 0 && r[0] == 1.0 { assert!(r[1].abs() <= 1.0); }
                        }
                    }
                }
                log
            };
            let a = run();
            let b = run();
            prop_assert_eq!(a, b);
        }
    }
}
