//! Priority-based intent checking and intention correction.
//!
//! Every CAV gets a priority score from its merge situation and time
//! headway. CAVs are then checked one at a time in descending priority: the
//! ego intent is tested against the predicted trajectories of surrounding
//! human drivers and the current intents of all other CAVs. An ego whose
//! intent overlaps any of them switches to the available action with the
//! largest worst-step safety margin, and its intent is regenerated so that
//! lower-priority CAVs are checked against the corrected plan.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::behavior::lane_neighbors;
use crate::error::{Error, Result};
use crate::geometry::{is_on_merge_lane, ramp_progress, LaneRef, OrientedRect, RoadLayout};
use crate::intent::{
    constant_velocity, generate_intent, predict_hv, IntentSample, IntentTrajectory, RolloutContext,
};
use crate::rng;
use crate::vehicle::{
    available_actions, execute_action, ActionTarget, HighLevelAction, VehicleId, VehicleKind,
    VehicleState,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemConfig {
    /// Weights of the merge, merge-end and headway terms.
    pub alpha: [f64; 3],
    pub noise_variance: f64,
    /// Bound on the magnitude of the headway term.
    pub headway_clamp: f64,
    /// Speed floor used in time-headway ratios.
    pub min_speed: f64,
    pub perception_range: f64,
    /// Inflation applied to each footprint in conflict checks.
    pub conflict_margin: f64,
}

impl Default for SemConfig {
    fn default() -> Self {
        Self {
            alpha: [1.0, 1.0, 0.5],
            noise_variance: 0.001,
            headway_clamp: 5.0,
            min_speed: 0.1,
            perception_range: 150.0,
            conflict_margin: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityEntry {
    pub id: VehicleId,
    pub score: f64,
    pub noise: f64,
    pub merge_term: f64,
    pub merge_end_term: f64,
    pub headway_term: f64,
}

impl PriorityEntry {
    pub fn noiseless_score(&self) -> f64 {
        self.score - self.noise
    }
}

/// Entries sorted by score, highest first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PriorityList {
    pub entries: Vec<PriorityEntry>,
}

impl PriorityList {
    pub fn order(&self) -> Vec<VehicleId> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

/// Keys the per-agent priority noise to (episode seed, decision step).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub step: usize,
}

impl NoiseKey {
    pub fn rng_for(&self, id: VehicleId) -> rand_chacha::ChaCha8Rng {
        rng::stream(
            self.seed,
            &[rng::tags::PRIORITY, self.step as u64, id.0 as u64],
        )
    }
}

/// Center-to-center distance to the nearest vehicle ahead in the same lane
/// group, or infinity.
pub fn headway_distance(ego: &VehicleState, vehicles: &[VehicleState]) -> f64 {
    lane_neighbors(ego, ego.lane, vehicles)
        .0
        .map_or(f64::INFINITY, |l| l.x - ego.x)
}

/// `ln(d / (t_h v))` with a speed floor, clamped; infinite headway maps to the
/// upper clamp.
pub fn log_headway_ratio(
    distance: f64,
    speed: f64,
    threshold: f64,
    min_speed: f64,
    clamp: f64,
) -> f64 {
    if distance.is_infinite() {
        return clamp;
    }
    if distance <= 0.0 {
        return -clamp;
    }
    (distance / (threshold * speed.max(min_speed)))
        .ln()
        .clamp(-clamp, clamp)
}

pub fn priority_score<R: Rng + ?Sized>(
    agent: &VehicleState,
    headway: f64,
    layout: &RoadLayout,
    config: &SemConfig,
    headway_threshold: f64,
    rng: &mut R,
) -> PriorityEntry {
    let on_merge = is_on_merge_lane(layout, agent);
    let merge_term = if on_merge { 0.5 } else { 0.0 };
    let merge_end_term = if on_merge {
        ramp_progress(layout, agent).unwrap_or(0.0) / layout.total_ramp_length()
    } else {
        0.0
    };
    let headway_term = -log_headway_ratio(
        headway,
        agent.speed,
        headway_threshold,
        config.min_speed,
        config.headway_clamp,
    );
    let noise = Normal::new(0.0, config.noise_variance.sqrt())
        .expect("variance is non-negative")
        .sample(rng);
    let [a1, a2, a3] = config.alpha;
    let score = a1 * merge_term + a2 * merge_end_term + a3 * headway_term + noise;
    PriorityEntry {
        id: agent.id,
        score,
        noise,
        merge_term,
        merge_end_term,
        headway_term,
    }
}

pub fn build_priority_list(
    agents: &[&VehicleState],
    vehicles: &[VehicleState],
    layout: &RoadLayout,
    config: &SemConfig,
    headway_threshold: f64,
    key: NoiseKey,
) -> PriorityList {
    let mut entries: Vec<PriorityEntry> = agents
        .iter()
        .map(|a| {
            let mut r = key.rng_for(a.id);
            priority_score(
                a,
                headway_distance(a, vehicles),
                layout,
                config,
                headway_threshold,
                &mut r,
            )
        })
        .collect();
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    PriorityList { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub ego: VehicleId,
    pub other: VehicleId,
    /// First conflicting prediction step, 1-based.
    pub step: usize,
    /// Smallest center distance over the horizon.
    pub min_distance: f64,
}

/// A neighbor's predicted trajectory together with its footprint and
/// current position.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub length: f64,
    pub width: f64,
    pub x: f64,
    pub lane: LaneRef,
    /// Pose at prediction time, the start of the first interval.
    pub start: IntentSample,
    pub trajectory: IntentTrajectory,
}

impl Prediction {
    pub fn new(state: &VehicleState, trajectory: IntentTrajectory) -> Self {
        Self {
            id: state.id,
            kind: state.kind,
            length: state.length,
            width: state.width,
            x: state.x,
            lane: state.lane,
            start: IntentSample::of(state),
            trajectory,
        }
    }

    /// Pose `frac` of the way through prediction interval `k` (0-based),
    /// interpolated linearly from the previous sample.
    fn pose(&self, k: usize, frac: f64) -> (f64, f64, f64) {
        let prev = if k == 0 {
            &self.start
        } else {
            &self.trajectory.samples[k - 1]
        };
        let next = &self.trajectory.samples[k];
        let lerp = |a: f64, b: f64| a + (b - a) * frac;
        (
            lerp(prev.x, next.x),
            lerp(prev.y, next.y),
            lerp(prev.theta, next.theta),
        )
    }

    fn rect_at(&self, pose: (f64, f64, f64), margin: f64) -> OrientedRect {
        OrientedRect::new(pose.0, pose.1, self.length, self.width, pose.2).inflated(margin)
    }
}

/// Poses checked per prediction interval. Samples one decision apart are
/// too coarse for fast closing speeds: a vehicle could pass through another
/// between two samples.
pub const CONFLICT_SUBDIVISIONS: usize = 10;

/// First prediction step whose interval contains an overlap of the two
/// inflated footprints. Each interval (k-1, k] is checked at
/// [`CONFLICT_SUBDIVISIONS`] evenly spaced poses ending at sample k.
pub fn trajectories_conflict(
    a: &Prediction,
    b: &Prediction,
    margin: f64,
) -> Result<Option<ConflictReport>> {
    let (ha, hb) = (a.trajectory.horizon(), b.trajectory.horizon());
    if ha != hb {
        return Err(Error::HorizonMismatch(ha, hb));
    }
    let mut first = None;
    let mut min_distance = f64::INFINITY;
    for k in 0..ha {
        for j in 1..=CONFLICT_SUBDIVISIONS {
            let frac = j as f64 / CONFLICT_SUBDIVISIONS as f64;
            let (pa, pb) = (a.pose(k, frac), b.pose(k, frac));
            min_distance = min_distance.min((pa.0 - pb.0).hypot(pa.1 - pb.1));
            if first.is_none() && a.rect_at(pa, margin).overlaps(&b.rect_at(pb, margin)) {
                first = Some(k + 1);
            }
        }
    }
    Ok(first.map(|step| ConflictReport {
        ego: a.id,
        other: b.id,
        step,
        min_distance,
    }))
}

/// Reference vehicles of one evaluated action, picked from current
/// positions: the preceding vehicle for lane keeping; the current-lane
/// leader and the target-lane leader and follower for a lane change.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginContext {
    pub lane_change: bool,
    pub reference: Vec<usize>,
}

fn nearest(
    ego: &VehicleState,
    lane: LaneRef,
    neighbors: &[Prediction],
    ahead: bool,
) -> Option<usize> {
    neighbors
        .iter()
        .enumerate()
        .filter(|(_, n)| n.id != ego.id && n.lane.same_group(lane) && (n.x >= ego.x) == ahead)
        .min_by(|(_, a), (_, b)| (a.x - ego.x).abs().total_cmp(&(b.x - ego.x).abs()))
        .map(|(i, _)| i)
}

impl MarginContext {
    pub fn new(ego: &VehicleState, target: &ActionTarget, neighbors: &[Prediction]) -> Self {
        let lane_change = target.effective.is_lane_change();
        let reference = if lane_change {
            [
                nearest(ego, ego.lane, neighbors, true),
                nearest(ego, target.lane, neighbors, true),
                nearest(ego, target.lane, neighbors, false),
            ]
            .into_iter()
            .flatten()
            .collect()
        } else {
            nearest(ego, ego.lane, neighbors, true)
                .into_iter()
                .collect()
        };
        Self {
            lane_change,
            reference,
        }
    }
}

/// Safety margin at prediction step `k` (0-based): the signed gap to the
/// preceding vehicle when keeping the lane, the smallest absolute
/// longitudinal gap to a reference vehicle when changing lanes. No reference
/// vehicle gives `+inf`.
pub fn safety_margin(
    ctx: &MarginContext,
    ego: &IntentTrajectory,
    neighbors: &[Prediction],
    k: usize,
) -> f64 {
    let e = ego.samples[k].x;
    ctx.reference
        .iter()
        .map(|&i| {
            let dx = neighbors[i].trajectory.samples[k].x - e;
            if ctx.lane_change {
                dx.abs()
            } else {
                dx
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Order in which equal-margin actions are preferred.
pub const TIE_BREAK_ORDER: [HighLevelAction; 5] = [
    HighLevelAction::SlowDown,
    HighLevelAction::Cruising,
    HighLevelAction::SpeedUp,
    HighLevelAction::TurnRight,
    HighLevelAction::TurnLeft,
];

#[derive(Debug, Clone, PartialEq)]
pub struct ActionEvaluation {
    pub action: HighLevelAction,
    pub min_margin: f64,
    pub conflict_free: bool,
    pub intent: IntentTrajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub action: HighLevelAction,
    /// Every available action failed the overlap check.
    pub all_conflicted: bool,
    pub evaluations: Vec<ActionEvaluation>,
}

fn conflicts_with_any(
    ego: &Prediction,
    neighbors: &[Prediction],
    margin: f64,
) -> Vec<ConflictReport> {
    neighbors
        .iter()
        .filter_map(|n| trajectories_conflict(ego, n, margin).ok().flatten())
        .collect()
}

/// Replacement action for an ego whose intent conflicts: among the available
/// actions whose intents pass the overlap check (all available actions when
/// none do), the one maximizing the worst-step safety margin; ties resolved by
/// [`TIE_BREAK_ORDER`].
pub fn correct_intention(
    ego: &VehicleState,
    neighbors: &[Prediction],
    ctx: &RolloutContext<'_>,
    margin: f64,
    step: usize,
) -> Correction {
    let available = available_actions(ego, ctx.layout);
    let evaluations: Vec<ActionEvaluation> = TIE_BREAK_ORDER
        .into_iter()
        .filter(|a| available.contains(a))
        .map(|action| {
            let target = execute_action(ego, action, ctx.layout, ctx.dynamics);
            let intent = generate_intent(ego, action, ctx, step);
            let mctx = MarginContext::new(ego, &target, neighbors);
            let min_margin = (0..intent.horizon())
                .map(|k| safety_margin(&mctx, &intent, neighbors, k))
                .fold(f64::INFINITY, f64::min);
            let as_pred = Prediction::new(ego, intent);
            let conflict_free = conflicts_with_any(&as_pred, neighbors, margin).is_empty();
            ActionEvaluation {
                action,
                min_margin,
                conflict_free,
                intent: as_pred.trajectory,
            }
        })
        .collect();
    let any_free = evaluations.iter().any(|e| e.conflict_free);
    let mut best: Option<&ActionEvaluation> = None;
    for e in evaluations.iter().filter(|e| e.conflict_free || !any_free) {
        if best.is_none_or(|b| e.min_margin > b.min_margin) {
            best = Some(e);
        }
    }
    let action = best.map_or(HighLevelAction::SlowDown, |b| b.action);
    Correction {
        action,
        all_conflicted: !any_free,
        evaluations,
    }
}

/// Diagnostic record of one ego's check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub ego: VehicleId,
    pub proposed: HighLevelAction,
    pub final_action: HighLevelAction,
    pub corrected: bool,
    pub all_conflicted: bool,
    /// Human drivers and obstacles whose predictions were used.
    pub predicted_neighbors: Vec<VehicleId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemOutcome {
    pub actions: BTreeMap<VehicleId, HighLevelAction>,
    pub intents: BTreeMap<VehicleId, IntentTrajectory>,
    pub priority: PriorityList,
    pub reports: Vec<ConflictReport>,
    pub checks: Vec<CheckRecord>,
    pub predictions: BTreeMap<VehicleId, IntentTrajectory>,
}

impl SemOutcome {
    pub fn corrections(&self) -> usize {
        self.checks.iter().filter(|c| c.corrected).count()
    }

    pub fn flagged(&self) -> bool {
        self.checks.iter().any(|c| c.all_conflicted)
    }
}

/// Inputs that stay fixed during one shield pass.
#[derive(Debug, Clone, Copy)]
pub struct SemContext<'a> {
    pub rollout: RolloutContext<'a>,
    pub config: &'a SemConfig,
    pub headway_threshold: f64,
    /// When false, CAVs see each other through constant-velocity
    /// extrapolation instead of shared intents.
    pub share_intents: bool,
}

/// Full sequential shield pass over the priority list.
pub fn run_sem(
    vehicles: &[VehicleState],
    proposed: &BTreeMap<VehicleId, HighLevelAction>,
    ctx: &SemContext<'_>,
    key: NoiseKey,
) -> SemOutcome {
    let step = key.step;
    let by_id: BTreeMap<VehicleId, &VehicleState> = vehicles.iter().map(|v| (v.id, v)).collect();
    let cavs: Vec<&VehicleState> = vehicles
        .iter()
        .filter(|v| v.is_cav() && proposed.contains_key(&v.id))
        .collect();

    let mut actions: BTreeMap<VehicleId, HighLevelAction> =
        cavs.iter().map(|c| (c.id, proposed[&c.id])).collect();
    let mut intents: BTreeMap<VehicleId, IntentTrajectory> = cavs
        .iter()
        .map(|c| (c.id, generate_intent(c, actions[&c.id], &ctx.rollout, step)))
        .collect();
    let priority = build_priority_list(
        &cavs,
        vehicles,
        ctx.rollout.layout,
        ctx.config,
        ctx.headway_threshold,
        key,
    );

    let mut predictions: BTreeMap<VehicleId, IntentTrajectory> = BTreeMap::new();
    let mut reports = Vec::new();
    let mut checks = Vec::with_capacity(cavs.len());

    for entry in &priority.entries {
        let ego = by_id[&entry.id];
        let mut neighbors: Vec<Prediction> = Vec::new();
        let mut predicted_neighbors = Vec::new();
        for other in vehicles.iter().filter(|o| o.id != ego.id) {
            if other.is_cav() {
                let Some(intent) = intents.get(&other.id) else {
                    continue;
                };
                let trajectory = if ctx.share_intents {
                    intent.clone()
                } else {
                    constant_velocity(other, &ctx.rollout, step)
                };
                neighbors.push(Prediction::new(other, trajectory));
            } else if (other.x - ego.x).abs() <= ctx.config.perception_range {
                let trajectory = predictions
                    .entry(other.id)
                    .or_insert_with(|| predict_hv(other, vehicles, &ctx.rollout, step))
                    .clone();
                predicted_neighbors.push(other.id);
                neighbors.push(Prediction::new(other, trajectory));
            }
        }

        let own = Prediction::new(ego, intents[&ego.id].clone());
        let found = conflicts_with_any(&own, &neighbors, ctx.config.conflict_margin);
        let proposed_action = actions[&ego.id];
        let mut record = CheckRecord {
            ego: ego.id,
            proposed: proposed_action,
            final_action: proposed_action,
            corrected: false,
            all_conflicted: false,
            predicted_neighbors,
        };
        if !found.is_empty() {
            reports.extend(found);
            let correction = correct_intention(
                ego,
                &neighbors,
                &ctx.rollout,
                ctx.config.conflict_margin,
                step,
            );
            let chosen = correction
                .evaluations
                .iter()
                .find(|e| e.action == correction.action)
                .map(|e| e.intent.clone())
                .unwrap_or_else(|| generate_intent(ego, correction.action, &ctx.rollout, step));
            actions.insert(ego.id, correction.action);
            intents.insert(ego.id, chosen);
            record.final_action = correction.action;
            record.corrected = true;
            record.all_conflicted = correction.all_conflicted;
        }
        checks.push(record);
    }

    SemOutcome {
        actions,
        intents,
        priority,
        reports,
        checks,
        predictions,
    }
}
