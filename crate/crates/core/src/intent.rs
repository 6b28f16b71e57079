//! Intent trajectories: a CAV's chosen action rolled through the low-level
//! controllers and the bicycle model, and model-based predictions for human
//! drivers.

use serde::{Deserialize, Serialize};

use crate::behavior::{hv_accel, hv_lane_decision, StyleTable};
use crate::geometry::RoadLayout;
use crate::vehicle::{
    control_substep, execute_action, tracked_substep, DynamicsConfig, HighLevelAction, VehicleId,
    VehicleKind, VehicleState,
};

/// Default number of decision steps covered by an intent.
pub const DEFAULT_HORIZON: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentSample {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
}

impl IntentSample {
    pub fn of(state: &VehicleState) -> Self {
        Self {
            x: state.x,
            y: state.y,
            v: state.speed,
            theta: state.heading,
        }
    }
}

/// Samples one decision interval apart, the first one interval ahead of the
/// owner's state at `created_at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentTrajectory {
    pub owner: VehicleId,
    pub created_at: usize,
    pub samples: Vec<IntentSample>,
}

impl IntentTrajectory {
    pub fn horizon(&self) -> usize {
        self.samples.len()
    }
}

/// Everything needed to roll a vehicle forward.
#[derive(Debug, Clone, Copy)]
pub struct RolloutContext<'a> {
    pub layout: &'a RoadLayout,
    pub dynamics: &'a DynamicsConfig,
    pub styles: &'a StyleTable,
    pub horizon: usize,
}

/// Rolls `action` (held for the whole horizon) through the controllers.
/// Operates on a copy; the live state is untouched.
pub fn generate_intent(
    state: &VehicleState,
    action: HighLevelAction,
    ctx: &RolloutContext<'_>,
    created_at: usize,
) -> IntentTrajectory {
    let target = execute_action(state, action, ctx.layout, ctx.dynamics);
    let mut s = state.clone();
    let mut samples = Vec::with_capacity(ctx.horizon);
    for _ in 0..ctx.horizon {
        for _ in 0..ctx.dynamics.substeps_per_decision {
            s = tracked_substep(&s, &target, ctx.layout, ctx.dynamics);
        }
        samples.push(IntentSample::of(&s));
    }
    IntentTrajectory {
        owner: state.id,
        created_at,
        samples,
    }
}

/// Straight-line constant-speed extrapolation (used for obstacles and for
/// neighbors frozen inside a prediction).
pub fn constant_velocity(
    state: &VehicleState,
    ctx: &RolloutContext<'_>,
    created_at: usize,
) -> IntentTrajectory {
    let interval = ctx.dynamics.decision_interval();
    let (vx, vy) = state.velocity();
    let samples = (1..=ctx.horizon)
        .map(|k| {
            let t = interval * k as f64;
            IntentSample {
                x: state.x + vx * t,
                y: state.y + vy * t,
                v: state.speed,
                theta: state.heading,
            }
        })
        .collect();
    IntentTrajectory {
        owner: state.id,
        created_at,
        samples,
    }
}

fn advance_frozen(state: &VehicleState, dt: f64, layout: &RoadLayout) -> VehicleState {
    let (vx, vy) = state.velocity();
    let mut s = state.clone();
    s.x += vx * dt;
    s.y += vy * dt;
    if s.lane.is_side() {
        s.lane = layout.side_lane_at(s.x);
    }
    s
}

/// IDM + MOBIL rollout of a human driver against a frozen snapshot of its
/// neighbors, which move at constant speed during the prediction.
pub fn predict_hv(
    state: &VehicleState,
    snapshot: &[VehicleState],
    ctx: &RolloutContext<'_>,
    created_at: usize,
) -> IntentTrajectory {
    if state.kind == VehicleKind::Obstacle {
        return constant_velocity(state, ctx, created_at);
    }
    let mut ego = state.clone();
    let mut others: Vec<VehicleState> = snapshot
        .iter()
        .filter(|o| o.id != state.id)
        .cloned()
        .collect();
    let mut samples = Vec::with_capacity(ctx.horizon);
    for _ in 0..ctx.horizon {
        let target_lane = hv_lane_decision(&ego, &others, ctx.layout, ctx.styles);
        for _ in 0..ctx.dynamics.substeps_per_decision {
            let accel = hv_accel(&ego, target_lane, &others, ctx.styles);
            ego = control_substep(&ego, accel, target_lane, ctx.layout, ctx.dynamics);
            for o in others.iter_mut() {
                *o = advance_frozen(o, ctx.dynamics.dt, ctx.layout);
            }
        }
        samples.push(IntentSample::of(&ego));
    }
    IntentTrajectory {
        owner: state.id,
        created_at,
        samples,
    }
}
