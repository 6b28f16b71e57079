//! Vehicle state, the kinematic bicycle model and the low-level controllers
//! that turn a high-level action into throttle and steering.

use std::f64::consts::FRAC_PI_4;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LaneRef, OrientedRect, RoadLayout};

pub const MAX_SPEED: f64 = 45.0;
pub const MAX_ACCEL: f64 = 5.0;
pub const MAX_STEERING: f64 = FRAC_PI_4;
pub const DEFAULT_LENGTH: f64 = 5.0;
pub const DEFAULT_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleKind {
    Cav,
    Hv,
    /// Static barrier closing the merge lane.
    Obstacle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrivingStyle {
    Aggressive,
    Normal,
    Timid,
}

impl DrivingStyle {
    pub const ALL: [DrivingStyle; 3] = [
        DrivingStyle::Aggressive,
        DrivingStyle::Normal,
        DrivingStyle::Timid,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub heading: f64,
    pub lane: LaneRef,
    pub length: f64,
    pub width: f64,
    pub kind: VehicleKind,
    /// Only meaningful for human-driven vehicles.
    pub style: DrivingStyle,
}

impl VehicleState {
    pub fn new(
        id: VehicleId,
        kind: VehicleKind,
        x: f64,
        y: f64,
        speed: f64,
        lane: LaneRef,
    ) -> Self {
        Self {
            id,
            x,
            y,
            speed: speed.clamp(0.0, MAX_SPEED),
            heading: 0.0,
            lane,
            length: DEFAULT_LENGTH,
            width: DEFAULT_WIDTH,
            kind,
            style: DrivingStyle::Normal,
        }
    }

    pub fn with_style(mut self, style: DrivingStyle) -> Self {
        self.style = style;
        self
    }

    pub fn footprint(&self) -> OrientedRect {
        OrientedRect::new(self.x, self.y, self.length, self.width, self.heading)
    }

    pub fn velocity(&self) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (self.speed * c, self.speed * s)
    }

    pub fn is_cav(&self) -> bool {
        self.kind == VehicleKind::Cav
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub accel: f64,
    pub steering: f64,
}

impl ControlInput {
    pub fn clamped(self) -> Self {
        Self {
            accel: self.accel.clamp(-MAX_ACCEL, MAX_ACCEL),
            steering: self.steering.clamp(-MAX_STEERING, MAX_STEERING),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighLevelAction {
    TurnLeft = 0,
    TurnRight = 1,
    Cruising = 2,
    SpeedUp = 3,
    SlowDown = 4,
}

impl HighLevelAction {
    pub const COUNT: usize = 5;
    pub const ALL: [HighLevelAction; 5] = [
        HighLevelAction::TurnLeft,
        HighLevelAction::TurnRight,
        HighLevelAction::Cruising,
        HighLevelAction::SpeedUp,
        HighLevelAction::SlowDown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_lane_change(self) -> bool {
        matches!(self, HighLevelAction::TurnLeft | HighLevelAction::TurnRight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    /// Speed error to acceleration.
    pub speed: f64,
    /// Lateral position error to lateral speed.
    pub lateral: f64,
    /// Heading error to front steering angle.
    pub heading: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            speed: 0.5,
            lateral: 0.6,
            heading: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Integration substep, seconds.
    pub dt: f64,
    pub substeps_per_decision: usize,
    /// Target-speed increment of SpeedUp / SlowDown.
    pub speed_step: f64,
    pub min_target_speed: f64,
    pub max_target_speed: f64,
    pub gains: ControllerGains,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            substeps_per_decision: 10,
            speed_step: 5.0,
            min_target_speed: 10.0,
            max_target_speed: 30.0,
            gains: ControllerGains::default(),
        }
    }
}

impl DynamicsConfig {
    pub fn decision_interval(&self) -> f64 {
        self.dt * self.substeps_per_decision as f64
    }
}

/// Kinematic bicycle update with the center of gravity midway between axles.
/// Position uses the pre-update speed; only speed is clamped.
pub fn step_bicycle(state: &VehicleState, u: ControlInput, dt: f64) -> VehicleState {
    let u = u.clamped();
    let rear = 0.5 * state.length;
    let front = 0.5 * state.length;
    let slip = ((rear / (front + rear)) * u.steering.tan()).atan();
    let v = state.speed;
    let (s, c) = (state.heading + slip).sin_cos();
    VehicleState {
        x: state.x + v * c * dt,
        y: state.y + v * s * dt,
        heading: state.heading + (v / rear) * slip.sin() * dt,
        speed: (v + u.accel * dt).clamp(0.0, MAX_SPEED),
        ..state.clone()
    }
}

/// Proportional speed tracking.
pub fn pid_speed(target: f64, current: f64, gains: &ControllerGains) -> f64 {
    (gains.speed * (target - current)).clamp(-MAX_ACCEL, MAX_ACCEL)
}

/// Lateral cascade: position error sets a lateral speed, lateral speed sets a
/// heading reference, heading error sets the steering angle.
pub fn steer_to_lane(
    state: &VehicleState,
    target: LaneRef,
    layout: &RoadLayout,
    gains: &ControllerGains,
) -> Result<f64> {
    if !layout.reachable(state.lane, target, state.x) {
        return Err(Error::UnreachableLane {
            current: state.lane,
            target,
        });
    }
    let lateral_error = layout.lane_center_y(target) - state.y;
    let lateral_speed = gains.lateral * lateral_error;
    let heading_ref = (lateral_speed / state.speed.max(1.0))
        .clamp(-1.0, 1.0)
        .asin();
    Ok((gains.heading * (heading_ref - state.heading)).clamp(-MAX_STEERING, MAX_STEERING))
}

/// Targets fixed by one high-level decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionTarget {
    pub speed: f64,
    pub lane: LaneRef,
    /// The action actually executed (a lane change into a missing lane
    /// degrades to Cruising).
    pub effective: HighLevelAction,
    pub masked: bool,
}

pub fn is_available(state: &VehicleState, action: HighLevelAction, layout: &RoadLayout) -> bool {
    match action {
        HighLevelAction::TurnLeft => layout.left_of(state.lane, state.x).is_some(),
        HighLevelAction::TurnRight => layout.right_of(state.lane, state.x).is_some(),
        _ => true,
    }
}

/// All five actions minus lane changes into lanes that do not exist here.
pub fn available_actions(state: &VehicleState, layout: &RoadLayout) -> Vec<HighLevelAction> {
    HighLevelAction::ALL
        .into_iter()
        .filter(|&a| is_available(state, a, layout))
        .collect()
}

pub fn execute_action(
    state: &VehicleState,
    action: HighLevelAction,
    layout: &RoadLayout,
    config: &DynamicsConfig,
) -> ActionTarget {
    let clamp = |v: f64| v.clamp(config.min_target_speed, config.max_target_speed);
    let v = state.speed;
    let lane_shift = match action {
        HighLevelAction::TurnLeft => Some(layout.left_of(state.lane, state.x)),
        HighLevelAction::TurnRight => Some(layout.right_of(state.lane, state.x)),
        _ => None,
    };
    match lane_shift {
        Some(Some(lane)) => ActionTarget {
            speed: clamp(v),
            lane,
            effective: action,
            masked: false,
        },
        Some(None) => ActionTarget {
            speed: clamp(v),
            lane: state.lane,
            effective: HighLevelAction::Cruising,
            masked: true,
        },
        None => {
            let speed = match action {
                HighLevelAction::SpeedUp => v + config.speed_step,
                HighLevelAction::SlowDown => v - config.speed_step,
                _ => v,
            };
            ActionTarget {
                speed: clamp(speed),
                lane: state.lane,
                effective: action,
                masked: false,
            }
        }
    }
}

/// One controlled substep toward fixed targets, followed by lane
/// reassignment. Used for both live vehicles and intent rollouts so the two
/// agree exactly.
pub fn control_substep(
    state: &VehicleState,
    accel: f64,
    target_lane: LaneRef,
    layout: &RoadLayout,
    config: &DynamicsConfig,
) -> VehicleState {
    let steer_target = if layout.reachable(state.lane, target_lane, state.x) {
        target_lane
    } else {
        state.lane
    };
    let steering = steer_to_lane(state, steer_target, layout, &config.gains).unwrap_or(0.0);
    let mut next = step_bicycle(state, ControlInput { accel, steering }, config.dt);
    next.lane = layout.reassign_lane(next.x, next.y, state.lane, steer_target);
    next
}

/// Substep for a vehicle tracking an [`ActionTarget`] with the speed loop.
pub fn tracked_substep(
    state: &VehicleState,
    target: &ActionTarget,
    layout: &RoadLayout,
    config: &DynamicsConfig,
) -> VehicleState {
    let accel = pid_speed(target.speed, state.speed, &config.gains);
    control_substep(state, accel, target.lane, layout, config)
}
