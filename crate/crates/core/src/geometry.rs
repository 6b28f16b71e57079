//! Merging-road layout and spatial queries.
//!
//! Coordinates: `x` is lane arclength measured along the through lane, `y` is
//! the signed lateral offset from the through-lane centerline (positive to the
//! left). The ramp approach and merge lane share one centerline at
//! `y = -lane_width`; the ramp approach ends where the merge lane begins, and
//! the merge lane is closed at its downstream end by a static obstacle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneKind {
    Through,
    Ramp,
    Merge,
}

impl LaneKind {
    /// Ramp and merge lane form one continuous side carriageway.
    pub fn is_side(self) -> bool {
        matches!(self, LaneKind::Ramp | LaneKind::Merge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LaneRef {
    pub kind: LaneKind,
    pub index: u8,
}

impl LaneRef {
    pub const THROUGH: LaneRef = LaneRef {
        kind: LaneKind::Through,
        index: 0,
    };
    pub const RAMP: LaneRef = LaneRef {
        kind: LaneKind::Ramp,
        index: 0,
    };
    pub const MERGE: LaneRef = LaneRef {
        kind: LaneKind::Merge,
        index: 0,
    };

    pub fn is_side(self) -> bool {
        self.kind.is_side()
    }

    /// Two lane references describe the same physical lane group.
    pub fn same_group(self, other: LaneRef) -> bool {
        self.is_side() == other.is_side()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub through_length: f64,
    pub merge_start: f64,
    pub merge_length: f64,
    pub ramp_approach_length: f64,
    pub lane_width: f64,
    pub coil_positions: Vec<f64>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            through_length: 520.0,
            merge_start: 320.0,
            merge_length: 100.0,
            ramp_approach_length: 220.0,
            lane_width: 4.0,
            coil_positions: (0..6).map(|i| 325.0 + 25.0 * i as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadLayout {
    through_length: f64,
    merge_start: f64,
    merge_length: f64,
    ramp_approach_length: f64,
    lane_width: f64,
    coil_positions: Vec<f64>,
}

impl Default for RoadLayout {
    fn default() -> Self {
        build_layout(&LayoutConfig::default()).expect("default layout is valid")
    }
}

pub fn build_layout(config: &LayoutConfig) -> Result<RoadLayout> {
    let positive = [
        ("through_length", config.through_length),
        ("merge_length", config.merge_length),
        ("ramp_approach_length", config.ramp_approach_length),
        ("lane_width", config.lane_width),
    ];
    for (name, value) in positive {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidLayout(format!(
                "{name} must be positive, got {value}"
            )));
        }
    }
    if !(config.merge_start.is_finite() && config.merge_start >= 0.0) {
        return Err(Error::InvalidLayout(
            "merge_start must be non-negative".into(),
        ));
    }
    if config.merge_start + config.merge_length > config.through_length {
        return Err(Error::InvalidLayout(format!(
            "merge lane ends at {} beyond the through lane ({})",
            config.merge_start + config.merge_length,
            config.through_length
        )));
    }
    if config.ramp_approach_length > config.merge_start {
        return Err(Error::InvalidLayout(
            "ramp approach starts before the road origin".into(),
        ));
    }
    for pair in config.coil_positions.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::InvalidLayout(
                "coil positions must be strictly increasing".into(),
            ));
        }
    }
    if let Some(c) = config
        .coil_positions
        .iter()
        .find(|&&c| !(0.0..=config.through_length).contains(&c))
    {
        return Err(Error::InvalidLayout(format!(
            "coil at {c} m lies outside the road"
        )));
    }
    Ok(RoadLayout {
        through_length: config.through_length,
        merge_start: config.merge_start,
        merge_length: config.merge_length,
        ramp_approach_length: config.ramp_approach_length,
        lane_width: config.lane_width,
        coil_positions: config.coil_positions.clone(),
    })
}

impl RoadLayout {
    pub fn through_length(&self) -> f64 {
        self.through_length
    }
    pub fn merge_start(&self) -> f64 {
        self.merge_start
    }
    pub fn merge_length(&self) -> f64 {
        self.merge_length
    }
    pub fn merge_end(&self) -> f64 {
        self.merge_start + self.merge_length
    }
    pub fn ramp_approach_length(&self) -> f64 {
        self.ramp_approach_length
    }
    pub fn lane_width(&self) -> f64 {
        self.lane_width
    }
    pub fn coil_positions(&self) -> &[f64] {
        &self.coil_positions
    }

    /// Longitudinal position where the ramp approach begins.
    pub fn ramp_start(&self) -> f64 {
        self.merge_start - self.ramp_approach_length
    }

    /// Ramp approach plus merge lane.
    pub fn total_ramp_length(&self) -> f64 {
        self.ramp_approach_length + self.merge_length
    }

    pub fn lane_center_y(&self, lane: LaneRef) -> f64 {
        if lane.is_side() {
            -self.lane_width
        } else {
            0.0
        }
    }

    /// Side-carriageway lane at longitudinal position `x`.
    pub fn side_lane_at(&self, x: f64) -> LaneRef {
        if x < self.merge_start {
            LaneRef::RAMP
        } else {
            LaneRef::MERGE
        }
    }

    /// Lane whose centerline is nearest to `y` at position `x`.
    pub fn lane_from_position(&self, x: f64, y: f64) -> LaneRef {
        if y < -0.5 * self.lane_width {
            self.side_lane_at(x)
        } else {
            LaneRef::THROUGH
        }
    }

    pub fn left_of(&self, lane: LaneRef, x: f64) -> Option<LaneRef> {
        match lane.kind {
            LaneKind::Merge if x < self.merge_end() => Some(LaneRef::THROUGH),
            _ => None,
        }
    }

    pub fn right_of(&self, lane: LaneRef, x: f64) -> Option<LaneRef> {
        match lane.kind {
            LaneKind::Through if x >= self.merge_start && x < self.merge_end() => {
                Some(LaneRef::MERGE)
            }
            _ => None,
        }
    }

    /// Whether a vehicle at `x` in `current` can steer toward `target`.
    pub fn reachable(&self, current: LaneRef, target: LaneRef, x: f64) -> bool {
        current.same_group(target)
            || self.left_of(current, x) == Some(target)
            || self.right_of(current, x) == Some(target)
    }

    /// Lane assignment after motion: the vehicle belongs to whichever of
    /// `current` and `target` has the nearer centerline; side-lane kind
    /// follows the longitudinal position.
    pub fn reassign_lane(&self, x: f64, y: f64, current: LaneRef, target: LaneRef) -> LaneRef {
        let lane = if !current.same_group(target)
            && (y - self.lane_center_y(target)).abs() < (y - self.lane_center_y(current)).abs()
        {
            target
        } else {
            current
        };
        if lane.is_side() {
            self.side_lane_at(x)
        } else {
            lane
        }
    }

    /// Obstacle closing the merge lane, centered on the merge-lane end.
    pub fn merge_end_obstacle_x(&self) -> f64 {
        self.merge_end()
    }
}

/// Distance travelled along the ramp, from the ramp-approach start.
pub fn ramp_progress(layout: &RoadLayout, state: &VehicleState) -> Result<f64> {
    if !state.lane.is_side() {
        return Err(Error::NotOnRamp(state.id));
    }
    Ok((state.x - layout.ramp_start()).clamp(0.0, layout.total_ramp_length()))
}

/// Ramp approach and merge lane both count as the merge lane for priority.
pub fn is_on_merge_lane(_layout: &RoadLayout, state: &VehicleState) -> bool {
    state.lane.is_side()
}

/// Vehicle footprint as an oriented rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub cx: f64,
    pub cy: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub heading: f64,
}

impl OrientedRect {
    pub fn new(cx: f64, cy: f64, length: f64, width: f64, heading: f64) -> Self {
        Self {
            cx,
            cy,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
            heading,
        }
    }

    pub fn inflated(self, margin: f64) -> Self {
        Self {
            half_length: self.half_length + margin,
            half_width: self.half_width + margin,
            ..self
        }
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (s, c) = self.heading.sin_cos();
        [(c, s), (-s, c)]
    }

    /// Half-extent of the projection onto a unit axis.
    fn radius_along(&self, axis: (f64, f64)) -> f64 {
        let [u, w] = self.axes();
        self.half_length * (u.0 * axis.0 + u.1 * axis.1).abs()
            + self.half_width * (w.0 * axis.0 + w.1 * axis.1).abs()
    }

    /// Separating-axis test; touching edges count as overlap.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let d = (other.cx - self.cx, other.cy - self.cy);
        self.axes().into_iter().chain(other.axes()).all(|axis| {
            let dist = (d.0 * axis.0 + d.1 * axis.1).abs();
            dist <= self.radius_along(axis) + other.radius_along(axis)
        })
    }
}
