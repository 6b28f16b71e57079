//! Human-driven vehicle models: IDM car following and MOBIL lane changing,
//! with per-style parameter sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LaneRef, RoadLayout};
use crate::vehicle::{DrivingStyle, VehicleKind, VehicleState};

pub const MIN_IDM_ACCEL: f64 = -10.0;
/// Human drivers ignore vehicles farther than this, longitudinally.
pub const HV_PERCEPTION_RANGE: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    pub desired_speed: f64,
    pub time_gap: f64,
    pub jam_distance: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub exponent: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 25.0,
            time_gap: 1.5,
            jam_distance: 5.0,
            max_accel: 3.0,
            comfortable_decel: 5.0,
            exponent: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilParams {
    pub politeness: f64,
    pub gain_threshold: f64,
    pub safe_decel: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        Self {
            politeness: 0.0,
            gain_threshold: 0.2,
            safe_decel: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleParams {
    pub idm: IdmParams,
    pub mobil: MobilParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleTable {
    pub aggressive: StyleParams,
    pub normal: StyleParams,
    pub timid: StyleParams,
}

impl Default for StyleTable {
    fn default() -> Self {
        let normal = StyleParams::default();
        let aggressive = StyleParams {
            idm: IdmParams {
                desired_speed: 30.0,
                time_gap: 1.0,
                max_accel: 4.0,
                ..normal.idm
            },
            mobil: MobilParams {
                gain_threshold: 0.1,
                ..normal.mobil
            },
        };
        let timid = StyleParams {
            idm: IdmParams {
                desired_speed: 20.0,
                time_gap: 2.0,
                max_accel: 2.0,
                ..normal.idm
            },
            mobil: MobilParams {
                safe_decel: 1.5,
                gain_threshold: 0.4,
                ..normal.mobil
            },
        };
        Self {
            aggressive,
            normal,
            timid,
        }
    }
}

impl StyleTable {
    pub fn style_params(&self, style: DrivingStyle) -> (IdmParams, MobilParams) {
        let p = match style {
            DrivingStyle::Aggressive => &self.aggressive,
            DrivingStyle::Normal => &self.normal,
            DrivingStyle::Timid => &self.timid,
        };
        (p.idm, p.mobil)
    }

    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        for (name, p) in [
            ("aggressive", &self.aggressive),
            ("normal", &self.normal),
            ("timid", &self.timid),
        ] {
            let idm = &p.idm;
            let fields = [
                ("desired_speed", idm.desired_speed),
                ("time_gap", idm.time_gap),
                ("jam_distance", idm.jam_distance),
                ("max_accel", idm.max_accel),
                ("comfortable_decel", idm.comfortable_decel),
            ];
            for (field, v) in fields {
                if !(v.is_finite() && v > 0.0) {
                    return Err((
                        format!("styles.{name}.idm.{field}"),
                        "must be positive".into(),
                    ));
                }
            }
            if idm.exponent.is_nan() || idm.exponent < 1.0 {
                return Err((format!("styles.{name}.idm.exponent"), "must be >= 1".into()));
            }
            if !(0.0..=1.0).contains(&p.mobil.politeness) {
                return Err((
                    format!("styles.{name}.mobil.politeness"),
                    "must lie in [0, 1]".into(),
                ));
            }
            if p.mobil.gain_threshold.is_nan() || p.mobil.gain_threshold < 0.0 {
                return Err((
                    format!("styles.{name}.mobil.gain_threshold"),
                    "must be >= 0".into(),
                ));
            }
            if p.mobil.safe_decel.is_nan() || p.mobil.safe_decel <= 0.0 {
                return Err((
                    format!("styles.{name}.mobil.safe_decel"),
                    "must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Default style table lookup.
pub fn style_params(style: DrivingStyle) -> (IdmParams, MobilParams) {
    StyleTable::default().style_params(style)
}

/// IDM acceleration. `gap` is bumper to bumper (`f64::INFINITY` for a free
/// road) and `closing_speed` is ego speed minus leader speed.
pub fn idm_accel(speed: f64, gap: f64, closing_speed: f64, params: &IdmParams) -> Result<f64> {
    if gap <= 0.0 {
        return Err(Error::Overlap(gap));
    }
    let free = (speed / params.desired_speed).powf(params.exponent);
    let interaction = if gap.is_infinite() {
        0.0
    } else {
        let desired_gap = params.jam_distance
            + (speed * params.time_gap
                + speed * closing_speed
                    / (2.0 * (params.max_accel * params.comfortable_decel).sqrt()))
            .max(0.0);
        (desired_gap / gap).powi(2)
    };
    Ok((params.max_accel * (1.0 - free - interaction)).clamp(MIN_IDM_ACCEL, params.max_accel))
}

/// Longitudinal body used for gap computations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub x: f64,
    pub speed: f64,
    pub length: f64,
}

impl Body {
    pub fn of(v: &VehicleState) -> Self {
        Self {
            x: v.x,
            speed: v.speed,
            length: v.length,
        }
    }
}

/// Bumper-to-bumper gap from `follower` to `leader`.
pub fn gap_between(follower: &Body, leader: &Body) -> f64 {
    leader.x - follower.x - 0.5 * (leader.length + follower.length)
}

/// IDM acceleration of `follower` behind an optional leader.
pub fn follow_accel(follower: &Body, leader: Option<&Body>, params: &IdmParams) -> Result<f64> {
    match leader {
        None => idm_accel(follower.speed, f64::INFINITY, 0.0, params),
        Some(l) => idm_accel(
            follower.speed,
            gap_between(follower, l),
            follower.speed - l.speed,
            params,
        ),
    }
}

/// Neighbors of the ego in its current lane and the candidate target lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilScene {
    pub ego: Body,
    pub current_leader: Option<Body>,
    pub current_follower: Option<Body>,
    pub target_leader: Option<Body>,
    pub target_follower: Option<Body>,
}

/// MOBIL safety and incentive criteria. Absent neighbors are infinitely far.
pub fn mobil_decide(scene: &MobilScene, idm: &IdmParams, mobil: &MobilParams) -> bool {
    let ego = &scene.ego;
    let eval = || -> Result<bool> {
        let new_follower_after = match &scene.target_follower {
            Some(nf) => Some(follow_accel(nf, Some(ego), idm)?),
            None => None,
        };
        if let Some(a) = new_follower_after {
            if a < -mobil.safe_decel {
                return Ok(false);
            }
        }
        let ego_before = follow_accel(ego, scene.current_leader.as_ref(), idm)?;
        let ego_after = follow_accel(ego, scene.target_leader.as_ref(), idm)?;
        let new_follower_gain = match (&scene.target_follower, new_follower_after) {
            (Some(nf), Some(after)) => after - follow_accel(nf, scene.target_leader.as_ref(), idm)?,
            _ => 0.0,
        };
        let old_follower_gain = match &scene.current_follower {
            Some(of) => {
                follow_accel(of, scene.current_leader.as_ref(), idm)?
                    - follow_accel(of, Some(ego), idm)?
            }
            None => 0.0,
        };
        let incentive =
            (ego_after - ego_before) + mobil.politeness * (new_follower_gain + old_follower_gain);
        Ok(incentive > mobil.gain_threshold)
    };
    // an overlapping pair anywhere in the scene makes the change unsafe
    eval().unwrap_or(false)
}

/// Nearest vehicle ahead of (and behind) `ego` within a lane group, judged by
/// each vehicle's lane reference.
pub fn lane_neighbors<'a>(
    ego: &VehicleState,
    lane: LaneRef,
    others: impl IntoIterator<Item = &'a VehicleState>,
) -> (Option<&'a VehicleState>, Option<&'a VehicleState>) {
    let mut leader: Option<&VehicleState> = None;
    let mut follower: Option<&VehicleState> = None;
    for o in others {
        if o.id == ego.id || !o.lane.same_group(lane) || (o.x - ego.x).abs() > HV_PERCEPTION_RANGE {
            continue;
        }
        if o.x >= ego.x {
            if leader.is_none_or(|l| o.x < l.x) {
                leader = Some(o);
            }
        } else if follower.is_none_or(|f| o.x > f.x) {
            follower = Some(o);
        }
    }
    (leader, follower)
}

/// Once-per-decision lane choice of a human driver.
pub fn hv_lane_decision(
    ego: &VehicleState,
    others: &[VehicleState],
    layout: &RoadLayout,
    styles: &StyleTable,
) -> LaneRef {
    let (idm, mobil) = styles.style_params(ego.style);
    let (cur_lead, cur_follow) = lane_neighbors(ego, ego.lane, others);
    let candidates = [
        layout.left_of(ego.lane, ego.x),
        layout.right_of(ego.lane, ego.x),
    ];
    for target in candidates.into_iter().flatten() {
        let (t_lead, t_follow) = lane_neighbors(ego, target, others);
        let scene = MobilScene {
            ego: Body::of(ego),
            current_leader: cur_lead.map(Body::of),
            current_follower: cur_follow
                .filter(|f| f.kind != VehicleKind::Obstacle)
                .map(Body::of),
            target_leader: t_lead.map(Body::of),
            target_follower: t_follow
                .filter(|f| f.kind != VehicleKind::Obstacle)
                .map(Body::of),
        };
        if mobil_decide(&scene, &idm, &mobil) {
            return target;
        }
    }
    ego.lane
}

/// IDM acceleration of a human driver; while changing lanes it respects the
/// leaders of both lanes.
pub fn hv_accel(
    ego: &VehicleState,
    target_lane: LaneRef,
    others: &[VehicleState],
    styles: &StyleTable,
) -> f64 {
    let (idm, _) = styles.style_params(ego.style);
    let mut lanes = vec![ego.lane];
    if !target_lane.same_group(ego.lane) {
        lanes.push(target_lane);
    }
    lanes
        .into_iter()
        .map(|lane| {
            let (lead, _) = lane_neighbors(ego, lane, others);
            follow_accel(&Body::of(ego), lead.map(Body::of).as_ref(), &idm).unwrap_or(MIN_IDM_ACCEL)
        })
        .fold(f64::INFINITY, f64::min)
}
