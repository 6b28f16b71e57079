//! Episode records and evaluation metrics: collision rate, average speed,
//! post-encroachment time and virtual-coil time mean speed.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LaneRef, RoadLayout};
use crate::intent::IntentTrajectory;
use crate::safety::ConflictReport;
use crate::vehicle::{HighLevelAction, VehicleId, VehicleKind, VehicleState};

/// Time mean speed below which a coil window counts as broken down.
pub const BREAKDOWN_SPEED: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleFrame {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
    pub lane: LaneRef,
}

impl VehicleFrame {
    pub fn of(state: &VehicleState) -> Self {
        Self {
            id: state.id,
            kind: state.kind,
            x: state.x,
            y: state.y,
            v: state.speed,
            theta: state.heading,
            lane: state.lane,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub vehicles: Vec<VehicleFrame>,
}

/// Static per-vehicle data of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleInfo {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub length: f64,
    pub width: f64,
}

/// A shield intervention on one CAV. `executed` may equal `proposed` when
/// the original action was still the best available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEntry {
    pub id: VehicleId,
    pub proposed: HighLevelAction,
    pub executed: HighLevelAction,
    pub all_conflicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step: usize,
    /// Indexed by agent slot; `None` for agents no longer on the road.
    pub proposed: Vec<Option<HighLevelAction>>,
    pub executed: Vec<Option<HighLevelAction>>,
    pub corrections: usize,
    pub fixes: Vec<CorrectionEntry>,
    pub rewards: Vec<f64>,
    pub collision: bool,
    pub reports: Vec<ConflictReport>,
    /// Final intents after shielding; empty when the shield is off.
    pub intents: Vec<IntentTrajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCause {
    Collision,
    AllExited,
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub substeps_per_decision: usize,
    pub vehicles: Vec<VehicleInfo>,
    pub initial: Frame,
    /// One frame after every simulated substep.
    pub substeps: Vec<Frame>,
    pub decisions: Vec<DecisionRecord>,
    pub cause: Option<TerminalCause>,
}

impl EpisodeRecord {
    pub fn info(&self, id: VehicleId) -> Option<&VehicleInfo> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn total_reward(&self) -> f64 {
        self.decisions.iter().flat_map(|d| d.rewards.iter()).sum()
    }

    /// Total reward divided by the number of agents.
    pub fn mean_return(&self) -> f64 {
        let n = self.decisions.first().map_or(0, |d| d.rewards.len());
        if n == 0 {
            0.0
        } else {
            self.total_reward() / n as f64
        }
    }

    pub fn corrections(&self) -> usize {
        self.decisions.iter().map(|d| d.corrections).sum()
    }

    pub fn collided(&self) -> bool {
        self.decisions.iter().any(|d| d.collision)
    }
}

fn nonempty(records: &[EpisodeRecord], what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{what} needs at least one episode"
        )));
    }
    Ok(())
}

/// Decision steps with a collision over all decision steps.
pub fn collision_rate(records: &[EpisodeRecord]) -> Result<f64> {
    nonempty(records, "collision rate")?;
    let total: usize = records.iter().map(|r| r.decisions.len()).sum();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "collision rate over zero decision steps".into(),
        ));
    }
    let hits = records
        .iter()
        .flat_map(|r| &r.decisions)
        .filter(|d| d.collision)
        .count();
    Ok(hits as f64 / total as f64)
}

/// Mean CAV speed over every recorded substep.
pub fn average_speed(records: &[EpisodeRecord]) -> Result<f64> {
    nonempty(records, "average speed")?;
    let (mut sum, mut n) = (0.0, 0usize);
    for v in records
        .iter()
        .flat_map(|r| &r.substeps)
        .flat_map(|f| &f.vehicles)
        .filter(|v| v.kind == VehicleKind::Cav)
    {
        sum += v.v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no CAV substeps recorded".into()));
    }
    Ok(sum / n as f64)
}

/// Longitudinal extent of the conflict zone, spanning all lanes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictZone {
    pub x_min: f64,
    pub x_max: f64,
}

impl ConflictZone {
    /// Merge end plus or minus `half_width`.
    pub fn around_merge_end(layout: &RoadLayout, half_width: f64) -> Self {
        let c = layout.merge_end();
        Self {
            x_min: c - half_width,
            x_max: c + half_width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Traversal {
    pub id: VehicleId,
    pub entry: f64,
    pub exit: f64,
}

fn crossing_time(t0: f64, x0: f64, t1: f64, x1: f64, at: f64) -> f64 {
    if x1 == x0 {
        t1
    } else {
        t0 + (t1 - t0) * (at - x0) / (x1 - x0)
    }
}

/// Complete zone traversals (center crossing both boundaries), ordered by
/// entry time. Static obstacles are not traffic and are skipped.
pub fn zone_traversals(record: &EpisodeRecord, zone: &ConflictZone) -> Vec<Traversal> {
    let frames: Vec<&Frame> = std::iter::once(&record.initial)
        .chain(&record.substeps)
        .collect();
    let mut out = Vec::new();
    for info in record
        .vehicles
        .iter()
        .filter(|v| v.kind != VehicleKind::Obstacle)
    {
        let track: Vec<(f64, f64)> = frames
            .iter()
            .filter_map(|f| {
                f.vehicles
                    .iter()
                    .find(|v| v.id == info.id)
                    .map(|v| (f.t, v.x))
            })
            .collect();
        let (mut entry, mut exit) = (None, None);
        for w in track.windows(2) {
            let ((t0, x0), (t1, x1)) = (w[0], w[1]);
            if entry.is_none() && x0 < zone.x_min && x1 >= zone.x_min {
                entry = Some(crossing_time(t0, x0, t1, x1, zone.x_min));
            }
            if entry.is_some() && exit.is_none() && x0 <= zone.x_max && x1 > zone.x_max {
                exit = Some(crossing_time(t0, x0, t1, x1, zone.x_max));
            }
        }
        if let (Some(entry), Some(exit)) = (entry, exit) {
            out.push(Traversal {
                id: info.id,
                entry,
                exit,
            });
        }
    }
    out.sort_by(|a, b| a.entry.total_cmp(&b.entry).then(a.id.cmp(&b.id)));
    out
}

/// Post-encroachment times between consecutive zone traversals; negative
/// values (overlapping occupancy) are dropped.
pub fn pet(records: &[EpisodeRecord], zone: &ConflictZone) -> Vec<f64> {
    records
        .iter()
        .flat_map(|r| {
            zone_traversals(r, zone)
                .windows(2)
                .map(|w| w[1].entry - w[0].exit)
                .filter(|p| *p >= 0.0)
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmsGrid {
    pub coils: Vec<f64>,
    /// Window length in decision steps.
    pub window: usize,
    /// `cells[coil][window]`; `None` when nothing crossed.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl TmsGrid {
    pub fn breakdowns(&self) -> Vec<Vec<bool>> {
        self.cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| c.is_some_and(|v| v < BREAKDOWN_SPEED))
                    .collect()
            })
            .collect()
    }

    pub fn breakdown_count(&self) -> usize {
        self.breakdowns().iter().flatten().filter(|b| **b).count()
    }
}

/// Coil crossing of one vehicle: the front bumper passes the coil between
/// two consecutive frames. Speed is taken at the later frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoilCrossing {
    pub coil: usize,
    pub id: VehicleId,
    /// Decision step during which the crossing happened.
    pub step: usize,
    pub speed: f64,
}

pub fn coil_crossings(record: &EpisodeRecord, coils: &[f64]) -> Vec<CoilCrossing> {
    let spd = record.substeps_per_decision.max(1);
    let mut out = Vec::new();
    let mut prev = &record.initial;
    for (i, frame) in record.substeps.iter().enumerate() {
        for v in frame
            .vehicles
            .iter()
            .filter(|v| v.kind != VehicleKind::Obstacle)
        {
            let Some(before) = prev.vehicles.iter().find(|p| p.id == v.id) else {
                continue;
            };
            let half = record.info(v.id).map_or(0.0, |i| i.length / 2.0);
            let (f0, f1) = (before.x + half, v.x + half);
            for (c, &pos) in coils.iter().enumerate() {
                if f0 < pos && f1 >= pos {
                    out.push(CoilCrossing {
                        coil: c,
                        id: v.id,
                        step: i / spd,
                        speed: v.v,
                    });
                }
            }
        }
        prev = frame;
    }
    out
}

/// Time mean speed per coil and window of `window` decision steps, pooled
/// over all records (episodes share the same time axis).
pub fn coil_tms(records: &[EpisodeRecord], layout: &RoadLayout, window: usize) -> Result<TmsGrid> {
    if window == 0 {
        return Err(Error::InvalidArgument("TMS window must be positive".into()));
    }
    let coils = layout.coil_positions().to_vec();
    let steps = records.iter().map(|r| r.decisions.len()).max().unwrap_or(0);
    let windows = steps.div_ceil(window);
    let mut sums = vec![vec![(0.0, 0usize); windows]; coils.len()];
    for r in records {
        for c in coil_crossings(r, &coils) {
            let w = (c.step / window).min(windows.saturating_sub(1));
            if let Some(cell) = sums[c.coil].get_mut(w) {
                cell.0 += c.speed;
                cell.1 += 1;
            }
        }
    }
    let cells = sums
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(s, n)| (n > 0).then(|| s / n as f64))
                .collect()
        })
        .collect();
    Ok(TmsGrid {
        coils,
        window,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub episodes: usize,
    pub collision_rate: f64,
    pub average_speed: f64,
    pub mean_reward: f64,
    pub mean_pet: Option<f64>,
    pub pet_count: usize,
    pub breakdowns: usize,
    pub corrections: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub pet_half_width: f64,
    pub tms_window: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            pet_half_width: 10.0,
            tms_window: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationMetrics {
    pub summary: MetricsSummary,
    pub pet: Vec<f64>,
    pub tms: TmsGrid,
    /// (seed, total reward, corrections, collided) per episode.
    pub episodes: Vec<(u64, f64, usize, bool)>,
}

pub fn evaluate_records(
    records: &[EpisodeRecord],
    layout: &RoadLayout,
    config: &MetricsConfig,
) -> Result<EvaluationMetrics> {
    let zone = ConflictZone::around_merge_end(layout, config.pet_half_width);
    let pets = pet(records, &zone);
    let tms = coil_tms(records, layout, config.tms_window)?;
    let summary = MetricsSummary {
        episodes: records.len(),
        collision_rate: collision_rate(records)?,
        average_speed: average_speed(records)?,
        mean_reward: records.iter().map(|r| r.mean_return()).sum::<f64>() / records.len() as f64,
        mean_pet: (!pets.is_empty()).then(|| pets.iter().sum::<f64>() / pets.len() as f64),
        pet_count: pets.len(),
        breakdowns: tms.breakdown_count(),
        corrections: records.iter().map(|r| r.corrections()).sum(),
    };
    let episodes = records
        .iter()
        .map(|r| (r.seed, r.mean_return(), r.corrections(), r.collided()))
        .collect();
    Ok(EvaluationMetrics {
        summary,
        pet: pets,
        tms,
        episodes,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes summary.csv, episodes.csv, pet.csv and tms.csv into `dir`.
pub fn write_metrics_csv(metrics: &EvaluationMetrics, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = &metrics.summary;
    let mut w = csv_writer(&dir.join("summary.csv"))?;
    w.write_record([
        "episodes",
        "collision_rate",
        "average_speed",
        "mean_reward",
        "mean_pet",
        "pet_count",
        "breakdowns",
        "corrections",
    ])?;
    w.write_record([
        s.episodes.to_string(),
        s.collision_rate.to_string(),
        s.average_speed.to_string(),
        s.mean_reward.to_string(),
        opt(s.mean_pet),
        s.pet_count.to_string(),
        s.breakdowns.to_string(),
        s.corrections.to_string(),
    ])?;
    w.flush()
        .map_err(|e| Error::io(dir.join("summary.csv"), e))?;

    let mut w = csv_writer(&dir.join("episodes.csv"))?;
    w.write_record(["seed", "mean_return", "corrections", "collision"])?;
    for (seed, reward, corr, col) in &metrics.episodes {
        w.write_record([
            seed.to_string(),
            reward.to_string(),
            corr.to_string(),
            col.to_string(),
        ])?;
    }
    w.flush()
        .map_err(|e| Error::io(dir.join("episodes.csv"), e))?;

    let mut w = csv_writer(&dir.join("pet.csv"))?;
    w.write_record(["pet"])?;
    for p in &metrics.pet {
        w.write_record([p.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("pet.csv"), e))?;

    let path = dir.join("tms.csv");
    let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let windows = metrics.tms.cells.first().map_or(0, |r| r.len());
    let header: Vec<String> = std::iter::once("coil".to_string())
        .chain((0..windows).map(|w| format!("w{w}")))
        .collect();
    let mut text = header.join(",") + "\n";
    for (pos, row) in metrics.tms.coils.iter().zip(&metrics.tms.cells) {
        let cells: Vec<String> = row.iter().map(|c| opt(*c)).collect();
        text += &format!("{pos},{}\n", cells.join(","));
    }
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    Ok(())
}
