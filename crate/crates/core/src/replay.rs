//! JSON-lines replay logs. Each episode is written as a start line, then
//! per decision the decision itself, its shield corrections, conflict
//! reports and intents, followed by the simulated substep frames, and closed
//! by a summary line. Reading a log rebuilds the exact episode records.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LaneRef;
use crate::intent::IntentTrajectory;
use crate::metrics::{
    CorrectionEntry, DecisionRecord, EpisodeRecord, Frame, TerminalCause, VehicleFrame, VehicleInfo,
};
use crate::safety::ConflictReport;
use crate::vehicle::{HighLevelAction, VehicleId, VehicleKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReplayLine {
    EpisodeStart {
        seed: u64,
        substeps_per_decision: usize,
        vehicles: Vec<VehicleInfo>,
    },
    Frame {
        index: usize,
        t: f64,
        count: usize,
    },
    Vehicle {
        t: f64,
        id: VehicleId,
        kind: VehicleKind,
        x: f64,
        y: f64,
        v: f64,
        theta: f64,
        lane: LaneRef,
    },
    Decision {
        step: usize,
        proposed: Vec<Option<HighLevelAction>>,
        executed: Vec<Option<HighLevelAction>>,
        rewards: Vec<f64>,
        collision: bool,
    },
    Correction {
        step: usize,
        id: VehicleId,
        proposed: HighLevelAction,
        executed: HighLevelAction,
        all_conflicted: bool,
    },
    Conflict {
        step: usize,
        report: ConflictReport,
    },
    Intent {
        step: usize,
        trajectory: IntentTrajectory,
    },
    Summary {
        cause: Option<TerminalCause>,
        frames: usize,
        decisions: usize,
        corrections: usize,
        mean_return: f64,
    },
}

fn frame_lines(index: usize, frame: &Frame, out: &mut Vec<ReplayLine>) {
    out.push(ReplayLine::Frame {
        index,
        t: frame.t,
        count: frame.vehicles.len(),
    });
    for v in &frame.vehicles {
        out.push(ReplayLine::Vehicle {
            t: frame.t,
            id: v.id,
            kind: v.kind,
            x: v.x,
            y: v.y,
            v: v.v,
            theta: v.theta,
            lane: v.lane,
        });
    }
}

/// Lines of one episode in log order.
pub fn episode_lines(record: &EpisodeRecord) -> Vec<ReplayLine> {
    let mut out = vec![ReplayLine::EpisodeStart {
        seed: record.seed,
        substeps_per_decision: record.substeps_per_decision,
        vehicles: record.vehicles.clone(),
    }];
    frame_lines(0, &record.initial, &mut out);
    let per = record.substeps_per_decision.max(1);
    let mut next_frame = 0;
    for (d, dec) in record.decisions.iter().enumerate() {
        out.push(ReplayLine::Decision {
            step: dec.step,
            proposed: dec.proposed.clone(),
            executed: dec.executed.clone(),
            rewards: dec.rewards.clone(),
            collision: dec.collision,
        });
        for f in &dec.fixes {
            out.push(ReplayLine::Correction {
                step: dec.step,
                id: f.id,
                proposed: f.proposed,
                executed: f.executed,
                all_conflicted: f.all_conflicted,
            });
        }
        for r in &dec.reports {
            out.push(ReplayLine::Conflict {
                step: dec.step,
                report: *r,
            });
        }
        for t in &dec.intents {
            out.push(ReplayLine::Intent {
                step: dec.step,
                trajectory: t.clone(),
            });
        }
        let end = if d + 1 == record.decisions.len() {
            record.substeps.len()
        } else {
            ((d + 1) * per).min(record.substeps.len())
        };
        while next_frame < end {
            frame_lines(next_frame + 1, &record.substeps[next_frame], &mut out);
            next_frame += 1;
        }
    }
    while next_frame < record.substeps.len() {
        frame_lines(next_frame + 1, &record.substeps[next_frame], &mut out);
        next_frame += 1;
    }
    out.push(ReplayLine::Summary {
        cause: record.cause,
        frames: record.substeps.len(),
        decisions: record.decisions.len(),
        corrections: record.corrections(),
        mean_return: record.mean_return(),
    });
    out
}

pub fn write_episodes<W: Write>(mut w: W, records: &[EpisodeRecord]) -> Result<()> {
    for r in records {
        for line in episode_lines(r) {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io("<replay>", e))?;
        }
    }
    Ok(())
}

pub fn write_log(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_episodes(&mut w, records)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Episode being rebuilt while reading.
struct Partial {
    record: EpisodeRecord,
    frame: Option<(usize, Frame, usize)>,
    frames_seen: usize,
    correction_lines: usize,
}

impl Partial {
    fn close_frame(&mut self) -> std::result::Result<(), String> {
        if let Some((index, frame, count)) = self.frame.take() {
            if frame.vehicles.len() != count {
                return Err(format!(
                    "frame {index} announced {count} vehicles but {} followed",
                    frame.vehicles.len()
                ));
            }
            if index == 0 {
                self.record.initial = frame;
            } else {
                self.record.substeps.push(frame);
            }
        }
        Ok(())
    }

    fn current_decision(
        &mut self,
        step: usize,
    ) -> std::result::Result<&mut DecisionRecord, String> {
        match self.record.decisions.last_mut() {
            Some(d) if d.step == step => Ok(d),
            _ => Err(format!(
                "line refers to decision {step}, which is not the current decision"
            )),
        }
    }
}

fn apply(
    line: ReplayLine,
    partial: &mut Option<Partial>,
    done: &mut Vec<EpisodeRecord>,
) -> std::result::Result<(), String> {
    if !matches!(line, ReplayLine::Vehicle { .. }) {
        if let Some(p) = partial.as_mut() {
            p.close_frame()?;
        }
    }
    match line {
        ReplayLine::EpisodeStart {
            seed,
            substeps_per_decision,
            vehicles,
        } => {
            if partial.is_some() {
                return Err("episode started before the previous one was summarized".into());
            }
            *partial = Some(Partial {
                record: EpisodeRecord {
                    seed,
                    substeps_per_decision,
                    vehicles,
                    initial: Frame {
                        t: 0.0,
                        vehicles: Vec::new(),
                    },
                    substeps: Vec::new(),
                    decisions: Vec::new(),
                    cause: None,
                },
                frame: None,
                frames_seen: 0,
                correction_lines: 0,
            });
        }
        other => {
            let p = partial.as_mut().ok_or("record outside an episode")?;
            match other {
                ReplayLine::EpisodeStart { .. } => unreachable!("handled above"),
                ReplayLine::Frame { index, t, count } => {
                    if index != p.frames_seen {
                        return Err(format!(
                            "expected frame {}, found frame {index}",
                            p.frames_seen
                        ));
                    }
                    p.frames_seen += 1;
                    p.frame = Some((
                        index,
                        Frame {
                            t,
                            vehicles: Vec::with_capacity(count),
                        },
                        count,
                    ));
                }
                ReplayLine::Vehicle {
                    t,
                    id,
                    kind,
                    x,
                    y,
                    v,
                    theta,
                    lane,
                } => {
                    let (index, frame, count) =
                        p.frame.as_mut().ok_or("vehicle line outside a frame")?;
                    if frame.t != t {
                        return Err(format!(
                            "vehicle time {t} differs from frame {index} time {}",
                            frame.t
                        ));
                    }
                    if frame.vehicles.len() == *count {
                        return Err(format!("frame {index} has more than {count} vehicles"));
                    }
                    frame.vehicles.push(VehicleFrame {
                        id,
                        kind,
                        x,
                        y,
                        v,
                        theta,
                        lane,
                    });
                }
                ReplayLine::Decision {
                    step,
                    proposed,
                    executed,
                    rewards,
                    collision,
                } => {
                    if step != p.record.decisions.len() {
                        return Err(format!(
                            "expected decision {}, found {step}",
                            p.record.decisions.len()
                        ));
                    }
                    p.record.decisions.push(DecisionRecord {
                        step,
                        proposed,
                        executed,
                        corrections: 0,
                        fixes: Vec::new(),
                        rewards,
                        collision,
                        reports: Vec::new(),
                        intents: Vec::new(),
                    });
                }
                ReplayLine::Correction {
                    step,
                    id,
                    proposed,
                    executed,
                    all_conflicted,
                } => {
                    let d = p.current_decision(step)?;
                    d.fixes.push(CorrectionEntry {
                        id,
                        proposed,
                        executed,
                        all_conflicted,
                    });
                    d.corrections += 1;
                    p.correction_lines += 1;
                }
                ReplayLine::Conflict { step, report } => {
                    p.current_decision(step)?.reports.push(report)
                }
                ReplayLine::Intent { step, trajectory } => {
                    p.current_decision(step)?.intents.push(trajectory)
                }
                ReplayLine::Summary {
                    cause,
                    frames,
                    decisions,
                    corrections,
                    ..
                } => {
                    if p.frames_seen == 0 {
                        return Err("episode has no initial frame".into());
                    }
                    if frames != p.record.substeps.len() || decisions != p.record.decisions.len() {
                        return Err(format!(
                            "summary announces {frames} frames and {decisions} decisions, log holds {} and {}",
                            p.record.substeps.len(),
                            p.record.decisions.len()
                        ));
                    }
                    if corrections != p.correction_lines {
                        return Err(format!(
                            "summary announces {corrections} corrections, log holds {}",
                            p.correction_lines
                        ));
                    }
                    let mut finished = partial.take().expect("checked above");
                    finished.record.cause = cause;
                    done.push(finished.record);
                }
            }
        }
    }
    Ok(())
}

pub fn read_episodes<R: BufRead>(reader: R, path: &Path) -> Result<Vec<EpisodeRecord>> {
    let fail = |line: usize, reason: String| Error::Replay {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut done = Vec::new();
    let mut partial = None;
    let mut last = 0;
    for (i, text) in reader.lines().enumerate() {
        let n = i + 1;
        last = n;
        let text = text.map_err(|e| fail(n, e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let line: ReplayLine = serde_json::from_str(&text).map_err(|e| fail(n, e.to_string()))?;
        apply(line, &mut partial, &mut done).map_err(|r| fail(n, r))?;
    }
    if partial.is_some() {
        return Err(fail(
            last + 1,
            "log ends inside an episode (no summary line)".into(),
        ));
    }
    Ok(done)
}

pub fn read_log(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_episodes(BufReader::new(file), path)
}
