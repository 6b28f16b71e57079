//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status if any criterion fails.
//!
//! `MERGESIM_ACCEPTANCE=1,3,8` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use mergesim::commands::{cmd_eval, test_seeds};
use mergesim::env::{
    headway_reward, reward, speed_reward, EnvConfig, MergingEnv, RewardConfig, TrafficLevel,
    TrafficMode,
};
use mergesim::intent::{generate_intent, predict_hv, IntentTrajectory, RolloutContext};
use mergesim::mappo::{
    clip_loss, clip_loss_grad, gae, run_episodes, train, value_loss, value_loss_grad, ActorCritic,
    Checkpoint, CurvePoint, TrainConfig,
};
use mergesim::metrics::{
    coil_tms, collision_rate, pet, ConflictZone, DecisionRecord, EpisodeRecord, Frame,
    VehicleFrame, VehicleInfo,
};
use mergesim::safety::{
    correct_intention, priority_score, run_sem, NoiseKey, Prediction, SemConfig, SemContext,
    TIE_BREAK_ORDER,
};
use mergesim::vehicle::{available_actions, execute_action, DynamicsConfig};
use mergesim::{
    DrivingStyle, HighLevelAction, LaneRef, RoadLayout, RunConfig, VehicleId, VehicleKind,
    VehicleState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCENES: u64 = 1000;
const SEM_RUNTIME_LIMIT_S: f64 = 60.0;
const REWARD_TOL: f64 = 1e-12;
const GAE_TOL: f64 = 1e-8;
const GRAD_REL_TOL: f64 = 1e-4;
const TRAIN_SEEDS: [u64; 3] = [0, 1000, 2024];
const EASY_STEPS: usize = 100_000;
const FINAL_EVAL_EPISODES: usize = 30;
const HARD_STEPS: usize = 30_000;
const HARD_EVAL_INTERVAL: usize = 25;
const HARD_REWARD_THRESHOLD: f64 = 40.0;
const INTENT_TOL: f64 = 1e-9;
const PET_TOL: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// Random scenes for the shield criteria

fn random_scene(seed: u64) -> (Vec<VehicleState>, BTreeMap<VehicleId, HighLevelAction>) {
    let layout = RoadLayout::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cavs = rng.random_range(1..=6usize);
    let hvs = rng.random_range(0..=6usize);
    let mut vs: Vec<VehicleState> = Vec::new();
    let mut proposed = BTreeMap::new();
    let mut id = 0u32;
    for n in 0..cavs + hvs {
        let kind = if n < cavs {
            VehicleKind::Cav
        } else {
            VehicleKind::Hv
        };
        for _ in 0..200 {
            let side = rng.random_bool(0.5);
            let (x, lane) = if side {
                let x = rng.random_range(100.0..412.0);
                (x, layout.side_lane_at(x))
            } else {
                (rng.random_range(0.0..480.0), LaneRef::THROUGH)
            };
            if vs
                .iter()
                .any(|o| o.lane.same_group(lane) && (o.x - x).abs() < 8.0)
            {
                continue;
            }
            let v = rng.random_range(10.0..30.0);
            let mut s =
                VehicleState::new(VehicleId(id), kind, x, layout.lane_center_y(lane), v, lane);
            if kind == VehicleKind::Hv {
                s = s.with_style(DrivingStyle::ALL[rng.random_range(0..3)]);
            } else {
                proposed.insert(s.id, HighLevelAction::ALL[rng.random_range(0..5)]);
            }
            vs.push(s);
            id += 1;
            break;
        }
    }
    vs.push(VehicleState::new(
        VehicleId(id),
        VehicleKind::Obstacle,
        layout.merge_end_obstacle_x(),
        layout.lane_center_y(LaneRef::MERGE),
        0.0,
        LaneRef::MERGE,
    ));
    (vs, proposed)
}

struct Fixture {
    layout: RoadLayout,
    dynamics: DynamicsConfig,
    styles: mergesim::behavior::StyleTable,
    sem: SemConfig,
}

impl Fixture {
    fn new() -> Self {
        let env = EnvConfig::default();
        Self {
            layout: RoadLayout::default(),
            dynamics: env.dynamics,
            styles: env.styles,
            sem: env.sem,
        }
    }

    fn rollout(&self) -> RolloutContext<'_> {
        RolloutContext {
            layout: &self.layout,
            dynamics: &self.dynamics,
            styles: &self.styles,
            horizon: EnvConfig::default().intent_horizon,
        }
    }
}

// ---------------------------------------------------------------------------
// Independent overlap test: corner containment plus edge intersection on the
// rectangle polygons.

type Pt = (f64, f64);

fn corners(cx: f64, cy: f64, length: f64, width: f64, theta: f64, margin: f64) -> [Pt; 4] {
    let (hl, hw) = (length / 2.0 + margin, width / 2.0 + margin);
    let (s, c) = theta.sin_cos();
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
        .map(|(a, b)| (cx + a * c - b * s, cy + a * s + b * c))
}

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn inside(p: Pt, poly: &[Pt; 4]) -> bool {
    (0..4).all(|i| cross(poly[i], poly[(i + 1) % 4], p) >= 0.0)
}

fn segments_meet(a: Pt, b: Pt, c: Pt, d: Pt) -> bool {
    let (d1, d2) = (cross(c, d, a), cross(c, d, b));
    let (d3, d4) = (cross(a, b, c), cross(a, b, d));
    if d1 == 0.0 && d2 == 0.0 {
        // collinear: the segments meet only if their extents overlap
        let span = |p: Pt, q: Pt| {
            if (p.0 - q.0).abs() >= (p.1 - q.1).abs() {
                (p.0.min(q.0), p.0.max(q.0), 0)
            } else {
                (p.1.min(q.1), p.1.max(q.1), 1)
            }
        };
        let (lo, hi, axis) = span(a, b);
        let coord = |p: Pt| if axis == 0 { p.0 } else { p.1 };
        let (clo, chi) = (coord(c).min(coord(d)), coord(c).max(coord(d)));
        return clo <= hi && lo <= chi;
    }
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

fn polygons_overlap(p: &[Pt; 4], q: &[Pt; 4]) -> bool {
    p.iter().any(|&a| inside(a, q))
        || q.iter().any(|&a| inside(a, p))
        || (0..4).any(|i| (0..4).any(|j| segments_meet(p[i], p[(i + 1) % 4], q[j], q[(j + 1) % 4])))
}

struct Track<'a> {
    state: &'a VehicleState,
    traj: &'a IntentTrajectory,
}

impl Track<'_> {
    fn pose(&self, k: usize, frac: f64) -> (f64, f64, f64) {
        let (px, py, pt) = if k == 0 {
            (self.state.x, self.state.y, self.state.heading)
        } else {
            let s = &self.traj.samples[k - 1];
            (s.x, s.y, s.theta)
        };
        let n = &self.traj.samples[k];
        (
            px + (n.x - px) * frac,
            py + (n.y - py) * frac,
            pt + (n.theta - pt) * frac,
        )
    }
}

fn oracle_conflict(a: &Track<'_>, b: &Track<'_>, margin: f64) -> bool {
    for k in 0..a.traj.samples.len() {
        for j in 1..=10 {
            let f = j as f64 / 10.0;
            let (pa, pb) = (a.pose(k, f), b.pose(k, f));
            let ra = corners(pa.0, pa.1, a.state.length, a.state.width, pa.2, margin);
            let rb = corners(pb.0, pb.1, b.state.length, b.state.width, pb.2, margin);
            if polygons_overlap(&ra, &rb) {
                return true;
            }
        }
    }
    false
}

/// Brute-force correction: every available action, every prediction step.
fn oracle_correction(
    ego: &VehicleState,
    others: &[(&VehicleState, IntentTrajectory)],
    fx: &Fixture,
) -> (HighLevelAction, bool) {
    let ctx = fx.rollout();
    let mut rows = Vec::new();
    for action in available_actions(ego, &fx.layout) {
        let target = execute_action(ego, action, &fx.layout, &fx.dynamics);
        let intent = generate_intent(ego, action, &ctx, 0);
        let me = Track {
            state: ego,
            traj: &intent,
        };
        let free = others.iter().all(|(s, t)| {
            !oracle_conflict(&me, &Track { state: s, traj: t }, fx.sem.conflict_margin)
        });
        let lanes: Vec<(LaneRef, bool)> = if target.effective.is_lane_change() {
            vec![(ego.lane, true), (target.lane, true), (target.lane, false)]
        } else {
            vec![(ego.lane, true)]
        };
        let mut refs = Vec::new();
        for (lane, ahead) in lanes {
            let mut best: Option<usize> = None;
            for (i, (s, _)) in others.iter().enumerate() {
                if s.lane.is_side() != lane.is_side() || (s.x >= ego.x) != ahead {
                    continue;
                }
                if best.is_none_or(|b| (s.x - ego.x).abs() < (others[b].0.x - ego.x).abs()) {
                    best = Some(i);
                }
            }
            refs.extend(best);
        }
        let mut margin = f64::INFINITY;
        for k in 0..intent.samples.len() {
            for &r in &refs {
                let dx = others[r].1.samples[k].x - intent.samples[k].x;
                let m = if target.effective.is_lane_change() {
                    dx.abs()
                } else {
                    dx
                };
                margin = margin.min(m);
            }
        }
        let rank = TIE_BREAK_ORDER.iter().position(|a| *a == action).unwrap();
        rows.push((action, margin, free, rank));
    }
    let any_free = rows.iter().any(|r| r.2);
    let mut pool: Vec<_> = rows.into_iter().filter(|r| r.2 || !any_free).collect();
    pool.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.3.cmp(&b.3)));
    (pool[0].0, !any_free)
}

/// Neighbor predictions an ego sees before any correction.
fn initial_neighbors<'a>(
    vs: &'a [VehicleState],
    proposed: &BTreeMap<VehicleId, HighLevelAction>,
    ego: &VehicleState,
    fx: &Fixture,
) -> Vec<(&'a VehicleState, IntentTrajectory)> {
    let ctx = fx.rollout();
    vs.iter()
        .filter(|o| o.id != ego.id)
        .filter_map(|o| {
            if o.is_cav() {
                Some((o, generate_intent(o, proposed[&o.id], &ctx, 0)))
            } else if (o.x - ego.x).abs() <= fx.sem.perception_range {
                Some((o, predict_hv(o, vs, &ctx, 0)))
            } else {
                None
            }
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let fx = Fixture::new();
    let start = Instant::now();
    let (mut checked, mut mismatches, mut flagged_cases) = (0, 0, 0);
    for seed in 0..SCENES {
        let (vs, proposed) = random_scene(seed);
        for ego in vs.iter().filter(|v| v.is_cav()) {
            let others = initial_neighbors(&vs, &proposed, ego, &fx);
            let preds: Vec<Prediction> = others
                .iter()
                .map(|(s, t)| Prediction::new(s, t.clone()))
                .collect();
            let got = correct_intention(ego, &preds, &fx.rollout(), fx.sem.conflict_margin, 0);
            let (want, all_conflicted) = oracle_correction(ego, &others, &fx);
            checked += 1;
            flagged_cases += usize::from(all_conflicted);
            if got.action != want || got.all_conflicted != all_conflicted {
                mismatches += 1;
                if mismatches <= 3 {
                    eprintln!(
                        "  scene {seed} ego {:?}: shield {:?}, oracle {want:?}",
                        ego.id, got.action
                    );
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < SEM_RUNTIME_LIMIT_S,
        format!(
            "{checked} corrections over {SCENES} scenes, {mismatches} disagreements, {flagged_cases} all-conflicted, {secs:.1} s"
        ),
    )
}

fn criterion_2() -> Outcome {
    let fx = Fixture::new();
    let (mut unflagged, mut flagged_violations, mut flagged_scenes, mut corrected) = (0, 0, 0, 0);
    for seed in 0..SCENES {
        let (vs, proposed) = random_scene(seed);
        let ctx = SemContext {
            rollout: fx.rollout(),
            config: &fx.sem,
            headway_threshold: RewardConfig::default().headway_threshold,
            share_intents: true,
        };
        let out = run_sem(&vs, &proposed, &ctx, NoiseKey { seed, step: 0 });
        let flagged = out.flagged();
        flagged_scenes += usize::from(flagged);
        corrected += out.corrections();
        let by_id: BTreeMap<VehicleId, &VehicleState> = vs.iter().map(|v| (v.id, v)).collect();
        let cavs: Vec<&VehicleState> = vs.iter().filter(|v| v.is_cav()).collect();
        let mut violations = 0;
        for (i, a) in cavs.iter().enumerate() {
            let ta = Track {
                state: a,
                traj: &out.intents[&a.id],
            };
            for b in &cavs[i + 1..] {
                if oracle_conflict(
                    &ta,
                    &Track {
                        state: b,
                        traj: &out.intents[&b.id],
                    },
                    fx.sem.conflict_margin,
                ) {
                    violations += 1;
                }
            }
        }
        for check in &out.checks {
            let ego = by_id[&check.ego];
            let te = Track {
                state: ego,
                traj: &out.intents[&ego.id],
            };
            for hv in &check.predicted_neighbors {
                let th = Track {
                    state: by_id[hv],
                    traj: &out.predictions[hv],
                };
                if oracle_conflict(&te, &th, fx.sem.conflict_margin) {
                    violations += 1;
                }
            }
        }
        if flagged {
            flagged_violations += violations;
        } else {
            unflagged += violations;
            if violations > 0 {
                eprintln!("  scene {seed}: {violations} violations without a flag");
            }
        }
    }
    outcome(
        unflagged == 0,
        format!(
            "{unflagged} unflagged violations; {flagged_scenes} flagged scenes holding {flagged_violations} violations; {corrected} corrections"
        ),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= REWARD_TOL
}

fn criterion_3() -> Outcome {
    let cfg = RewardConfig::default();
    let layout = RoadLayout::default();
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if !close(got, want) {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    };
    check("r_s(20)", speed_reward(20.0, &cfg), 0.5);
    check(
        "r_h(1.2 v)",
        headway_reward(Some(1.2 * 20.0), 20.0, &cfg),
        0.0,
    );

    // ramp agent at 300 m (progress 200), leader 30 m ahead, in a collision
    let v = 18.0;
    let agent = VehicleState::new(
        VehicleId(0),
        VehicleKind::Cav,
        300.0,
        -4.0,
        v,
        LaneRef::RAMP,
    );
    let leader = VehicleState::new(
        VehicleId(1),
        VehicleKind::Hv,
        330.0,
        -4.0,
        20.0,
        layout.side_lane_at(330.0),
    );
    let b = reward(&agent, &[agent.clone(), leader], true, &layout, &cfg);
    check("r_c(collision)", b.collision, -1.0);
    let r_s = (v - 10.0) / 20.0;
    let r_h = (30.0f64 / (1.2 * v)).ln();
    let r_m = -(-(200.0f64 - 320.0).powi(2) / 3200.0).exp();
    check("r_s", b.speed, r_s);
    check("r_h", b.headway, r_h);
    check("r_m", b.merge, r_m);
    check(
        "weighted total",
        b.total,
        -200.0 + r_s + 4.0 * r_h + 4.0 * r_m,
    );

    let sem = SemConfig::default();
    let speed = 22.0;
    let at_end = VehicleState::new(
        VehicleId(2),
        VehicleKind::Cav,
        layout.merge_end(),
        -4.0,
        speed,
        LaneRef::MERGE,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = priority_score(&at_end, 1.2 * speed, &layout, &sem, 1.2, &mut rng);
    check("priority before noise", p.score - p.noise, 1.5);
    check("priority noiseless", p.noiseless_score(), 1.5);
    let pass = failures.is_empty();
    let detail = if pass {
        format!(
            "r_s 0.5, r_h 0, r_c -1, composite and priority 1.5 + sigma (sigma = {:.2e})",
            p.noise
        )
    } else {
        failures.join("; ")
    };
    outcome(pass, detail)
}

fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
    (0..r.len())
        .map(|t| {
            let mut total = 0.0;
            for k in t..r.len() {
                let next = if d[k] {
                    0.0
                } else if k + 1 < r.len() {
                    v[k + 1]
                } else {
                    last
                };
                total += (g * l).powi((k - t) as i32) * (r[k] + g * next - v[k]);
                if d[k] {
                    break;
                }
            }
            total
        })
        .collect()
}

fn central(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let h = 1e-6;
    let (mut a, mut b) = (x.to_vec(), x.to_vec());
    a[i] += h;
    b[i] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}

fn rel_ok(num: f64, ana: f64) -> bool {
    (num - ana).abs() <= GRAD_REL_TOL * num.abs().max(ana.abs()) || (num - ana).abs() < 1e-9
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_gae: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(1..=50);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let last = rng.random_range(-5.0..5.0);
        let got = gae(&r, &v, &d, last, 0.99, 0.95).unwrap();
        for (a, b) in got.iter().zip(gae_oracle(&r, &v, &d, last, 0.99, 0.95)) {
            worst_gae = worst_gae.max((a - b).abs());
        }
    }
    let mut grad_failures = 0;
    let mut grads = 0;
    for _ in 0..500 {
        let n = rng.random_range(1..=8);
        let old: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0)).collect();
        let new: Vec<f64> = old
            .iter()
            .map(|o| {
                let mut d: f64 = rng.random_range(-0.4..0.4);
                // stay off the clip kinks, where the loss has no derivative
                if ((d.exp() - 1.2).abs() < 1e-3) || ((d.exp() - 0.8).abs() < 1e-3) {
                    d = 0.0;
                }
                o + d
            })
            .collect();
        let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = clip_loss_grad(&new, &old, &adv, 0.2);
        let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let rets: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let gv = value_loss_grad(&vals, &rets);
        for i in 0..n {
            grads += 2;
            if !rel_ok(central(|x| clip_loss(x, &old, &adv, 0.2), &new, i), g[i]) {
                grad_failures += 1;
            }
            if !rel_ok(central(|x| value_loss(x, &rets), &vals, i), gv[i]) {
                grad_failures += 1;
            }
        }
    }
    outcome(
        worst_gae <= GAE_TOL && grad_failures == 0,
        format!("gae max error {worst_gae:.2e} over 500 sequences; {grad_failures} of {grads} gradient entries off"),
    )
}

// ---------------------------------------------------------------------------
// Training experiments shared by criteria 5 to 7

struct Arm {
    model: ActorCritic,
    reward: f64,
    collisions: f64,
}

struct EasyRuns {
    pis: Vec<Arm>,
    plain: Vec<Arm>,
}

fn easy_env(sem: bool) -> EnvConfig {
    EnvConfig {
        sem_enabled: sem,
        ..EnvConfig::default()
    }
}

fn easy_runs() -> &'static EasyRuns {
    static RUNS: OnceLock<EasyRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = TrainConfig {
            total_steps: EASY_STEPS,
            ..TrainConfig::default()
        };
        let jobs: Vec<(bool, u64)> = [true, false]
            .into_iter()
            .flat_map(|sem| TRAIN_SEEDS.map(|s| (sem, s)))
            .collect();
        let arms: Vec<(bool, Arm)> = std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|&(sem, seed)| {
                    let cfg = &cfg;
                    scope.spawn(move || {
                        let env = easy_env(sem);
                        let started = Instant::now();
                        let out = train(cfg, &env, TrafficMode::default(), seed, None, |_| {}).unwrap();
                        let recs = run_episodes(
                            &out.model,
                            &env,
                            TrafficMode::default(),
                            &test_seeds(seed, FINAL_EVAL_EPISODES),
                        )
                        .unwrap();
                        let reward = recs.iter().map(|r| r.mean_return()).sum::<f64>() / recs.len() as f64;
                        let collisions = collision_rate(&recs).unwrap();
                        eprintln!(
                            "  easy {} seed {seed}: {} steps in {:.0} s, eval reward {reward:.2}, collision rate {collisions:.4}",
                            if sem { "shielded" } else { "plain" },
                            out.steps,
                            started.elapsed().as_secs_f64()
                        );
                        (
                            sem,
                            Arm {
                                model: out.model,
                                reward,
                                collisions,
                            },
                        )
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut pis = Vec::new();
        let mut plain = Vec::new();
        for (sem, arm) in arms {
            if sem {
                pis.push(arm);
            } else {
                plain.push(arm);
            }
        }
        EasyRuns { pis, plain }
    })
}

fn criterion_5() -> Outcome {
    let runs = easy_runs();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let ckpt = dir.path().join("pis.json");
    Checkpoint::new(
        &runs.pis[0].model,
        cfg.mode,
        TRAIN_SEEDS[0],
        EASY_STEPS,
        cfg.hash(),
    )
    .save(&ckpt)
    .unwrap();
    let a = cmd_eval(&cfg, &ckpt, 0, FINAL_EVAL_EPISODES, dir.path(), Some("a")).unwrap();
    let b = cmd_eval(&cfg, &ckpt, 0, FINAL_EVAL_EPISODES, dir.path(), Some("b")).unwrap();
    let files = [
        "metrics/summary.csv",
        "metrics/episodes.csv",
        "metrics/pet.csv",
        "metrics/tms.csv",
        "replays/episodes.jsonl",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.dir.join(f)).unwrap() != std::fs::read(b.dir.join(f)).unwrap())
        .collect();
    let bytes = std::fs::metadata(a.dir.join("replays/episodes.jsonl"))
        .unwrap()
        .len();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} files byte-identical across two runs (replay log {bytes} bytes)",
                files.len()
            )
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn criterion_6() -> Outcome {
    let runs = easy_runs();
    let mut fewer_collisions = 0;
    let mut more_reward = 0;
    let mut rows = Vec::new();
    for ((seed, p), q) in TRAIN_SEEDS.iter().zip(&runs.pis).zip(&runs.plain) {
        fewer_collisions += usize::from(p.collisions <= q.collisions);
        more_reward += usize::from(p.reward >= q.reward);
        rows.push(format!(
            "seed {seed}: collisions {:.4}/{:.4} reward {:.1}/{:.1}",
            p.collisions, q.collisions, p.reward, q.reward
        ));
    }
    outcome(
        fewer_collisions >= 2 && more_reward >= 2,
        format!(
            "(a) {fewer_collisions}/3 (b) {more_reward}/3 seeds, shielded/plain: {}",
            rows.join("; ")
        ),
    )
}

fn steps_to(curve: &[CurvePoint], threshold: f64) -> Option<usize> {
    curve
        .iter()
        .find(|p| p.mean_reward >= threshold)
        .map(|p| p.step)
}

fn criterion_7() -> Outcome {
    let runs = easy_runs();
    let hard = TrafficMode {
        level: TrafficLevel::Hard,
        heterogeneous: false,
    };
    let cfg = TrainConfig {
        total_steps: HARD_STEPS,
        eval_interval_episodes: HARD_EVAL_INTERVAL,
        ..TrainConfig::default()
    };
    let env = EnvConfig::default();
    let results: Vec<(u64, Option<usize>, Option<usize>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = TRAIN_SEEDS
            .iter()
            .zip(&runs.pis)
            .map(|(&seed, easy)| {
                let (cfg, env) = (&cfg, &env);
                scope.spawn(move || {
                    let warm =
                        train(cfg, env, hard, seed, Some(easy.model.clone()), |_| {}).unwrap();
                    let cold = train(cfg, env, hard, seed, None, |_| {}).unwrap();
                    let show = |c: &[CurvePoint]| {
                        c.iter()
                            .map(|p| format!("{}:{:.0}", p.step, p.mean_reward))
                            .collect::<Vec<_>>()
                            .join(" ")
                    };
                    eprintln!("  hard seed {seed} curriculum: {}", show(&warm.curve));
                    eprintln!("  hard seed {seed} fresh:      {}", show(&cold.curve));
                    (
                        seed,
                        steps_to(&warm.curve, HARD_REWARD_THRESHOLD),
                        steps_to(&cold.curve, HARD_REWARD_THRESHOLD),
                    )
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let fmt = |s: Option<usize>| s.map_or_else(|| "never".to_string(), |v| v.to_string());
    let faster = results
        .iter()
        .filter(|(_, w, c)| match (w, c) {
            (Some(w), Some(c)) => w < c,
            (Some(_), None) => true,
            _ => false,
        })
        .count();
    let rows: Vec<String> = results
        .iter()
        .map(|(s, w, c)| format!("seed {s}: {} vs {}", fmt(*w), fmt(*c)))
        .collect();
    outcome(
        faster >= 2,
        format!(
            "{faster}/3 seeds reach reward {HARD_REWARD_THRESHOLD} sooner from the easy checkpoint (steps, curriculum vs fresh): {}",
            rows.join("; ")
        ),
    )
}

// ---------------------------------------------------------------------------
// Hand-built trajectories for the metric criteria

fn constant_speed_record(starts: &[(u32, f64, f64)], n: usize, dt: f64) -> EpisodeRecord {
    let frame = |i: usize| Frame {
        t: i as f64 * dt,
        vehicles: starts
            .iter()
            .map(|&(id, x0, v)| VehicleFrame {
                id: VehicleId(id),
                kind: VehicleKind::Cav,
                x: x0 + v * i as f64 * dt,
                y: 0.0,
                v,
                theta: 0.0,
                lane: LaneRef::THROUGH,
            })
            .collect(),
    };
    EpisodeRecord {
        seed: 0,
        substeps_per_decision: 10,
        vehicles: starts
            .iter()
            .map(|s| VehicleInfo {
                id: VehicleId(s.0),
                kind: VehicleKind::Cav,
                length: 5.0,
                width: 2.0,
            })
            .collect(),
        initial: frame(0),
        substeps: (1..=n).map(frame).collect(),
        decisions: (0..n.div_ceil(10))
            .map(|step| DecisionRecord {
                step,
                proposed: vec![],
                executed: vec![],
                corrections: 0,
                fixes: vec![],
                rewards: vec![],
                collision: false,
                reports: vec![],
                intents: vec![],
            })
            .collect(),
        cause: None,
    }
}

fn criterion_8() -> Outcome {
    let layout = RoadLayout::default();
    // zone [410, 430]; leader leaves at 5 s, follower enters at 7 s
    let zone = ConflictZone::around_merge_end(&layout, 10.0);
    let two = constant_speed_record(&[(0, 330.0, 20.0), (1, 270.0, 20.0)], 100, 0.1);
    let p = pet(std::slice::from_ref(&two), &zone);
    let pet_ok = p.len() == 1 && (p[0] - 2.0).abs() < PET_TOL;

    let uniform: Vec<(u32, f64, f64)> =
        (0..6).map(|i| (i, 300.0 - 40.0 * i as f64, 20.0)).collect();
    let grid = coil_tms(&[constant_speed_record(&uniform, 400, 0.1)], &layout, 5).unwrap();
    let filled: Vec<f64> = grid.cells.iter().flatten().flatten().copied().collect();
    let uniform_ok =
        !filled.is_empty() && filled.iter().all(|v| *v == 20.0) && grid.breakdown_count() == 0;

    let slow = coil_tms(
        &[constant_speed_record(&[(0, 380.0, 15.9)], 20, 0.1)],
        &layout,
        5,
    )
    .unwrap();
    let slow_ok = slow.breakdown_count() == 1;
    outcome(
        pet_ok && uniform_ok && slow_ok,
        format!(
            "PET {p:?}; uniform grid {} cells all 20 with {} breakdowns; slow window breakdowns {}",
            filled.len(),
            grid.breakdown_count(),
            slow.breakdown_count()
        ),
    )
}

fn criterion_9() -> Outcome {
    let layout = RoadLayout::default();
    let at = |x: f64, v: f64, lane: LaneRef| {
        VehicleState::new(
            VehicleId(0),
            VehicleKind::Cav,
            x,
            layout.lane_center_y(lane),
            v,
            lane,
        )
    };
    let cases = [
        (at(50.0, 20.0, LaneRef::THROUGH), HighLevelAction::SpeedUp),
        (at(50.0, 27.0, LaneRef::THROUGH), HighLevelAction::SlowDown),
        (at(150.0, 22.0, LaneRef::RAMP), HighLevelAction::Cruising),
        (at(330.0, 24.0, LaneRef::MERGE), HighLevelAction::TurnLeft),
        (
            at(330.0, 24.0, LaneRef::THROUGH),
            HighLevelAction::TurnRight,
        ),
        (at(200.0, 12.0, LaneRef::THROUGH), HighLevelAction::TurnLeft),
    ];
    let cfg = EnvConfig {
        sem_enabled: false,
        ..EnvConfig::default()
    };
    let mut env = MergingEnv::new(cfg).unwrap();
    let mut worst: f64 = 0.0;
    let n = cases.len();
    for (state, action) in cases {
        env.reset_with(TrafficMode::default(), 0, vec![state.clone()]);
        let intent = generate_intent(&state, action, &env.rollout_context(), 0);
        env.step(&[action]).unwrap();
        let now = env.vehicles().iter().find(|v| v.id == state.id).unwrap();
        let s = intent.samples[0];
        for e in [
            s.x - now.x,
            s.y - now.y,
            s.v - now.speed,
            s.theta - now.heading,
        ] {
            worst = worst.max(e.abs());
        }
    }
    outcome(
        worst < INTENT_TOL,
        format!("worst deviation {worst:.2e} over {n} action cases"),
    )
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let only: Option<Vec<usize>> = std::env::var("MERGESIM_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let criteria: [Criterion; 9] = [
        (
            1,
            "shield correction matches brute-force oracle",
            criterion_1,
        ),
        (2, "shield soundness", criterion_2),
        (3, "reward and priority formulas", criterion_3),
        (4, "advantage and loss oracles", criterion_4),
        (5, "evaluation determinism", criterion_5),
        (
            6,
            "shielded vs plain training (easy, 100k steps)",
            criterion_6,
        ),
        (7, "curriculum speeds up hard-mode training", criterion_7),
        (8, "PET and TMS metrics", criterion_8),
        (9, "intent matches executed step", criterion_9),
    ];
    let mut verdicts = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} {name}: {verdict} ({})", o.detail);
        verdicts.push((id, verdict));
    }
    println!();
    for (id, verdict) in &verdicts {
        println!("criterion {id}: {verdict}");
    }
    let failed = verdicts.iter().filter(|v| v.1 == "FAIL").count();
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
