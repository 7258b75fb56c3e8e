//! Grid searches over post-processing hyperparameters, scored by per-type mAP.
//!
//! Each agent's predictions depend only on the schedule entry and GMP
//! configuration of its own type, so one sweep that applies a grid point to
//! every type yields the same per-type curves as three separate sweeps.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::generate::{child_rng, AgentLabel, Component, LabeledScene};
use super::maneuver::{cv_history, ManeuverKind, ManeuverLibrary, TypeProfile};
use super::predictor::Predictor;
use crate::geom::Vec2;
use crate::gmp::{greedy_process, CoincidenceCriterion, GmpConfig, MergeStrategy};
use crate::metrics::{map_score, EvalConfig, MetricReport, WindowConfig};
use crate::mixture::CovarianceSchedule;
use crate::scene::{step_time, AgentState, AgentType, PredictionSet, Scene, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub label: String,
    /// Numeric value for scalar grids.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningReport {
    pub parameter: String,
    pub grid: Vec<GridPoint>,
    /// `metric[i][type]`: mAP of that type at grid point `i` (absent types are `None`).
    pub metric: Vec<[Option<f64>; 3]>,
    /// First grid index attaining the per-type maximum.
    pub argmax: [Option<usize>; 3],
    /// Evaluated agents per type.
    pub counts: [usize; 3],
}

impl TuningReport {
    fn from_reports(parameter: &str, grid: Vec<GridPoint>, reports: &[MetricReport]) -> Self {
        let metric: Vec<[Option<f64>; 3]> = reports
            .iter()
            .map(|r| AgentType::ALL.map(|t| r.type_map(t)))
            .collect();
        let mut argmax = [None; 3];
        for (ti, slot) in argmax.iter_mut().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            for (i, m) in metric.iter().enumerate() {
                if let Some(v) = m[ti] {
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((i, v));
                    }
                }
            }
            *slot = best.map(|(i, _)| i);
        }
        let counts = reports
            .first()
            .map(|r| AgentType::ALL.map(|t| r.cells[t.index()][0].as_ref().map_or(0, |c| c.count)))
            .unwrap_or([0; 3]);
        Self {
            parameter: parameter.into(),
            grid,
            metric,
            argmax,
            counts,
        }
    }

    /// Grid point selected for `t`.
    pub fn best(&self, t: AgentType) -> Option<&GridPoint> {
        self.argmax[t.index()].map(|i| &self.grid[i])
    }
}

fn predict_all(scenes: &[LabeledScene], predictor: &dyn Predictor, schedule: &CovarianceSchedule) -> Result<Vec<Vec<PredictionSet>>> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| predictor.predict(s, schedule, i as u64))
        .collect()
}

fn score(scenes: &[LabeledScene], preds: &[Vec<PredictionSet>], eval: &EvalConfig) -> Result<MetricReport> {
    let pairs: Vec<(&PredictionSet, &Scene)> = scenes
        .iter()
        .zip(preds)
        .flat_map(|(s, ps)| ps.iter().map(move |p| (p, &s.scene)))
        .collect();
    map_score(&pairs, eval)
}

/// mAP per type for each σ in `grid`. `agent_type` restricts the sweep to
/// one type's schedule entry (others keep `base`); `None` sweeps all types.
pub fn tune_sigma(
    grid: &[f64],
    scenes: &[LabeledScene],
    predictor: &dyn Predictor,
    base: &CovarianceSchedule,
    eval: &EvalConfig,
    agent_type: Option<AgentType>,
) -> Result<TuningReport> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "empty"));
    }
    let mut reports = Vec::with_capacity(grid.len());
    for &sigma in grid {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::NonPositiveStd(sigma));
        }
        let schedule = match agent_type {
            Some(t) => base.with_sigma(t, sigma),
            None => AgentType::ALL.iter().fold(*base, |s, &t| s.with_sigma(t, sigma)),
        };
        reports.push(score(scenes, &predict_all(scenes, predictor, &schedule)?, eval)?);
    }
    let points = grid
        .iter()
        .map(|&v| GridPoint {
            label: format!("{v}"),
            value: Some(v),
        })
        .collect();
    Ok(TuningReport::from_reports("sigma", points, &reports))
}

pub fn criterion_label(c: &CoincidenceCriterion) -> String {
    match *c {
        CoincidenceCriterion::FinalPoint { radius } => format!("final(r={radius})"),
        CoincidenceCriterion::CheckpointAnd { gamma } => format!("checkpoints(gamma={gamma})"),
    }
}

pub fn strategy_label(s: MergeStrategy) -> &'static str {
    match s {
        MergeStrategy::KeepMax => "keep",
        MergeStrategy::AverageEqual => "avg",
        MergeStrategy::AverageWeighted => "wavg",
    }
}

/// The two-criteria by three-strategy grid.
pub fn gmp_grid(window: WindowConfig) -> Vec<GmpConfig> {
    let criteria = [
        CoincidenceCriterion::FinalPoint { radius: 2.0 },
        CoincidenceCriterion::CheckpointAnd { gamma: 1.0 },
    ];
    criteria
        .iter()
        .flat_map(|&criterion| {
            MergeStrategy::ALL.map(|strategy| GmpConfig {
                criterion,
                strategy,
                window,
            })
        })
        .collect()
}

/// mAP per type after greedy mode processing with each configuration.
pub fn tune_gmp(
    configs: &[GmpConfig],
    scenes: &[LabeledScene],
    predictor: &dyn Predictor,
    schedule: &CovarianceSchedule,
    eval: &EvalConfig,
) -> Result<TuningReport> {
    if configs.is_empty() {
        return Err(Error::invalid("grid", "empty"));
    }
    let raw = predict_all(scenes, predictor, schedule)?;
    let mut reports = Vec::with_capacity(configs.len());
    for cfg in configs {
        let processed = scenes
            .iter()
            .zip(&raw)
            .map(|(s, sets)| {
                sets.iter()
                    .map(|p| {
                        let agent = s.scene.agent(p.agent_id()).ok_or_else(|| Error::UnknownAgent(p.agent_id().into()))?;
                        greedy_process(p, cfg, &agent.context())
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(score(scenes, &processed, eval)?);
    }
    let points = configs
        .iter()
        .map(|c| GridPoint {
            label: format!("{}/{}", criterion_label(&c.criterion), strategy_label(c.strategy)),
            value: None,
        })
        .collect();
    Ok(TuningReport::from_reports("gmp", points, &reports))
}

/// Shape of a constructed fan of lanes, in units of the hit-window lateral
/// half-width `W(t)`.
///
/// Six lanes sit `lambda · W(t)` apart; each is represented by two candidate
/// modes `± epsilon · W(t)` off its centre line (along the lane normal) with
/// half the lane's weight. The ground truth follows one lane, offset by at
/// most `0.1 · W(t)`. Lane weights are nearly uniform, so any merge of two
/// lanes with `lambda ≥ 3` lands outside both lanes' hit windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FanGeometry {
    pub epsilon: f64,
    pub lambda: f64,
    pub speed: (f64, f64),
}

impl FanGeometry {
    pub fn of(t: AgentType) -> Self {
        match t {
            AgentType::Vehicle => Self {
                epsilon: 0.75,
                lambda: 4.0,
                speed: (8.0, 14.0),
            },
            AgentType::Pedestrian => Self {
                epsilon: 0.2,
                lambda: 4.0,
                speed: (1.0, 1.8),
            },
            AgentType::Cyclist => Self {
                epsilon: 0.4,
                lambda: 3.5,
                speed: (3.0, 6.0),
            },
        }
    }

    /// σ range in which the kernel merges each lane's pair but never two
    /// lanes, for the default time profile (`max_t W(t) / perp(t) = σ⁻¹`).
    pub fn good_sigma(&self) -> (f64, f64) {
        (2.0 * self.epsilon, self.lambda - 2.0 * self.epsilon)
    }
}

/// First grid point inside the good-σ window of `t`'s fan geometry.
pub fn constructed_optimum(grid: &[f64], t: AgentType) -> Option<usize> {
    let (lo, hi) = FanGeometry::of(t).good_sigma();
    grid.iter().position(|&s| s >= lo && s < hi)
}

const LANE_WEIGHTS: [f64; 6] = [0.22, 0.19, 0.17, 0.15, 0.14, 0.13];

fn fan_agent(t: AgentType, id: String, window: &WindowConfig, rng: &mut ChaCha8Rng) -> Result<(AgentState, Trajectory, AgentLabel)> {
    let geom = FanGeometry::of(t);
    let v0 = rng.random_range(geom.speed.0..geom.speed.1);
    let start = Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
    let heading = rng.random_range(-PI..PI);
    let (u, n) = (Vec2::from_angle(heading), Vec2::from_angle(heading + 0.5 * PI));
    // Lane `c` runs along `u v0 + n c W'(t)`; `off` is measured along that lane's normal.
    let slope = window.speed.scale(v0) * window.lateral_slope;
    let path = |c: f64, off: f64| {
        let normal = (u * v0 + n * (c * slope)).rotate(0.5 * PI);
        let normal = normal * (1.0 / normal.norm());
        Trajectory::from_fn(|k| {
            let tk = step_time(k);
            let w = window.half_widths(tk, v0).0;
            start + u * (v0 * tk) + n * (c * w) + normal * (off * w)
        })
    };
    let mut weights = LANE_WEIGHTS;
    for i in (1..6).rev() {
        weights.swap(i, rng.random_range(0..=i));
    }
    let mut components = Vec::with_capacity(12);
    for (j, &w) in weights.iter().enumerate() {
        let centre = (j as f64 - 2.5) * geom.lambda;
        for side in [-1.0, 1.0] {
            components.push(Component {
                kind: ManeuverKind::Lane(j as u8),
                prob: 0.5 * w,
                mean: path(centre, side * geom.epsilon),
            });
        }
    }
    let mut lane = 5;
    let mut acc = 0.0;
    let draw: f64 = rng.random();
    for (j, &w) in weights.iter().enumerate() {
        acc += w;
        if draw < acc {
            lane = j;
            break;
        }
    }
    let eta = rng.random_range(-0.1..0.1);
    let gt = path((lane as f64 - 2.5) * geom.lambda, eta);
    let agent = AgentState::new(id, t, start, heading, v0, t.default_radius(), &cv_history(start, heading, v0), true)?;
    Ok((
        agent,
        gt,
        AgentLabel {
            components,
            gt_component: 2 * lane,
        },
    ))
}

/// Validation scenes whose optimal σ per type is known by construction:
/// one vehicle (`a0`), one pedestrian (`a1`) and one cyclist (`a2`) per
/// scene, each a [`FanGeometry`] fan. Meant for [`super::KernelPredictor`].
pub fn fan_fixture(seed: u64, n_scenes: usize, window: &WindowConfig) -> Result<Vec<LabeledScene>> {
    (0..n_scenes)
        .map(|i| {
            let mut rng = child_rng(seed, i as u64);
            let mut agents = Vec::new();
            let mut gt = BTreeMap::new();
            let mut labels = BTreeMap::new();
            for (j, t) in AgentType::ALL.iter().enumerate() {
                let id = format!("a{j}");
                let (a, g, l) = fan_agent(*t, id.clone(), window, &mut rng)?;
                agents.push(a);
                gt.insert(id.clone(), g);
                labels.insert(id, l);
            }
            Ok(LabeledScene {
                scene: Scene::new(format!("fan{i:05}"), agents, gt, None)?,
                labels,
            })
        })
        .collect()
}

const ALL_KINDS: [ManeuverKind; 8] = [
    ManeuverKind::Straight,
    ManeuverKind::Slow,
    ManeuverKind::Left,
    ManeuverKind::Right,
    ManeuverKind::Stop,
    ManeuverKind::UTurn,
    ManeuverKind::LaneChangeLeft,
    ManeuverKind::LaneChangeRight,
];

fn jitter(traj: &Trajectory, std: f64, rng: &mut ChaCha8Rng) -> Trajectory {
    let mut drift = Vec2::ZERO;
    traj.map(|p| {
        drift += Vec2::new(rng.random_range(-std..std), rng.random_range(-std..std));
        p + drift
    })
}

/// Small random marginal dataset: 1 to 3 scenes with 1 to 5 agents in total,
/// all direction buckets reachable, 1 to 6 modes per agent with
/// probabilities drawn from a coarse lattice so ties occur.
pub fn random_dataset(seed: u64, trial: u64) -> Result<Vec<(Scene, Vec<PredictionSet>)>> {
    let mut rng = child_rng(seed, trial);
    let n_scenes = rng.random_range(1..=3usize);
    let n_agents = rng.random_range(n_scenes..=5usize);
    let mut per_scene = alloc::vec![1usize; n_scenes];
    for _ in n_scenes..n_agents {
        per_scene[rng.random_range(0..n_scenes)] += 1;
    }
    // Scene ids deliberately out of lexicographic order.
    let mut out = Vec::with_capacity(n_scenes);
    for (si, &count) in per_scene.iter().enumerate() {
        let sid = format!("r{}", (n_scenes - si) * 7 % 10);
        let mut agents = Vec::new();
        let mut gts = BTreeMap::new();
        let mut preds = Vec::new();
        for ai in (0..count).rev() {
            let t = AgentType::ALL[rng.random_range(0..3)];
            let lib = ManeuverLibrary::new(t);
            let (lo, hi) = TypeProfile::of(t).speed;
            let v0 = if rng.random::<f64>() < 0.1 { 0.0 } else { rng.random_range(lo..hi) };
            let start = Vec2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            let heading = rng.random_range(-PI..PI);
            let kind = ALL_KINDS[rng.random_range(0..ALL_KINDS.len())];
            let gt = jitter(&lib.maneuver(kind, v0).trajectory(start, heading), 0.1, &mut rng);
            let id = format!("x{ai}");
            let n_modes = rng.random_range(1..=6usize);
            let mut modes = Vec::with_capacity(n_modes);
            for _ in 0..n_modes {
                let mean = if rng.random::<f64>() < 0.5 {
                    jitter(&gt, 0.3, &mut rng)
                } else {
                    let k = ALL_KINDS[rng.random_range(0..ALL_KINDS.len())];
                    jitter(&lib.maneuver(k, v0).trajectory(start, heading), 0.2, &mut rng)
                };
                let w = rng.random_range(1..=4u32) as f64;
                modes.push((mean, None, w));
            }
            preds.push(PredictionSet::from_weights(sid.clone(), id.clone(), modes)?);
            agents.push(AgentState::new(id.clone(), t, start, heading, v0, t.default_radius(), &cv_history(start, heading, v0), true)?);
            gts.insert(id, gt);
        }
        out.push((Scene::new(sid, agents, gts, None)?, preds));
    }
    Ok(out)
}
