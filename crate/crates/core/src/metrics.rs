//! Displacement metrics and hit-window mAP.
//!
//! A mode *hits* at a horizon when its checkpoint position lies inside an
//! oriented box centred on the ground truth: lateral half-width
//! `scale(v0) · (0.4 t − 0.2)` meters, longitudinal half-width twice that.
//! Agents are grouped by type and by a direction bucket of their ground-truth
//! motion; inside each group modes of all agents are pooled, sorted by
//! probability and swept into a precision-recall curve where each agent can
//! contribute at most one true positive.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::geom::{wrap_angle, Vec2};
use crate::scene::{
    step_direction, AgentContext, AgentType, Horizon, JointPredictionSet, PredictionSet, Scene,
    Trajectory, HORIZON_STEPS,
};
use crate::{Error, Result};

/// Linear speed factor: `min_scale` below `low_speed`, 1 above `high_speed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedScaling {
    pub low_speed: f64,
    pub high_speed: f64,
    pub min_scale: f64,
}

impl Default for SpeedScaling {
    fn default() -> Self {
        Self {
            low_speed: 1.4,
            high_speed: 11.0,
            min_scale: 0.5,
        }
    }
}

impl SpeedScaling {
    pub fn scale(&self, v0: f64) -> f64 {
        let frac = ((v0 - self.low_speed) / (self.high_speed - self.low_speed)).clamp(0.0, 1.0);
        self.min_scale + (1.0 - self.min_scale) * frac
    }
}

/// Hit-window constants; longitudinal half-width is always twice the lateral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub lateral_slope: f64,
    pub lateral_offset: f64,
    pub speed: SpeedScaling,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            lateral_slope: 0.4,
            lateral_offset: -0.2,
            speed: SpeedScaling::default(),
        }
    }
}

impl WindowConfig {
    /// `(lateral_half, longitudinal_half)` at time `t` for initial speed `v0`.
    pub fn half_widths(&self, t: f64, v0: f64) -> (f64, f64) {
        let lat = self.speed.scale(v0) * (self.lateral_slope * t + self.lateral_offset);
        (lat, 2.0 * lat)
    }
}

/// `(lateral_half, longitudinal_half)` with the default constants.
pub fn hit_window(t: f64, v0: f64) -> (f64, f64) {
    WindowConfig::default().half_widths(t, v0)
}

/// Oriented tolerance box at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitWindow {
    pub horizon: Horizon,
    pub lateral_half: f64,
    pub longitudinal_half: f64,
    pub center: Vec2,
    pub orientation: f64,
}

impl HitWindow {
    /// Window around `reference` at `horizon`, oriented by the reference's
    /// motion over the step ending at the checkpoint.
    pub fn around(reference: &Trajectory, ctx: &AgentContext, horizon: Horizon, cfg: &WindowConfig) -> Self {
        let (lateral_half, longitudinal_half) = cfg.half_widths(horizon.seconds(), ctx.speed);
        let k = horizon.index();
        Self {
            horizon,
            lateral_half,
            longitudinal_half,
            center: reference.at(k),
            orientation: step_direction(reference, ctx.start, k, ctx.heading),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.contains_scaled(p, 1.0)
    }

    /// Containment in the box with both half-widths multiplied by `gamma`.
    pub fn contains_scaled(&self, p: Vec2, gamma: f64) -> bool {
        let (lon, lat) = (p - self.center).in_frame(self.orientation);
        lon.abs() <= gamma * self.longitudinal_half && lat.abs() <= gamma * self.lateral_half
    }
}

pub fn is_hit(mode: &Trajectory, gt: &Trajectory, ctx: &AgentContext, horizon: Horizon, cfg: &WindowConfig) -> bool {
    HitWindow::around(gt, ctx, horizon, cfg).contains(mode.at(horizon.index()))
}

fn mean_displacement(a: &Trajectory, b: &Trajectory, upto: usize) -> f64 {
    let s: f64 = (0..=upto).map(|k| (a.at(k) - b.at(k)).norm()).sum();
    s / (upto + 1) as f64
}

/// Mean displacement over steps `0..=checkpoint`, minimized over modes.
pub fn min_ade(pred: &PredictionSet, gt: &Trajectory, horizon: Horizon) -> f64 {
    pred.modes()
        .iter()
        .map(|m| mean_displacement(m.mean(), gt, horizon.index()))
        .fold(f64::INFINITY, f64::min)
}

/// Displacement at the checkpoint, minimized over modes.
pub fn min_fde(pred: &PredictionSet, gt: &Trajectory, horizon: Horizon) -> f64 {
    let k = horizon.index();
    pred.modes()
        .iter()
        .map(|m| (m.mean().at(k) - gt.at(k)).norm())
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DirectionBucket {
    Stationary,
    Straight,
    StraightLeft,
    StraightRight,
    Left,
    Right,
    UTurnLeft,
    UTurnRight,
}

impl DirectionBucket {
    pub const ALL: [DirectionBucket; 8] = [
        DirectionBucket::Stationary,
        DirectionBucket::Straight,
        DirectionBucket::StraightLeft,
        DirectionBucket::StraightRight,
        DirectionBucket::Left,
        DirectionBucket::Right,
        DirectionBucket::UTurnLeft,
        DirectionBucket::UTurnRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DirectionBucket::Stationary => "stationary",
            DirectionBucket::Straight => "straight",
            DirectionBucket::StraightLeft => "straight_left",
            DirectionBucket::StraightRight => "straight_right",
            DirectionBucket::Left => "left",
            DirectionBucket::Right => "right",
            DirectionBucket::UTurnLeft => "u_turn_left",
            DirectionBucket::UTurnRight => "u_turn_right",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

pub const STATIONARY_DISPLACEMENT: f64 = 2.0;
pub const STRAIGHT_MAX_TURN_DEG: f64 = 30.0;
pub const UTURN_MIN_TURN_DEG: f64 = 150.0;
pub const STRAIGHT_LATERAL_OFFSET: f64 = 2.0;

/// Heading of the last ground-truth step that moved at least 1 cm.
fn final_heading(gt: &Trajectory, start: Vec2, heading0: f64) -> f64 {
    for k in (0..HORIZON_STEPS).rev() {
        let prev = if k == 0 { start } else { gt.at(k - 1) };
        let d = gt.at(k) - prev;
        if d.norm() >= 0.01 {
            return d.angle();
        }
    }
    heading0
}

/// Direction bucket of a ground-truth future starting at `start` with heading `heading0`.
pub fn bucket_of(gt: &Trajectory, start: Vec2, heading0: f64) -> DirectionBucket {
    let disp = gt.last() - start;
    if disp.norm() < STATIONARY_DISPLACEMENT {
        return DirectionBucket::Stationary;
    }
    let turn = wrap_angle(final_heading(gt, start, heading0) - heading0).to_degrees();
    let left = turn > 0.0;
    let mag = turn.abs();
    if mag < STRAIGHT_MAX_TURN_DEG {
        let (_, lateral) = disp.in_frame(heading0);
        if lateral > STRAIGHT_LATERAL_OFFSET {
            DirectionBucket::StraightLeft
        } else if lateral < -STRAIGHT_LATERAL_OFFSET {
            DirectionBucket::StraightRight
        } else {
            DirectionBucket::Straight
        }
    } else if mag <= UTURN_MIN_TURN_DEG {
        if left {
            DirectionBucket::Left
        } else {
            DirectionBucket::Right
        }
    } else if left {
        DirectionBucket::UTurnLeft
    } else {
        DirectionBucket::UTurnRight
    }
}

/// How hitting modes of an agent that already has a true positive are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DuplicatePolicy {
    /// Counted as false positives (detection convention).
    #[default]
    FalsePositive,
    /// Dropped from the sweep.
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalConfig {
    pub window: WindowConfig,
    pub duplicates: DuplicatePolicy,
}

/// One evaluated agent (or agent pair): its group keys, per-mode
/// probabilities with per-horizon hit flags, and displacement errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalEntry {
    pub scene_id: String,
    pub agent_id: String,
    pub agent_type: AgentType,
    pub bucket: DirectionBucket,
    /// `(prob, hit at [3 s, 5 s, 8 s])` per mode, in mode order.
    pub modes: Vec<(f64, [bool; 3])>,
    pub min_ade: [f64; 3],
    pub min_fde: [f64; 3],
}

pub fn marginal_entry(pred: &PredictionSet, scene: &Scene, cfg: &EvalConfig) -> Result<EvalEntry> {
    let agent = scene
        .agent(pred.agent_id())
        .ok_or_else(|| Error::UnknownAgent(pred.agent_id().into()))?;
    let gt = scene
        .gt(pred.agent_id())
        .ok_or_else(|| Error::UnknownAgent(pred.agent_id().into()))?;
    let ctx = agent.context();
    let modes = pred
        .modes()
        .iter()
        .map(|m| {
            let hits = Horizon::ALL.map(|h| is_hit(m.mean(), gt, &ctx, h, &cfg.window));
            (m.prob(), hits)
        })
        .collect();
    Ok(EvalEntry {
        scene_id: scene.scene_id().into(),
        agent_id: pred.agent_id().into(),
        agent_type: agent.agent_type(),
        bucket: bucket_of(gt, ctx.start, ctx.heading),
        modes,
        min_ade: Horizon::ALL.map(|h| min_ade(pred, gt, h)),
        min_fde: Horizon::ALL.map(|h| min_fde(pred, gt, h)),
    })
}

/// Joint entry: a mode hits only if both agents hit. Grouped by the first
/// agent's type and bucket; displacement errors average the two agents.
pub fn joint_entry(pred: &JointPredictionSet, scene: &Scene, cfg: &EvalConfig) -> Result<EvalEntry> {
    let (ida, idb) = pred.pair();
    let find = |id: &str| -> Result<_> {
        let agent = scene.agent(id).ok_or_else(|| Error::UnknownAgent(id.into()))?;
        let gt = scene.gt(id).ok_or_else(|| Error::UnknownAgent(id.into()))?;
        Ok((agent.context(), gt))
    };
    let (ca, ga) = find(ida)?;
    let (cb, gb) = find(idb)?;
    let modes = pred
        .modes()
        .iter()
        .map(|m| {
            let hits = Horizon::ALL.map(|h| {
                is_hit(&m.traj_a, ga, &ca, h, &cfg.window) && is_hit(&m.traj_b, gb, &cb, h, &cfg.window)
            });
            (m.prob, hits)
        })
        .collect();
    let ade = Horizon::ALL.map(|h| {
        pred.modes()
            .iter()
            .map(|m| 0.5 * (mean_displacement(&m.traj_a, ga, h.index()) + mean_displacement(&m.traj_b, gb, h.index())))
            .fold(f64::INFINITY, f64::min)
    });
    let fde = Horizon::ALL.map(|h| {
        let k = h.index();
        pred.modes()
            .iter()
            .map(|m| 0.5 * ((m.traj_a.at(k) - ga.at(k)).norm() + (m.traj_b.at(k) - gb.at(k)).norm()))
            .fold(f64::INFINITY, f64::min)
    });
    Ok(EvalEntry {
        scene_id: scene.scene_id().into(),
        agent_id: alloc::format!("{ida}+{idb}"),
        agent_type: ca.agent_type,
        bucket: bucket_of(ga, ca.start, ca.heading),
        modes,
        min_ade: ade,
        min_fde: fde,
    })
}

/// Metrics for one agent type at one horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMetrics {
    pub count: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    /// Mean of `bucket_ap` over non-empty buckets.
    pub map: f64,
    pub bucket_ap: [Option<f64>; 8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Indexed `[agent type][horizon]`; `None` when the type has no agents.
    pub cells: [[Option<CellMetrics>; 3]; 3],
    /// Averages over horizons, then over present types.
    pub map: f64,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
}

impl MetricReport {
    pub fn cell(&self, t: AgentType, h: Horizon) -> Option<&CellMetrics> {
        self.cells[t.index()][h as usize].as_ref()
    }

    /// Horizon-averaged mAP of one type.
    pub fn type_map(&self, t: AgentType) -> Option<f64> {
        let row = &self.cells[t.index()];
        row[0].map(|_| row.iter().map(|c| c.as_ref().map_or(0.0, |c| c.map)).sum::<f64>() / 3.0)
    }
}

/// Total order used for every PR sweep: probability descending, then entry
/// order, then mode index.
fn sweep_order(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

/// Area under the step PR curve for the given entries at horizon `h`.
fn average_precision(entries: &[&EvalEntry], h: usize, policy: DuplicatePolicy) -> f64 {
    let mut pool: Vec<(f64, usize, usize)> = entries
        .iter()
        .enumerate()
        .flat_map(|(e, entry)| entry.modes.iter().enumerate().map(move |(m, &(p, _))| (p, e, m)))
        .collect();
    pool.sort_by(sweep_order);
    let total = entries.len() as f64;
    let mut matched = alloc::vec![false; entries.len()];
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for &(_, e, m) in &pool {
        let hit = entries[e].modes[m].1[h];
        if hit && !matched[e] {
            matched[e] = true;
            tp += 1;
        } else if hit && policy == DuplicatePolicy::Ignore {
            continue;
        }
        seen += 1;
        let recall = tp as f64 / total;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Aggregate evaluated entries into a report; entries are ordered by
/// `(scene_id, agent_id)` first so the result does not depend on input order.
pub fn report_from_entries(mut entries: Vec<EvalEntry>, policy: DuplicatePolicy) -> Result<MetricReport> {
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    entries.sort_by(|a, b| (&a.scene_id, &a.agent_id).cmp(&(&b.scene_id, &b.agent_id)));
    let mut cells = [[None; 3]; 3];
    for t in AgentType::ALL {
        let of_type: Vec<&EvalEntry> = entries.iter().filter(|e| e.agent_type == t).collect();
        if of_type.is_empty() {
            continue;
        }
        let n = of_type.len() as f64;
        for (hi, _) in Horizon::ALL.iter().enumerate() {
            let mut bucket_ap = [None; 8];
            for b in DirectionBucket::ALL {
                let group: Vec<&EvalEntry> = of_type.iter().copied().filter(|e| e.bucket == b).collect();
                if !group.is_empty() {
                    bucket_ap[b.index()] = Some(average_precision(&group, hi, policy));
                }
            }
            let present: Vec<f64> = bucket_ap.iter().flatten().copied().collect();
            let map = present.iter().sum::<f64>() / present.len() as f64;
            let misses = of_type.iter().filter(|e| !e.modes.iter().any(|m| m.1[hi])).count();
            cells[t.index()][hi] = Some(CellMetrics {
                count: of_type.len(),
                min_ade: of_type.iter().map(|e| e.min_ade[hi]).sum::<f64>() / n,
                min_fde: of_type.iter().map(|e| e.min_fde[hi]).sum::<f64>() / n,
                miss_rate: misses as f64 / n,
                map,
                bucket_ap,
            });
        }
    }
    let average = |f: fn(&CellMetrics) -> f64| -> f64 {
        let mut per_type = Vec::new();
        for row in &cells {
            if row[0].is_some() {
                per_type.push(row.iter().flatten().map(f).sum::<f64>() / 3.0);
            }
        }
        per_type.iter().sum::<f64>() / per_type.len() as f64
    };
    Ok(MetricReport {
        map: average(|c| c.map),
        min_ade: average(|c| c.min_ade),
        min_fde: average(|c| c.min_fde),
        miss_rate: average(|c| c.miss_rate),
        cells,
    })
}

/// Marginal motion metrics over `(prediction, scene)` pairs.
pub fn map_score(dataset: &[(&PredictionSet, &Scene)], cfg: &EvalConfig) -> Result<MetricReport> {
    let entries = dataset
        .iter()
        .map(|(p, s)| marginal_entry(p, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    report_from_entries(entries, cfg.duplicates)
}

/// Joint metrics over interacting-pair predictions.
pub fn joint_map_score(dataset: &[(&JointPredictionSet, &Scene)], cfg: &EvalConfig) -> Result<MetricReport> {
    let entries = dataset
        .iter()
        .map(|(p, s)| joint_entry(p, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    report_from_entries(entries, cfg.duplicates)
}

/// Fraction of agents (all types pooled) with no hitting mode at `horizon`.
pub fn miss_rate(dataset: &[(&PredictionSet, &Scene)], horizon: Horizon, cfg: &EvalConfig) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut missed = 0usize;
    for (p, s) in dataset {
        let e = marginal_entry(p, s, cfg)?;
        if !e.modes.iter().any(|m| m.1[horizon as usize]) {
            missed += 1;
        }
    }
    Ok(missed as f64 / dataset.len() as f64)
}
