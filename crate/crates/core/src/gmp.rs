//! Greedy mode processing.
//!
//! Modes are visited in order of decreasing probability. Each unprocessed
//! anchor gathers the unprocessed modes coincident with it into a bunch; the
//! bunch is replaced by a single mode that carries the bunch's total
//! probability. Bunches are formed from direct coincidence with the anchor
//! only, never by chaining.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::metrics::{HitWindow, WindowConfig};
use crate::scene::{AgentContext, Horizon, ModePrediction, PredictionSet, Trajectory};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoincidenceCriterion {
    /// Final points closer than `radius` meters.
    FinalPoint { radius: f64 },
    /// At each of 3, 5 and 8 s, each trajectory lies within the other's
    /// hit window scaled by `gamma`.
    CheckpointAnd { gamma: f64 },
}

impl CoincidenceCriterion {
    pub fn is_valid(&self) -> bool {
        match *self {
            CoincidenceCriterion::FinalPoint { radius } => radius > 0.0,
            CoincidenceCriterion::CheckpointAnd { gamma } => gamma > 0.0,
        }
    }
}

impl Default for CoincidenceCriterion {
    fn default() -> Self {
        CoincidenceCriterion::CheckpointAnd { gamma: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeStrategy {
    /// Keep the anchor's trajectory.
    #[default]
    KeepMax,
    /// Per-step mean of the bunch.
    AverageEqual,
    /// Per-step probability-weighted mean of the bunch.
    AverageWeighted,
}

impl MergeStrategy {
    pub const ALL: [MergeStrategy; 3] = [
        MergeStrategy::KeepMax,
        MergeStrategy::AverageEqual,
        MergeStrategy::AverageWeighted,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GmpConfig {
    pub criterion: CoincidenceCriterion,
    pub strategy: MergeStrategy,
    pub window: WindowConfig,
}

/// Coincidence relation between two trajectories of the same agent.
pub fn coincident(
    a: &Trajectory,
    b: &Trajectory,
    criterion: CoincidenceCriterion,
    ctx: &AgentContext,
    window: &WindowConfig,
) -> bool {
    match criterion {
        CoincidenceCriterion::FinalPoint { radius } => (a.last() - b.last()).norm() <= radius,
        CoincidenceCriterion::CheckpointAnd { gamma } => Horizon::ALL.iter().all(|&h| {
            let k = h.index();
            HitWindow::around(a, ctx, h, window).contains_scaled(b.at(k), gamma)
                && HitWindow::around(b, ctx, h, window).contains_scaled(a.at(k), gamma)
        }),
    }
}

/// Symmetric, reflexive `n × n` relation over the modes of one set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoincidenceMatrix {
    n: usize,
    cells: Vec<bool>,
}

impl CoincidenceMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut cells = vec![false; n * n];
        for i in 0..n {
            cells[i * n + i] = true;
            for j in i + 1..n {
                let c = f(i, j);
                cells[i * n + j] = c;
                cells[j * n + i] = c;
            }
        }
        Self { n, cells }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }

    pub fn is_identity(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == (i == j)))
    }
}

pub fn coincidence_matrix(set: &PredictionSet, cfg: &GmpConfig, ctx: &AgentContext) -> CoincidenceMatrix {
    let modes = set.modes();
    CoincidenceMatrix::from_fn(modes.len(), |i, j| {
        coincident(modes[i].mean(), modes[j].mean(), cfg.criterion, ctx, &cfg.window)
    })
}

/// Visit order: probability descending, lower index first on ties.
pub(crate) fn anchor_order(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&i, &j| {
        probs[j]
            .partial_cmp(&probs[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

/// Partition items into bunches, anchor first in each bunch, bunches in
/// anchor visit order.
pub fn greedy_bunches(probs: &[f64], matrix: &CoincidenceMatrix) -> Vec<Vec<usize>> {
    let order = anchor_order(probs);
    let mut done = vec![false; probs.len()];
    let mut bunches = Vec::new();
    for (rank, &anchor) in order.iter().enumerate() {
        if done[anchor] {
            continue;
        }
        done[anchor] = true;
        let mut bunch = vec![anchor];
        for &other in &order[rank + 1..] {
            if !done[other] && matrix.get(anchor, other) {
                done[other] = true;
                bunch.push(other);
            }
        }
        bunches.push(bunch);
    }
    bunches
}

/// Per-step merge of the trajectories in `bunch` (anchor first).
pub fn merge_trajectories(trajs: &[&Trajectory], probs: &[f64], strategy: MergeStrategy) -> Trajectory {
    match strategy {
        MergeStrategy::KeepMax => *trajs[0],
        MergeStrategy::AverageEqual => weighted_mean(trajs, &vec![1.0; trajs.len()]),
        MergeStrategy::AverageWeighted => {
            if probs.iter().sum::<f64>() > 0.0 {
                weighted_mean(trajs, probs)
            } else {
                weighted_mean(trajs, &vec![1.0; trajs.len()])
            }
        }
    }
}

fn weighted_mean(trajs: &[&Trajectory], w: &[f64]) -> Trajectory {
    let total: f64 = w.iter().sum();
    Trajectory::from_fn(|k| {
        let mut acc = crate::Vec2::ZERO;
        for (t, &wi) in trajs.iter().zip(w) {
            acc += t.at(k) * wi;
        }
        acc * (1.0 / total)
    })
}

/// Sort merged outputs by aggregated probability, keeping anchor order on ties.
pub(crate) fn sort_by_prob<T>(items: &mut [(f64, usize, T)]) {
    items.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
}

/// Greedy suppression / merging of coincident modes of one agent.
///
/// Averaged modes keep the anchor's covariance parameters.
pub fn greedy_process(set: &PredictionSet, cfg: &GmpConfig, ctx: &AgentContext) -> Result<PredictionSet> {
    let modes = set.modes();
    let probs: Vec<f64> = modes.iter().map(ModePrediction::prob).collect();
    let matrix = coincidence_matrix(set, cfg, ctx);
    let mut merged: Vec<(f64, usize, ModePrediction)> = Vec::new();
    for (rank, bunch) in greedy_bunches(&probs, &matrix).into_iter().enumerate() {
        let total: f64 = bunch.iter().map(|&i| probs[i]).sum();
        let trajs: Vec<&Trajectory> = bunch.iter().map(|&i| modes[i].mean()).collect();
        let bprobs: Vec<f64> = bunch.iter().map(|&i| probs[i]).collect();
        let anchor = &modes[bunch[0]];
        let mode = if bunch.len() == 1 {
            anchor.clone()
        } else {
            anchor
                .with_mean(merge_trajectories(&trajs, &bprobs, cfg.strategy))
                .with_prob(total.min(1.0))
        };
        merged.push((total, rank, mode));
    }
    sort_by_prob(&mut merged);
    PredictionSet::new(set.scene_id(), set.agent_id(), merged.into_iter().map(|m| m.2).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::scene::AgentType;
    use alloc::vec;

    fn ctx() -> AgentContext {
        AgentContext {
            agent_type: AgentType::Vehicle,
            start: Vec2::ZERO,
            heading: 0.0,
            speed: 12.0,
        }
    }

    fn lane(y: f64) -> Trajectory {
        Trajectory::from_fn(|k| Vec2::new(6.0 * (k + 1) as f64, y))
    }

    fn set(trajs: &[(Trajectory, f64)]) -> PredictionSet {
        let modes = trajs
            .iter()
            .map(|&(t, p)| ModePrediction::new(t, None, p).unwrap())
            .collect();
        PredictionSet::new("s", "a", modes).unwrap()
    }

    #[test]
    fn identical_is_coincident() {
        let w = WindowConfig::default();
        let t = lane(0.0);
        assert!(coincident(&t, &t, CoincidenceCriterion::FinalPoint { radius: 2.0 }, &ctx(), &w));
        assert!(coincident(&t, &t, CoincidenceCriterion::CheckpointAnd { gamma: 1.0 }, &ctx(), &w));
        assert!(!coincident(&t, &lane(100.0), CoincidenceCriterion::FinalPoint { radius: 2.0 }, &ctx(), &w));
    }

    #[test]
    fn checkpoint_and_requires_all_three() {
        // Lateral gap 0.5 m at 3 s and 5 s, 4 m at 8 s (window 1.0/1.8/3.0 m).
        let a = lane(0.0);
        let b = Trajectory::from_fn(|k| Vec2::new(6.0 * (k + 1) as f64, if k >= 14 { 4.0 } else { 0.5 }));
        let w = WindowConfig::default();
        let crit = CoincidenceCriterion::CheckpointAnd { gamma: 1.0 };
        assert!(!coincident(&a, &b, crit, &ctx(), &w));
        let c = Trajectory::from_fn(|k| Vec2::new(6.0 * (k + 1) as f64, 0.5));
        assert!(coincident(&a, &c, crit, &ctx(), &w));
    }

    #[test]
    fn matrix_patterns() {
        let cfg = GmpConfig::default();
        let distinct: Vec<(Trajectory, f64)> = (0..6).map(|i| (lane(20.0 * i as f64), 1.0 / 6.0)).collect();
        assert!(coincidence_matrix(&set(&distinct), &cfg, &ctx()).is_identity());
        let mut dup = distinct.clone();
        dup[2].0 = dup[0].0;
        let m = coincidence_matrix(&set(&dup), &cfg, &ctx());
        assert!(m.get(0, 2) && m.get(2, 0));
        assert!(!m.get(0, 1));
        let same = vec![(lane(0.0), 1.0 / 6.0); 6];
        let m = coincidence_matrix(&set(&same), &cfg, &ctx());
        assert!((0..6).all(|i| (0..6).all(|j| m.get(i, j))));
    }

    #[test]
    fn keep_max_hand_trace() {
        let a = lane(0.0);
        let others = [(a, 0.4), (lane(30.0), 0.1), (a, 0.3), (lane(60.0), 0.1), (lane(90.0), 0.05), (lane(120.0), 0.05)];
        let out = greedy_process(&set(&others), &GmpConfig::default(), &ctx()).unwrap();
        assert_eq!(out.modes().len(), 5);
        assert_eq!(*out.modes()[0].mean(), a);
        assert!((out.modes()[0].prob() - 0.7).abs() < 1e-15);
        assert_eq!(*out.modes()[1].mean(), lane(30.0));
    }

    #[test]
    fn weighted_average_hand_trace() {
        let a = lane(0.0);
        let b = lane(0.4);
        let input = [(a, 0.4), (lane(30.0), 0.1), (b, 0.3), (lane(60.0), 0.1), (lane(90.0), 0.05), (lane(120.0), 0.05)];
        let cfg = GmpConfig {
            strategy: MergeStrategy::AverageWeighted,
            ..Default::default()
        };
        let out = greedy_process(&set(&input), &cfg, &ctx()).unwrap();
        let m = &out.modes()[0];
        assert!((m.prob() - 0.7).abs() < 1e-15);
        for k in 0..16 {
            let expect = (a.at(k) * 0.4 + b.at(k) * 0.3) * (1.0 / 0.7);
            assert!((m.mean().at(k) - expect).norm() < 1e-12);
        }
        let eq = GmpConfig {
            strategy: MergeStrategy::AverageEqual,
            ..Default::default()
        };
        let out = greedy_process(&set(&input), &eq, &ctx()).unwrap();
        assert!((out.modes()[0].mean().at(3).y - 0.2).abs() < 1e-12);
    }

    #[test]
    fn non_coincident_is_identity() {
        let input: Vec<(Trajectory, f64)> = (0..6).map(|i| (lane(25.0 * i as f64), [0.3, 0.25, 0.2, 0.1, 0.1, 0.05][i])).collect();
        for strategy in MergeStrategy::ALL {
            let cfg = GmpConfig { strategy, ..Default::default() };
            let s = set(&input);
            assert_eq!(greedy_process(&s, &cfg, &ctx()).unwrap(), s);
        }
    }
}
