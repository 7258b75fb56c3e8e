//! Predictors with known statistics, built from the generator's mixtures.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::generate::{child_rng, AgentLabel, LabeledScene};
use crate::geom::Vec2;
use crate::gmp::merge_trajectories;
use crate::gmp::MergeStrategy;
use crate::mixture::{scheduled_inv_cov, CovarianceSchedule};
use crate::scene::{step_direction, step_time, AgentState, PredictionSet, Trajectory, HORIZON_STEPS, NUM_MODES};
use crate::Result;

/// Anything that maps a labeled scene to per-agent prediction sets.
///
/// `stream` selects the noise stream so that repeated calls are reproducible.
/// Predictors that do not use covariances ignore `schedule`.
pub trait Predictor {
    fn predict(&self, scene: &LabeledScene, schedule: &CovarianceSchedule, stream: u64) -> Result<Vec<PredictionSet>>;
}

fn random_walk(traj: &Trajectory, std: f64, rng: &mut ChaCha8Rng) -> Trajectory {
    if std == 0.0 {
        return *traj;
    }
    let n = Normal::new(0.0, std).expect("finite std");
    let mut drift = Vec2::ZERO;
    traj.map(|p| {
        drift += Vec2::new(n.sample(rng), n.sample(rng));
        p + drift
    })
}

fn labeled_agents(scene: &LabeledScene) -> impl Iterator<Item = (&AgentState, &AgentLabel)> {
    scene
        .scene
        .agents()
        .iter()
        .filter(|a| scene.scene.gt(a.id()).is_some())
        .filter_map(|a| scene.labels.get(a.id()).map(|l| (a, l)))
}

/// Ground-truth mixture corrupted by trajectory and probability noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OraclePredictor {
    /// Per-step std (meters) of the random walk added to each component.
    pub pos_noise: f64,
    /// Std of the log-normal factor applied to each component weight.
    pub prob_noise: f64,
    pub seed: u64,
}

impl Default for OraclePredictor {
    fn default() -> Self {
        Self {
            pos_noise: 0.1,
            prob_noise: 0.5,
            seed: 0,
        }
    }
}

impl OraclePredictor {
    /// Noised `(trajectory, weight)` candidates for every component.
    fn candidates(&self, label: &AgentLabel, rng: &mut ChaCha8Rng) -> Vec<(Trajectory, f64)> {
        let ln = Normal::new(0.0, self.prob_noise.max(0.0)).expect("finite std");
        label
            .components
            .iter()
            .map(|c| {
                let w = c.prob * libm::exp(ln.sample(rng));
                (random_walk(&c.mean, self.pos_noise, rng), w)
            })
            .collect()
    }

    fn agent_sets<'s>(&self, scene: &'s LabeledScene, stream: u64) -> Vec<(&'s AgentState, Vec<(Trajectory, f64)>)> {
        let mut rng = child_rng(self.seed, stream);
        labeled_agents(scene)
            .map(|(a, l)| (a, self.candidates(l, &mut rng)))
            .collect()
    }
}

/// Keep the `NUM_MODES` heaviest candidates (stable on ties) and normalize.
fn top_modes(scene_id: &str, agent_id: &str, cands: Vec<(Trajectory, f64)>) -> Result<PredictionSet> {
    let mut idx: Vec<usize> = (0..cands.len()).collect();
    idx.sort_by(|&i, &j| cands[j].1.partial_cmp(&cands[i].1).unwrap_or(core::cmp::Ordering::Equal).then(i.cmp(&j)));
    idx.truncate(NUM_MODES);
    idx.sort_unstable();
    let kept: Vec<_> = idx.iter().map(|&i| (cands[i].0, None, cands[i].1)).collect();
    PredictionSet::from_weights(scene_id, agent_id, kept)
}

impl Predictor for OraclePredictor {
    fn predict(&self, scene: &LabeledScene, _: &CovarianceSchedule, stream: u64) -> Result<Vec<PredictionSet>> {
        let sid = scene.scene.scene_id();
        self.agent_sets(scene, stream)
            .into_iter()
            .map(|(a, c)| top_modes(sid, a.id(), c))
            .collect()
    }
}

/// Emits each of the three most probable oracle modes twice, the copy
/// perturbed by a small random walk, splitting the probability evenly
/// (up to a small jitter). Coincident duplicates are exactly what greedy
/// mode processing is meant to remove.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuplicatingPredictor {
    pub base: OraclePredictor,
    pub dup_noise: f64,
}

impl Default for DuplicatingPredictor {
    fn default() -> Self {
        Self {
            base: OraclePredictor::default(),
            dup_noise: 0.03,
        }
    }
}

impl Predictor for DuplicatingPredictor {
    fn predict(&self, scene: &LabeledScene, schedule: &CovarianceSchedule, stream: u64) -> Result<Vec<PredictionSet>> {
        let base = self.base.predict(scene, schedule, stream)?;
        let mut rng = child_rng(self.base.seed ^ 0x5eed_d0b1e, stream);
        base.into_iter()
            .map(|set| {
                let mut order: Vec<usize> = (0..set.modes().len()).collect();
                order.sort_by(|&i, &j| {
                    set.modes()[j]
                        .prob()
                        .partial_cmp(&set.modes()[i].prob())
                        .unwrap_or(core::cmp::Ordering::Equal)
                        .then(i.cmp(&j))
                });
                let mut out = Vec::with_capacity(NUM_MODES);
                for &i in order.iter().take(3) {
                    let m = &set.modes()[i];
                    let split: f64 = rng.random_range(0.45..0.55);
                    out.push((*m.mean(), None, m.prob() * split));
                    out.push((random_walk(m.mean(), self.dup_noise, &mut rng), None, m.prob() * (1.0 - split)));
                }
                PredictionSet::from_weights(set.scene_id(), set.agent_id(), out)
            })
            .collect()
    }
}

/// Greedy merge of candidate trajectories under the scheduled covariance:
/// a candidate joins the anchor's bunch when its offset from the anchor has
/// Mahalanobis form `Xᵀ Λ X ≤ 1` at every step, with `Λ` taken from the
/// schedule oriented along the anchor's motion. Bunches are replaced by
/// their probability-weighted mean; the six heaviest results are kept.
///
/// Larger `σ` widens the kernel and merges more aggressively, which is the
/// lever [`tune_sigma`](super::tune_sigma) searches over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelPredictor {
    pub base: OraclePredictor,
}

impl Default for KernelPredictor {
    fn default() -> Self {
        Self {
            base: OraclePredictor {
                pos_noise: 0.0,
                prob_noise: 0.0,
                seed: 0,
            },
        }
    }
}

/// Whether `other` lies inside the scheduled kernel around `anchor`.
pub fn within_kernel(anchor: &Trajectory, other: &Trajectory, agent: &AgentState, schedule: &CovarianceSchedule) -> Result<bool> {
    let ctx = agent.context();
    for k in 0..HORIZON_STEPS {
        let dir = step_direction(anchor, ctx.start, k, ctx.heading);
        let lam = scheduled_inv_cov(schedule, ctx.agent_type, step_time(k), ctx.speed, dir)?;
        if lam.quad_form(other.at(k) - anchor.at(k)) > 1.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Kernel merge of weighted candidates for one agent.
pub fn kernel_merge(
    cands: &[(Trajectory, f64)],
    agent: &AgentState,
    schedule: &CovarianceSchedule,
) -> Result<Vec<(Trajectory, f64)>> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&i, &j| cands[j].1.partial_cmp(&cands[i].1).unwrap_or(core::cmp::Ordering::Equal).then(i.cmp(&j)));
    let mut done = vec![false; cands.len()];
    let mut out = Vec::new();
    for (rank, &a) in order.iter().enumerate() {
        if done[a] {
            continue;
        }
        done[a] = true;
        let mut bunch = vec![a];
        for &o in &order[rank + 1..] {
            if !done[o] && within_kernel(&cands[a].0, &cands[o].0, agent, schedule)? {
                done[o] = true;
                bunch.push(o);
            }
        }
        let trajs: Vec<&Trajectory> = bunch.iter().map(|&i| &cands[i].0).collect();
        let w: Vec<f64> = bunch.iter().map(|&i| cands[i].1).collect();
        out.push((merge_trajectories(&trajs, &w, MergeStrategy::AverageWeighted), w.iter().sum()));
    }
    Ok(out)
}

impl Predictor for KernelPredictor {
    fn predict(&self, scene: &LabeledScene, schedule: &CovarianceSchedule, stream: u64) -> Result<Vec<PredictionSet>> {
        let sid = scene.scene.scene_id();
        self.base
            .agent_sets(scene, stream)
            .into_iter()
            .map(|(a, c)| top_modes(sid, a.id(), kernel_merge(&c, a, schedule)?))
            .collect()
    }
}
