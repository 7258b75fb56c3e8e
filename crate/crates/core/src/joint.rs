//! Factorized-to-joint conversion for a pair of agents.
//!
//! The 6 × 6 product of the two marginal predictions is filtered for
//! same-timestep collisions, the survivors are treated as composite
//! 32-point trajectories and passed through greedy mode processing, and the
//! six most probable results are renormalized.

use alloc::vec::Vec;

use crate::gmp::{coincident, greedy_bunches, merge_trajectories, sort_by_prob, CoincidenceMatrix, GmpConfig};
use crate::scene::{AgentContext, AgentState, JointMode, JointPredictionSet, PredictionSet, Trajectory, NUM_MODES};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComboMode {
    pub idx_a: usize,
    pub idx_b: usize,
    pub traj_a: Trajectory,
    pub traj_b: Trajectory,
    pub prob: f64,
}

/// Two discs collide when their same-step centre distance is below
/// `radius_a + radius_b + margin`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CollisionCriterion {
    pub margin: f64,
}

impl CollisionCriterion {
    pub fn new(margin: f64) -> Result<Self> {
        if margin >= 0.0 && margin.is_finite() {
            Ok(Self { margin })
        } else {
            Err(Error::invalid("margin", alloc::format!("{margin} must be ≥ 0")))
        }
    }
}

/// All `|a| × |b|` combinations, `idx_a`-major, with `p = p_a · p_b`.
pub fn product_combos(set_a: &PredictionSet, set_b: &PredictionSet) -> Vec<ComboMode> {
    let mut out = Vec::with_capacity(set_a.modes().len() * set_b.modes().len());
    for (ia, ma) in set_a.modes().iter().enumerate() {
        for (ib, mb) in set_b.modes().iter().enumerate() {
            out.push(ComboMode {
                idx_a: ia,
                idx_b: ib,
                traj_a: *ma.mean(),
                traj_b: *mb.mean(),
                prob: ma.prob() * mb.prob(),
            });
        }
    }
    out
}

pub fn collides(traj_a: &Trajectory, traj_b: &Trajectory, radii: (f64, f64), crit: &CollisionCriterion) -> bool {
    let limit = radii.0 + radii.1 + crit.margin;
    traj_a
        .points()
        .iter()
        .zip(traj_b.points())
        .any(|(a, b)| (*a - *b).norm() < limit)
}

/// Joint conversion settings; `None` disables a stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointConfig {
    pub collision: Option<CollisionCriterion>,
    pub gmp: Option<GmpConfig>,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            collision: Some(CollisionCriterion::default()),
            gmp: Some(GmpConfig::default()),
        }
    }
}

/// Agent data the conversion needs.
#[derive(Debug, Clone, Copy)]
pub struct PairAgents {
    pub ctx_a: AgentContext,
    pub ctx_b: AgentContext,
    pub radius_a: f64,
    pub radius_b: f64,
}

impl PairAgents {
    pub fn of(a: &AgentState, b: &AgentState) -> Self {
        Self {
            ctx_a: a.context(),
            ctx_b: b.context(),
            radius_a: a.radius(),
            radius_b: b.radius(),
        }
    }
}

/// Result of [`joint_predict_detailed`] with the probability bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct JointOutcome {
    pub set: JointPredictionSet,
    /// Total probability of the combos that survived collision filtering.
    pub survivor_mass: f64,
    /// Aggregated probabilities after mode processing, before truncation
    /// and renormalization; sums to `survivor_mass`.
    pub aggregated: Vec<f64>,
}

pub fn joint_predict(
    set_a: &PredictionSet,
    set_b: &PredictionSet,
    agents: &PairAgents,
    cfg: &JointConfig,
) -> Result<JointPredictionSet> {
    joint_predict_detailed(set_a, set_b, agents, cfg).map(|o| o.set)
}

pub fn joint_predict_detailed(
    set_a: &PredictionSet,
    set_b: &PredictionSet,
    agents: &PairAgents,
    cfg: &JointConfig,
) -> Result<JointOutcome> {
    let combos = product_combos(set_a, set_b);
    let pair = (set_a.agent_id().into(), set_b.agent_id().into());
    let survivors: Vec<ComboMode> = match &cfg.collision {
        Some(c) => combos
            .iter()
            .copied()
            .filter(|m| !collides(&m.traj_a, &m.traj_b, (agents.radius_a, agents.radius_b), c))
            .collect(),
        None => combos.clone(),
    };
    if survivors.is_empty() {
        // Every combination collides: keep the most probable one alone.
        let best = crate::gmp::anchor_order(&combos.iter().map(|c| c.prob).collect::<Vec<_>>())[0];
        let c = &combos[best];
        let mode = JointMode {
            traj_a: c.traj_a,
            traj_b: c.traj_b,
            prob: 1.0,
        };
        return Ok(JointOutcome {
            set: JointPredictionSet::new(set_a.scene_id(), pair, alloc::vec![mode], true)?,
            survivor_mass: 0.0,
            aggregated: Vec::new(),
        });
    }
    let survivor_mass: f64 = survivors.iter().map(|c| c.prob).sum();
    let probs: Vec<f64> = survivors.iter().map(|c| c.prob).collect();

    let mut merged: Vec<(f64, usize, (Trajectory, Trajectory))> = Vec::new();
    match &cfg.gmp {
        Some(g) => {
            let matrix = CoincidenceMatrix::from_fn(survivors.len(), |i, j| {
                let (x, y) = (&survivors[i], &survivors[j]);
                coincident(&x.traj_a, &y.traj_a, g.criterion, &agents.ctx_a, &g.window)
                    && coincident(&x.traj_b, &y.traj_b, g.criterion, &agents.ctx_b, &g.window)
            });
            for (rank, bunch) in greedy_bunches(&probs, &matrix).into_iter().enumerate() {
                let bp: Vec<f64> = bunch.iter().map(|&i| probs[i]).collect();
                let ta: Vec<&Trajectory> = bunch.iter().map(|&i| &survivors[i].traj_a).collect();
                let tb: Vec<&Trajectory> = bunch.iter().map(|&i| &survivors[i].traj_b).collect();
                let trajs = (
                    merge_trajectories(&ta, &bp, g.strategy),
                    merge_trajectories(&tb, &bp, g.strategy),
                );
                merged.push((bp.iter().sum(), rank, trajs));
            }
        }
        None => {
            let order = crate::gmp::anchor_order(&probs);
            for (rank, &i) in order.iter().enumerate() {
                merged.push((probs[i], rank, (survivors[i].traj_a, survivors[i].traj_b)));
            }
        }
    }
    sort_by_prob(&mut merged);
    let aggregated: Vec<f64> = merged.iter().map(|m| m.0).collect();
    merged.truncate(NUM_MODES);
    let kept: f64 = merged.iter().map(|m| m.0).sum();
    let degenerate = !(kept > 0.0);
    let n = merged.len() as f64;
    let modes = merged
        .into_iter()
        .map(|(p, _, (traj_a, traj_b))| JointMode {
            traj_a,
            traj_b,
            prob: if degenerate { 1.0 / n } else { p / kept },
        })
        .collect();
    Ok(JointOutcome {
        set: JointPredictionSet::new(set_a.scene_id(), pair, modes, degenerate)?,
        survivor_mass,
        aggregated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::scene::{AgentType, ModePrediction};

    fn lane(y: f64, speed: f64) -> Trajectory {
        Trajectory::from_fn(|k| Vec2::new(speed * 0.5 * (k + 1) as f64, y))
    }

    fn set(id: &str, modes: &[(Trajectory, f64)]) -> PredictionSet {
        let m = modes.iter().map(|&(t, p)| ModePrediction::new(t, None, p).unwrap()).collect();
        PredictionSet::new("s", id, m).unwrap()
    }

    fn agents() -> PairAgents {
        let c = AgentContext {
            agent_type: AgentType::Vehicle,
            start: Vec2::ZERO,
            heading: 0.0,
            speed: 10.0,
        };
        PairAgents {
            ctx_a: c,
            ctx_b: c,
            radius_a: 2.0,
            radius_b: 2.0,
        }
    }

    #[test]
    fn uniform_product() {
        let lanes: Vec<(Trajectory, f64)> = (0..6).map(|i| (lane(i as f64 * 50.0, 10.0), 1.0 / 6.0)).collect();
        let combos = product_combos(&set("a", &lanes), &set("b", &lanes));
        assert_eq!(combos.len(), 36);
        assert!(combos.iter().all(|c| (c.prob - 1.0 / 36.0).abs() < 1e-15));
        let total: f64 = combos.iter().map(|c| c.prob).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn point_mass_product() {
        let mut lanes: Vec<(Trajectory, f64)> = (0..6).map(|i| (lane(i as f64 * 50.0, 10.0), 0.0)).collect();
        lanes[0].1 = 1.0;
        let combos = product_combos(&set("a", &lanes), &set("b", &lanes));
        assert_eq!(combos.iter().filter(|c| c.prob == 1.0).count(), 1);
        assert_eq!(combos.iter().filter(|c| c.prob == 0.0).count(), 35);
    }

    #[test]
    fn collision_examples() {
        let c = CollisionCriterion::default();
        let a = lane(0.0, 10.0);
        assert!(collides(&a, &a, (2.0, 2.0), &c));
        assert!(!collides(&a, &lane(100.0, 10.0), (2.0, 2.0), &c));
        // Crossing paths: a passes (40, 0) at k=7, b passes it at k=11.
        let b = Trajectory::from_fn(|k| Vec2::new(40.0, -60.0 + 5.0 * (k + 1) as f64));
        let min_same_step = (0..16).map(|k| (a.at(k) - b.at(k)).norm()).fold(f64::INFINITY, f64::min);
        assert!(min_same_step >= 10.0);
        assert!(!collides(&a, &b, (2.0, 2.0), &c));
        assert!(CollisionCriterion::new(-0.1).is_err());
    }

    #[test]
    fn single_mode_pair() {
        let a = set("a", &[(lane(0.0, 10.0), 1.0)]);
        let b = set("b", &[(lane(50.0, 10.0), 1.0)]);
        let out = joint_predict(&a, &b, &agents(), &JointConfig::default()).unwrap();
        assert_eq!(out.modes().len(), 1);
        assert_eq!(out.modes()[0].prob, 1.0);
        assert!(!out.degenerate());
    }

    #[test]
    fn colliding_mode_removed() {
        let pa = [0.9, 0.04, 0.03, 0.01, 0.01, 0.01];
        let a_modes: Vec<(Trajectory, f64)> = (0..6).map(|i| (lane(-100.0 - 30.0 * i as f64, 10.0), pa[i])).collect();
        let mut a_modes = a_modes;
        a_modes[0].0 = lane(100.0, 10.0);
        // every b mode sits on y=100 near a's mode 0
        let b_modes: Vec<(Trajectory, f64)> = (0..6).map(|i| (lane(100.0 + 0.5 * i as f64, 10.0), 1.0 / 6.0)).collect();
        let (sa, sb) = (set("a", &a_modes), set("b", &b_modes));
        let cfg = JointConfig { gmp: None, ..Default::default() };
        let det = joint_predict_detailed(&sa, &sb, &agents(), &cfg).unwrap();
        for m in det.set.modes() {
            assert!(m.traj_a != a_modes[0].0);
        }
        assert!((det.survivor_mass - 0.1).abs() < 1e-12);
        let s: f64 = det.set.modes().iter().map(|m| m.prob).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_collide_fallback() {
        let a = set("a", &[(lane(0.0, 10.0), 0.6), (lane(0.5, 10.0), 0.4)]);
        let b = set("b", &[(lane(0.0, 10.0), 1.0)]);
        let out = joint_predict(&a, &b, &agents(), &JointConfig::default()).unwrap();
        assert!(out.degenerate());
        assert_eq!(out.modes().len(), 1);
        assert_eq!(out.modes()[0].traj_a, lane(0.0, 10.0));
        assert_eq!(out.modes()[0].prob, 1.0);
    }
}
