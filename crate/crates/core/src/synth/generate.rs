//! Deterministic synthetic scenes with recorded ground-truth mixtures.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::maneuver::{cv_history, ManeuverKind, ManeuverLibrary, TypeProfile};
use crate::geom::Vec2;
use crate::joint::{collides, CollisionCriterion};
use crate::scene::{step_time, AgentState, AgentType, Scene, Trajectory, HORIZON_STEPS};
use crate::Result;

/// One component of an agent's ground-truth distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub kind: ManeuverKind,
    pub prob: f64,
    pub mean: Trajectory,
}

/// The distribution an agent's ground truth was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentLabel {
    pub components: Vec<Component>,
    /// Index of the component the ground truth was sampled from.
    pub gt_component: usize,
}

/// A scene plus the generator's record of every agent's mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub scene: Scene,
    pub labels: BTreeMap<String, AgentLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub agents_per_scene: usize,
    pub interacting_fraction: f64,
    /// Probabilities of vehicle, pedestrian, cyclist.
    pub type_mix: [f64; 3],
    /// Chance that a non-interacting agent starts at rest.
    pub stationary_fraction: f64,
    pub extent: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            agents_per_scene: 4,
            interacting_fraction: 0.5,
            type_mix: [0.6, 0.25, 0.15],
            stationary_fraction: 0.05,
            extent: 100.0,
        }
    }
}

/// Child generator for item `index` under `seed`: one ChaCha stream per item,
/// so items can be generated independently and in any order.
pub fn child_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn pick_type(rng: &mut ChaCha8Rng, mix: &[f64; 3]) -> AgentType {
    let u: f64 = rng.random::<f64>() * mix.iter().sum::<f64>();
    let mut acc = 0.0;
    for (t, w) in AgentType::ALL.iter().zip(mix) {
        acc += w;
        if u < acc {
            return *t;
        }
    }
    AgentType::Vehicle
}

fn sample_index(rng: &mut ChaCha8Rng, w: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in w.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    w.len() - 1
}

struct Draft {
    agent_type: AgentType,
    start: Vec2,
    heading: f64,
    v0: f64,
    components: Vec<Component>,
}

fn draft(agent_type: AgentType, start: Vec2, heading: f64, v0: f64) -> Draft {
    let lib = ManeuverLibrary::new(agent_type);
    let w = lib.mixture_weights(v0);
    let components = ManeuverKind::MIXTURE
        .iter()
        .zip(w)
        .map(|(&kind, prob)| Component {
            kind,
            prob,
            mean: lib.maneuver(kind, v0).trajectory(start, heading),
        })
        .collect();
    Draft {
        agent_type,
        start,
        heading,
        v0,
        components,
    }
}

/// Random-walk perturbation of a component mean, growing with time.
fn perturb(mean: &Trajectory, noise: f64, rng: &mut ChaCha8Rng) -> Trajectory {
    let n = Normal::new(0.0, noise).expect("finite std");
    let mut drift = Vec2::ZERO;
    mean.map(|p| {
        drift += Vec2::new(n.sample(rng), n.sample(rng));
        p + drift
    })
}

fn sample_gt(d: &Draft, rng: &mut ChaCha8Rng) -> (usize, Trajectory) {
    let w: Vec<f64> = d.components.iter().map(|c| c.prob).collect();
    let i = sample_index(rng, &w);
    let noise = TypeProfile::of(d.agent_type).gt_noise;
    (i, perturb(&d.components[i].mean, noise, rng))
}

fn random_speed(t: AgentType, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = TypeProfile::of(t).speed;
    rng.random_range(lo..hi)
}

/// Two agents whose straight continuations meet at the same checkpoint.
fn crossing_pair(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> [Draft; 2] {
    let ta = pick_type(rng, &cfg.type_mix);
    let tb = pick_type(rng, &cfg.type_mix);
    let (va, vb) = (random_speed(ta, rng), random_speed(tb, rng));
    let ha = rng.random_range(-PI..PI);
    let hb = ha + if rng.random::<bool>() { 1.0 } else { -1.0 } * rng.random_range(PI / 3.0..2.0 * PI / 3.0);
    let k_meet = rng.random_range(5..10);
    let t_meet = step_time(k_meet);
    let meet = Vec2::new(rng.random_range(-cfg.extent..cfg.extent), rng.random_range(-cfg.extent..cfg.extent)) * 0.5;
    let sa = meet - Vec2::from_angle(ha) * (va * t_meet);
    let sb = meet - Vec2::from_angle(hb) * (vb * t_meet);
    [draft(ta, sa, ha, va), draft(tb, sb, hb, vb)]
}

fn free_agent(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Draft {
    let t = pick_type(rng, &cfg.type_mix);
    let v0 = if rng.random::<f64>() < cfg.stationary_fraction {
        0.0
    } else {
        random_speed(t, rng)
    };
    let start = Vec2::new(rng.random_range(-cfg.extent..cfg.extent), rng.random_range(-cfg.extent..cfg.extent));
    draft(t, start, rng.random_range(-PI..PI), v0)
}

/// Scene number `index` of the stream selected by `seed`.
pub fn gen_scene(seed: u64, index: usize, cfg: &GenConfig) -> Result<LabeledScene> {
    let mut rng = child_rng(seed, index as u64);
    let n = cfg.agents_per_scene.max(1);
    let interacting = n >= 2 && rng.random::<f64>() < cfg.interacting_fraction;
    let mut drafts: Vec<Draft> = Vec::with_capacity(n);
    if interacting {
        drafts.extend(crossing_pair(cfg, &mut rng));
    }
    while drafts.len() < n {
        drafts.push(free_agent(cfg, &mut rng));
    }

    let mut samples: Vec<(usize, Trajectory)> = drafts.iter().map(|d| sample_gt(d, &mut rng)).collect();
    if interacting {
        // Ground truth of the pair itself avoids contact when possible.
        let crit = CollisionCriterion::default();
        let radii = (drafts[0].agent_type.default_radius(), drafts[1].agent_type.default_radius());
        for _ in 0..32 {
            if !collides(&samples[0].1, &samples[1].1, radii, &crit) {
                break;
            }
            samples[0] = sample_gt(&drafts[0], &mut rng);
            samples[1] = sample_gt(&drafts[1], &mut rng);
        }
    }

    let mut agents = Vec::with_capacity(n);
    let mut gt = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for (i, (d, (ci, traj))) in drafts.into_iter().zip(samples).enumerate() {
        let id = format!("a{i}");
        let interesting = (interacting && i < 2) || rng.random::<bool>();
        agents.push(AgentState::new(
            id.clone(),
            d.agent_type,
            d.start,
            d.heading,
            d.v0,
            d.agent_type.default_radius(),
            &cv_history(d.start, d.heading, d.v0),
            interesting,
        )?);
        gt.insert(id.clone(), traj);
        labels.insert(
            id,
            AgentLabel {
                components: d.components,
                gt_component: ci,
            },
        );
    }
    let pair = interacting.then(|| (String::from("a0"), String::from("a1")));
    Ok(LabeledScene {
        scene: Scene::new(format!("s{index:05}"), agents, gt, pair)?,
        labels,
    })
}

/// `n_scenes` scenes from one seed. Generation is per-scene independent; see
/// [`gen_scene`].
pub fn gen_scenes(seed: u64, n_scenes: usize, agents_per_scene: usize, interacting_fraction: f64) -> Result<Vec<LabeledScene>> {
    let cfg = GenConfig {
        agents_per_scene,
        interacting_fraction,
        ..GenConfig::default()
    };
    (0..n_scenes).map(|i| gen_scene(seed, i, &cfg)).collect()
}

/// Minimum same-step distance between two trajectories.
pub fn min_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    (0..HORIZON_STEPS).map(|k| (a.at(k) - b.at(k)).norm()).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_independent_per_scene() {
        let a = gen_scenes(7, 5, 4, 0.5).unwrap();
        let b = gen_scenes(7, 5, 4, 0.5).unwrap();
        assert_eq!(a, b);
        let cfg = GenConfig {
            agents_per_scene: 4,
            interacting_fraction: 0.5,
            ..GenConfig::default()
        };
        assert_eq!(gen_scene(7, 3, &cfg).unwrap(), a[3]);
        assert_ne!(gen_scenes(8, 5, 4, 0.5).unwrap(), a);
        assert!(gen_scenes(7, 0, 4, 0.5).unwrap().is_empty());
    }

    #[test]
    fn crossing_pairs_can_collide() {
        let scenes = gen_scenes(11, 20, 3, 1.0).unwrap();
        for s in &scenes {
            let (ia, ib) = s.scene.interacting_pair().unwrap();
            let (la, lb) = (&s.labels[ia], &s.labels[ib]);
            let radii = s.scene.agent(ia).unwrap().radius() + s.scene.agent(ib).unwrap().radius();
            let closest = la
                .components
                .iter()
                .flat_map(|ca| lb.components.iter().map(move |cb| min_distance(&ca.mean, &cb.mean)))
                .fold(f64::INFINITY, f64::min);
            assert!(closest < radii, "{}: {closest}", s.scene.scene_id());
        }
    }

    #[test]
    fn labels_cover_every_agent() {
        for s in gen_scenes(3, 4, 5, 0.5).unwrap() {
            assert_eq!(s.labels.len(), s.scene.agents().len());
            for l in s.labels.values() {
                assert_eq!(l.components.len(), 6);
                assert!((l.components.iter().map(|c| c.prob).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
