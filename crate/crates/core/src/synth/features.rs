//! Hand-made actor features standing in for a learned scene encoder.
//!
//! Layout (16 values): `v0 / 10`, agent-type one-hot (3), a maneuver hint
//! one-hot over the six mixture components (6), and six standard-normal
//! noise channels. The hint names the ground-truth component with
//! probability `1 - hint_noise` and a uniformly random component otherwise.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::generate::{child_rng, AgentLabel, LabeledScene};
use crate::scene::{AgentContext, AgentState};
use crate::transformer::Sample;
use crate::Vec2;

pub const FEATURE_DIM: usize = 16;

pub fn actor_features(agent: &AgentState, label: &AgentLabel, hint_noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut f = Vec::with_capacity(FEATURE_DIM);
    f.push(agent.speed() / 10.0);
    let mut one_hot = [0.0; 3];
    one_hot[agent.agent_type().index()] = 1.0;
    f.extend_from_slice(&one_hot);
    let n = label.components.len().min(6);
    let hint = if rng.random::<f64>() < hint_noise {
        rng.random_range(0..n)
    } else {
        label.gt_component.min(5)
    };
    let mut h = [0.0; 6];
    h[hint] = 1.0;
    f.extend_from_slice(&h);
    for _ in 0..6 {
        f.push(StandardNormal.sample(rng));
    }
    f
}

/// Agent-frame context: origin at the agent, heading along +x.
pub fn local_context(agent: &AgentState) -> AgentContext {
    AgentContext {
        agent_type: agent.agent_type(),
        start: Vec2::ZERO,
        heading: 0.0,
        speed: agent.speed(),
    }
}

/// Per-agent features for every labeled agent of `scene`, in agent order.
/// The stream is keyed by `(seed, stream)` so features are reproducible.
pub fn scene_features(scene: &LabeledScene, hint_noise: f64, seed: u64, stream: u64) -> Vec<(usize, Vec<f64>)> {
    let mut rng = child_rng(seed, stream);
    scene
        .scene
        .agents()
        .iter()
        .enumerate()
        .filter_map(|(i, a)| {
            let label = scene.labels.get(a.id())?;
            Some((i, actor_features(a, label, hint_noise, &mut rng)))
        })
        .collect()
}

/// Training samples (one per agent with ground truth and a label).
pub fn training_samples(scenes: &[LabeledScene], hint_noise: f64, seed: u64) -> Vec<Sample> {
    let mut out = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        for (ai, features) in scene_features(s, hint_noise, seed, si as u64) {
            let agent = &s.scene.agents()[ai];
            let Some(gt) = s.scene.gt(agent.id()) else { continue };
            let (p0, h0) = (agent.position(), agent.heading());
            out.push(Sample {
                features,
                ctx: local_context(agent),
                gt: gt.map(|p| (p - p0).rotate(-h0)),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_scenes;

    #[test]
    fn samples_are_local_and_reproducible() {
        let scenes = gen_scenes(5, 3, 3, 0.0).unwrap();
        let a = training_samples(&scenes, 0.3, 1);
        assert_eq!(a, training_samples(&scenes, 0.3, 1));
        assert_eq!(a.len(), 9);
        for s in &a {
            assert_eq!(s.features.len(), FEATURE_DIM);
            // Ground truth starts near the origin and heads roughly along +x.
            assert!(s.gt.at(0).norm() <= s.ctx.speed * 0.5 + 0.5);
            assert!(s.gt.at(0).x >= -0.5);
        }
    }
}
