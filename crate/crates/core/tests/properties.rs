use proptest::prelude::*;

use kraken_core::gmp::{greedy_process, CoincidenceCriterion, GmpConfig, MergeStrategy};
use kraken_core::joint::{joint_predict, JointConfig, PairAgents};
use kraken_core::metrics::{map_score, EvalConfig};
use kraken_core::mixture::{log_normalizer, mode_log_density, CovarianceSchedule, DisplacementPower, InverseCovariance};
use kraken_core::synth::{gen_scene, training_samples, GenConfig, OraclePredictor, Predictor};
use kraken_core::transformer::{predict_set, CovMode, ModelConfig, Parameters};
use kraken_core::{PredictionSet, Scene, Vec2};

fn power() -> impl Strategy<Value = DisplacementPower> {
    (0.5f64..=2.0).prop_map(|r| DisplacementPower::new(r).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn det_is_exp_2c(a in -4.0f64..4.0, b in -4.0f64..4.0, c in -4.0f64..4.0) {
        let lam = InverseCovariance::new(a, b, c).unwrap();
        let m = lam.matrix();
        let det = m.xx * m.yy - m.xy * m.xy;
        prop_assert!(((det - (2.0 * c).exp()) / (2.0 * c).exp()).abs() < 1e-9);
        prop_assert!(m.xx > 0.0 && m.yy > 0.0);
    }

    #[test]
    fn quad_form_is_non_negative(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, x in -10.0f64..10.0, y in -10.0f64..10.0) {
        prop_assert!(InverseCovariance::new(a, b, c).unwrap().quad_form(Vec2::new(x, y)) >= 0.0);
    }

    #[test]
    fn normalizer_tracks_determinant(r in power(), a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -1.0f64..1.0) {
        let base = log_normalizer(r, &InverseCovariance::new(a, b, c).unwrap());
        let shifted = log_normalizer(r, &InverseCovariance::new(a, b, c + d).unwrap());
        prop_assert!((base - d - shifted).abs() < 1e-10);
    }

    #[test]
    fn density_peaks_at_mean(r in power(), a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, dx in -3.0f64..3.0, dy in -3.0f64..3.0) {
        let lam = InverseCovariance::new(a, b, c).unwrap();
        let mean = Vec2::new(1.0, -2.0);
        let at_mean = mode_log_density(mean, mean, &lam, r);
        let off = mode_log_density(mean + Vec2::new(dx, dy), mean, &lam, r);
        let mirrored = mode_log_density(mean - Vec2::new(dx, dy), mean, &lam, r);
        prop_assert!(off <= at_mean);
        prop_assert!((off - mirrored).abs() < 1e-12);
    }
}

fn scene_and_sets(seed: u64, index: usize) -> (Scene, Vec<PredictionSet>) {
    let labeled = gen_scene(seed, index, &GenConfig::default()).unwrap();
    let sets = OraclePredictor { seed, ..OraclePredictor::default() }
        .predict(&labeled, &CovarianceSchedule::default(), index as u64)
        .unwrap();
    (labeled.scene, sets)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn map_is_a_fraction(seed in 0u64..500, index in 0usize..20) {
        let (scene, sets) = scene_and_sets(seed, index);
        let pairs: Vec<(&PredictionSet, &Scene)> = sets.iter().map(|p| (p, &scene)).collect();
        let r = map_score(&pairs, &EvalConfig::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.map));
        prop_assert!((0.0..=1.0).contains(&r.miss_rate));
        prop_assert!(r.min_ade >= 0.0 && r.min_fde >= 0.0);
    }

    #[test]
    fn exact_prediction_never_misses(seed in 0u64..500, index in 0usize..20) {
        let (scene, _) = scene_and_sets(seed, index);
        let exact: Vec<PredictionSet> = scene
            .agents()
            .iter()
            .map(|a| PredictionSet::from_weights(scene.scene_id(), a.id(), vec![(*scene.gt(a.id()).unwrap(), None, 1.0)]).unwrap())
            .collect();
        let pairs: Vec<(&PredictionSet, &Scene)> = exact.iter().map(|p| (p, &scene)).collect();
        let r = map_score(&pairs, &EvalConfig::default()).unwrap();
        prop_assert_eq!(r.miss_rate, 0.0);
        prop_assert_eq!(r.min_ade, 0.0);
        prop_assert_eq!(r.map, 1.0);
    }

    #[test]
    fn gmp_conserves_mass_and_never_grows(seed in 0u64..500, index in 0usize..20, gamma in 0.5f64..3.0, s in 0usize..3) {
        let (scene, sets) = scene_and_sets(seed, index);
        let cfg = GmpConfig { criterion: CoincidenceCriterion::CheckpointAnd { gamma }, strategy: MergeStrategy::ALL[s], ..GmpConfig::default() };
        for p in &sets {
            let out = greedy_process(p, &cfg, &scene.agent(p.agent_id()).unwrap().context()).unwrap();
            prop_assert!(out.modes().len() <= p.modes().len());
            let total: f64 = out.modes().iter().map(|m| m.prob()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(out.modes().windows(2).all(|w| w[0].prob() >= w[1].prob()));
        }
    }

    #[test]
    fn joint_sets_are_normalized(seed in 0u64..500, index in 0usize..20) {
        let (scene, sets) = scene_and_sets(seed, index);
        let agents = scene.agents();
        prop_assume!(agents.len() >= 2);
        let pair = PairAgents::of(&agents[0], &agents[1]);
        let find = |id: &str| sets.iter().find(|p| p.agent_id() == id).unwrap();
        let out = joint_predict(find(agents[0].id()), find(agents[1].id()), &pair, &JointConfig::default()).unwrap();
        prop_assert!(!out.modes().is_empty() && out.modes().len() <= 6);
        prop_assert!((out.modes().iter().map(|m| m.prob).sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.modes().iter().all(|m| m.prob > 0.0));
    }

    #[test]
    fn model_probabilities_form_a_distribution(seed in 0u64..200, index in 0usize..20) {
        let labeled = gen_scene(seed, index, &GenConfig::default()).unwrap();
        let samples = training_samples(core::slice::from_ref(&labeled), 0.3, seed);
        let params = Parameters::init(ModelConfig { seed, ..ModelConfig::default() }).unwrap();
        for s in &samples {
            for mode in [CovMode::Predicted, CovMode::Schedule(CovarianceSchedule::default())] {
                let set = predict_set(&s.features, &s.ctx, &params, &mode, "s", "a").unwrap();
                prop_assert_eq!(set.modes().len(), 6);
                prop_assert!(set.modes().iter().all(|m| m.prob() > 0.0));
                prop_assert!((set.modes().iter().map(|m| m.prob()).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generation_is_deterministic(seed in 0u64..1000, index in 0usize..100) {
        let cfg = GenConfig::default();
        let a = gen_scene(seed, index, &cfg).unwrap();
        let b = gen_scene(seed, index, &cfg).unwrap();
        prop_assert_eq!(&a.scene, &b.scene);
        for agent in a.scene.agents() {
            prop_assert!(a.scene.gt(agent.id()).unwrap().points().iter().all(|p| p.x.is_finite() && p.y.is_finite()));
        }
    }
}
