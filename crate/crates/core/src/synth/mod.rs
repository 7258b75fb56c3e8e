//! Synthetic scenes, known-statistics predictors, brute-force oracles and
//! tuning loops.

mod features;
mod generate;
mod maneuver;
mod oracle;
mod predictor;
mod tune;

pub use features::{actor_features, local_context, scene_features, training_samples, FEATURE_DIM};
pub use generate::{child_rng, gen_scene, gen_scenes, min_distance, AgentLabel, Component, GenConfig, LabeledScene};
pub use maneuver::{cv_history, max_step, Maneuver, ManeuverKind, ManeuverLibrary, TypeProfile};
pub use oracle::{oracle_density_norm, oracle_map};
pub use predictor::{kernel_merge, within_kernel, DuplicatingPredictor, KernelPredictor, OraclePredictor, Predictor};
pub use tune::{
    constructed_optimum, criterion_label, fan_fixture, gmp_grid, random_dataset, strategy_label, tune_gmp, tune_sigma,
    FanGeometry, GridPoint, TuningReport,
};
