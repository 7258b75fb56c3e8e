//! Post-encoder trajectory prediction toolkit.
//!
//! The crate covers the pieces of a multimodal motion predictor that sit
//! downstream of the neural scene encoder:
//!
//! * [`mixture`]: six-mode trajectory mixtures with a displacement-power
//!   density, the `(a, b, c)` inverse-covariance parametrization, scheduled
//!   covariances and the mixture negative log-likelihood.
//! * [`metrics`]: minADE / minFDE, velocity-scaled oriented hit windows,
//!   direction buckets, miss rate and bucketed PR-AUC mAP.
//! * [`gmp`]: greedy mode processing (coincidence matrix plus greedy
//!   suppression or merging with probability aggregation).
//! * [`joint`]: conversion of two factorized predictions into one joint
//!   prediction with collision filtering.
//! * [`transformer`]: a small mode transformer with hand-written reverse-mode
//!   gradients and a toy training loop.
//! * [`synth`]: deterministic synthetic scenes, noised oracle predictors,
//!   brute-force oracles and tuning harnesses.
//!
//! Everything here is `no_std` with `alloc`; file formats and the command
//! line live in the companion `kraken` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
pub mod geom;
pub mod gmp;
pub mod joint;
pub mod metrics;
pub mod mixture;
pub mod scene;
pub mod synth;
pub mod transformer;

pub use error::{Error, Result};
pub use geom::Vec2;
pub use scene::{
    AgentState, AgentType, Horizon, JointMode, JointPredictionSet, ModePrediction, PredictionSet,
    Scene, Trajectory,
};
