use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{loss_and_gradients, sample_nll, CovMode, Sample};
use super::{ModelConfig, Parameters};
use crate::mixture::{CovarianceSchedule, DisplacementPower};
use crate::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (libm::sqrt(vh) + self.eps);
        }
    }
}

/// Multiply the learning rate by `factor` once the monitored loss has failed
/// to beat its best value by more than `threshold` for `patience`
/// consecutive evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauSchedule {
    pub factor: f64,
    pub patience: usize,
    /// Absolute improvement required to reset the counter.
    pub threshold: f64,
    best: f64,
    bad: usize,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        Self::new(0.1, 10, 1e-3)
    }
}

impl PlateauSchedule {
    pub fn new(factor: f64, patience: usize, threshold: f64) -> Self {
        Self {
            factor,
            patience,
            threshold,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    /// Record one evaluation; returns `true` when the rate should drop.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.bad = 0;
            return false;
        }
        self.bad += 1;
        if self.bad > self.patience {
            self.bad = 0;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub r: DisplacementPower,
    pub cov_mode: CovMode,
    pub plateau: PlateauSchedule,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            lr: 1e-3,
            r: DisplacementPower::default(),
            cov_mode: CovMode::Schedule(CovarianceSchedule::default()),
            plateau: PlateauSchedule::default(),
            shuffle_seed: 0,
        }
    }
}

/// Losses after one epoch (epoch 0 is the initialization).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub curve: Vec<EpochStats>,
}

impl TrainOutcome {
    pub fn initial(&self) -> &EpochStats {
        &self.curve[0]
    }

    pub fn last(&self) -> &EpochStats {
        self.curve.last().expect("curve has the initialization entry")
    }
}

/// Mini-batch Adam on the mean mixture NLL.
///
/// The plateau schedule monitors validation NLL when `val` is non-empty and
/// training NLL otherwise. Any non-finite loss or gradient aborts with
/// [`Error::Divergence`] carrying the optimizer step index.
pub fn train_toy(train: &[Sample], val: &[Sample], model: ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::invalid("train config", "batch_size and lr must be positive"));
    }
    let mut params = Parameters::init(model)?;
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut plateau = cfg.plateau;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;

    let evaluate = |p: &Parameters, step: usize| -> Result<(f64, Option<f64>)> {
        let tr = sample_nll(train, p, cfg.r, &cfg.cov_mode).map_err(|_| Error::Divergence(step))?;
        let va = if val.is_empty() {
            None
        } else {
            Some(sample_nll(val, p, cfg.r, &cfg.cov_mode).map_err(|_| Error::Divergence(step))?)
        };
        Ok((tr, va))
    };

    let (train_nll, val_nll) = evaluate(&params, 0)?;
    let mut curve = vec![EpochStats {
        epoch: 0,
        train_nll,
        val_nll,
        lr: adam.lr,
    }];
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i].clone()));
            let out = loss_and_gradients(&batch, &params, cfg.r, &cfg.cov_mode).map_err(|_| Error::Divergence(step))?;
            adam.step(params.as_mut_slice(), &out.gradient);
            step += 1;
            if params.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(step));
            }
        }
        let (train_nll, val_nll) = evaluate(&params, step)?;
        if plateau.observe(val_nll.unwrap_or(train_nll)) {
            adam.lr *= plateau.factor;
        }
        curve.push(EpochStats {
            epoch,
            train_nll,
            val_nll,
            lr: adam.lr,
        });
    }
    Ok(TrainOutcome { params, curve })
}
