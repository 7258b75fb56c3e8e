//! Desk-scale mode transformer.
//!
//! One actor embedding is promoted to six mode tokens (actor embedding
//! concatenated with a learned per-mode embedding, projected to the
//! attention width). A self-attention block across the six tokens and a
//! position-wise dense block follow, then a linear head decodes every token
//! into 16 × `(x, y, a, b, c)` distribution parameters and a probability
//! logit. There is no positional encoding across modes, so the whole stack
//! is permutation-equivariant in the mode axis up to the embedding table.
//!
//! Gradients are written out by hand and checked against central
//! differences in the tests.

pub mod linalg;
mod model;
mod train;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scene::{NUM_MODES, HORIZON_STEPS};
use crate::{Error, Result};

pub use model::{
    decode_modes, loss_and_gradients, make_mode_tokens, mode_attention_forward, predict_set, sample_nll,
    CovMode, DecodedModes, ForwardTrace, LossOutput, Sample,
};
pub use train::{train_toy, Adam, EpochStats, PlateauSchedule, TrainConfig, TrainOutcome};

/// Outputs per mode token: five parameters per step plus one logit.
pub const HEAD_OUTPUTS: usize = HORIZON_STEPS * 5 + 1;

/// What sits between token construction and the dense block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixingBlock {
    /// Multi-head self-attention across the mode tokens.
    Attention,
    /// Each token passes through the value/output projections alone, i.e.
    /// attention weights fixed to the identity (a per-token dense layer).
    PerToken,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d_actor: usize,
    pub d_mode: usize,
    pub d_attn: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_modes: usize,
    pub mixing: MixingBlock,
    pub layer_norm: bool,
    pub residual: bool,
    /// Meters per unit of decoded position.
    pub output_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_actor: 16,
            d_mode: 8,
            d_attn: 32,
            n_heads: 1,
            d_ff: 32,
            n_modes: NUM_MODES,
            mixing: MixingBlock::Attention,
            layer_norm: true,
            residual: true,
            output_scale: 5.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.d_actor, self.d_mode, self.d_attn, self.n_heads, self.d_ff, self.n_modes];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("model config", "all dimensions must be ≥ 1"));
        }
        if self.d_attn % self.n_heads != 0 {
            return Err(Error::invalid("model config", "d_attn must be divisible by n_heads"));
        }
        if !(self.output_scale > 0.0) {
            return Err(Error::invalid("model config", "output_scale must be > 0"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_attn / self.n_heads
    }

    fn layout(&self) -> Vec<(&'static str, [usize; 2])> {
        let (a, m, d, f) = (self.d_actor, self.d_mode, self.d_attn, self.d_ff);
        vec![
            ("mode_embedding", [self.n_modes, m]),
            ("token.weight", [a + m, d]),
            ("token.bias", [1, d]),
            ("ln1.gain", [1, d]),
            ("ln1.bias", [1, d]),
            ("attn.query.weight", [d, d]),
            ("attn.query.bias", [1, d]),
            ("attn.key.weight", [d, d]),
            ("attn.key.bias", [1, d]),
            ("attn.value.weight", [d, d]),
            ("attn.value.bias", [1, d]),
            ("attn.output.weight", [d, d]),
            ("attn.output.bias", [1, d]),
            ("ln2.gain", [1, d]),
            ("ln2.bias", [1, d]),
            ("dense.hidden.weight", [d, f]),
            ("dense.hidden.bias", [1, f]),
            ("dense.output.weight", [f, d]),
            ("dense.output.bias", [1, d]),
            ("head.weight", [d, HEAD_OUTPUTS]),
            ("head.bias", [1, HEAD_OUTPUTS]),
        ]
    }
}

/// Named slot inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainable tensors stored contiguously, addressed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    config: ModelConfig,
    specs: Vec<TensorSpec>,
    data: Vec<f64>,
}

// Indices into `specs`, matching `ModelConfig::layout`.
pub(crate) mod slot {
    pub const MODE_EMB: usize = 0;
    pub const TOK_W: usize = 1;
    pub const TOK_B: usize = 2;
    pub const LN1_G: usize = 3;
    pub const LN1_B: usize = 4;
    pub const Q_W: usize = 5;
    pub const Q_B: usize = 6;
    pub const K_W: usize = 7;
    pub const K_B: usize = 8;
    pub const V_W: usize = 9;
    pub const V_B: usize = 10;
    pub const O_W: usize = 11;
    pub const O_B: usize = 12;
    pub const LN2_G: usize = 13;
    pub const LN2_B: usize = 14;
    pub const FF1_W: usize = 15;
    pub const FF1_B: usize = 16;
    pub const FF2_W: usize = 17;
    pub const FF2_B: usize = 18;
    pub const HEAD_W: usize = 19;
    pub const HEAD_B: usize = 20;
}

impl Parameters {
    /// All-zero parameters (layer-norm gains included).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut specs = Vec::new();
        let mut offset = 0;
        for (name, shape) in config.layout() {
            specs.push(TensorSpec {
                name: name.into(),
                shape,
                offset,
            });
            offset += shape[0] * shape[1];
        }
        Ok(Self {
            config,
            specs,
            data: vec![0.0; offset],
        })
    }

    /// Seeded initialization: `N(0, 1/fan_in)` weights, zero biases, unit
    /// layer-norm gains, `N(0, 1)` mode embeddings and a head scaled down so
    /// initial outputs stay near zero.
    pub fn init(config: ModelConfig) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        for i in 0..p.specs.len() {
            let spec = p.specs[i].clone();
            let fan_in = spec.shape[0] as f64;
            let std = match i {
                slot::MODE_EMB => 1.0,
                slot::HEAD_W => 0.1 / libm::sqrt(fan_in),
                slot::LN1_G | slot::LN2_G => {
                    p.data[spec.offset..spec.offset + spec.len()].fill(1.0);
                    continue;
                }
                _ if spec.shape[0] == 1 => continue,
                _ => 1.0 / libm::sqrt(fan_in),
            };
            for v in &mut p.data[spec.offset..spec.offset + spec.len()] {
                *v = std * unit.sample(&mut rng);
            }
        }
        Ok(p)
    }

    pub fn from_tensors(config: ModelConfig, tensors: &[(String, [usize; 2], Vec<f64>)]) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        for spec in p.specs.clone() {
            let (_, shape, values) = tensors
                .iter()
                .find(|t| t.0 == spec.name)
                .ok_or_else(|| Error::invalid("checkpoint", alloc::format!("missing tensor {}", spec.name)))?;
            if *shape != spec.shape || values.len() != spec.len() {
                return Err(Error::Shape {
                    what: "checkpoint tensor",
                    expected: spec.len(),
                    got: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("checkpoint tensor"));
            }
            p.data[spec.offset..spec.offset + spec.len()].copy_from_slice(values);
        }
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.specs
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.data[s.offset..s.offset + s.len()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.specs.iter().find(|s| s.name == name)?.clone();
        Some(&mut self.data[s.offset..s.offset + s.len()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub(crate) fn get(&self, slot: usize) -> &[f64] {
        let s = &self.specs[slot];
        &self.data[s.offset..s.offset + s.len()]
    }

    pub(crate) fn spec(&self, slot: usize) -> &TensorSpec {
        &self.specs[slot]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        assert!(c.validate().is_ok());
        c.n_heads = 3;
        assert!(c.validate().is_err());
        c.n_heads = 1;
        c.d_mode = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let c = ModelConfig::default();
        let a = Parameters::init(c).unwrap();
        let b = Parameters::init(c).unwrap();
        assert_eq!(a, b);
        let d = Parameters::init(ModelConfig { seed: 1, ..c }).unwrap();
        assert_ne!(a, d);
        assert!(a.tensor("ln1.gain").unwrap().iter().all(|&g| g == 1.0));
        assert!(a.tensor("head.bias").unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn tensors_roundtrip() {
        let p = Parameters::init(ModelConfig::default()).unwrap();
        let tensors: Vec<_> = p
            .specs()
            .iter()
            .map(|s| (s.name.clone(), s.shape, p.tensor(&s.name).unwrap().to_vec()))
            .collect();
        assert_eq!(Parameters::from_tensors(*p.config(), &tensors).unwrap(), p);
        assert!(Parameters::from_tensors(*p.config(), &tensors[1..]).is_err());
    }
}
