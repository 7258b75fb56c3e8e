//! Model checkpoints: the architecture plus a flat map of named row-major
//! tensors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use kraken_core::mixture::DisplacementPower;
use kraken_core::transformer::{MixingBlock, ModelConfig, Parameters};

use crate::error::{KrakenError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigRecord {
    pub d_actor: usize,
    pub d_mode: usize,
    pub d_attn: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_modes: usize,
    /// `"attention"` or `"per_token"`.
    pub mixing: String,
    pub layer_norm: bool,
    pub residual: bool,
    pub output_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: ConfigRecord,
    /// Displacement power the model was trained with.
    pub r: f64,
    /// Whether the covariance head was trained (`"predicted"`) or a schedule was used (`"schedule"`).
    pub cov: String,
    pub tensors: BTreeMap<String, TensorRecord>,
}

fn mixing_name(m: MixingBlock) -> &'static str {
    match m {
        MixingBlock::Attention => "attention",
        MixingBlock::PerToken => "per_token",
    }
}

impl From<&ModelConfig> for ConfigRecord {
    fn from(c: &ModelConfig) -> Self {
        Self {
            d_actor: c.d_actor,
            d_mode: c.d_mode,
            d_attn: c.d_attn,
            n_heads: c.n_heads,
            d_ff: c.d_ff,
            n_modes: c.n_modes,
            mixing: mixing_name(c.mixing).into(),
            layer_norm: c.layer_norm,
            residual: c.residual,
            output_scale: c.output_scale,
            seed: c.seed,
        }
    }
}

impl ConfigRecord {
    fn to_config(&self) -> std::result::Result<ModelConfig, String> {
        let mixing = match self.mixing.as_str() {
            "attention" => MixingBlock::Attention,
            "per_token" => MixingBlock::PerToken,
            other => return Err(format!("unknown mixing block `{other}`")),
        };
        Ok(ModelConfig {
            d_actor: self.d_actor,
            d_mode: self.d_mode,
            d_attn: self.d_attn,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            n_modes: self.n_modes,
            mixing,
            layer_norm: self.layer_norm,
            residual: self.residual,
            output_scale: self.output_scale,
            seed: self.seed,
        })
    }
}

impl Checkpoint {
    pub fn new(params: &Parameters, r: DisplacementPower, predicted_cov: bool) -> Self {
        let tensors = params
            .specs()
            .iter()
            .map(|s| {
                let values = params.tensor(&s.name).expect("spec names a tensor").to_vec();
                (s.name.clone(), TensorRecord { shape: s.shape, values })
            })
            .collect();
        Self {
            config: params.config().into(),
            r: r.get(),
            cov: if predicted_cov { "predicted" } else { "schedule" }.into(),
            tensors,
        }
    }

    pub fn parameters(&self) -> std::result::Result<Parameters, String> {
        let config = self.config.to_config()?;
        let tensors: Vec<(String, [usize; 2], Vec<f64>)> = self
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), t.shape, t.values.clone()))
            .collect();
        Parameters::from_tensors(config, &tensors).map_err(|e| e.to_string())
    }

    pub fn power(&self) -> std::result::Result<DisplacementPower, String> {
        DisplacementPower::new(self.r).map_err(|e| e.to_string())
    }

    pub fn predicted_cov(&self) -> bool {
        self.cov == "predicted"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        fs::write(path, text + "\n").map_err(|e| KrakenError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| KrakenError::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|source| KrakenError::Parse {
            path: path.into(),
            line: 1,
            source,
        })?;
        let format_err = |reason| KrakenError::Format {
            path: path.into(),
            reason,
        };
        ck.parameters().map_err(format_err)?;
        ck.power().map_err(format_err)?;
        if !matches!(ck.cov.as_str(), "predicted" | "schedule") {
            return Err(format_err(format!("unknown cov mode `{}`", ck.cov)));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let cfg = ModelConfig {
            mixing: MixingBlock::PerToken,
            seed: 3,
            ..ModelConfig::default()
        };
        let p = Parameters::init(cfg).unwrap();
        let ck = Checkpoint::new(&p, DisplacementPower::default(), false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.parameters().unwrap().as_slice(), p.as_slice());
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let p = Parameters::init(ModelConfig::default()).unwrap();
        let mut ck = Checkpoint::new(&p, DisplacementPower::default(), false);
        ck.tensors.get_mut("head.bias").unwrap().shape = [2, 2];
        assert!(ck.parameters().is_err());
    }
}
