use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, NeuralError, ParamStore};

pub const CHECKPOINT_FORMAT: &str = "t3former-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON container of a model configuration and its named weights.
/// Floats are written in shortest round-trip form, so save/load is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ParamStore) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String, NeuralError> {
        serde_json::to_string(self).map_err(|e| NeuralError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, NeuralError> {
        let ckpt: Self = serde_json::from_str(text).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NeuralError::Checkpoint(format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NeuralError::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        std::fs::write(path, self.to_json()?).map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        let text = std::fs::read_to_string(path).map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Model;

    #[test]
    fn round_trip_is_bit_exact() {
        let config = ModelConfig {
            feature_dim: 5,
            ..ModelConfig::default()
        };
        let (_, params) = Model::new(config.clone(), 11).unwrap();
        let ckpt = Checkpoint::new(config, params);
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        for (a, b) in ckpt.params.tensors().iter().zip(back.params.tensors()) {
            let bits = |t: &crate::neural::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(ckpt, back);
    }

    #[test]
    fn rejects_foreign_format() {
        let ckpt = Checkpoint::new(ModelConfig::default(), ParamStore::new());
        let text = ckpt.to_json().unwrap().replace(CHECKPOINT_FORMAT, "other");
        assert!(Checkpoint::from_json(&text).is_err());
        let text = ckpt.to_json().unwrap().replace("\"version\":1", "\"version\":9");
        assert!(Checkpoint::from_json(&text).is_err());
    }
}
