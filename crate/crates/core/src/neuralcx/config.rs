use serde::{Deserialize, Serialize};

use super::features::FeatureDims;
use crate::error::{CxError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralCxConfig {
    pub n_layers: usize,
    pub hidden_units: usize,
    pub dropout_p: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub feature_dims: FeatureDims,
    /// Record elapsed seconds in the training log; off keeps logs
    /// byte-identical across runs.
    pub record_wallclock: bool,
}

impl Default for NeuralCxConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl NeuralCxConfig {
    pub fn reference() -> Self {
        Self {
            n_layers: 2,
            hidden_units: 512,
            dropout_p: 0.25,
            learning_rate: 1e-4,
            batch_size: 64,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            feature_dims: FeatureDims::reference(),
            record_wallclock: false,
        }
    }

    /// Small widths and a faster learning rate for synthetic data.
    pub fn desk() -> Self {
        Self {
            hidden_units: 64,
            learning_rate: 1e-3,
            feature_dims: FeatureDims::desk(),
            ..Self::reference()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CxError::InvalidArgument(m));
        if self.n_layers == 0 || self.hidden_units == 0 {
            return bad(format!(
                "need N >= 1 and h >= 1, got N={} h={}",
                self.n_layers, self.hidden_units
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout_p));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch budget must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        NeuralCxConfig::reference().validate().unwrap();
        NeuralCxConfig::desk().validate().unwrap();
        assert!(NeuralCxConfig {
            dropout_p: 1.0,
            ..NeuralCxConfig::desk()
        }
        .validate()
        .is_err());
        assert!(NeuralCxConfig {
            n_layers: 0,
            ..NeuralCxConfig::desk()
        }
        .validate()
        .is_err());
        assert!(NeuralCxConfig {
            learning_rate: 0.0,
            ..NeuralCxConfig::desk()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: NeuralCxConfig = serde_json::from_str(r#"{"hidden_units": 16}"#).unwrap();
        assert_eq!(c.hidden_units, 16);
        assert_eq!(c.n_layers, 2);
    }
}
