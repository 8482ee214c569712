//! Flat key-value training configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::config::{ModelConfig, Variant};
use crate::train::augment::AugmentSettings;
use crate::train::optim::AdadeltaConfig;

/// Every key is optional in the file; missing keys take the defaults below.
/// Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub eps: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub lambda: f64,
    pub input_height: usize,
    pub input_width: usize,
    pub beam_width: usize,
    pub seed: u64,
    /// "full" or "toy".
    pub model: String,
    pub rectifier: bool,
    pub attention: bool,
    pub wes: bool,
    pub init: bool,
    pub max_len: usize,
    /// Fraction of the training set held out for model selection when the
    /// dataset has no validation split.
    pub val_fraction: f64,
    /// Stop once the selection WER is at or below this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop_wer: Option<f64>,
    pub augment: bool,
    pub affine_prob: f64,
    pub rotation_deg: f64,
    pub shear: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub elastic_prob: f64,
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    pub brightness_prob: f64,
    pub brightness: f64,
    pub contrast_prob: f64,
    pub contrast_min: f64,
    pub contrast_max: f64,
    pub out_dir: PathBuf,
    /// Write a checkpoint after every epoch besides the best one.
    pub save_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let aug = AugmentSettings::default();
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1.0,
            rho: 0.95,
            eps: 1e-8,
            clip_norm: 5.0,
            lambda: 1.0,
            input_height: 64,
            input_width: 256,
            beam_width: 5,
            seed: 0,
            model: "full".into(),
            rectifier: true,
            attention: true,
            wes: true,
            init: true,
            max_len: 32,
            val_fraction: 0.1,
            early_stop_wer: None,
            augment: true,
            affine_prob: aug.affine_prob,
            rotation_deg: aug.rotation_deg,
            shear: aug.shear,
            scale_min: aug.scale_min,
            scale_max: aug.scale_max,
            elastic_prob: aug.elastic_prob,
            elastic_alpha: aug.elastic_alpha,
            elastic_sigma: aug.elastic_sigma,
            brightness_prob: aug.brightness_prob,
            brightness: aug.brightness,
            contrast_prob: aug.contrast_prob,
            contrast_min: aug.contrast_min,
            contrast_max: aug.contrast_max,
            out_dir: PathBuf::from("runs"),
            save_every_epoch: false,
        }
    }
}

impl TrainConfig {
    /// Small, fast settings for CPU experiments.
    pub fn toy() -> Self {
        Self {
            model: "toy".into(),
            input_height: 32,
            input_width: 128,
            batch_size: 16,
            max_len: 24,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::Config(format!("{origin}: {}", e.to_string().trim())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("input_height", self.input_height),
            ("input_width", self.input_width),
            ("beam_width", self.beam_width),
            ("max_len", self.max_len),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0) || !(self.eps > 0.0) || !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(
                "learning_rate and eps must be positive and rho in [0, 1)".into(),
            ));
        }
        if !(self.lambda >= 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config("lambda and clip_norm must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if self.scale_min > self.scale_max || self.contrast_min > self.contrast_max {
            return Err(Error::Config("augmentation ranges must have min <= max".into()));
        }
        self.model_config().map(|_| ())
    }

    pub fn variant(&self) -> Variant {
        Variant {
            attention: self.attention,
            wes: self.wes,
            init: self.init,
        }
    }

    /// Effective embedding weight: WES off means lambda = 0.
    pub fn effective_lambda(&self) -> f64 {
        if self.wes {
            self.lambda
        } else {
            0.0
        }
    }

    /// Network configuration for the given word-embedding dimension.
    pub fn model_config_with_embed(&self, embed_dim: usize) -> Result<ModelConfig> {
        let mut m = self.model_config()?;
        m.semantic.embed_dim = embed_dim;
        m.validate()?;
        Ok(m)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = match self.model.as_str() {
            "full" => ModelConfig::full(),
            "toy" => ModelConfig::toy(),
            other => {
                return Err(Error::Config(format!(
                    "model must be \"full\" or \"toy\", got {other:?}"
                )))
            }
        };
        m.set_input_size(self.input_height, self.input_width)?;
        m.rectifier.enabled = self.rectifier;
        m.decoder.max_len = self.max_len;
        m.variant = self.variant();
        m.validate()?;
        Ok(m)
    }

    pub fn augment_settings(&self) -> AugmentSettings {
        if !self.augment {
            return AugmentSettings::none();
        }
        AugmentSettings {
            affine_prob: self.affine_prob,
            rotation_deg: self.rotation_deg,
            shear: self.shear,
            scale_min: self.scale_min,
            scale_max: self.scale_max,
            elastic_prob: self.elastic_prob,
            elastic_alpha: self.elastic_alpha,
            elastic_sigma: self.elastic_sigma,
            brightness_prob: self.brightness_prob,
            brightness: self.brightness,
            contrast_prob: self.contrast_prob,
            contrast_min: self.contrast_min,
            contrast_max: self.contrast_max,
        }
    }

    pub fn optimizer(&self) -> AdadeltaConfig {
        AdadeltaConfig {
            learning_rate: self.learning_rate,
            rho: self.rho,
            eps: self.eps,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml(&c.to_toml(), "x").unwrap(), c);
        let m = c.model_config().unwrap();
        assert_eq!(m.encoder.conv_layers(), 45);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = TrainConfig::from_toml("epochs = 3\nmodel = \"toy\"\ninput_height = 32\ninput_width = 128\n", "x")
            .unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.model_config().unwrap().encoder.sequence_len(), 32);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = TrainConfig::from_toml("epochz = 3\n", "cfg.toml").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("epochz"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn invalid_values() {
        assert!(TrainConfig::from_toml("batch_size = 0\n", "x").is_err());
        assert!(TrainConfig::from_toml("lambda = -1.0\n", "x").is_err());
        assert!(TrainConfig::from_toml("model = \"huge\"\n", "x").is_err());
        assert!(TrainConfig::from_toml("input_height = 50\n", "x").is_err());
    }

    #[test]
    fn wes_off_zeroes_lambda() {
        let c = TrainConfig {
            wes: false,
            ..TrainConfig::default()
        };
        assert_eq!(c.effective_lambda(), 0.0);
    }
}
