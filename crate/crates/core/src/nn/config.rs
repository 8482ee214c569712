use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifierConfig {
    pub enabled: bool,
    pub control_points: usize,
    /// Height of the downsampled copy the localization network sees.
    pub loc_height: usize,
    pub loc_channels: Vec<usize>,
    pub loc_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub stage_blocks: Vec<usize>,
    /// Per-stage (height, width) stride.
    pub stage_strides: Vec<(usize, usize)>,
    pub recurrent_layers: usize,
    pub recurrent_hidden: usize,
}

impl EncoderConfig {
    /// Length L of the feature sequence.
    pub fn sequence_len(&self) -> usize {
        self.input_width / self.stage_strides.iter().map(|s| s.1).product::<usize>()
    }

    /// Depth C of each feature vector.
    pub fn feature_dim(&self) -> usize {
        2 * self.recurrent_hidden
    }

    /// Number of 3x3 convolution layers in the residual trunk.
    pub fn conv_layers(&self) -> usize {
        1 + 2 * self.stage_blocks.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stage_channels.len();
        if n == 0 || self.stage_blocks.len() != n || self.stage_strides.len() != n {
            return Err(Error::Config(
                "encoder stage channels, blocks and strides must have the same non-zero length".into(),
            ));
        }
        if self.stage_blocks.iter().any(|&b| b == 0) {
            return Err(Error::Config("every encoder stage needs at least one block".into()));
        }
        let sh: usize = self.stage_strides.iter().map(|s| s.0).product();
        let sw: usize = self.stage_strides.iter().map(|s| s.1).product();
        if sh != self.input_height {
            return Err(Error::Config(format!(
                "product of height strides ({sh}) must equal the input height ({})",
                self.input_height
            )));
        }
        if sw == 0 || self.input_width % sw != 0 || self.input_width / sw == 0 {
            return Err(Error::Config(format!(
                "input width {} is not divisible by the total width stride {sw}",
                self.input_width
            )));
        }
        if self.recurrent_layers == 0 || self.recurrent_hidden == 0 {
            return Err(Error::Config("encoder needs at least one recurrent layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticConfig {
    pub hidden: usize,
    pub embed_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub attention: usize,
    pub token_embed: usize,
    pub max_len: usize,
}

/// Which of the optional model components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    /// Additive attention; when off the context is the mean feature vector.
    pub attention: bool,
    /// Cosine supervision of the semantic vector by the word embedding.
    pub wes: bool,
    /// Decoder state initialized from the semantic vector (zeros otherwise).
    pub init: bool,
}

impl Variant {
    pub const FULL: Variant = Variant {
        attention: true,
        wes: true,
        init: true,
    };

    /// The five rows of the ablation grid, baseline first.
    pub const GRID: [Variant; 5] = [
        Variant { attention: false, wes: false, init: false },
        Variant { attention: true, wes: false, init: false },
        Variant { attention: true, wes: true, init: false },
        Variant { attention: true, wes: false, init: true },
        Variant { attention: true, wes: true, init: true },
    ];

    pub fn uses_semantic_head(&self) -> bool {
        self.wes || self.init
    }

    pub fn label(&self) -> String {
        let mut parts = vec!["CNN-RNN"];
        if self.attention {
            parts.push("Att");
        }
        if self.wes {
            parts.push("WES");
        }
        if self.init {
            parts.push("INIT");
        }
        parts.join("+")
    }
}

impl Default for Variant {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub rectifier: RectifierConfig,
    pub encoder: EncoderConfig,
    pub semantic: SemanticConfig,
    pub decoder: DecoderConfig,
    pub variant: Variant,
}

impl ModelConfig {
    /// Full-size configuration: 64x256 input, 45-layer residual trunk,
    /// 2-layer BiLSTM with 256 units per direction, 512-unit decoder.
    pub fn full() -> Self {
        Self {
            rectifier: RectifierConfig {
                enabled: true,
                control_points: 20,
                loc_height: 32,
                loc_channels: vec![32, 64, 128, 256],
                loc_hidden: 256,
            },
            encoder: EncoderConfig {
                input_height: 64,
                input_width: 256,
                stem_channels: 32,
                stage_channels: vec![32, 64, 128, 256, 512],
                stage_blocks: vec![3, 4, 6, 6, 3],
                stage_strides: vec![(2, 2), (2, 2), (2, 1), (2, 1), (4, 1)],
                recurrent_layers: 2,
                recurrent_hidden: 256,
            },
            semantic: SemanticConfig {
                hidden: 512,
                embed_dim: 300,
            },
            decoder: DecoderConfig {
                hidden: 512,
                attention: 512,
                token_embed: 512,
                max_len: 32,
            },
            variant: Variant::FULL,
        }
    }

    /// Desk-scale configuration for CPU experiments: 32x128 input, one block
    /// per stage and narrow layers.
    pub fn toy() -> Self {
        Self {
            rectifier: RectifierConfig {
                enabled: true,
                control_points: 20,
                loc_height: 32,
                loc_channels: vec![8, 16, 32],
                loc_hidden: 32,
            },
            encoder: EncoderConfig {
                input_height: 32,
                input_width: 128,
                stem_channels: 16,
                stage_channels: vec![16, 32, 48, 64, 64],
                stage_blocks: vec![1, 1, 1, 1, 1],
                stage_strides: vec![(2, 2), (2, 2), (2, 1), (2, 1), (2, 1)],
                recurrent_layers: 2,
                recurrent_hidden: 48,
            },
            semantic: SemanticConfig {
                hidden: 96,
                embed_dim: 32,
            },
            decoder: DecoderConfig {
                hidden: 96,
                attention: 64,
                token_embed: 32,
                max_len: 24,
            },
            variant: Variant::FULL,
        }
    }

    /// Changes the input size, adapting the height stride of the last stage
    /// so the trunk still collapses the height to 1.
    pub fn set_input_size(&mut self, height: usize, width: usize) -> Result<()> {
        let e = &mut self.encoder;
        let n = e.stage_strides.len();
        let rest: usize = e.stage_strides[..n.saturating_sub(1)]
            .iter()
            .map(|s| s.0)
            .product();
        if n == 0 || height % rest != 0 {
            return Err(Error::Config(format!(
                "input height {height} must be a multiple of {rest}"
            )));
        }
        e.stage_strides[n - 1].0 = height / rest;
        e.input_height = height;
        e.input_width = width;
        self.encoder.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let r = &self.rectifier;
        if r.enabled {
            if r.control_points < 4 || r.control_points % 2 != 0 {
                return Err(Error::Config(format!(
                    "control point count must be even and >= 4, got {}",
                    r.control_points
                )));
            }
            if r.loc_channels.is_empty() || r.loc_hidden == 0 || r.loc_height == 0 {
                return Err(Error::Config("rectifier localization network is empty".into()));
            }
        }
        if self.semantic.hidden == 0 || self.semantic.embed_dim == 0 {
            return Err(Error::Config("semantic head sizes must be positive".into()));
        }
        let d = &self.decoder;
        if d.hidden == 0 || d.attention == 0 || d.token_embed == 0 || d.max_len == 0 {
            return Err(Error::Config("decoder sizes must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_shapes() {
        let c = ModelConfig::full();
        c.validate().unwrap();
        assert_eq!(c.encoder.conv_layers(), 45);
        assert_eq!(c.encoder.sequence_len(), 64);
        assert_eq!(c.encoder.feature_dim(), 512);
    }

    #[test]
    fn toy_config_is_valid() {
        let c = ModelConfig::toy();
        c.validate().unwrap();
        assert_eq!(c.encoder.sequence_len(), 32);
    }

    #[test]
    fn stride_product_must_match_height() {
        let mut c = ModelConfig::full();
        c.encoder.stage_strides[4] = (2, 1);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn input_size_override() {
        let mut c = ModelConfig::full();
        c.set_input_size(32, 128).unwrap();
        assert_eq!(c.encoder.stage_strides[4], (2, 1));
        assert_eq!(c.encoder.sequence_len(), 32);
        assert!(c.set_input_size(40, 128).is_err());
    }

    #[test]
    fn grid_labels() {
        let labels: Vec<String> = Variant::GRID.iter().map(Variant::label).collect();
        assert_eq!(
            labels,
            ["CNN-RNN", "CNN-RNN+Att", "CNN-RNN+Att+WES", "CNN-RNN+Att+INIT", "CNN-RNN+Att+WES+INIT"]
        );
    }
}
