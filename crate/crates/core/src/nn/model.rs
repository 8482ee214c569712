//! The full recognizer: rectify, encode, predict semantics, decode.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::beam::{beam_search, Hypothesis, SearchConfig};
use crate::charset::{Charset, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::nn::config::ModelConfig;
use crate::nn::decoder::{Decoder, Memory};
use crate::nn::encoder::Encoder;
use crate::nn::params::ParamStore;
use crate::nn::rectifier::{images_to_tensor, Rectifier};
use crate::nn::semantic::SemanticHead;

/// Everything the decoder needs for a batch of images.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub features: Tensor,
    /// `B x D_e`, present when the variant uses the semantic head.
    pub semantic: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recognition {
    pub text: String,
    pub hypothesis: Hypothesis,
}

#[derive(Debug, Clone)]
pub struct Recognizer {
    config: ModelConfig,
    charset: Charset,
    store: ParamStore,
    dtype: DType,
    device: Device,
    rectifier: Option<Rectifier>,
    encoder: Encoder,
    semantic: Option<SemanticHead>,
    decoder: Decoder,
}

impl Recognizer {
    /// Builds the network with parameters drawn from `seed`.
    pub fn new(config: &ModelConfig, charset: Charset, seed: u64, dtype: DType) -> Result<Self> {
        Self::with_store(config, charset, ParamStore::new(seed), dtype)
    }

    /// Builds the network on an existing store; variables already present
    /// (e.g. loaded from a checkpoint) are reused.
    pub fn with_store(
        config: &ModelConfig,
        charset: Charset,
        store: ParamStore,
        dtype: DType,
    ) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let vb = store.var_builder(dtype, &device);
        let enc_cfg = &config.encoder;
        let rectifier = if config.rectifier.enabled {
            Some(Rectifier::new(
                &config.rectifier,
                enc_cfg.input_height,
                enc_cfg.input_width,
                vb.pp("rectifier"),
            )?)
        } else {
            None
        };
        let encoder = Encoder::new(enc_cfg, vb.pp("encoder"))?;
        let variant = config.variant;
        let semantic = if variant.uses_semantic_head() {
            Some(SemanticHead::new(
                enc_cfg.sequence_len(),
                enc_cfg.feature_dim(),
                &config.semantic,
                vb.pp("semantic"),
            )?)
        } else {
            None
        };
        let decoder = Decoder::new(
            &config.decoder,
            charset.vocab_size(),
            enc_cfg.feature_dim(),
            variant.init.then_some(config.semantic.embed_dim),
            variant.attention,
            vb.pp("decoder"),
        )?;
        Ok(Self {
            config: config.clone(),
            charset,
            store,
            dtype,
            device,
            rectifier,
            encoder,
            semantic,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn charset(&self) -> &Charset {
        &self.charset
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn rectifier(&self) -> Option<&Rectifier> {
        self.rectifier.as_ref()
    }

    pub fn semantic_head(&self) -> Option<&SemanticHead> {
        self.semantic.as_ref()
    }

    /// Input size `(height, width)` images must be preprocessed to.
    pub fn input_size(&self) -> (usize, usize) {
        (self.config.encoder.input_height, self.config.encoder.input_width)
    }

    pub fn batch_tensor(&self, images: &[&Image]) -> Result<Tensor> {
        images_to_tensor(images, self.dtype, &self.device)
    }

    pub fn encode(&self, images: &Tensor, train: bool) -> Result<Encoded> {
        let x = match &self.rectifier {
            Some(r) => r.forward(images, train)?,
            None => {
                crate::nn::rectifier::check_finite(images)?;
                images.clone()
            }
        };
        let features = self.encoder.forward(&x, train)?;
        let semantic = match &self.semantic {
            Some(head) => Some(head.forward(&features)?),
            None => None,
        };
        Ok(Encoded { features, semantic })
    }

    fn init_state(&self, encoded: &Encoded) -> Result<Tensor> {
        let b = encoded.features.dim(0)?;
        let s = if self.config.variant.init {
            encoded.semantic.as_ref()
        } else {
            None
        };
        self.decoder.init_state(s, b)
    }

    /// Teacher-forced logits `B x T x V` plus the encoder outputs.
    pub fn forward_teacher(
        &self,
        images: &Tensor,
        targets: &[Vec<u32>],
        train: bool,
    ) -> Result<(Tensor, Encoded)> {
        let encoded = self.encode(images, train)?;
        let memory = self.decoder.memory(&encoded.features)?;
        let init = self.init_state(&encoded)?;
        let logits = self.decoder.decode_teacher_forced(&memory, &init, targets)?;
        Ok((logits, encoded))
    }

    /// Predicted semantic vectors `B x D_e`.
    pub fn semantic_vectors(&self, images: &Tensor) -> Result<Tensor> {
        self.encode(images, false)?.semantic.ok_or_else(|| {
            Error::InvalidInput(format!(
                "variant {} has no semantic head",
                self.config.variant.label()
            ))
        })
    }

    pub fn search_config(&self, width: usize) -> SearchConfig {
        SearchConfig {
            width,
            max_len: self.config.decoder.max_len,
            bos: BOS,
            eos: EOS,
            banned: vec![PAD, BOS],
        }
    }

    /// Recognizes a batch of preprocessed images. Width 1 runs batched greedy
    /// decoding, wider beams run per image.
    pub fn recognize(&self, images: &[&Image], beam_width: usize) -> Result<Vec<Recognition>> {
        if beam_width == 0 {
            return Err(Error::InvalidInput("beam width must be at least 1".into()));
        }
        let x = self.batch_tensor(images)?;
        let encoded = self.encode(&x, false)?;
        let memory = self.decoder.memory(&encoded.features)?;
        let init = self.init_state(&encoded)?;
        if beam_width == 1 {
            return self.greedy(&memory, &init);
        }
        let cfg = self.search_config(beam_width);
        (0..images.len())
            .map(|i| {
                let session = self
                    .decoder
                    .session(&memory.row(i)?, &init.narrow(0, i, 1)?)?;
                let best = beam_search(&session, &cfg)?
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::Numeric("beam search produced no hypothesis".into()))?;
                Ok(Recognition {
                    text: self.charset.decode(&best.token_ids),
                    hypothesis: best,
                })
            })
            .collect()
    }

    fn greedy(&self, memory: &Memory, init: &Tensor) -> Result<Vec<Recognition>> {
        Ok(self
            .decoder
            .greedy_batch(memory, init, self.config.decoder.max_len)?
            .into_iter()
            .map(|hypothesis| Recognition {
                text: self.charset.decode(&hypothesis.token_ids),
                hypothesis,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::config::Variant;

    fn tiny_config(variant: Variant) -> ModelConfig {
        let mut c = ModelConfig::toy();
        c.encoder.input_height = 8;
        c.encoder.input_width = 16;
        c.encoder.stem_channels = 4;
        c.encoder.stage_channels = vec![4, 6, 8];
        c.encoder.stage_blocks = vec![1, 1, 1];
        c.encoder.stage_strides = vec![(2, 2), (2, 1), (2, 1)];
        c.encoder.recurrent_hidden = 5;
        c.rectifier.loc_height = 8;
        c.rectifier.loc_channels = vec![4, 4];
        c.rectifier.loc_hidden = 6;
        c.rectifier.control_points = 6;
        c.semantic.hidden = 7;
        c.semantic.embed_dim = 4;
        c.decoder = crate::nn::config::DecoderConfig {
            hidden: 6,
            attention: 5,
            token_embed: 4,
            max_len: 5,
        };
        c.variant = variant;
        c
    }

    fn images(n: usize) -> Vec<Image> {
        (0..n)
            .map(|k| {
                let data = (0..8 * 16)
                    .map(|i| (((i * 7 + k * 3) % 13) as f32 / 6.5) - 1.0)
                    .collect();
                Image::new(8, 16, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn every_variant_builds_and_runs() {
        let charset = Charset::from_words(["ab", "ba"]);
        for v in Variant::GRID {
            let model = Recognizer::new(&tiny_config(v), charset.clone(), 3, DType::F32).unwrap();
            assert_eq!(model.semantic_head().is_some(), v.uses_semantic_head());
            let imgs = images(2);
            let refs: Vec<&Image> = imgs.iter().collect();
            let x = model.batch_tensor(&refs).unwrap();
            let (logits, enc) = model
                .forward_teacher(&x, &[vec![4, 5, EOS], vec![5, EOS]], true)
                .unwrap();
            assert_eq!(logits.dims(), &[2, 3, 6]);
            assert_eq!(enc.semantic.is_some(), v.uses_semantic_head());
            let once = model.recognize(&refs, 1).unwrap();
            assert_eq!(once, model.recognize(&refs, 1).unwrap());
            assert_eq!(model.recognize(&refs, 3).unwrap().len(), 2);
        }
    }

    #[test]
    fn greedy_matches_beam_of_one() {
        let charset = Charset::from_words(["abc"]);
        let model = Recognizer::new(&tiny_config(Variant::FULL), charset, 9, DType::F64).unwrap();
        let imgs = images(3);
        let refs: Vec<&Image> = imgs.iter().collect();
        let greedy = model.recognize(&refs, 1).unwrap();
        let x = model.batch_tensor(&refs).unwrap();
        let enc = model.encode(&x, false).unwrap();
        let mem = model.decoder.memory(&enc.features).unwrap();
        let init = model.init_state(&enc).unwrap();
        for (i, g) in greedy.iter().enumerate() {
            let s = model
                .decoder
                .session(&mem.row(i).unwrap(), &init.narrow(0, i, 1).unwrap())
                .unwrap();
            let b = beam_search(&s, &model.search_config(1)).unwrap();
            assert_eq!(b[0].token_ids, g.hypothesis.token_ids);
            assert!((b[0].log_prob - g.hypothesis.log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_model() {
        let charset = Charset::from_words(["ab"]);
        let a = Recognizer::new(&tiny_config(Variant::FULL), charset.clone(), 5, DType::F32).unwrap();
        let b = Recognizer::new(&tiny_config(Variant::FULL), charset, 5, DType::F32).unwrap();
        let imgs = images(1);
        let x = a.batch_tensor(&[&imgs[0]]).unwrap();
        let sa: Vec<Vec<f32>> = a.semantic_vectors(&x).unwrap().to_vec2().unwrap();
        let sb: Vec<Vec<f32>> = b.semantic_vectors(&x).unwrap().to_vec2().unwrap();
        assert_eq!(sa, sb);
    }
}
