//! Single-layer GRU decoder with additive attention over the feature sequence.

use candle_core::{DType, Module, Tensor, D};
use candle_nn::{Embedding, Init, Linear, VarBuilder};

use crate::beam::{Hypothesis, StepDecoder};
use crate::charset::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::nn::config::DecoderConfig;
use crate::nn::layers::{linear, sigmoid};

/// Encoder output prepared for repeated attention: the features and their
/// key projection `U_a h_i + b_a`.
#[derive(Debug, Clone)]
pub struct Memory {
    pub features: Tensor,
    keys: Tensor,
}

impl Memory {
    pub fn batch(&self) -> usize {
        self.features.dim(0).unwrap_or(0)
    }

    /// Copy of row `i` as a batch of one.
    pub fn row(&self, i: usize) -> Result<Memory> {
        Ok(Memory {
            features: self.features.narrow(0, i, 1)?,
            keys: self.keys.narrow(0, i, 1)?,
        })
    }

    fn repeat(&self, n: usize) -> Result<Memory> {
        if self.batch() == n {
            return Ok(self.clone());
        }
        let rep = |t: &Tensor| -> candle_core::Result<Tensor> {
            let (_, l, c) = t.dims3()?;
            t.broadcast_as((n, l, c))?.contiguous()
        };
        Ok(Memory {
            features: rep(&self.features)?,
            keys: rep(&self.keys)?,
        })
    }
}

/// Output of one decoding step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Tensor,
    pub state: Tensor,
    pub weights: Tensor,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    config: DecoderConfig,
    vocab: usize,
    feat_dim: usize,
    attention: bool,
    embedding: Embedding,
    init: Option<Linear>,
    attn_state: Tensor,
    attn_keys: Linear,
    attn_v: Tensor,
    gru_emb: Linear,
    gru_ctx: Tensor,
    gru_hidden: Linear,
    out: Linear,
}

impl Decoder {
    /// `semantic_dim` is `None` when the state starts at zero.
    pub fn new(
        config: &DecoderConfig,
        vocab: usize,
        feat_dim: usize,
        semantic_dim: Option<usize>,
        attention: bool,
        vb: VarBuilder,
    ) -> Result<Self> {
        let (h, a, e) = (config.hidden, config.attention, config.token_embed);
        let uni = |fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            Init::Uniform { lo: -b, up: b }
        };
        let embedding = Embedding::new(
            vb.pp("embedding")
                .get_with_hints((vocab, e), "weight", Init::Randn { mean: 0.0, stdev: 0.1 })?,
            e,
        );
        let init = match semantic_dim {
            Some(d) => Some(linear(d, h, vb.pp("init"))?),
            None => None,
        };
        Ok(Self {
            config: config.clone(),
            vocab,
            feat_dim,
            attention,
            embedding,
            init,
            attn_state: vb.pp("attention").get_with_hints((h, a), "w_state", uni(h))?,
            attn_keys: linear(feat_dim, a, vb.pp("attention.keys"))?,
            attn_v: vb.pp("attention").get_with_hints((a, 1), "v", uni(a))?,
            gru_emb: linear(e, 3 * h, vb.pp("gru.input_emb"))?,
            gru_ctx: vb.pp("gru.input_ctx").get_with_hints((feat_dim, 3 * h), "weight", uni(feat_dim))?,
            gru_hidden: linear(h, 3 * h, vb.pp("gru.hidden"))?,
            out: linear(h + feat_dim, vocab, vb.pp("out"))?,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    /// `tanh(W_init S + b_init)`, or zeros when semantic initialization is off.
    pub fn init_state(&self, semantic: Option<&Tensor>, batch: usize) -> Result<Tensor> {
        match (&self.init, semantic) {
            (Some(init), Some(s)) => {
                let d = init.weight().dim(1)?;
                let (b, sd) = s.dims2()?;
                if sd != d || b != batch {
                    return Err(Error::shape(
                        "semantic vector",
                        format!("{batch} x {d}"),
                        format!("{b} x {sd}"),
                    ));
                }
                Ok(init.forward(s)?.tanh()?)
            }
            (Some(_), None) => Err(Error::InvalidInput(
                "decoder expects a semantic vector for its initial state".into(),
            )),
            (None, _) => Ok(Tensor::zeros(
                (batch, self.config.hidden),
                self.attn_state.dtype(),
                self.attn_state.device(),
            )?),
        }
    }

    pub fn memory(&self, features: &Tensor) -> Result<Memory> {
        let (_, _, c) = features.dims3()?;
        if c != self.feat_dim {
            return Err(Error::shape("decoder features", self.feat_dim, c));
        }
        let keys = if self.attention {
            self.attn_keys.forward(features)?
        } else {
            features.zeros_like()?
        };
        Ok(Memory {
            features: features.clone(),
            keys,
        })
    }

    /// Context `B x C` and weights `B x L` for the current state.
    pub fn attend(&self, state: &Tensor, memory: &Memory) -> Result<(Tensor, Tensor)> {
        let (b, l, _) = memory.features.dims3()?;
        let weights = if self.attention {
            let q = state.matmul(&self.attn_state)?.unsqueeze(1)?;
            let e = memory.keys.broadcast_add(&q)?.tanh()?;
            let scores = e.broadcast_matmul(&self.attn_v)?.squeeze(2)?;
            candle_nn::ops::softmax(&scores, D::Minus1)?
        } else {
            (Tensor::ones((b, l), state.dtype(), state.device())? / l as f64)?
        };
        let ctx = memory
            .features
            .broadcast_mul(&weights.unsqueeze(2)?)?
            .sum(1)?;
        Ok((ctx, weights))
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.vocab) {
            return Err(Error::Vocabulary {
                id: bad,
                size: self.vocab,
            });
        }
        Ok(())
    }

    /// One step from `state` after emitting `prev`.
    pub fn decode_step(&self, state: &Tensor, prev: &[u32], memory: &Memory) -> Result<StepOutput> {
        self.check_ids(prev)?;
        let b = state.dim(0)?;
        if prev.len() != b || memory.batch() != b {
            return Err(Error::shape(
                "decoder step batch",
                b,
                format!("{} tokens, {} memories", prev.len(), memory.batch()),
            ));
        }
        let ids = Tensor::new(prev, state.device())?;
        let emb = self.embedding.forward(&ids)?;
        let (ctx, weights) = self.attend(state, memory)?;

        let h = self.config.hidden;
        let gx = (self.gru_emb.forward(&emb)? + ctx.matmul(&self.gru_ctx)?)?;
        let gh = self.gru_hidden.forward(state)?;
        let rz = sigmoid(&(gx.narrow(1, 0, 2 * h)? + gh.narrow(1, 0, 2 * h)?)?)?;
        let r = rz.narrow(1, 0, h)?;
        let z = rz.narrow(1, h, h)?;
        let n = (gx.narrow(1, 2 * h, h)? + (r * gh.narrow(1, 2 * h, h)?)?)?.tanh()?;
        let new_state = ((z.affine(-1.0, 1.0)? * n)? + (z * state)?)?;

        let logits = self
            .out
            .forward(&Tensor::cat(&[&new_state, &ctx], 1)?)?;
        Ok(StepOutput {
            logits,
            state: new_state,
            weights,
        })
    }

    /// Logits `B x T x V` with gold-token conditioning. Each target row ends
    /// with EOS; shorter rows are padded with PAD, whose positions must be
    /// masked from the loss.
    pub fn decode_teacher_forced(
        &self,
        memory: &Memory,
        init: &Tensor,
        targets: &[Vec<u32>],
    ) -> Result<Tensor> {
        if targets.is_empty() || targets.iter().any(|t| t.is_empty()) {
            return Err(Error::Data("empty decoding target".into()));
        }
        let t_max = targets.iter().map(Vec::len).max().unwrap_or(0);
        let mut state = init.clone();
        let mut steps = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let prev: Vec<u32> = targets
                .iter()
                .map(|row| if t == 0 { BOS } else { row.get(t - 1).copied().unwrap_or(PAD) })
                .collect();
            let out = self.decode_step(&state, &prev, memory)?;
            steps.push(out.logits);
            state = out.state;
        }
        Ok(Tensor::stack(&steps, 1)?)
    }

    /// Batched greedy decoding; ties go to EOS, then the smaller id.
    pub fn greedy_batch(&self, memory: &Memory, init: &Tensor, max_len: usize) -> Result<Vec<Hypothesis>> {
        let b = memory.batch();
        let mut out: Vec<Hypothesis> = vec![
            Hypothesis {
                token_ids: Vec::new(),
                log_prob: 0.0,
                finished: false,
            };
            b
        ];
        let mut state = init.clone();
        let mut prev = vec![BOS; b];
        for _ in 0..max_len {
            let step = self.decode_step(&state, &prev, memory)?;
            let lp: Vec<Vec<f64>> =
                candle_nn::ops::log_softmax(&step.logits.to_dtype(DType::F64)?, D::Minus1)?.to_vec2()?;
            for (i, row) in lp.iter().enumerate() {
                let hyp = &mut out[i];
                if hyp.finished {
                    prev[i] = PAD;
                    continue;
                }
                let tok = argmax_token(row);
                hyp.log_prob += row[tok as usize];
                if tok == EOS {
                    hyp.finished = true;
                    prev[i] = PAD;
                } else {
                    hyp.token_ids.push(tok);
                    prev[i] = tok;
                }
            }
            if out.iter().all(|h| h.finished) {
                break;
            }
            state = step.state;
        }
        Ok(out)
    }

    /// A single-image view for beam search.
    pub fn session<'a>(&'a self, memory: &Memory, init: &Tensor) -> Result<DecodeSession<'a>> {
        if memory.batch() != 1 || init.dim(0)? != 1 {
            return Err(Error::InvalidInput("decode sessions hold exactly one image".into()));
        }
        Ok(DecodeSession {
            decoder: self,
            memory: memory.clone(),
            init: init.clone(),
        })
    }
}

fn argmax_token(row: &[f64]) -> u32 {
    let mut best = EOS as usize;
    for (i, &v) in row.iter().enumerate() {
        if i == PAD as usize || i == BOS as usize {
            continue;
        }
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Decoder bound to one image's memory and initial state.
pub struct DecodeSession<'a> {
    decoder: &'a Decoder,
    memory: Memory,
    init: Tensor,
}

impl StepDecoder for DecodeSession<'_> {
    type State = Tensor;

    fn vocab_size(&self) -> usize {
        self.decoder.vocab
    }

    fn initial_state(&self) -> Result<Tensor> {
        Ok(self.init.clone())
    }

    fn step(&self, states: &[Tensor], prev: &[u32]) -> Result<Vec<(Vec<f64>, Tensor)>> {
        let n = states.len();
        let state = Tensor::cat(states, 0)?;
        let memory = self.memory.repeat(n)?;
        let out = self.decoder.decode_step(&state, prev, &memory)?;
        let lp: Vec<Vec<f64>> = candle_nn::ops::log_softmax(&out.logits.to_dtype(DType::F64)?, D::Minus1)?
            .to_vec2()?;
        lp.into_iter()
            .enumerate()
            .map(|(i, row)| Ok((row, out.state.narrow(0, i, 1)?)))
            .collect()
    }
}
