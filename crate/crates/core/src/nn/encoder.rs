//! Residual convolutional trunk followed by a bidirectional LSTM stack.

use candle_core::Tensor;
use candle_nn::VarBuilder;

use crate::error::{Error, Result};
use crate::nn::config::EncoderConfig;
use crate::nn::layers::{BiLstm, ConvBn};

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: ConvBn,
    conv2: ConvBn,
    shortcut: Option<ConvBn>,
}

impl BasicBlock {
    fn new(c_in: usize, c_out: usize, stride: (usize, usize), vb: VarBuilder) -> Result<Self> {
        let shortcut = if c_in != c_out || stride != (1, 1) {
            Some(ConvBn::new(c_in, c_out, 1, stride, vb.pp("shortcut"))?)
        } else {
            None
        };
        Ok(Self {
            conv1: ConvBn::new(c_in, c_out, 3, stride, vb.pp("conv1"))?,
            conv2: ConvBn::new(c_out, c_out, 3, (1, 1), vb.pp("conv2"))?,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let y = self.conv1.forward(x, train)?.relu()?;
        let y = self.conv2.forward(&y, train)?;
        let s = match &self.shortcut {
            Some(sc) => sc.forward(x, train)?,
            None => x.clone(),
        };
        (y + s)?.relu()
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    stem: ConvBn,
    blocks: Vec<BasicBlock>,
    rnns: Vec<BiLstm>,
}

impl Encoder {
    pub fn new(config: &EncoderConfig, vb: VarBuilder) -> Result<Self> {
        config.validate()?;
        let stem = ConvBn::new(1, config.stem_channels, 3, (1, 1), vb.pp("stem"))?;
        let mut blocks = Vec::new();
        let mut c_in = config.stem_channels;
        for (s, ((&c, &n), &stride)) in config
            .stage_channels
            .iter()
            .zip(&config.stage_blocks)
            .zip(&config.stage_strides)
            .enumerate()
        {
            for i in 0..n {
                let st = if i == 0 { stride } else { (1, 1) };
                blocks.push(BasicBlock::new(c_in, c, st, vb.pp(format!("stage{s}.block{i}")))?);
                c_in = c;
            }
        }
        let mut rnns = Vec::new();
        let mut rnn_in = c_in;
        for l in 0..config.recurrent_layers {
            rnns.push(BiLstm::new(rnn_in, config.recurrent_hidden, vb.pp(format!("rnn{l}")))?);
            rnn_in = 2 * config.recurrent_hidden;
        }
        Ok(Self {
            config: config.clone(),
            stem,
            blocks,
            rnns,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Encodes `B x 1 x H x W` images into the `B x L x C` feature sequence.
    pub fn forward(&self, images: &Tensor, train: bool) -> Result<Tensor> {
        let dims = images.dims();
        let expected = [1, self.config.input_height, self.config.input_width];
        if dims.len() != 4 || dims[1..] != expected {
            return Err(Error::shape(
                "encoder input",
                format!("B x 1 x {} x {}", expected[1], expected[2]),
                format!("{dims:?}"),
            ));
        }
        // the conv trunk runs channels-last; with one channel this is a reshape
        let nhwc = images.reshape((dims[0], expected[1], expected[2], 1))?;
        let mut x = self.stem.forward(&nhwc, train)?.relu()?;
        for b in &self.blocks {
            x = b.forward(&x, train)?;
        }
        let (b, _, l, c) = x.dims4()?;
        let mut seq = x.reshape((b, l, c))?;
        for rnn in &self.rnns {
            seq = rnn.forward(&seq)?;
        }
        Ok(seq)
    }
}
