//! Global semantic vector prediction and the cosine embedding loss.

use candle_core::{DType, Module, Tensor, D};
use candle_nn::{Linear, VarBuilder};

use crate::error::{Error, Result};
use crate::nn::config::SemanticConfig;
use crate::nn::layers::linear;

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// `S = W2 relu(W1 X + b1) + b2` where X is the row-major flattening of the
/// `L x C` feature sequence.
#[derive(Debug, Clone)]
pub struct SemanticHead {
    input_dim: usize,
    hidden: Linear,
    output: Linear,
}

impl SemanticHead {
    pub fn new(seq_len: usize, feat_dim: usize, cfg: &SemanticConfig, vb: VarBuilder) -> Result<Self> {
        let k = seq_len * feat_dim;
        Ok(Self {
            input_dim: k,
            hidden: linear(k, cfg.hidden, vb.pp("w1"))?,
            output: linear(cfg.hidden, cfg.embed_dim, vb.pp("w2"))?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `B x L x C` features to `B x D_e` semantic vectors.
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let b = features.dim(0)?;
        let x = features.reshape((b, ()))?;
        if x.dim(1)? != self.input_dim {
            return Err(Error::shape(
                "semantic head input",
                self.input_dim,
                x.dim(1)?,
            ));
        }
        let hidden = self.hidden.forward(&x)?.relu()?;
        Ok(self.output.forward(&hidden)?)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `1 - cos(S, E)`.
pub fn cosine_embedding_loss(s: &[f64], e: &[f64]) -> Result<f64> {
    if s.len() != e.len() {
        return Err(Error::shape("cosine loss operands", s.len(), e.len()));
    }
    let (ns, ne) = (norm(s), norm(e));
    if ns < ZERO_NORM || ne < ZERO_NORM {
        return Err(Error::DegenerateVector(
            "cosine loss of a zero-norm vector".into(),
        ));
    }
    let dot: f64 = s.iter().zip(e).map(|(a, b)| a * b).sum();
    Ok(1.0 - dot / (ns * ne))
}

/// Closed-form gradient of [`cosine_embedding_loss`] with respect to `S`.
pub fn cosine_embedding_loss_grad(s: &[f64], e: &[f64]) -> Result<Vec<f64>> {
    cosine_embedding_loss(s, e)?;
    let (ns, ne) = (norm(s), norm(e));
    let dot: f64 = s.iter().zip(e).map(|(a, b)| a * b).sum();
    Ok(s.iter()
        .zip(e)
        .map(|(si, ei)| -(ei / (ns * ne) - dot * si / (ns.powi(3) * ne)))
        .collect())
}

/// Batched cosine loss on `B x D` tensors, averaged over the batch.
pub fn cosine_embedding_loss_tensor(s: &Tensor, e: &Tensor) -> Result<Tensor> {
    let ns = s.sqr()?.sum(D::Minus1)?.sqrt()?;
    let ne = e.sqr()?.sum(D::Minus1)?.sqrt()?;
    let min_norm = ns
        .min(0)?
        .minimum(&ne.min(0)?)?
        .to_dtype(DType::F64)?
        .to_scalar::<f64>()?;
    if !(min_norm >= ZERO_NORM) {
        return Err(Error::DegenerateVector(format!(
            "semantic or embedding vector with norm {min_norm:e}"
        )));
    }
    let cos = ((s * e)?.sum(D::Minus1)? / (ns * ne)?)?;
    Ok(cos.affine(-1.0, 1.0)?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert!(cosine_embedding_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().abs() < 1e-15);
        assert!((cosine_embedding_loss(&[1.0, 2.0], &[-1.0, -2.0]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(cosine_embedding_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn zero_norm_is_an_error() {
        assert!(matches!(
            cosine_embedding_loss(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateVector(_))
        ));
        let s = Tensor::new(&[[0f64, 0.0]], &candle_core::Device::Cpu).unwrap();
        let e = Tensor::new(&[[1f64, 0.0]], &candle_core::Device::Cpu).unwrap();
        assert!(matches!(
            cosine_embedding_loss_tensor(&s, &e),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn tensor_loss_matches_scalar() {
        let dev = candle_core::Device::Cpu;
        let s = [[0.3f64, -1.2, 2.0], [1.0, 1.0, -0.5]];
        let e = [[1.0f64, 0.5, 0.1], [-0.2, 0.7, 0.3]];
        let t = cosine_embedding_loss_tensor(&Tensor::new(&s, &dev).unwrap(), &Tensor::new(&e, &dev).unwrap())
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        let expected = (cosine_embedding_loss(&s[0], &e[0]).unwrap()
            + cosine_embedding_loss(&s[1], &e[1]).unwrap())
            / 2.0;
        assert!((t - expected).abs() < 1e-12);
    }
}
