//! Joint recognition and embedding loss.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::charset::PAD;
use crate::error::{Error, Result};
use crate::nn::semantic::cosine_embedding_loss_tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recognition: f64,
    pub embedding: f64,
    pub lambda: f64,
    pub total: f64,
}

/// Targets as a `B x T` id tensor padded with PAD, and the matching 0/1 mask.
pub fn padded_targets(targets: &[Vec<u32>], steps: usize, dtype: DType, device: &candle_core::Device) -> Result<(Tensor, Tensor)> {
    let b = targets.len();
    let mut ids = vec![PAD; b * steps];
    let mut mask = vec![0f32; b * steps];
    for (i, row) in targets.iter().enumerate() {
        if row.len() > steps {
            return Err(Error::shape("target length", steps, row.len()));
        }
        for (t, &id) in row.iter().enumerate() {
            ids[i * steps + t] = id;
            mask[i * steps + t] = if id == PAD { 0.0 } else { 1.0 };
        }
    }
    Ok((
        Tensor::from_vec(ids, (b, steps), device)?,
        Tensor::from_vec(mask, (b, steps), device)?.to_dtype(dtype)?,
    ))
}

/// Mean cross-entropy over the non-PAD positions of `B x T x V` logits.
pub fn recognition_loss(logits: &Tensor, targets: &[Vec<u32>]) -> Result<Tensor> {
    let (b, t, v) = logits.dims3()?;
    if b != targets.len() {
        return Err(Error::shape("target batch", b, targets.len()));
    }
    if let Some(&bad) = targets.iter().flatten().find(|&&id| id as usize >= v) {
        return Err(Error::Vocabulary { id: bad, size: v });
    }
    let (ids, mask) = padded_targets(targets, t, logits.dtype(), logits.device())?;
    let count = mask.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if count == 0.0 {
        return Err(Error::Data("batch has no non-padding target tokens".into()));
    }
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = logp.gather(&ids.unsqueeze(2)?, 2)?.squeeze(2)?;
    Ok(((picked * mask)?.sum_all()? / -count)?)
}

/// `L = L_r + lambda L_e`. The embedding term is skipped (and reported as 0)
/// when `lambda` is 0 or no semantic vector is given.
pub fn total_loss(
    logits: &Tensor,
    targets: &[Vec<u32>],
    semantic: Option<&Tensor>,
    embeddings: Option<&Tensor>,
    lambda: f64,
) -> Result<(Tensor, LossBreakdown)> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let lr = recognition_loss(logits, targets)?;
    let (total, le) = match (semantic, embeddings) {
        (Some(s), Some(e)) if lambda > 0.0 => {
            let le = cosine_embedding_loss_tensor(s, &e.to_dtype(s.dtype())?)?;
            ((&lr + (&le * lambda)?)?, Some(le))
        }
        (None, _) | (_, None) if lambda > 0.0 => {
            return Err(Error::InvalidInput(
                "a positive lambda needs both semantic vectors and word embeddings".into(),
            ))
        }
        _ => (lr.clone(), None),
    };
    let scalar = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let recognition = scalar(&lr)?;
    let embedding = match &le {
        Some(t) => scalar(t)?,
        None => 0.0,
    };
    let total_v = scalar(&total)?;
    if !recognition.is_finite() || !embedding.is_finite() || !total_v.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss: L_r={recognition} L_e={embedding} total={total_v}"
        )));
    }
    Ok((
        total,
        LossBreakdown {
            recognition,
            embedding,
            lambda,
            total: total_v,
        },
    ))
}
