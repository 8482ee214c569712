//! The epoch loop: augmentation, joint loss, Adadelta, validation and
//! checkpoint selection.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charset::{Charset, UnknownPolicy};
use crate::data::dataset::{build_charset, WordSample};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::evaluate::evaluate_images;
use crate::imaging::{preprocess, Image};
use crate::nn::model::Recognizer;
use crate::train::augment::augment;
use crate::train::checkpoint::Checkpoint;
use crate::train::config::TrainConfig;
use crate::train::loss::{total_loss, LossBreakdown};
use crate::train::optim::Adadelta;

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    #[serde(rename = "L_r")]
    pub recognition: f64,
    #[serde(rename = "L_e")]
    pub embedding: f64,
    pub lambda: f64,
    pub total: f64,
    pub val_cer: f64,
    pub val_wer: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

/// A sample ready for training: preprocessed image, token ids ending in EOS
/// and, when needed, its word embedding.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub path: Option<PathBuf>,
    pub transcription: String,
    pub image: Image,
    pub target: Vec<u32>,
    pub embedding: Option<Vec<f32>>,
}

/// Preprocesses images and checks charset and embedding coverage up front.
pub fn prepare(
    samples: &[WordSample],
    charset: &Charset,
    embeddings: Option<&EmbeddingTable>,
    height: usize,
    width: usize,
) -> Result<Vec<Prepared>> {
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let target = charset.encode(&s.transcription, UnknownPolicy::Reject)?;
        let embedding = match embeddings {
            Some(t) => Some(t.embed_word(&s.transcription)?),
            None => None,
        };
        out.push(Prepared {
            path: Some(s.image_path.clone()),
            transcription: s.transcription.clone(),
            image: preprocess(&s.image_path, height, width)?,
            target,
            embedding,
        });
    }
    Ok(out)
}

/// Per-sample augmentation seed derived from the run seed, epoch and index.
pub fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters of the best epoch by selection WER.
    pub model: Recognizer,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_checkpoint: Option<PathBuf>,
}

/// Splits off a deterministic validation subset when none is given. With
/// `val_fraction` 0 the training set itself is used for selection.
pub fn selection_split(
    train: Vec<Prepared>,
    val: Vec<Prepared>,
    config: &TrainConfig,
) -> (Vec<Prepared>, Vec<Prepared>) {
    if !val.is_empty() {
        return (train, val);
    }
    let n_val = (train.len() as f64 * config.val_fraction).round() as usize;
    if n_val == 0 || n_val >= train.len() {
        let v = train.clone();
        return (train, v);
    }
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED));
    let held: std::collections::BTreeSet<usize> = idx[..n_val].iter().copied().collect();
    let mut t = Vec::new();
    let mut v = Vec::new();
    for (i, p) in train.into_iter().enumerate() {
        if held.contains(&i) {
            v.push(p);
        } else {
            t.push(p);
        }
    }
    (t, v)
}

/// Loads and prepares the splits, then trains. Writes `metrics.jsonl`,
/// `last.ckpt` and `best.ckpt` into `config.out_dir`.
pub fn train(
    train_samples: &[WordSample],
    val_samples: &[WordSample],
    embeddings: Option<&EmbeddingTable>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let all: Vec<WordSample> = train_samples.iter().chain(val_samples).cloned().collect();
    let charset = build_charset(&all);
    let needs_embeddings = config.effective_lambda() > 0.0;
    let table = if needs_embeddings {
        Some(embeddings.ok_or_else(|| {
            Error::Config("word embeddings are required when wes is on and lambda > 0".into())
        })?)
    } else {
        None
    };
    let (h, w) = (config.input_height, config.input_width);
    let train = prepare(train_samples, &charset, table, h, w)?;
    let val = prepare(val_samples, &charset, None, h, w)?;
    let embed_dim = embeddings.map(|t| t.dim());
    train_prepared(train, val, charset, embed_dim, config, Some(&config.out_dir))
}

/// Trains on prepared samples. `embed_dim` sizes the semantic head (the
/// configured default is used when `None`); checkpoints and the metrics log
/// go to `out_dir` when given.
pub fn train_prepared(
    train: Vec<Prepared>,
    val: Vec<Prepared>,
    charset: Charset,
    embed_dim: Option<usize>,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let lambda = config.effective_lambda();
    let model_cfg = match embed_dim {
        Some(d) => config.model_config_with_embed(d)?,
        None => config.model_config()?,
    };
    if lambda > 0.0 {
        if let Some(bad) = train.iter().find(|p| p.embedding.is_none()) {
            return Err(Error::Coverage(format!(
                "no word embedding for training word {:?}",
                bad.transcription
            )));
        }
        if let Some(bad) = train
            .iter()
            .find(|p| p.embedding.as_ref().map(Vec::len) != Some(model_cfg.semantic.embed_dim))
        {
            return Err(Error::shape(
                format!("embedding of {:?}", bad.transcription),
                model_cfg.semantic.embed_dim,
                bad.embedding.as_ref().map(Vec::len).unwrap_or(0),
            ));
        }
    }
    let (train, val) = selection_split(train, val, config);
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let model = Recognizer::new(&model_cfg, charset, config.seed, DType::F32)?;
    let mut opt = Adadelta::new(model.store().trainable(), config.optimizer())?;
    let augment_settings = config.augment_settings();

    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("metrics.jsonl");
            Some((std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };

    let mut history: Vec<EpochMetrics> = Vec::new();
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut best_path = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(config.seed, epoch, usize::MAX)));
        let mut sums = [0.0f64; 4];
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let images: Vec<Image> = chunk
                .iter()
                .map(|&i| augment(&train[i].image, &augment_settings, sample_seed(config.seed, epoch, i)))
                .collect();
            let refs: Vec<&Image> = images.iter().collect();
            let targets: Vec<Vec<u32>> = chunk.iter().map(|&i| train[i].target.clone()).collect();
            let x = model.batch_tensor(&refs)?;
            let (logits, encoded) = model.forward_teacher(&x, &targets, true)?;
            let e = if lambda > 0.0 {
                let d = model_cfg.semantic.embed_dim;
                let flat: Vec<f32> = chunk
                    .iter()
                    .flat_map(|&i| train[i].embedding.clone().unwrap_or_default())
                    .collect();
                Some(Tensor::from_vec(flat, (chunk.len(), d), model.device())?)
            } else {
                None
            };
            let (loss, b): (Tensor, LossBreakdown) =
                total_loss(&logits, &targets, encoded.semantic.as_ref(), e.as_ref(), lambda)?;
            let grads = loss.backward()?;
            let norm = opt.step(&grads)?;
            let n = chunk.len() as f64;
            sums[0] += b.recognition * n;
            sums[1] += b.embedding * n;
            sums[2] += b.total * n;
            sums[3] += norm * n;
            seen += chunk.len();
            log::debug!("epoch {epoch} batch loss {:.5} grad norm {norm:.3}", b.total);
        }
        let n = seen as f64;
        let val_images: Vec<&Image> = val.iter().map(|p| &p.image).collect();
        let val_refs: Vec<&str> = val.iter().map(|p| p.transcription.as_str()).collect();
        let report = evaluate_images(&model, &val_images, &val_refs, None, 1)?;
        let m = EpochMetrics {
            epoch,
            recognition: sums[0] / n,
            embedding: sums[1] / n,
            lambda,
            total: sums[2] / n,
            val_cer: report.cer,
            val_wer: report.wer,
            grad_norm: sums[3] / n,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: L_r {:.4} L_e {:.4} total {:.4} val CER {:.4} WER {:.4} ({:.1}s)",
            m.recognition,
            m.embedding,
            m.total,
            m.val_cer,
            m.val_wer,
            m.seconds
        );
        if let Some((f, p)) = &mut log {
            writeln!(f, "{}", serde_json::to_string(&m).expect("metrics serialize"))
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(p.as_path(), e))?;
        }
        history.push(m.clone());

        let improved = best.as_ref().is_none_or(|(w, _, _)| m.val_wer < *w);
        let ck = Checkpoint::from_model(&model, epoch, Some(config), &history)?;
        if let Some(dir) = out_dir {
            ck.save(&dir.join("last.ckpt"))?;
            if config.save_every_epoch {
                ck.save(&dir.join(format!("epoch-{epoch:03}.ckpt")))?;
            }
            if improved {
                let p = dir.join("best.ckpt");
                ck.save(&p)?;
                best_path = Some(p);
            }
        }
        if improved {
            best = Some((m.val_wer, epoch, ck));
        }
        if config.early_stop_wer.is_some_and(|t| m.val_wer <= t) {
            log::info!("selection WER {:.4} reached the early-stop target", m.val_wer);
            break;
        }
    }

    let (_, best_epoch, ck) = best.ok_or_else(|| Error::Data("no epochs were run".into()))?;
    Ok(TrainOutcome {
        model: ck.to_recognizer()?,
        history,
        best_epoch,
        best_checkpoint: best_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_seeds_differ() {
        let a = sample_seed(1, 1, 0);
        assert_eq!(a, sample_seed(1, 1, 0));
        assert_ne!(a, sample_seed(1, 1, 1));
        assert_ne!(a, sample_seed(1, 2, 0));
        assert_ne!(a, sample_seed(2, 1, 0));
    }

    fn prepared(word: &str, charset: &Charset) -> Prepared {
        Prepared {
            path: None,
            transcription: word.into(),
            image: Image::filled(32, 128, 0.0),
            target: charset.encode(word, UnknownPolicy::Reject).unwrap(),
            embedding: None,
        }
    }

    #[test]
    fn holdout_split_is_deterministic() {
        let cs = Charset::from_words(["abc"]);
        let words = ["a", "b", "c", "ab", "bc", "ca", "abc", "cab", "bca", "cc"];
        let train: Vec<Prepared> = words.iter().map(|w| prepared(w, &cs)).collect();
        let cfg = TrainConfig::toy();
        let (t1, v1) = selection_split(train.clone(), vec![], &cfg);
        let (t2, v2) = selection_split(train.clone(), vec![], &cfg);
        assert_eq!(v1.len(), 1);
        assert_eq!(t1.len(), 9);
        assert_eq!(v1[0].transcription, v2[0].transcription);
        assert_eq!(t1.len(), t2.len());
        let no_hold = TrainConfig {
            val_fraction: 0.0,
            ..TrainConfig::toy()
        };
        let (t3, v3) = selection_split(train, vec![], &no_hold);
        assert_eq!(t3.len(), 10);
        assert_eq!(v3.len(), 10);
    }

    #[test]
    fn missing_embedding_is_a_coverage_error() {
        let cs = Charset::from_words(["ab"]);
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::toy()
        };
        let err = train_prepared(vec![prepared("ab", &cs)], vec![], cs, Some(32), &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Coverage(_)));
    }
}
