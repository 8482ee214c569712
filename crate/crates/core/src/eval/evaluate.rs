//! Model evaluation, the ablation grid and the semantic similarity matrix.

use std::collections::BTreeSet;
use std::path::Path;

use candle_core::DType;
use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::charset::Charset;
use crate::data::dataset::WordSample;
use crate::embedding::{cosine, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::metrics::MetricReport;
use crate::imaging::{preprocess, Image};
use crate::nn::config::Variant;
use crate::nn::model::Recognizer;
use crate::nn::semantic::ZERO_NORM;
use crate::train::config::TrainConfig;
use crate::train::trainer::{train_prepared, Prepared};

const EVAL_BATCH: usize = 64;

/// Recognizes preprocessed images and scores them against `references`.
pub fn evaluate_images(
    model: &Recognizer,
    images: &[&Image],
    references: &[&str],
    paths: Option<&[String]>,
    beam_width: usize,
) -> Result<MetricReport> {
    if images.len() != references.len() {
        return Err(Error::shape("references", images.len(), references.len()));
    }
    let mut triples = Vec::with_capacity(images.len());
    for (start, chunk) in images.chunks(EVAL_BATCH).enumerate().map(|(k, c)| (k * EVAL_BATCH, c)) {
        for (j, rec) in model.recognize(chunk, beam_width)?.into_iter().enumerate() {
            let i = start + j;
            triples.push((
                paths.map(|p| p[i].clone()),
                references[i].to_string(),
                rec.text,
            ));
        }
    }
    MetricReport::from_triples(triples)
}

/// Characters of `samples` the charset cannot represent.
pub fn uncovered_chars(charset: &Charset, samples: &[WordSample]) -> BTreeSet<char> {
    samples
        .iter()
        .flat_map(|s| s.transcription.chars())
        .filter(|&c| charset.id_of(c).is_none())
        .collect()
}

/// Preprocesses every image first (so unreadable files fail before any
/// inference), then recognizes and scores the split.
pub fn evaluate(model: &Recognizer, samples: &[WordSample], beam_width: usize) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let missing = uncovered_chars(model.charset(), samples);
    if !missing.is_empty() {
        log::warn!(
            "{} reference characters are outside the model charset and can never be predicted: {:?}",
            missing.len(),
            missing
        );
    }
    let (h, w) = model.input_size();
    let images = samples
        .iter()
        .map(|s| preprocess(&s.image_path, h, w))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Image> = images.iter().collect();
    let references: Vec<&str> = samples.iter().map(|s| s.transcription.as_str()).collect();
    let paths: Vec<String> = samples
        .iter()
        .map(|s| s.image_path.display().to_string())
        .collect();
    evaluate_images(model, &refs, &references, Some(&paths), beam_width)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub attention: bool,
    pub wes: bool,
    pub init: bool,
    pub seeds: Vec<u64>,
    pub wer: Vec<f64>,
    pub cer: Vec<f64>,
    pub mean_wer: f64,
    pub mean_cer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }

    pub fn to_text_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(8).max(8);
        let mut s = format!("{:<width$}  {:>8}  {:>8}  seeds\n", "variant", "WER(%)", "CER(%)");
        for r in &self.rows {
            s += &format!(
                "{:<width$}  {:>8.2}  {:>8.2}  {}\n",
                r.label,
                100.0 * r.mean_wer,
                100.0 * r.mean_cer,
                r.seeds.len()
            );
        }
        s
    }

    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.attention == v.attention && r.wes == v.wes && r.init == v.init)
    }
}

/// Trains every variant with each seed on the same data and reports test WER.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    base: &TrainConfig,
    train: &[Prepared],
    val: &[Prepared],
    test: &[Prepared],
    charset: &Charset,
    embed_dim: Option<usize>,
    variants: &[Variant],
    seeds: &[u64],
    beam_width: usize,
) -> Result<AblationTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidInput("ablation needs at least one variant and one seed".into()));
    }
    if test.is_empty() {
        return Err(Error::Data("ablation test split is empty".into()));
    }
    let images: Vec<&Image> = test.iter().map(|p| &p.image).collect();
    let refs: Vec<&str> = test.iter().map(|p| p.transcription.as_str()).collect();
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let mut wer = Vec::new();
        let mut cer = Vec::new();
        for &seed in seeds {
            let cfg = TrainConfig {
                attention: v.attention,
                wes: v.wes,
                init: v.init,
                seed,
                ..base.clone()
            };
            log::info!("ablation: {} seed {seed}", v.label());
            let outcome = train_prepared(train.to_vec(), val.to_vec(), charset.clone(), embed_dim, &cfg, None)?;
            let report = evaluate_images(&outcome.model, &images, &refs, None, beam_width)?;
            log::info!("ablation: {} seed {seed} test WER {:.4}", v.label(), report.wer);
            wer.push(report.wer);
            cer.push(report.cer);
        }
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        rows.push(AblationRow {
            label: v.label(),
            attention: v.attention,
            wes: v.wes,
            init: v.init,
            seeds: seeds.to_vec(),
            mean_wer: mean(&wer),
            mean_cer: mean(&cer),
            wer,
            cer,
        });
    }
    Ok(AblationTable { rows })
}

/// Cosine similarities between predicted semantic vectors (rows) and word
/// embeddings (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub row_labels: Vec<String>,
    pub column_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    /// Column index of the maximum of each row (first one on ties).
    pub fn row_argmax(&self) -> Vec<usize> {
        self.values
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
                    .0
            })
            .collect()
    }

    /// Fraction of rows whose argmax column carries the given label.
    pub fn argmax_accuracy(&self, truth: &[&str]) -> Result<f64> {
        if truth.len() != self.values.len() || truth.is_empty() {
            return Err(Error::shape("ground-truth labels", self.values.len(), truth.len()));
        }
        let hits = self
            .row_argmax()
            .iter()
            .zip(truth)
            .filter(|(&j, t)| self.column_labels[j] == **t)
            .count();
        Ok(hits as f64 / truth.len() as f64)
    }

    /// Tab-separated grid with a header row of column labels.
    pub fn to_text(&self) -> String {
        let mut s = String::from("image");
        for c in &self.column_labels {
            s.push('\t');
            s.push_str(c);
        }
        s.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            s.push_str(label);
            for v in row {
                s.push_str(&format!("\t{v:.6}"));
            }
            s.push('\n');
        }
        s
    }

    /// Grayscale heatmap, `cell` pixels per entry; -1 is black, 1 white.
    pub fn write_heatmap(&self, path: &Path, cell: u32) -> Result<()> {
        let rows = self.values.len() as u32;
        let cols = self.column_labels.len() as u32;
        if rows == 0 || cols == 0 || cell == 0 {
            return Err(Error::InvalidInput("empty similarity matrix".into()));
        }
        let img = GrayImage::from_fn(cols * cell, rows * cell, |x, y| {
            let v = self.values[(y / cell) as usize][(x / cell) as usize];
            Luma([((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8])
        });
        img.save(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })
    }
}

/// `values[i][j] = cos(S_i, E_j)` for the images against the lexicon.
pub fn similarity_matrix(
    model: &Recognizer,
    images: &[&Image],
    row_labels: &[String],
    lexicon: &[String],
    embeddings: &EmbeddingTable,
) -> Result<SimilarityMatrix> {
    if images.len() != row_labels.len() {
        return Err(Error::shape("row labels", images.len(), row_labels.len()));
    }
    if lexicon.is_empty() {
        return Err(Error::InvalidInput("empty lexicon".into()));
    }
    let columns = lexicon
        .iter()
        .map(|w| embeddings.embed_word(w))
        .collect::<Result<Vec<_>>>()?;
    for (w, e) in lexicon.iter().zip(&columns) {
        if e.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt() < ZERO_NORM {
            return Err(Error::DegenerateVector(format!("embedding of {w:?} has zero norm")));
        }
    }
    let mut values = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let x = model.batch_tensor(chunk)?;
        let s: Vec<Vec<f32>> = model.semantic_vectors(&x)?.to_dtype(DType::F32)?.to_vec2()?;
        for row in s {
            let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            if norm < ZERO_NORM {
                return Err(Error::DegenerateVector(
                    "predicted semantic vector has zero norm".into(),
                ));
            }
            if row.len() != embeddings.dim() {
                return Err(Error::shape("semantic vector", embeddings.dim(), row.len()));
            }
            values.push(columns.iter().map(|e| cosine(&row, e).clamp(-1.0, 1.0)).collect());
        }
    }
    Ok(SimilarityMatrix {
        row_labels: row_labels.to_vec(),
        column_labels: lexicon.to_vec(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix() -> SimilarityMatrix {
        SimilarityMatrix {
            row_labels: vec!["r0".into(), "r1".into()],
            column_labels: vec!["a".into(), "b".into(), "a".into()],
            values: vec![vec![0.9, 0.1, 0.9], vec![-0.2, 0.5, 0.4]],
        }
    }

    #[test]
    fn argmax_and_accuracy() {
        let m = matrix();
        assert_eq!(m.row_argmax(), vec![0, 1]);
        assert_eq!(m.argmax_accuracy(&["a", "b"]).unwrap(), 1.0);
        assert_eq!(m.argmax_accuracy(&["b", "b"]).unwrap(), 0.5);
        assert!(m.argmax_accuracy(&["a"]).is_err());
    }

    #[test]
    fn text_grid_has_labels() {
        let t = matrix().to_text();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "image\ta\tb\ta");
        assert!(lines[1].starts_with("r0\t0.900000"));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn heatmap_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.png");
        matrix().write_heatmap(&p, 4).unwrap();
        let img = image::open(&p).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (12, 8));
    }

    #[test]
    fn ablation_table_text() {
        let t = AblationTable {
            rows: vec![AblationRow {
                label: "CNN-RNN".into(),
                attention: false,
                wes: false,
                init: false,
                seeds: vec![1, 2],
                wer: vec![0.1, 0.2],
                cer: vec![0.01, 0.03],
                mean_wer: 0.15,
                mean_cer: 0.02,
            }],
        };
        assert!(t.to_text_table().contains("15.00"));
        assert_eq!(t.to_jsonl().lines().count(), 1);
        assert!(t.row(Variant::GRID[0]).is_some());
        assert!(t.row(Variant::FULL).is_none());
    }
}
