//! Python bindings: metrics, subword extraction, charset handling, dataset
//! synthesis and checkpoint-based recognition.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use semrec::charset::{Charset, UnknownPolicy};
use semrec::data::{dataset_checksum, synthesize_dataset, SynthConfig};
use semrec::embedding::{extract_subwords, load_embedding_file, EmbeddingTable, SubwordConfig};
use semrec::eval::{cer, edit_ops, wer};
use semrec::imaging::{preprocess, Image};
use semrec::nn::Recognizer;
use semrec::train::{Checkpoint, TrainConfig};
use semrec::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Edit operations between two strings as
/// `(substitutions, deletions, insertions, distance)`.
#[pyfunction(name = "edit_ops")]
fn py_edit_ops(reference: &str, hypothesis: &str) -> (usize, usize, usize, usize) {
    let ops = edit_ops(reference, hypothesis);
    (ops.substitutions, ops.deletions, ops.insertions, ops.distance())
}

#[pyfunction(name = "cer")]
fn py_cer(pairs: Vec<(String, String)>) -> PyResult<f64> {
    cer(&pairs).map_err(to_py)
}

#[pyfunction(name = "wer")]
fn py_wer(pairs: Vec<(String, String)>) -> PyResult<f64> {
    wer(&pairs).map_err(to_py)
}

#[pyfunction(name = "extract_subwords")]
#[pyo3(signature = (word, l_min = 3, l_max = 6, boundaries = true))]
fn py_extract_subwords(word: &str, l_min: usize, l_max: usize, boundaries: bool) -> PyResult<Vec<String>> {
    let cfg = SubwordConfig::new(l_min, l_max, boundaries).map_err(to_py)?;
    Ok(extract_subwords(word, &cfg))
}

/// Renders a synthetic dataset; returns `(images, train, val, test, checksum)`.
#[pyfunction(name = "synthesize")]
#[pyo3(signature = (lexicon, fonts, out_dir, samples_per_word = 5, seed = 0))]
fn py_synthesize(
    lexicon: Vec<String>,
    fonts: Vec<PathBuf>,
    out_dir: PathBuf,
    samples_per_word: usize,
    seed: u64,
) -> PyResult<(usize, usize, usize, usize, String)> {
    let cfg = SynthConfig::new(lexicon, fonts, samples_per_word, seed);
    let s = synthesize_dataset(&cfg, &out_dir).map_err(to_py)?;
    let sum = dataset_checksum(&out_dir).map_err(to_py)?;
    Ok((s.images, s.train, s.val, s.test, sum))
}

#[pyclass(name = "Charset", module = "semrec_py", frozen)]
struct PyCharset(Charset);

#[pymethods]
impl PyCharset {
    #[staticmethod]
    fn from_words(words: Vec<String>) -> Self {
        Self(Charset::from_words(words.iter().map(String::as_str)))
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }

    #[getter]
    fn chars(&self) -> String {
        self.0.chars().iter().collect()
    }

    /// Token ids ending with EOS; unknown characters raise unless `unk` is set.
    #[pyo3(signature = (word, unk = false))]
    fn encode(&self, word: &str, unk: bool) -> PyResult<Vec<u32>> {
        let policy = if unk { UnknownPolicy::MapToUnk } else { UnknownPolicy::Reject };
        self.0.encode(word, policy).map_err(to_py)
    }

    fn decode(&self, ids: Vec<u32>) -> String {
        self.0.decode(&ids)
    }
}

#[pyclass(name = "Embeddings", module = "semrec_py", frozen)]
struct PyEmbeddings(EmbeddingTable);

#[pymethods]
impl PyEmbeddings {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_embedding_file(path).map(Self).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn embed(&self, word: &str) -> PyResult<Vec<f32>> {
        self.0.embed_word(word).map_err(to_py)
    }
}

#[pyclass(name = "Recognizer", module = "semrec_py", frozen)]
struct PyRecognizer(Recognizer);

#[pymethods]
impl PyRecognizer {
    /// Loads a trained checkpoint.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Checkpoint::load(&path)
            .and_then(|c| c.to_recognizer())
            .map(Self)
            .map_err(to_py)
    }

    /// A freshly initialized toy model over the characters of `words`.
    #[staticmethod]
    #[pyo3(signature = (words, seed = 0))]
    fn untrained(words: Vec<String>, seed: u64) -> PyResult<Self> {
        let charset = Charset::from_words(words.iter().map(String::as_str));
        let mut cfg = TrainConfig::toy();
        cfg.wes = false;
        let model_cfg = cfg.model_config().map_err(to_py)?;
        Recognizer::new(&model_cfg, charset, seed, semrec::nn::DType::F32)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn input_size(&self) -> (usize, usize) {
        self.0.input_size()
    }

    #[getter]
    fn charset(&self) -> PyCharset {
        PyCharset(self.0.charset().clone())
    }

    /// Recognizes image files; returns `(text, log_prob)` per image.
    #[pyo3(signature = (paths, beam_width = 5))]
    fn predict_files(&self, py: Python<'_>, paths: Vec<PathBuf>, beam_width: usize) -> PyResult<Vec<(String, f64)>> {
        let (h, w) = self.0.input_size();
        let images = paths
            .iter()
            .map(|p| preprocess(p, h, w))
            .collect::<semrec::Result<Vec<Image>>>()
            .map_err(to_py)?;
        self.run(py, images, beam_width)
    }

    /// Recognizes one already-normalized image given as row-major pixels in
    /// [-1, 1] with the model's input size.
    #[pyo3(signature = (pixels, beam_width = 5))]
    fn predict_pixels(&self, py: Python<'_>, pixels: Vec<f32>, beam_width: usize) -> PyResult<(String, f64)> {
        let (h, w) = self.0.input_size();
        let img = Image::new(h, w, pixels).map_err(to_py)?;
        Ok(self.run(py, vec![img], beam_width)?.remove(0))
    }
}

impl PyRecognizer {
    fn run(&self, py: Python<'_>, images: Vec<Image>, beam_width: usize) -> PyResult<Vec<(String, f64)>> {
        py.detach(|| {
            let refs: Vec<&Image> = images.iter().collect();
            self.0.recognize(&refs, beam_width)
        })
        .map(|rs| rs.into_iter().map(|r| (r.text, r.hypothesis.log_prob)).collect())
        .map_err(to_py)
    }
}

#[pymodule]
fn semrec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(py_edit_ops, m)?)?;
    m.add_function(wrap_pyfunction!(py_cer, m)?)?;
    m.add_function(wrap_pyfunction!(py_wer, m)?)?;
    m.add_function(wrap_pyfunction!(py_extract_subwords, m)?)?;
    m.add_function(wrap_pyfunction!(py_synthesize, m)?)?;
    m.add_class::<PyCharset>()?;
    m.add_class::<PyEmbeddings>()?;
    m.add_class::<PyRecognizer>()?;
    Ok(())
}
