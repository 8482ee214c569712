//! Subword word embeddings: n-gram extraction, subword-composed word
//! vectors, the text word-vector file format and a small skip-gram trainer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordConfig {
    pub l_min: usize,
    pub l_max: usize,
    pub use_boundaries: bool,
}

impl Default for SubwordConfig {
    fn default() -> Self {
        Self {
            l_min: 3,
            l_max: 6,
            use_boundaries: true,
        }
    }
}

impl SubwordConfig {
    pub fn new(l_min: usize, l_max: usize, use_boundaries: bool) -> Result<Self> {
        let cfg = Self {
            l_min,
            l_max,
            use_boundaries,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_min == 0 || self.l_min > self.l_max {
            return Err(Error::Config(format!(
                "subword lengths must satisfy 1 <= l_min <= l_max (got {}..{})",
                self.l_min, self.l_max
            )));
        }
        Ok(())
    }
}

/// All contiguous code-point n-grams of `word` (wrapped as `<word>` when
/// boundaries are on) with lengths in `[l_min, l_max]`, shorter first, then
/// left to right. Duplicates are kept.
pub fn extract_subwords(word: &str, config: &SubwordConfig) -> Vec<String> {
    let mut chars: Vec<char> = Vec::with_capacity(word.len() + 2);
    if config.use_boundaries {
        chars.push('<');
    }
    chars.extend(word.chars());
    if config.use_boundaries {
        chars.push('>');
    }
    let n = chars.len();
    let mut out = Vec::new();
    for k in config.l_min..=config.l_max.min(n) {
        for start in 0..=(n - k) {
            out.push(chars[start..start + k].iter().collect());
        }
    }
    out
}

/// Word and subword vectors of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    word_vectors: BTreeMap<String, Vec<f32>>,
    subword_vectors: BTreeMap<String, Vec<f32>>,
    subword_config: SubwordConfig,
}

impl EmbeddingTable {
    pub fn new(dim: usize, subword_config: SubwordConfig) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        subword_config.validate()?;
        Ok(Self {
            dim,
            word_vectors: BTreeMap::new(),
            subword_vectors: BTreeMap::new(),
            subword_config,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subword_config(&self) -> &SubwordConfig {
        &self.subword_config
    }

    pub fn word_vectors(&self) -> &BTreeMap<String, Vec<f32>> {
        &self.word_vectors
    }

    pub fn subword_vectors(&self) -> &BTreeMap<String, Vec<f32>> {
        &self.subword_vectors
    }

    pub fn is_empty(&self) -> bool {
        self.word_vectors.is_empty() && self.subword_vectors.is_empty()
    }

    fn check_vector(&self, key: &str, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::shape(
                format!("embedding vector for {key:?}"),
                self.dim,
                v.len(),
            ));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite embedding value for {key:?}"
            )));
        }
        Ok(())
    }

    pub fn insert_word(&mut self, word: impl Into<String>, v: Vec<f32>) -> Result<()> {
        let word = word.into();
        self.check_vector(&word, &v)?;
        self.word_vectors.insert(word, v);
        Ok(())
    }

    pub fn insert_subword(&mut self, subword: impl Into<String>, v: Vec<f32>) -> Result<()> {
        let subword = subword.into();
        self.check_vector(&subword, &v)?;
        self.subword_vectors.insert(subword, v);
        Ok(())
    }

    /// Mean of the word's own vector (if present) and the vectors of all of
    /// its known subwords.
    pub fn embed_word(&self, word: &str) -> Result<Vec<f32>> {
        if word.is_empty() {
            return Err(Error::InvalidInput("cannot embed the empty word".into()));
        }
        if self.is_empty() {
            return Err(Error::InvalidInput("embedding table is empty".into()));
        }
        let mut acc = vec![0f64; self.dim];
        let mut count = 0usize;
        if let Some(v) = self.word_vectors.get(word) {
            add_into(&mut acc, v);
            count += 1;
        }
        if !self.subword_vectors.is_empty() {
            for sw in extract_subwords(word, &self.subword_config) {
                if let Some(v) = self.subword_vectors.get(&sw) {
                    add_into(&mut acc, v);
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::Coverage(format!(
                "word {word:?} has no vector and no known subwords"
            )));
        }
        Ok(acc.iter().map(|x| (x / count as f64) as f32).collect())
    }

    /// A word-only table holding the composed vector of each given word.
    pub fn composed<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut out = Self::new(self.dim, self.subword_config)?;
        for w in words {
            let v = self.embed_word(w)?;
            out.word_vectors.insert(w.to_string(), v);
        }
        Ok(out)
    }

    /// Parses the standard text format: a `count dim` header followed by one
    /// `word v1 ... vdim` line per word.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(
                1,
                format!("header must be \"count dimension\", got {header:?}"),
            ));
        }
        let count: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(1, format!("bad vocabulary count {:?}", fields[0])))?;
        let dim: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(1, format!("bad dimension {:?}", fields[1])))?;
        if dim == 0 {
            return Err(parse_err(1, "dimension must be positive".into()));
        }
        let mut table = Self::new(dim, SubwordConfig::default())?;
        let mut seen = 0usize;
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ').filter(|s| !s.is_empty());
            let word = parts.next().expect("non-blank line has a field");
            let values: Vec<f32> = parts
                .map(|s| {
                    s.parse::<f32>()
                        .map_err(|_| parse_err(lineno, format!("non-numeric field {s:?}")))
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(parse_err(
                    lineno,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(lineno, "non-finite value".into()));
            }
            table.word_vectors.insert(word.to_string(), values);
            seen += 1;
        }
        if seen != count {
            return Err(parse_err(
                1,
                format!("header declares {count} words but file has {seen}"),
            ));
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.word_vectors.len(), self.dim);
        for (w, v) in &self.word_vectors {
            out.push_str(w);
            for x in v {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }
}

fn add_into(acc: &mut [f64], v: &[f32]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += *x as f64;
    }
}

pub fn load_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: format!("invalid UTF-8: {e}"),
    })?;
    EmbeddingTable::parse(&text, &path.display().to_string())
}

/// Writes the word vectors in the text format. Subword vectors are not part
/// of the format; use [`EmbeddingTable::composed`] first to export them.
pub fn save_embedding_file(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, table.to_text()).map_err(|e| Error::io(path, e))
}

/// Tokenized sentences plus the symmetric context window.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub sentences: Vec<Vec<String>>,
    pub window: usize,
}

impl ToyCorpus {
    pub fn new(sentences: Vec<Vec<String>>, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("context window must be >= 1".into()));
        }
        if sentences.iter().flatten().any(|t| t.is_empty()) {
            return Err(Error::Data("corpus contains an empty token".into()));
        }
        Ok(Self { sentences, window })
    }

    /// One sentence per line, whitespace-separated tokens.
    pub fn from_text(text: &str, window: usize) -> Result<Self> {
        let sentences = text
            .lines()
            .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .filter(|s| !s.is_empty())
            .collect();
        Self::new(sentences, window)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl SkipGramConfig {
    pub fn new(dim: usize, epochs: usize, seed: u64) -> Self {
        Self {
            dim,
            epochs,
            negatives: 5,
            learning_rate: 0.05,
            seed,
        }
    }
}

/// Skip-gram with negative sampling; the center representation is the
/// subword-composed mean used by [`EmbeddingTable::embed_word`].
pub fn train_skipgram(
    corpus: &ToyCorpus,
    subwords: &SubwordConfig,
    config: &SkipGramConfig,
) -> Result<EmbeddingTable> {
    subwords.validate()?;
    if config.dim == 0 || config.epochs == 0 {
        return Err(Error::Config(
            "skip-gram dimension and epochs must be positive".into(),
        ));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in corpus.sentences.iter().flatten() {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::Data(format!(
            "skip-gram needs at least 2 distinct tokens, corpus has {}",
            counts.len()
        )));
    }
    let vocab: Vec<&str> = counts.keys().copied().collect();
    let index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (*w, i)).collect();

    let subword_set: BTreeSet<String> = vocab
        .iter()
        .flat_map(|w| extract_subwords(w, subwords))
        .collect();
    let subword_list: Vec<String> = subword_set.into_iter().collect();
    let subword_index: BTreeMap<&str, usize> = subword_list
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    // components[w] = [word row, subword rows...] in the input matrix
    let nv = vocab.len();
    let components: Vec<Vec<usize>> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| {
            std::iter::once(i)
                .chain(
                    extract_subwords(w, subwords)
                        .iter()
                        .map(|s| nv + subword_index[s.as_str()]),
                )
                .collect()
        })
        .collect();

    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rows = nv + subword_list.len();
    let bound = 1.0 / dim as f32;
    let mut input: Vec<f32> = (0..rows * dim)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    let mut output = vec![0f32; nv * dim];

    let noise = WeightedIndex::new(vocab.iter().map(|w| (counts[w] as f64).powf(0.75)))
        .expect("positive counts");

    let total_steps = (config.epochs * corpus.sentences.iter().map(Vec::len).sum::<usize>()).max(1);
    let mut step = 0usize;
    let mut hidden = vec![0f32; dim];
    let mut grad = vec![0f32; dim];
    for _ in 0..config.epochs {
        for sentence in &corpus.sentences {
            let ids: Vec<usize> = sentence.iter().map(|t| index[t.as_str()]).collect();
            for (pos, &center) in ids.iter().enumerate() {
                let lr = config.learning_rate * (1.0 - step as f32 / total_steps as f32).max(1e-4);
                step += 1;
                let comps = &components[center];
                hidden.iter_mut().for_each(|h| *h = 0.0);
                for &c in comps {
                    for (h, x) in hidden.iter_mut().zip(&input[c * dim..(c + 1) * dim]) {
                        *h += x;
                    }
                }
                let inv = 1.0 / comps.len() as f32;
                hidden.iter_mut().for_each(|h| *h *= inv);

                let lo = pos.saturating_sub(corpus.window);
                let hi = (pos + corpus.window).min(ids.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let target = ids[ctx_pos];
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    sgns_update(&hidden, &mut output, target, 1.0, lr, &mut grad, dim);
                    for _ in 0..config.negatives {
                        let neg = noise.sample(&mut rng);
                        if neg == target {
                            continue;
                        }
                        sgns_update(&hidden, &mut output, neg, 0.0, lr, &mut grad, dim);
                    }
                    for &c in comps {
                        for (x, g) in input[c * dim..(c + 1) * dim].iter_mut().zip(&grad) {
                            *x += g * inv;
                        }
                    }
                }
            }
        }
    }

    let mut table = EmbeddingTable::new(dim, *subwords)?;
    for (i, w) in vocab.iter().enumerate() {
        table
            .word_vectors
            .insert(w.to_string(), input[i * dim..(i + 1) * dim].to_vec());
    }
    for (j, s) in subword_list.iter().enumerate() {
        let r = nv + j;
        table
            .subword_vectors
            .insert(s.clone(), input[r * dim..(r + 1) * dim].to_vec());
    }
    Ok(table)
}

fn sgns_update(
    hidden: &[f32],
    output: &mut [f32],
    target: usize,
    label: f32,
    lr: f32,
    grad: &mut [f32],
    dim: usize,
) {
    let row = &mut output[target * dim..(target + 1) * dim];
    let score: f32 = hidden.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
    let sigma = 1.0 / (1.0 + (-score).exp());
    let g = lr * (label - sigma);
    for ((gr, o), h) in grad.iter_mut().zip(row.iter_mut()).zip(hidden) {
        *gr += g * *o;
        *o += g * h;
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(l_min: usize, l_max: usize) -> SubwordConfig {
        SubwordConfig::new(l_min, l_max, true).unwrap()
    }

    #[test]
    fn subwords_of_ab() {
        assert_eq!(
            extract_subwords("ab", &cfg(2, 3)),
            vec!["<a", "ab", "b>", "<ab", "ab>"]
        );
    }

    #[test]
    fn subwords_longer_than_word_are_empty() {
        assert!(extract_subwords("a", &cfg(5, 6)).is_empty());
    }

    #[test]
    fn subwords_without_boundaries_use_code_points() {
        let c = SubwordConfig::new(1, 2, false).unwrap();
        assert_eq!(extract_subwords("कि", &c), vec!["क", "ि", "कि"]);
    }

    #[test]
    fn which_contiguous_enumeration() {
        let subs = extract_subwords("which", &cfg(2, 4));
        // wrapped "<which>" has 7 code points: 6 + 5 + 4 grams
        assert_eq!(subs.len(), 15);
        assert!(subs.contains(&"wh".to_string()));
        assert!(subs.contains(&"hich".to_string()));
        assert!(!subs.contains(&"wc".to_string()));
    }

    #[test]
    fn invalid_subword_config() {
        assert!(SubwordConfig::new(0, 3, true).is_err());
        assert!(SubwordConfig::new(4, 3, true).is_err());
    }

    #[test]
    fn embed_word_present_returns_stored_vector() {
        let mut t = EmbeddingTable::new(3, cfg(3, 6)).unwrap();
        t.insert_word("abc", vec![0.25, -1.5, 3.0]).unwrap();
        assert_eq!(t.embed_word("abc").unwrap(), vec![0.25, -1.5, 3.0]);
    }

    #[test]
    fn embed_word_averages_known_subwords() {
        let mut t = EmbeddingTable::new(2, cfg(2, 3)).unwrap();
        t.insert_subword("<a", vec![1.0, 2.0]).unwrap();
        t.insert_subword("ab>", vec![3.0, -2.0]).unwrap();
        t.insert_subword("zz", vec![100.0, 100.0]).unwrap();
        assert_eq!(t.embed_word("ab").unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn embed_word_errors() {
        let mut t = EmbeddingTable::new(2, cfg(3, 6)).unwrap();
        assert!(matches!(t.embed_word("x"), Err(Error::InvalidInput(_))));
        t.insert_word("abc", vec![1.0, 0.0]).unwrap();
        assert!(matches!(t.embed_word(""), Err(Error::InvalidInput(_))));
        match t.embed_word("zzz") {
            Err(Error::Coverage(msg)) => assert!(msg.contains("zzz")),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn parse_example_file() {
        let t = EmbeddingTable::parse("2 3\na 1 0 0\nb 0 1 0", "mem").unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.word_vectors().len(), 2);
        assert_eq!(t.embed_word("b").unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        match EmbeddingTable::parse("2 3\na 1 0 0\nb 0 1", "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match EmbeddingTable::parse("1 2\na 1 x", "mem") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("non-numeric"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            EmbeddingTable::parse("oops\n", "mem"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            EmbeddingTable::parse("3 1\na 1\n", "mem"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn corpus_requires_two_tokens() {
        let c = ToyCorpus::from_text("a a a\n", 1).unwrap();
        let r = train_skipgram(&c, &cfg(3, 6), &SkipGramConfig::new(8, 1, 0));
        assert!(matches!(r, Err(Error::Data(_))));
        assert!(ToyCorpus::from_text("a b", 0).is_err());
    }

    #[test]
    fn skipgram_covers_every_token_and_is_deterministic() {
        let c = ToyCorpus::from_text("the cat sat\nthe dog sat\na cat ran", 2).unwrap();
        let sc = SkipGramConfig::new(8, 3, 11);
        let a = train_skipgram(&c, &cfg(3, 6), &sc).unwrap();
        let b = train_skipgram(&c, &cfg(3, 6), &sc).unwrap();
        assert_eq!(a, b);
        for w in ["the", "cat", "sat", "dog", "a", "ran"] {
            assert!(a.word_vectors().contains_key(w));
        }
    }
}
