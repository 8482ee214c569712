#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semrec::embedding::{train_skipgram, EmbeddingTable, SkipGramConfig, SubwordConfig, ToyCorpus};

pub const WORDS: [&str; 50] = [
    "apple", "bread", "chair", "dance", "eagle", "field", "grape", "house", "ink", "jolly",
    "kite", "lemon", "money", "night", "ocean", "piano", "queen", "river", "stone", "table",
    "uncle", "voice", "water", "young", "zebra", "arm", "bell", "cloud", "door", "egg",
    "frog", "gold", "hill", "iron", "jam", "king", "lamp", "moon", "nest", "owl",
    "pen", "rain", "sun", "tree", "vase", "wind", "yard", "book", "milk", "salt",
];

pub fn font_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fonts")
}

pub fn latin_font() -> PathBuf {
    font_dir().join("DejaVuSans.ttf")
}

/// Skip-gram subword embeddings trained on random sentences over `words`,
/// with each word drawn next to a fixed partner so contexts carry signal.
pub fn toy_embeddings(words: &[&str], dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::new();
    for _ in 0..(words.len() * 12) {
        let mut s = Vec::new();
        for _ in 0..4 {
            let i = *(0..words.len()).collect::<Vec<_>>().choose(&mut rng).unwrap();
            s.push(words[i].to_string());
            s.push(words[(i + 1) % words.len()].to_string());
        }
        sentences.push(s);
    }
    let corpus = ToyCorpus::new(sentences, 2).unwrap();
    let sub = SubwordConfig::new(3, 6, true).unwrap();
    train_skipgram(&corpus, &sub, &SkipGramConfig::new(dim, 50, seed)).unwrap()
}
