//! Output token inventory: four fixed special tokens followed by the sorted
//! character set.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_SPECIALS: usize = 4;

/// How characters outside the charset are treated during encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownPolicy {
    /// Training targets: unknown characters are an error.
    Reject,
    /// Evaluation references: unknown characters become `UNK`.
    MapToUnk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<char>", into = "Vec<char>")]
pub struct Charset {
    chars: Vec<char>,
    index: HashMap<char, u32>,
}

impl Charset {
    /// Builds a charset from characters in the given order. Duplicates are an
    /// error.
    pub fn new(chars: Vec<char>) -> Result<Self> {
        let mut index = HashMap::with_capacity(chars.len());
        for (i, c) in chars.iter().enumerate() {
            if index.insert(*c, (i + NUM_SPECIALS) as u32).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate character {c:?} in charset"
                )));
            }
        }
        Ok(Self { chars, index })
    }

    /// Unique code points of all transcriptions, sorted by code point.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<char> = words.into_iter().flat_map(str::chars).collect();
        Self::new(set.into_iter().collect()).expect("set has no duplicates")
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Total vocabulary size including the special tokens.
    pub fn vocab_size(&self) -> usize {
        self.chars.len() + NUM_SPECIALS
    }

    pub fn id_of(&self, c: char) -> Option<u32> {
        self.index.get(&c).copied()
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        (id as usize)
            .checked_sub(NUM_SPECIALS)
            .and_then(|i| self.chars.get(i))
            .copied()
    }

    /// Token ids of `word` followed by `EOS`.
    pub fn encode(&self, word: &str, policy: UnknownPolicy) -> Result<Vec<u32>> {
        let mut ids = Vec::with_capacity(word.chars().count() + 1);
        for c in word.chars() {
            match (self.id_of(c), policy) {
                (Some(id), _) => ids.push(id),
                (None, UnknownPolicy::MapToUnk) => ids.push(UNK),
                (None, UnknownPolicy::Reject) => {
                    return Err(Error::Coverage(format!(
                        "character {c:?} (U+{:04X}) of word {word:?} is not in the charset",
                        c as u32
                    )))
                }
            }
        }
        ids.push(EOS);
        Ok(ids)
    }

    /// Text up to the first `EOS`; special tokens are skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter_map(|&id| self.char_of(id))
            .collect()
    }
}

impl TryFrom<Vec<char>> for Charset {
    type Error = Error;
    fn try_from(chars: Vec<char>) -> Result<Self> {
        Self::new(chars)
    }
}

impl From<Charset> for Vec<char> {
    fn from(c: Charset) -> Self {
        c.chars
    }
}
