//! Word-image dataset layout: `train.txt`, `val.txt` and `test.txt` under a
//! root directory, one `relative/path<TAB>transcription` line each.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::charset::Charset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index_file(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Val => "val.txt",
            Split::Test => "test.txt",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSample {
    pub image_path: PathBuf,
    pub transcription: String,
    pub split: Split,
}

/// Trims and NFC-normalizes a transcription.
pub fn normalize_transcription(s: &str) -> String {
    s.trim().nfc().collect()
}

/// Parses one index file. Paths are resolved against `root`; image existence
/// is checked when `check_images` is set.
pub fn parse_index(
    text: &str,
    origin: &Path,
    root: &Path,
    split: Split,
    check_images: bool,
) -> Result<Vec<WordSample>> {
    let mut out = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.display().to_string(),
            line: i + 1,
            message,
        };
        let (path, transcription) = line
            .split_once('\t')
            .ok_or_else(|| err("missing tab separator between path and transcription".into()))?;
        let transcription = normalize_transcription(transcription);
        if transcription.is_empty() {
            return Err(err("empty transcription".into()));
        }
        if path.is_empty() {
            return Err(err("empty image path".into()));
        }
        let image_path = root.join(path);
        if check_images && !image_path.is_file() {
            return Err(err(format!("image {} does not exist", image_path.display())));
        }
        out.push(WordSample {
            image_path,
            transcription,
            split,
        });
    }
    Ok(out)
}

/// Loads all three splits of a dataset root.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<WordSample>> {
    let root = root.as_ref();
    let mut samples = Vec::new();
    for split in Split::ALL {
        samples.extend(load_split(root, split)?);
    }
    Ok(samples)
}

pub fn load_split(root: impl AsRef<Path>, split: Split) -> Result<Vec<WordSample>> {
    let root = root.as_ref();
    let index = root.join(split.index_file());
    let bytes = std::fs::read(&index).map_err(|e| Error::io(&index, e))?;
    let text = String::from_utf8(bytes).map_err(|e| {
        // report the line holding the first invalid byte
        let good = e.utf8_error().valid_up_to();
        let line = e.as_bytes()[..good].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::Parse {
            path: index.display().to_string(),
            line,
            message: "invalid UTF-8".into(),
        }
    })?;
    parse_index(&text, &index, root, split, true)
}

/// Charset over the transcriptions of `samples`.
pub fn build_charset(samples: &[WordSample]) -> Charset {
    Charset::from_words(samples.iter().map(|s| s.transcription.as_str()))
}

/// Renders index lines (`path<TAB>word\n`) with paths relative to `root`.
pub fn format_index(samples: &[WordSample], root: &Path) -> String {
    let mut out = String::new();
    for s in samples {
        let rel = s.image_path.strip_prefix(root).unwrap_or(&s.image_path);
        out.push_str(&rel.to_string_lossy().replace('\\', "/"));
        out.push('\t');
        out.push_str(&s.transcription);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_dataset(dir: &Path, train: &str, val: &str, test: &str) {
        for name in ["a.png", "b.png", "c.png"] {
            std::fs::write(dir.join(name), b"x").unwrap();
        }
        std::fs::write(dir.join("train.txt"), train).unwrap();
        std::fs::write(dir.join("val.txt"), val).unwrap();
        std::fs::write(dir.join("test.txt"), test).unwrap();
    }

    #[test]
    fn loads_well_formed_index() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "a.png\tab\nb.png\tcd\n\nc.png\t  ef \n", "", "a.png\tab\n");
        let samples = load_dataset(dir.path()).unwrap();
        assert_eq!(samples.len(), 4);
        assert_eq!(samples[2].transcription, "ef");
        assert_eq!(samples[3].split, Split::Test);
    }

    #[test]
    fn missing_tab_names_line() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "a.png\tab\nb.png cd\n", "", "");
        match load_dataset(dir.path()) {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 2);
                assert!(path.ends_with("train.txt"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_image_and_index() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "zzz.png\tab\n", "", "");
        assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { line: 1, .. })));
        std::fs::remove_file(dir.path().join("val.txt")).unwrap();
        assert!(matches!(load_split(dir.path(), Split::Val), Err(Error::Io { .. })));
    }

    #[test]
    fn invalid_utf8_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "", "", "");
        std::fs::write(dir.path().join("train.txt"), b"a.png\tab\nb.png\t\xff\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn transcriptions_are_nfc_normalized() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "a.png\te\u{301}\n", "", "");
        let s = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(s[0].transcription, "\u{e9}");
    }

    #[test]
    fn charset_from_samples() {
        let mk = |t: &str| WordSample {
            image_path: PathBuf::from("x"),
            transcription: t.into(),
            split: Split::Train,
        };
        let cs = build_charset(&[mk("bc"), mk("ab")]);
        assert_eq!(cs.chars(), &['a', 'b', 'c']);
    }
}
