//! Character and word error rates.
//!
//! Strings are compared as NFC-normalized code-point sequences. Corpus CER is
//! micro-averaged: total edits over total reference length.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Edit operations of a minimal unit-cost alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditOps {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditOps {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

fn code_points(s: &str) -> Vec<char> {
    s.nfc().collect()
}

/// Minimal alignment between `reference` and `hypothesis`.
///
/// On ties the backtrace prefers a substitution over an insertion/deletion pair.
pub fn edit_ops(reference: &str, hypothesis: &str) -> EditOps {
    let r = code_points(reference);
    let h = code_points(hypothesis);
    edit_ops_chars(&r, &h)
}

pub(crate) fn edit_ops_chars<T: PartialEq>(r: &[T], h: &[T]) -> EditOps {
    let n = r.len();
    let m = h.len();
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        dp[i * w] = i;
    }
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = dp[(i - 1) * w + j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut ops = EditOps {
        reference_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let cur = dp[i * w + j];
        if i > 0 && j > 0 {
            let same = r[i - 1] == h[j - 1];
            let diag = dp[(i - 1) * w + j - 1];
            if same && diag == cur {
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && diag + 1 == cur {
                ops.substitutions += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * w + j] + 1 == cur {
            ops.deletions += 1;
            i -= 1;
        } else {
            ops.insertions += 1;
            j -= 1;
        }
    }
    ops
}

/// Corpus-level character error rate.
pub fn cer<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("CER of an empty pair list".into()));
    }
    let (mut edits, mut total) = (0usize, 0usize);
    for (r, h) in pairs {
        let ops = edit_ops(r.as_ref(), h.as_ref());
        edits += ops.distance();
        total += ops.reference_len;
    }
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "CER with zero total reference length".into(),
        ));
    }
    Ok(edits as f64 / total as f64)
}

/// Word error rate for word images: the fraction of pairs that differ.
pub fn wer<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("WER of an empty pair list".into()));
    }
    let wrong = pairs
        .iter()
        .filter(|(r, h)| !nfc_eq(r.as_ref(), h.as_ref()))
        .count();
    Ok(wrong as f64 / pairs.len() as f64)
}

fn nfc_eq(a: &str, b: &str) -> bool {
    a.nfc().eq(b.nfc())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub reference: String,
    pub hypothesis: String,
    pub distance: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cer: f64,
    pub wer: f64,
    pub crr: f64,
    pub wrr: f64,
    pub samples: usize,
    pub records: Vec<SampleRecord>,
}

impl MetricReport {
    /// Builds a report from (path, reference, hypothesis) triples.
    pub fn from_triples(triples: Vec<(Option<String>, String, String)>) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = triples
            .iter()
            .map(|(_, r, h)| (r.as_str(), h.as_str()))
            .collect();
        let cer = cer(&pairs)?;
        let wer = wer(&pairs)?;
        let records = triples
            .iter()
            .map(|(p, r, h)| SampleRecord {
                reference: r.clone(),
                hypothesis: h.clone(),
                distance: edit_ops(r, h).distance(),
                path: p.clone(),
            })
            .collect();
        Ok(Self {
            cer,
            wer,
            crr: 1.0 - cer,
            wrr: 1.0 - wer,
            samples: triples.len(),
            records,
        })
    }

    pub fn from_pairs<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> Result<Self> {
        Self::from_triples(
            pairs
                .iter()
                .map(|(r, h)| (None, r.as_ref().to_string(), h.as_ref().to_string()))
                .collect(),
        )
    }

    /// Line-delimited JSON: one summary line followed by one line per sample.
    pub fn to_jsonl(&self) -> String {
        let summary = serde_json::json!({
            "kind": "summary",
            "cer": self.cer,
            "wer": self.wer,
            "crr": self.crr,
            "wrr": self.wrr,
            "samples": self.samples,
        });
        let mut out = summary.to_string();
        out.push('\n');
        for r in &self.records {
            let mut v = serde_json::to_value(r).expect("record serializes");
            v["kind"] = "sample".into();
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_text_table(&self) -> String {
        format!(
            "samples  {:>8}\nCER      {:>8.4}\nCRR      {:>8.4}\nWER      {:>8.4}\nWRR      {:>8.4}\n",
            self.samples, self.cer, self.crr, self.wer, self.wrr
        )
    }
}
