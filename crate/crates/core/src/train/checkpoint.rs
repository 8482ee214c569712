//! Single-file checkpoints.
//!
//! Layout:
//!
//! ```text
//! semrec-checkpoint <version>\n
//! <metadata as one line of JSON>\n
//! <tensor blobs, little-endian, in metadata order>
//! ```
//!
//! Each metadata tensor entry records its name, dtype (`f32` or `f64`),
//! shape, and byte offset/length relative to the start of the blob section.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::charset::Charset;
use crate::error::{Error, Result};
use crate::nn::config::ModelConfig;
use crate::nn::model::Recognizer;
use crate::nn::params::ParamStore;
use crate::train::config::TrainConfig;
use crate::train::trainer::EpochMetrics;

pub const MAGIC: &str = "semrec-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub epoch: usize,
    pub charset: Charset,
    pub embed_dim: usize,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub history: Vec<EpochMetrics>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Checkpoint(format!("unsupported tensor dtype {other:?}"))),
    }
}

impl Checkpoint {
    pub fn from_model(
        model: &Recognizer,
        epoch: usize,
        train: Option<&TrainConfig>,
        history: &[EpochMetrics],
    ) -> Result<Self> {
        let tensors: BTreeMap<String, Tensor> = model
            .store()
            .vars()
            .into_iter()
            // deep copy: variables are updated in place after this snapshot
            .map(|(n, v)| Ok((n, v.as_tensor().detach().copy()?)))
            .collect::<Result<_>>()?;
        let mut entries = Vec::with_capacity(tensors.len());
        let mut offset = 0u64;
        for (name, t) in &tensors {
            let dtype = dtype_name(t.dtype())?;
            let bytes = (t.elem_count() * t.dtype().size_in_bytes()) as u64;
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: dtype.into(),
                shape: t.dims().to_vec(),
                offset,
                bytes,
            });
            offset += bytes;
        }
        Ok(Self {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                epoch,
                charset: model.charset().clone(),
                embed_dim: model.config().semantic.embed_dim,
                model: model.config().clone(),
                train: train.cloned(),
                history: history.to_vec(),
                tensors: entries,
            },
            tensors,
        })
    }

    /// Writes to a temporary sibling and renames, so an interrupted save
    /// never clobbers the previous file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            writeln!(f, "{MAGIC} {}", self.meta.format_version)?;
            let meta = serde_json::to_string(&self.meta).map_err(std::io::Error::other)?;
            writeln!(f, "{meta}")?;
            for entry in &self.meta.tensors {
                let t = &self.tensors[&entry.name];
                let flat = t.flatten_all().map_err(std::io::Error::other)?;
                match t.dtype() {
                    DType::F32 => {
                        for v in flat.to_vec1::<f32>().map_err(std::io::Error::other)? {
                            f.write_all(&v.to_le_bytes())?;
                        }
                    }
                    _ => {
                        for v in flat.to_vec1::<f64>().map_err(std::io::Error::other)? {
                            f.write_all(&v.to_le_bytes())?;
                        }
                    }
                }
            }
            f.flush()?;
            Ok(())
        };
        write().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
        let mut header = String::new();
        r.read_line(&mut header).map_err(|e| Error::io(path, e))?;
        let version = header
            .trim_end()
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| bad("not a checkpoint file".into()))?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let meta: CheckpointMeta =
            serde_json::from_str(&line).map_err(|e| bad(format!("metadata: {e}")))?;
        if meta.format_version != version {
            return Err(bad("header and metadata versions differ".into()));
        }
        if meta.charset.chars().is_empty() {
            return Err(bad("empty charset".into()));
        }
        let mut blob = Vec::new();
        r.read_to_end(&mut blob).map_err(|e| Error::io(path, e))?;
        let mut tensors = BTreeMap::new();
        for e in &meta.tensors {
            let (dtype, size) = match e.dtype.as_str() {
                "f32" => (DType::F32, 4),
                "f64" => (DType::F64, 8),
                other => return Err(bad(format!("tensor {} has unknown dtype {other}", e.name))),
            };
            let n: usize = e.shape.iter().product();
            let end = e.offset.checked_add(e.bytes).unwrap_or(u64::MAX);
            if (n * size) as u64 != e.bytes || end > blob.len() as u64 {
                return Err(bad(format!("tensor {} is truncated or inconsistent", e.name)));
            }
            let raw = &blob[e.offset as usize..end as usize];
            let t = match dtype {
                DType::F32 => {
                    let v: Vec<f32> = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect();
                    Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
                }
                _ => {
                    let v: Vec<f64> = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
                }
            };
            tensors.insert(e.name.clone(), t);
        }
        Ok(Self { meta, tensors })
    }

    /// Rebuilds the recognizer; fails if the stored parameters do not match
    /// the architecture exactly.
    pub fn to_recognizer(&self) -> Result<Recognizer> {
        let store = ParamStore::new(0);
        let mut dtype = DType::F32;
        for (name, t) in &self.tensors {
            dtype = t.dtype();
            store.insert(name.clone(), t)?;
        }
        let model = Recognizer::with_store(&self.meta.model, self.meta.charset.clone(), store, dtype)
            .map_err(|e| Error::Checkpoint(format!("parameters do not fit the model: {e}")))?;
        let created: Vec<String> = model
            .store()
            .vars()
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| !self.tensors.contains_key(n))
            .collect();
        if !created.is_empty() {
            return Err(Error::Checkpoint(format!(
                "checkpoint lacks parameters: {}",
                created.join(", ")
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Image;

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::toy();
        c.set_input_size(16, 32).unwrap();
        c.encoder.stage_strides = vec![(2, 2), (2, 2), (2, 1), (2, 1), (1, 1)];
        c.encoder.stage_channels = vec![4, 4, 4, 4, 4];
        c.encoder.stem_channels = 4;
        c.encoder.recurrent_hidden = 4;
        c.rectifier.loc_height = 16;
        c.rectifier.loc_channels = vec![4];
        c.rectifier.loc_hidden = 4;
        c.semantic = crate::nn::config::SemanticConfig { hidden: 5, embed_dim: 3 };
        c.decoder.hidden = 6;
        c.decoder.attention = 4;
        c.decoder.token_embed = 3;
        c
    }

    #[test]
    fn round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let charset = Charset::from_words(["abc"]);
        let model = Recognizer::new(&tiny(), charset, 4, DType::F32).unwrap();
        let ck = Checkpoint::from_model(&model, 3, None, &[]).unwrap();
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.meta, ck.meta);
        let model2 = loaded.to_recognizer().unwrap();
        let img = Image::filled(16, 32, 0.25);
        let a = model.recognize(&[&img], 2).unwrap();
        let b = model2.recognize(&[&img], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn snapshot_is_independent_of_later_updates() {
        let model = Recognizer::new(&tiny(), Charset::from_words(["ab"]), 2, DType::F32).unwrap();
        let ck = Checkpoint::from_model(&model, 1, None, &[]).unwrap();
        let (name, var) = model.store().trainable().remove(0);
        let before = ck.tensors[&name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        var.set(&(var.as_tensor() + 1.0).unwrap()).unwrap();
        let after = ck.tensors[&name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, "hello\n").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));

        let model = Recognizer::new(&tiny(), Charset::from_words(["ab"]), 1, DType::F32).unwrap();
        let good = dir.path().join("good.ckpt");
        Checkpoint::from_model(&model, 0, None, &[]).unwrap().save(&good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn missing_parameters_are_reported() {
        let model = Recognizer::new(&tiny(), Charset::from_words(["ab"]), 1, DType::F32).unwrap();
        let mut ck = Checkpoint::from_model(&model, 0, None, &[]).unwrap();
        let victim = ck.tensors.keys().next().unwrap().clone();
        ck.tensors.remove(&victim);
        let err = ck.to_recognizer().unwrap_err();
        assert!(err.to_string().contains(&victim), "{err}");
    }
}
