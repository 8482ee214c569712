//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::dataset::{build_charset, load_dataset, load_split, Split, WordSample};
use crate::data::synth::{dataset_checksum, synthesize_dataset, SynthConfig};
use crate::embedding::{load_embedding_file, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::evaluate::{evaluate, run_ablation, similarity_matrix};
use crate::imaging::{preprocess, Image};
use crate::nn::config::Variant;
use crate::nn::model::Recognizer;
use crate::train::checkpoint::Checkpoint;
use crate::train::config::TrainConfig;
use crate::train::trainer::{prepare, train};

#[derive(Debug, Parser)]
#[command(name = "semrec", version, about = "Word-image recognizer with a global semantic module")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Random seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat TOML training configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a degraded synthetic dataset.
    Synthesize(SynthesizeArgs),
    /// Train a model and write checkpoints plus a metrics log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Evaluate(EvaluateArgs),
    /// Print one "path<TAB>hypothesis" line per image.
    Predict(PredictArgs),
    /// Train and score the five-variant ablation grid.
    Ablate(AblateArgs),
    /// Cosine similarities between predicted semantics and word embeddings.
    Similarity(SimilarityArgs),
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Word list, one word per line.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Font files; repeat the flag or separate with commas.
    #[arg(long, value_delimiter = ',', required = true)]
    pub fonts: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub samples_per_word: usize,
    #[arg(long, default_value_t = 64)]
    pub height: u32,
    #[arg(long, default_value_t = 0.0)]
    pub blur_min: f32,
    #[arg(long, default_value_t = 1.5)]
    pub blur_max: f32,
    #[arg(long, default_value_t = 0)]
    pub occlusion_min: usize,
    #[arg(long, default_value_t = 2)]
    pub occlusion_max: usize,
    #[arg(long, default_value_t = 2)]
    pub occlusion_width_min: u32,
    #[arg(long, default_value_t = 5)]
    pub occlusion_width_max: u32,
    #[arg(long, default_value_t = 0.6)]
    pub ink_min: f32,
    #[arg(long, default_value_t = 1.0)]
    pub ink_max: f32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset root with train.txt, val.txt and test.txt.
    #[arg(long)]
    pub data: PathBuf,
    /// Word-vector text file (required unless wes is off or lambda is 0).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output directory; overrides out_dir from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = 5)]
    pub beam_width: usize,
    /// Report file (line-delimited JSON); the text table goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub beam_width: usize,
    /// Write predictions here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Seeds to average over.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 5)]
    pub beam_width: usize,
    /// Output directory for ablation.jsonl and ablation.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Column words, one per line; defaults to the distinct words of the split.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Use at most this many images.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Matrix output (tab-separated grid with labels).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional heatmap image.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
}

fn train_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_model(path: &Path) -> Result<Recognizer> {
    Checkpoint::load(path)?.to_recognizer()
}

fn embeddings(path: Option<&Path>, cfg: &TrainConfig) -> Result<Option<EmbeddingTable>> {
    match path {
        Some(p) => Ok(Some(load_embedding_file(p)?)),
        None if cfg.effective_lambda() > 0.0 => Err(Error::Config(
            "--embeddings is required when wes is on and lambda > 0".into(),
        )),
        None => Ok(None),
    }
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let say = |out: &mut dyn Write, s: String| -> Result<()> {
        writeln!(out, "{s}").map_err(|e| Error::io(Path::new("<stdout>"), e))
    };
    match cli.command {
        Command::Synthesize(a) => {
            let mut cfg = SynthConfig::new(
                read_lines(&a.lexicon)?,
                a.fonts.clone(),
                a.samples_per_word,
                a.common.seed.unwrap_or(0),
            );
            cfg.height = a.height;
            cfg.blur_sigma = (a.blur_min, a.blur_max);
            cfg.occlusion_count = (a.occlusion_min, a.occlusion_max);
            cfg.occlusion_width = (a.occlusion_width_min, a.occlusion_width_max);
            cfg.ink_alpha = (a.ink_min, a.ink_max);
            let s = synthesize_dataset(&cfg, &a.out)?;
            say(
                out,
                format!(
                    "{} images (train {}, val {}, test {}) checksum {}",
                    s.images,
                    s.train,
                    s.val,
                    s.test,
                    dataset_checksum(&a.out)?
                ),
            )
        }
        Command::Train(a) => {
            let mut cfg = train_config(&a.common)?;
            if let Some(o) = &a.out {
                cfg.out_dir = o.clone();
            }
            let table = embeddings(a.embeddings.as_deref(), &cfg)?;
            let train_set = load_split(&a.data, Split::Train)?;
            let val_set = load_split(&a.data, Split::Val)?;
            let outcome = train(&train_set, &val_set, table.as_ref(), &cfg)?;
            let last = outcome.history.last().expect("at least one epoch");
            say(
                out,
                format!(
                    "trained {} epochs; best epoch {} (val WER {:.4}); epoch 1 total loss {:.6}; checkpoints in {}",
                    outcome.history.len(),
                    outcome.best_epoch,
                    outcome.history[outcome.best_epoch - 1].val_wer,
                    outcome.history[0].total,
                    cfg.out_dir.display()
                ),
            )?;
            log::info!("final epoch total loss {:.6}", last.total);
            Ok(())
        }
        Command::Evaluate(a) => {
            let model = load_model(&a.checkpoint)?;
            let samples = load_split(&a.data, a.split)?;
            let report = evaluate(&model, &samples, a.beam_width)?;
            if let Some(p) = &a.out {
                write_file(p, &report.to_jsonl())?;
            }
            say(out, report.to_text_table().trim_end().to_string())
        }
        Command::Predict(a) => {
            let model = load_model(&a.checkpoint)?;
            let (h, w) = model.input_size();
            let images = a
                .images
                .iter()
                .map(|p| preprocess(p, h, w))
                .collect::<Result<Vec<Image>>>()?;
            let refs: Vec<&Image> = images.iter().collect();
            let mut text = String::new();
            for (chunk_paths, chunk) in a.images.chunks(64).zip(refs.chunks(64)) {
                for (p, r) in chunk_paths.iter().zip(model.recognize(chunk, a.beam_width)?) {
                    text += &format!("{}\t{}\n", p.display(), r.text);
                }
            }
            match &a.out {
                Some(p) => write_file(p, &text),
                None => say(out, text.trim_end_matches('\n').to_string()),
            }
        }
        Command::Ablate(a) => {
            let cfg = train_config(&a.common)?;
            let table = load_embedding_file(&a.embeddings)?;
            let all = load_dataset(&a.data)?;
            let charset = build_charset(&all);
            let (h, w) = (cfg.input_height, cfg.input_width);
            let part = |s: Split| -> Vec<WordSample> { all.iter().filter(|x| x.split == s).cloned().collect() };
            let train_p = prepare(&part(Split::Train), &charset, Some(&table), h, w)?;
            let val_p = prepare(&part(Split::Val), &charset, None, h, w)?;
            let test_p = prepare(&part(Split::Test), &charset, None, h, w)?;
            let result = run_ablation(
                &cfg,
                &train_p,
                &val_p,
                &test_p,
                &charset,
                Some(table.dim()),
                &Variant::GRID,
                &a.seeds,
                a.beam_width,
            )?;
            write_file(&a.out.join("ablation.jsonl"), &result.to_jsonl())?;
            write_file(&a.out.join("ablation.txt"), &result.to_text_table())?;
            say(out, result.to_text_table().trim_end().to_string())
        }
        Command::Similarity(a) => {
            let model = load_model(&a.checkpoint)?;
            let table = load_embedding_file(&a.embeddings)?;
            let mut samples = load_split(&a.data, a.split)?;
            if let Some(n) = a.limit {
                samples.truncate(n);
            }
            let lexicon = match &a.lexicon {
                Some(p) => read_lines(p)?,
                None => {
                    let mut seen = std::collections::BTreeSet::new();
                    samples
                        .iter()
                        .filter(|s| seen.insert(s.transcription.clone()))
                        .map(|s| s.transcription.clone())
                        .collect()
                }
            };
            let (h, w) = model.input_size();
            let images = samples
                .iter()
                .map(|s| preprocess(&s.image_path, h, w))
                .collect::<Result<Vec<Image>>>()?;
            let refs: Vec<&Image> = images.iter().collect();
            let labels: Vec<String> = samples.iter().map(|s| s.transcription.clone()).collect();
            let m = similarity_matrix(&model, &refs, &labels, &lexicon, &table)?;
            write_file(&a.out, &m.to_text())?;
            if let Some(hm) = &a.heatmap {
                m.write_heatmap(hm, 8)?;
            }
            let truth: Vec<&str> = labels.iter().map(String::as_str).collect();
            say(
                out,
                format!(
                    "{} x {} matrix; argmax hits the ground truth in {:.1}% of rows",
                    m.values.len(),
                    m.column_labels.len(),
                    100.0 * m.argmax_accuracy(&truth)?
                ),
            )
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the process
/// exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
