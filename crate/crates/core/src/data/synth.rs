//! Synthetic degraded word images rendered from fonts.
//!
//! Every image gets a provenance record with the exact degradation
//! parameters used, written to `provenance.jsonl` next to the index files.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use ab_glyph::{Font, FontVec, PxScale, ScaleFont};
use image::{GrayImage, Luma};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::data::dataset::{format_index, Split, WordSample};
use crate::error::{Error, Result};
use crate::imaging::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub lexicon: Vec<String>,
    pub fonts: Vec<PathBuf>,
    pub samples_per_word: usize,
    /// Canvas height in pixels; the width follows the rendered word.
    pub height: u32,
    /// Font size as a fraction of the canvas height.
    pub font_size: (f32, f32),
    pub blur_sigma: (f32, f32),
    pub occlusion_count: (usize, usize),
    pub occlusion_width: (u32, u32),
    pub ink_alpha: (f32, f32),
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(lexicon: Vec<String>, fonts: Vec<PathBuf>, samples_per_word: usize, seed: u64) -> Self {
        Self {
            lexicon,
            fonts,
            samples_per_word,
            height: 64,
            font_size: (0.55, 0.7),
            blur_sigma: (0.0, 1.5),
            occlusion_count: (0, 2),
            occlusion_width: (2, 5),
            ink_alpha: (0.6, 1.0),
            seed,
        }
    }

    /// No blur, no strips, full ink.
    pub fn clean(mut self) -> Self {
        self.blur_sigma = (0.0, 0.0);
        self.occlusion_count = (0, 0);
        self.ink_alpha = (1.0, 1.0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.fonts.is_empty() {
            return Err(Error::Config("at least one font is required".into()));
        }
        if self.lexicon.is_empty() || self.samples_per_word == 0 {
            return Err(Error::Config("lexicon and samples per word must be non-empty".into()));
        }
        if self.height < 8 {
            return Err(Error::Config("canvas height must be at least 8 pixels".into()));
        }
        let ordered = |lo: f32, hi: f32| lo >= 0.0 && lo <= hi;
        if !ordered(self.font_size.0, self.font_size.1)
            || self.font_size.0 == 0.0
            || !ordered(self.blur_sigma.0, self.blur_sigma.1)
            || !ordered(self.ink_alpha.0, self.ink_alpha.1)
            || self.ink_alpha.1 > 1.0
            || self.occlusion_count.0 > self.occlusion_count.1
            || self.occlusion_width.0 > self.occlusion_width.1
        {
            return Err(Error::Config("degradation ranges must be non-negative with min <= max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    pub x: u32,
    pub width: u32,
}

/// Per-image generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: String,
    pub word: String,
    pub split: Split,
    pub font: String,
    pub font_px: f32,
    pub ink_alpha: f32,
    pub blur_sigma: f32,
    pub occlusions: Vec<Occlusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub images: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

fn load_font(path: &Path) -> Result<FontVec> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FontVec::try_from_vec(bytes)
        .map_err(|_| Error::Config(format!("{}: not a usable TrueType/OpenType font", path.display())))
}

fn covers(font: &FontVec, word: &str) -> bool {
    word.chars().all(|c| c.is_whitespace() || font.glyph_id(c).0 != 0)
}

fn sample_f32(rng: &mut ChaCha8Rng, r: (f32, f32)) -> f32 {
    if r.1 > r.0 {
        rng.gen_range(r.0..=r.1)
    } else {
        r.0
    }
}

/// Renders `word` dark on a white canvas of height `height` with `alpha`
/// ink opacity.
pub fn render_word(font: &FontVec, word: &str, px: f32, height: u32, alpha: f32, x_jitter: f32) -> GrayImage {
    let scaled = font.as_scaled(PxScale::from(px));
    let margin = (height as f32 * 0.15).ceil();
    let mut glyphs = Vec::new();
    let mut caret = margin + x_jitter;
    let baseline = (height as f32 + scaled.ascent() + scaled.descent()) / 2.0;
    let mut prev = None;
    for c in word.chars() {
        let id = font.glyph_id(c);
        if let Some(p) = prev {
            caret += scaled.kern(p, id);
        }
        glyphs.push(id.with_scale_and_position(px, ab_glyph::point(caret, baseline)));
        caret += scaled.h_advance(id);
        prev = Some(id);
    }
    let width = (caret + margin).ceil().max(height as f32) as u32;
    let mut ink = vec![0f32; (width * height) as usize];
    for g in glyphs {
        if let Some(outlined) = font.outline_glyph(g) {
            let b = outlined.px_bounds();
            outlined.draw(|x, y, cov| {
                let px = b.min.x as i32 + x as i32;
                let py = b.min.y as i32 + y as i32;
                if px >= 0 && py >= 0 && (px as u32) < width && (py as u32) < height {
                    let i = (py as u32 * width + px as u32) as usize;
                    ink[i] = (ink[i] + cov).min(1.0);
                }
            });
        }
    }
    GrayImage::from_fn(width, height, |x, y| {
        let a = ink[(y * width + x) as usize] * alpha;
        Luma([(255.0 * (1.0 - a)).round().clamp(0.0, 255.0) as u8])
    })
}

/// Renders, degrades and writes a dataset in the loader layout under
/// `out_dir`. Words are split 80/10/10 into train/val/test so no word
/// appears in two splits.
pub fn synthesize_dataset(config: &SynthConfig, out_dir: &Path) -> Result<SynthSummary> {
    config.validate()?;
    let fonts = config
        .fonts
        .iter()
        .map(|p| load_font(p))
        .collect::<Result<Vec<_>>>()?;
    let mut words: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for w in &config.lexicon {
        let w: String = w.trim().nfc().collect();
        if !w.is_empty() && seen.insert(w.clone()) {
            words.push(w);
        }
    }
    if words.is_empty() {
        return Err(Error::Config("lexicon has no non-blank words".into()));
    }
    let mut missing = BTreeSet::new();
    for w in &words {
        for c in w.chars() {
            if !c.is_whitespace() && fonts.iter().all(|f| f.glyph_id(c).0 == 0) {
                missing.insert(c);
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Unrenderable {
            chars: missing.into_iter().collect(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    words.shuffle(&mut rng);
    let n = words.len();
    let n_train = ((n as f64) * 0.8).round() as usize;
    let n_val = (((n as f64) * 0.1).round() as usize).min(n - n_train);
    let split_of = |i: usize| {
        if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    };

    for split in Split::ALL {
        let d = out_dir.join("images").join(split.to_string());
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut samples: Vec<WordSample> = Vec::new();
    let mut provenance = String::new();
    let mut counter = 0usize;
    for (wi, word) in words.iter().enumerate() {
        let split = split_of(wi);
        let usable: Vec<usize> = (0..fonts.len()).filter(|&f| covers(&fonts[f], word)).collect();
        if usable.is_empty() {
            // every char is covered by some font, but no single font covers the word
            return Err(Error::Unrenderable {
                chars: word.chars().collect(),
            });
        }
        for _ in 0..config.samples_per_word {
            counter += 1;
            let mut r = ChaCha8Rng::seed_from_u64(config.seed ^ (counter as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let fi = usable[r.gen_range(0..usable.len())];
            let font_px = (sample_f32(&mut r, config.font_size) * config.height as f32 * 10.0).round() / 10.0;
            let ink_alpha = sample_f32(&mut r, config.ink_alpha);
            let blur_sigma = sample_f32(&mut r, config.blur_sigma);
            let x_jitter = r.gen_range(0.0..(config.height as f32 * 0.1));
            let mut img = render_word(&fonts[fi], word, font_px, config.height, ink_alpha, x_jitter);
            if blur_sigma > 0.0 {
                img = Image::from_gray8(&img).blurred(blur_sigma).to_gray8();
            }
            let count = if config.occlusion_count.1 > config.occlusion_count.0 {
                r.gen_range(config.occlusion_count.0..=config.occlusion_count.1)
            } else {
                config.occlusion_count.0
            };
            let w = img.width();
            let mut occlusions = Vec::with_capacity(count);
            for _ in 0..count {
                let width = if config.occlusion_width.1 > config.occlusion_width.0 {
                    r.gen_range(config.occlusion_width.0..=config.occlusion_width.1)
                } else {
                    config.occlusion_width.0
                }
                .min(w);
                let x = r.gen_range(0..=(w - width));
                for xx in x..x + width {
                    for y in 0..img.height() {
                        img.put_pixel(xx, y, Luma([255]));
                    }
                }
                occlusions.push(Occlusion { x, width });
            }
            let rel = format!("images/{split}/{counter:06}.png");
            let path = out_dir.join(&rel);
            img.save(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: std::io::Error::other(e),
            })?;
            let record = Provenance {
                path: rel,
                word: word.clone(),
                split,
                font: config.fonts[fi]
                    .file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                font_px,
                ink_alpha,
                blur_sigma,
                occlusions,
            };
            provenance.push_str(&serde_json::to_string(&record).expect("provenance serializes"));
            provenance.push('\n');
            samples.push(WordSample {
                image_path: path,
                transcription: word.clone(),
                split,
            });
        }
    }

    let write = |name: &str, text: &str| -> Result<()> {
        let p = out_dir.join(name);
        let mut f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&p, e))
    };
    let mut summary = SynthSummary {
        images: samples.len(),
        train: 0,
        val: 0,
        test: 0,
    };
    for split in Split::ALL {
        let part: Vec<WordSample> = samples.iter().filter(|s| s.split == split).cloned().collect();
        match split {
            Split::Train => summary.train = part.len(),
            Split::Val => summary.val = part.len(),
            Split::Test => summary.test = part.len(),
        }
        write(split.index_file(), &format_index(&part, out_dir))?;
    }
    write("provenance.jsonl", &provenance)?;
    Ok(summary)
}

/// Reads the provenance sidecar of a synthesized dataset.
pub fn load_provenance(root: &Path) -> Result<Vec<Provenance>> {
    let p = root.join("provenance.jsonl");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: p.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// SHA-256 over every file below `root` (sorted relative paths and
/// contents), as a hex string.
pub fn dataset_checksum(root: &Path) -> Result<String> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let p = entry.map_err(|e| Error::io(dir, e))?.path();
            if p.is_dir() {
                walk(&p, root, out)?;
            } else {
                out.push(p.strip_prefix(root).unwrap_or(&p).to_path_buf());
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, root, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let p = root.join(&rel);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
