pub mod dataset;
pub mod synth;

pub use dataset::{build_charset, load_dataset, Split, WordSample};
pub use synth::{dataset_checksum, synthesize_dataset, SynthConfig, SynthSummary};
