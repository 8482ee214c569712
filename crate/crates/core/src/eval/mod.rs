pub mod evaluate;
pub mod metrics;

pub use evaluate::{evaluate, evaluate_images, run_ablation, similarity_matrix, AblationTable, SimilarityMatrix};
pub use metrics::{cer, edit_ops, wer, EditOps, MetricReport};
