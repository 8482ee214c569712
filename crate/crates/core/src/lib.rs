//! Word-image text recognition: spline rectification, a residual/recurrent
//! encoder, a global semantic vector supervised by subword word embeddings,
//! and an attention GRU decoder initialized from that vector.

pub mod beam;
pub mod charset;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
