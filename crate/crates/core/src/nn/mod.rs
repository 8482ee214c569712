//! Network modules built on candle.

pub mod config;
pub mod decoder;
pub mod encoder;
pub(crate) mod layers;
pub mod params;
pub mod rectifier;
pub mod semantic;
pub mod model;

pub use config::{DecoderConfig, EncoderConfig, ModelConfig, RectifierConfig, SemanticConfig, Variant};
pub use model::{Recognition, Recognizer};
pub use params::ParamStore;

/// Element type used when building a model.
pub use candle_core::DType;
