//! Network components with hand-written forward and backward passes.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod embed;
pub mod encoder;
pub mod model;
pub mod ops;
pub mod params;
pub mod tensor;

pub use attention::attention;
pub use config::{EmbeddingKind, ModelConfig};
pub use embed::{embed, embed_backward, embed_forward, EmbedCache};
pub use encoder::{encode_backward, encode_forward, encode_sequence, EncoderCache};
pub use model::{Model, SequenceCache};
pub use params::{embedding_layout, model_layout, ModelParams, TensorSpec};
pub use tensor::Tensor;
