//! Transformer encoder-decoder with encoder-side feature-embedding hooks.

pub mod config;
pub mod decode;
pub mod io;
pub mod transformer;

pub use config::ModelConfig;
pub use decode::{argmax_token, Decoded};
pub use io::{checkpoint_id, load_model, model_bytes, model_from_bytes, save_model, Checkpoint};
pub use transformer::{
    positional_encoding, Direction, EncoderOutput, EncoderState, LayerNorm, Linear, ModelMeta,
    MultiHeadAttention, Seq2Seq,
};
