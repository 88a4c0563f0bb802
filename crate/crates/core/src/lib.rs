//! Domain-aware feature embeddings (DAFE) for unsupervised domain adaptation
//! of neural machine translation, at desk scale.
//!
//! A small Transformer encoder-decoder is trained by alternating a denoising
//! language-model objective on monolingual text with translation on
//! out-of-domain parallel data. Per-layer domain and task vectors are added
//! to every encoder layer output; each training step updates only the base
//! network plus the vectors of its own domain and task.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the CLI uses.

pub mod cli;
pub mod corruption;
pub mod dafe;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod seed;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numerics::Tensor<f64>;
pub type ParamStore64 = numerics::ParamStore<f64>;
pub type Graph64 = numerics::Graph<f64>;
pub type Seq2Seq64 = model::Seq2Seq<f64>;
pub type Seq2Seq32 = model::Seq2Seq<f32>;
