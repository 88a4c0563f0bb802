//! Corpus BLEU, model evaluation and the low-resource sweep.

pub mod bleu;
pub mod evaluate;
pub mod sweep;

pub use bleu::{bleu, bleu_smoothed, BleuReport};
pub use evaluate::{evaluate_model, translate_all};
pub use sweep::{low_resource_sweep, SweepCell, SweepTable, MIN_SWEEP_SENTENCES};
