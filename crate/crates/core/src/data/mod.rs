//! Vocabulary, corpora, batching and the data-side baselines.

pub mod batch;
pub mod corpus;
pub mod vocab;

pub use batch::{make_batches, Batch, EpochSampler, TokenGrid};
pub use corpus::{
    back_translate, copy_corpus, read_lines, read_mono, read_parallel, write_lines, write_parallel,
    MonolingualCorpus, ParallelCorpus, ParallelPaths, Provenance, Sentence,
};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, PAD, UNK};
