use crate::dafe::DomainId;
use crate::data::{ParallelCorpus, Sentence};
use crate::error::Result;
use crate::evaluation::bleu::{bleu, BleuReport};
use crate::model::Seq2Seq;
use crate::scalar::Scalar;

/// Sentences decoded together.
pub const DECODE_BATCH: usize = 32;

/// Greedy-decodes every source under `domain`; empty sources decode to
/// empty output.
pub fn translate_all<T: Scalar, S: AsRef<[usize]>>(
    model: &Seq2Seq<T>,
    sources: &[S],
    domain: &DomainId,
) -> Result<Vec<Sentence>> {
    let max_steps = model.config().max_len;
    let mut out = vec![Vec::new(); sources.len()];
    let live: Vec<usize> = (0..sources.len())
        .filter(|&i| !sources[i].as_ref().is_empty())
        .collect();
    for chunk in live.chunks(DECODE_BATCH) {
        let batch: Vec<&[usize]> = chunk.iter().map(|&i| sources[i].as_ref()).collect();
        for (&i, d) in chunk.iter().zip(model.greedy_decode_batch(&batch, domain, max_steps)?) {
            out[i] = d.tokens;
        }
    }
    Ok(out)
}

/// Corpus BLEU of greedy translations of `test` decoded with `domain`.
pub fn evaluate_model<T: Scalar>(model: &Seq2Seq<T>, test: &ParallelCorpus, domain: &DomainId) -> Result<BleuReport> {
    let sources: Vec<&Sentence> = test.sources().collect();
    let hyps = translate_all(model, &sources, domain)?;
    let refs: Vec<Sentence> = test.targets().cloned().collect();
    bleu(&hyps, &refs)
}
