use crate::dafe::{DomainId, TaskId};
use crate::data::{TokenGrid, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::transformer::{EncoderOutput, Seq2Seq};
use crate::numerics::Graph;
use crate::scalar::Scalar;

/// Output of greedy decoding. `truncated` is set when `max_steps` ran out
/// before EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub truncated: bool,
}

/// Index of the largest entry among ids ≥ 2 (PAD and BOS are never emitted);
/// ties go to the lowest id.
pub fn argmax_token<T: Scalar>(logits: &[T]) -> usize {
    let mut best = EOS;
    for (id, &v) in logits.iter().enumerate().skip(EOS + 1) {
        if v > logits[best] {
            best = id;
        }
    }
    best
}

impl<T: Scalar> Seq2Seq<T> {
    /// Greedy decoding with task fixed to MT.
    pub fn greedy_decode(&self, src: &[usize], domain: &DomainId, max_steps: usize) -> Result<Decoded> {
        Ok(self
            .greedy_decode_batch(&[src], domain, max_steps)?
            .pop()
            .expect("one sentence in, one out"))
    }

    /// Decodes several sentences together; results equal per-sentence
    /// decoding because padding is masked everywhere.
    pub fn greedy_decode_batch<S: AsRef<[usize]>>(
        &self,
        srcs: &[S],
        domain: &DomainId,
        max_steps: usize,
    ) -> Result<Vec<Decoded>> {
        if srcs.is_empty() {
            return Ok(Vec::new());
        }
        if srcs.iter().any(|s| s.as_ref().is_empty()) {
            return Err(Error::EmptyInput("empty source sentence".into()));
        }
        let cut: Vec<&[usize]> = srcs
            .iter()
            .map(|s| {
                let s = s.as_ref();
                &s[..s.len().min(self.config().max_len)]
            })
            .collect();
        let grid = TokenGrid::from_rows(&cut);
        let mut g = Graph::new();
        let enc = self.encode(&mut g, &grid, domain, TaskId::Mt, None)?;
        let memory = g.value(enc.memory).clone();

        let n = cut.len();
        let steps = max_steps.min(self.config().max_len);
        let mut prefixes: Vec<Vec<usize>> = vec![vec![BOS]; n];
        let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut done = vec![false; n];
        for _ in 0..steps {
            if done.iter().all(|&d| d) {
                break;
            }
            let prefix_grid = TokenGrid::from_rows(&prefixes);
            let t = prefix_grid.len;
            let mut step = Graph::new();
            let mem = step.input(memory.clone());
            let step_enc = EncoderOutput {
                hidden: Vec::new(),
                memory: mem,
                src_pad: enc.src_pad.clone(),
                batch: enc.batch,
                src_len: enc.src_len,
            };
            let logits = self.decode(&mut step, &step_enc, &prefix_grid, None)?;
            let logits = step.value(logits);
            for b in 0..n {
                if done[b] {
                    prefixes[b].push(PAD);
                    continue;
                }
                let tok = argmax_token(logits.row(b * t + t - 1));
                if tok == EOS {
                    done[b] = true;
                    prefixes[b].push(PAD);
                } else {
                    outputs[b].push(tok);
                    prefixes[b].push(tok);
                }
            }
        }
        Ok(outputs
            .into_iter()
            .zip(done)
            .map(|(tokens, d)| Decoded {
                tokens,
                truncated: !d,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_skips_reserved_and_prefers_lowest_id() {
        assert_eq!(argmax_token(&[9.0, 9.0, 1.0, 3.0, 3.0]), 3);
        assert_eq!(argmax_token(&[9.0, 9.0, 5.0, 3.0]), EOS);
    }
}
