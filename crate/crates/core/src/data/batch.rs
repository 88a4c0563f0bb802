use std::collections::VecDeque;

use log::info;
use rand::seq::SliceRandom;

use crate::data::corpus::ParallelCorpus;
use crate::data::vocab::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::seed;

/// `batch × len` matrix of token ids, right-padded with [`PAD`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    pub batch: usize,
    pub len: usize,
    pub ids: Vec<usize>,
}

impl TokenGrid {
    pub fn from_rows<R: AsRef<[usize]>>(rows: &[R]) -> Self {
        let len = rows.iter().map(|r| r.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(rows.len() * len);
        for r in rows {
            let r = r.as_ref();
            ids.extend_from_slice(r);
            ids.extend(std::iter::repeat_n(PAD, len - r.len()));
        }
        TokenGrid {
            batch: rows.len(),
            len,
            ids,
        }
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.len..(b + 1) * self.len]
    }

    /// `true` at padded positions.
    pub fn pad_mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&i| i == PAD).collect()
    }

    /// Row contents without trailing padding.
    pub fn unpadded(&self, b: usize) -> &[usize] {
        let row = self.row(b);
        let end = row.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1);
        &row[..end]
    }
}

/// Padded source, BOS-prefixed decoder input and EOS-suffixed decoder target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub src: TokenGrid,
    pub tgt_in: TokenGrid,
    pub tgt_out: TokenGrid,
}

impl Batch {
    /// Builds a batch, truncating sources to `max_len` and targets to
    /// `max_len − 1` words (room for BOS/EOS). Returns the number of
    /// truncated sentences alongside.
    pub fn from_pairs<S: AsRef<[usize]>, U: AsRef<[usize]>>(
        pairs: &[(S, U)],
        max_len: usize,
    ) -> Result<(Batch, usize)> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("batch with no sentences".into()));
        }
        if max_len < 2 {
            return Err(Error::Config(format!("max_len {max_len} is too small")));
        }
        let mut truncated = 0;
        let mut src = Vec::with_capacity(pairs.len());
        let mut tin = Vec::with_capacity(pairs.len());
        let mut tout = Vec::with_capacity(pairs.len());
        for (s, t) in pairs {
            let (s, t) = (s.as_ref(), t.as_ref());
            if s.is_empty() {
                return Err(Error::EmptyInput("empty source sentence".into()));
            }
            let s_cut = &s[..s.len().min(max_len)];
            let t_cut = &t[..t.len().min(max_len - 1)];
            if s_cut.len() < s.len() || t_cut.len() < t.len() {
                truncated += 1;
            }
            src.push(s_cut.to_vec());
            let mut i = Vec::with_capacity(t_cut.len() + 1);
            i.push(BOS);
            i.extend_from_slice(t_cut);
            tin.push(i);
            let mut o = t_cut.to_vec();
            o.push(EOS);
            tout.push(o);
        }
        Ok((
            Batch {
                src: TokenGrid::from_rows(&src),
                tgt_in: TokenGrid::from_rows(&tin),
                tgt_out: TokenGrid::from_rows(&tout),
            },
            truncated,
        ))
    }

    pub fn size(&self) -> usize {
        self.src.batch
    }

    /// Number of non-padding decoder target positions.
    pub fn target_tokens(&self) -> usize {
        self.tgt_out.ids.iter().filter(|&&t| t != PAD).count()
    }
}

/// Endless source of index batches: every index appears exactly once per
/// epoch; each epoch is shuffled (seeded per epoch), bucketed by length and
/// served in shuffled batch order.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    lengths: Vec<usize>,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    queue: VecDeque<Vec<usize>>,
}

/// Sentences sorted together per bucket, in units of batches.
const BUCKET_BATCHES: usize = 8;

impl EpochSampler {
    pub fn new(lengths: Vec<usize>, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if lengths.is_empty() {
            return Err(Error::EmptyInput("cannot sample from an empty corpus".into()));
        }
        Ok(EpochSampler {
            lengths,
            batch_size,
            seed,
            epoch: 0,
            queue: VecDeque::new(),
        })
    }

    /// The batches of one epoch.
    pub fn epoch_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = seed::rng(self.seed, "epoch", epoch);
        let mut order: Vec<usize> = (0..self.lengths.len()).collect();
        order.shuffle(&mut rng);
        let mut batches = Vec::new();
        for bucket in order.chunks_mut(self.batch_size * BUCKET_BATCHES) {
            bucket.sort_by_key(|&i| self.lengths[i]);
            batches.extend(bucket.chunks(self.batch_size).map(<[usize]>::to_vec));
        }
        batches.shuffle(&mut rng);
        batches
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.queue.is_empty() {
            self.queue.extend(self.epoch_batches(self.epoch));
            self.epoch += 1;
        }
        self.queue.pop_front().expect("epochs are never empty")
    }
}

/// One shuffled, length-bucketed, padded epoch over a parallel corpus.
pub fn make_batches(
    corpus: &ParallelCorpus,
    batch_size: usize,
    seed: u64,
    max_len: usize,
) -> Result<Vec<Batch>> {
    let sampler = EpochSampler::new(
        corpus.pairs.iter().map(|(_, t)| t.len()).collect(),
        batch_size,
        seed,
    )?;
    let mut truncated = 0;
    let mut out = Vec::new();
    for idx in sampler.epoch_batches(0) {
        let pairs: Vec<_> = idx
            .iter()
            .map(|&i| (&corpus.pairs[i].0, &corpus.pairs[i].1))
            .collect();
        let (b, t) = Batch::from_pairs(&pairs, max_len)?;
        truncated += t;
        out.push(b);
    }
    if truncated > 0 {
        info!("truncated {truncated} over-length sentences to max_len {max_len}");
    }
    Ok(out)
}
