//! Noise model `C(y)` for the denoising language-model objective: random
//! word dropout followed by a bounded local shuffle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_P_DROP: f64 = 0.1;
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub p_drop: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            p_drop: DEFAULT_P_DROP,
            k: DEFAULT_K,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::Config(format!(
                "noise.p_drop must lie in [0, 1], got {}",
                self.p_drop
            )));
        }
        Ok(())
    }
}

/// A corrupted sentence together with the bookkeeping needed to audit it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corrupted {
    pub tokens: Vec<usize>,
    /// Original index of each output token.
    pub source_positions: Vec<usize>,
    /// Original indices of the survivors in their pre-shuffle order.
    pub survivors: Vec<usize>,
    /// Set when every token drew a drop and one was kept regardless.
    pub forced_keep: bool,
}

impl Corrupted {
    /// `|final index − pre-shuffle rank|` for every output token.
    pub fn displacements(&self) -> Vec<usize> {
        self.source_positions
            .iter()
            .enumerate()
            .map(|(j, pos)| {
                let rank = self.survivors.binary_search(pos).expect("survivor");
                rank.abs_diff(j)
            })
            .collect()
    }
}

/// Applies `C(·)` with randomness taken from `rng`.
pub fn corrupt_with(tokens: &[usize], p_drop: f64, k: usize, rng: &mut ChaCha8Rng) -> Result<Corrupted> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("cannot corrupt an empty sentence".into()));
    }
    let mut survivors: Vec<usize> = (0..tokens.len())
        .filter(|_| !rng.gen_bool(p_drop))
        .collect();
    let forced_keep = survivors.is_empty();
    if forced_keep {
        survivors.push(rng.gen_range(0..tokens.len()));
    }
    let mut keyed: Vec<(f64, usize)> = survivors
        .iter()
        .enumerate()
        .map(|(rank, &pos)| {
            let jitter = if k == 0 { 0.0 } else { rng.gen_range(0.0..(k + 1) as f64) };
            (rank as f64 + jitter, pos)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let source_positions: Vec<usize> = keyed.into_iter().map(|(_, p)| p).collect();
    Ok(Corrupted {
        tokens: source_positions.iter().map(|&p| tokens[p]).collect(),
        source_positions,
        survivors,
        forced_keep,
    })
}

/// Deterministic in `(tokens, spec)`.
pub fn corrupt(tokens: &[usize], spec: &NoiseSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, "corrupt", 0);
    Ok(corrupt_with(tokens, spec.p_drop, spec.k, &mut rng)?.tokens)
}
