use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Corpus BLEU with its components.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// In `[0, 100]`.
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    /// Clipped matches and candidate n-gram totals per order.
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub smoothed: bool,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP = {:.3}, hyp_len = {}, ref_len = {}{})",
            self.bleu,
            100.0 * self.precisions[0],
            100.0 * self.precisions[1],
            100.0 * self.precisions[2],
            100.0 * self.precisions[3],
            self.brevity_penalty,
            self.hyp_len,
            self.ref_len,
            if self.smoothed { ", smoothed" } else { "" }
        )
    }
}

impl BleuReport {
    /// Tab-separated machine-readable form; see [`BleuReport::tsv_header`].
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.bleu,
            self.precisions[0],
            self.precisions[1],
            self.precisions[2],
            self.precisions[3],
            self.brevity_penalty,
            self.hyp_len,
            self.ref_len
        )
    }

    pub fn tsv_header() -> &'static str {
        "bleu\tp1\tp2\tp3\tp4\tbp\thyp_len\tref_len"
    }
}

fn ngram_counts<W: Eq + Hash>(s: &[W], n: usize) -> HashMap<&[W], usize> {
    let mut m = HashMap::new();
    if s.len() >= n {
        for g in s.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

fn corpus_bleu<S, W>(hypotheses: &[S], references: &[S], smooth: bool) -> Result<BleuReport>
where
    S: AsRef<[W]>,
    W: Eq + Hash,
{
    if hypotheses.len() != references.len() {
        return Err(Error::Dimension {
            op: "bleu",
            left: vec![hypotheses.len()],
            right: vec![references.len()],
        });
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyInput("BLEU over an empty corpus".into()));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (g, &c) in &hc {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if smooth && n > 0 {
            (matches[n] + 1) as f64 / (totals[n] + 1) as f64
        } else if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
        smoothed: smooth,
    })
}

/// Corpus BLEU: clipped 1–4-gram precisions, geometric mean, brevity
/// penalty `exp(1 − r/c)` when `c ≤ r`. Zero if any precision is zero.
pub fn bleu<S, W>(hypotheses: &[S], references: &[S]) -> Result<BleuReport>
where
    S: AsRef<[W]>,
    W: Eq + Hash,
{
    corpus_bleu(hypotheses, references, false)
}

/// As [`bleu`], with add-one smoothing of the 2–4-gram precisions for very
/// small corpora.
pub fn bleu_smoothed<S, W>(hypotheses: &[S], references: &[S]) -> Result<BleuReport>
where
    S: AsRef<[W]>,
    W: Eq + Hash,
{
    corpus_bleu(hypotheses, references, true)
}

/// Splits lines on whitespace for scoring.
pub fn tokenize(lines: &[String]) -> Vec<Vec<&str>> {
    lines.iter().map(|l| l.split_whitespace().collect()).collect()
}
