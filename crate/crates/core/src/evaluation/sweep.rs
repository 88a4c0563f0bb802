use std::fmt::Write as _;

use log::warn;

use crate::data::ParallelCorpus;
use crate::error::{Error, Result};
use crate::evaluation::evaluate::evaluate_model;
use crate::scalar::Scalar;
use crate::seed;
use crate::training::{run_pipeline, Corpora, PipelineConfig, Strategy};

/// Fractions leaving fewer sentences than this are skipped.
pub const MIN_SWEEP_SENTENCES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub fraction: f64,
    pub strategy: Strategy,
    pub seed: u64,
    pub sentences: usize,
    /// `None` when the fraction was skipped.
    pub bleu: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn get(&self, fraction: f64, strategy: Strategy, seed: u64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.fraction == fraction && c.strategy == strategy && c.seed == seed)
    }

    /// Tab-separated with a header row; skipped cells read `skipped`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("fraction\tstrategy\tseed\tsentences\tbleu\n");
        for c in &self.cells {
            let bleu = c.bleu.map_or("skipped".to_string(), |b| b.to_string());
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", c.fraction, c.strategy, c.seed, c.sentences, bleu);
        }
        s
    }
}

/// For each fraction, seed and strategy: subsample the out-of-domain
/// parallel data (seeded), run the pipeline with the training seed set to
/// `seed`, and score on `eval` decoded with its own domain.
///
/// Only the parallel pairs shrink. Out-of-domain monolingual text stays at
/// full size, taken from the full parallel target side when not given.
pub fn low_resource_sweep<T: Scalar>(
    fractions: &[f64],
    strategies: &[Strategy],
    seeds: &[u64],
    corpora: &Corpora,
    config: &PipelineConfig,
    eval: &ParallelCorpus,
) -> Result<SweepTable> {
    if let Some(f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::Config(format!("sweep fraction {f} outside (0, 1]")));
    }
    let out_mono = corpora
        .out_mono
        .clone()
        .unwrap_or_else(|| corpora.out_parallel.target_corpus());
    let mut table = SweepTable::default();
    for &s in seeds {
        for (fi, &fraction) in fractions.iter().enumerate() {
            let sub = corpora
                .out_parallel
                .subsample(fraction, seed::derive(s, "sweep", fi as u64))?;
            let skip = sub.len() < MIN_SWEEP_SENTENCES;
            if skip {
                warn!(
                    "fraction {fraction} leaves {} sentences (< {MIN_SWEEP_SENTENCES}); skipped",
                    sub.len()
                );
            }
            let run = Corpora {
                out_parallel: sub.clone(),
                out_mono: Some(out_mono.clone()),
                ..corpora.clone()
            };
            let cfg = PipelineConfig {
                train: crate::training::TrainConfig {
                    seed: s,
                    ..config.train.clone()
                },
                ..config.clone()
            };
            for &strategy in strategies {
                let bleu = if skip {
                    None
                } else {
                    let out = run_pipeline::<T>(strategy, &run, &cfg)?;
                    Some(evaluate_model(&out.model, eval, &eval.domain)?.bleu)
                };
                table.cells.push(SweepCell {
                    fraction,
                    strategy,
                    seed: s,
                    sentences: sub.len(),
                    bleu,
                });
            }
        }
    }
    Ok(table)
}
