//! Synthetic lexical-ambiguity task.
//!
//! Source and target languages share one 60-entry vocabulary: the four
//! reserved ids, 18 general source words `sNN` with monotone one-to-one
//! translations `tNN`, and four ambiguity groups. Group `j` has a source
//! trigger `suJ` (translated `tuJ`) that always directly precedes the
//! ambiguous source word `sxJ`. `sxJ` translates to `taJ` out of domain and
//! to `tbJ` in domain. In-domain text is provided only on the target side,
//! so a model can learn the in-domain sense from monolingual text alone.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dafe::DomainId;
use crate::data::{
    build_vocab, write_lines, MonolingualCorpus, ParallelCorpus, Provenance, Vocabulary,
};
use crate::error::Result;
use crate::seed;

pub const GENERAL_WORDS: usize = 18;
pub const AMBIGUOUS_WORDS: usize = 4;
pub const VOCAB_SIZE: usize = 4 + 2 * GENERAL_WORDS + 5 * AMBIGUOUS_WORDS;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub out_pairs: usize,
    pub dev_pairs: usize,
    pub in_mono: usize,
    pub test_pairs: usize,
    /// Sentence lengths are drawn uniformly from `min_len..=max_len`.
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a sentence holds a second ambiguity group.
    pub second_group: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            out_pairs: 2000,
            dev_pairs: 100,
            in_mono: 2000,
            test_pairs: 200,
            min_len: 5,
            max_len: 9,
            second_group: 0.3,
            seed: 1,
        }
    }
}

/// Text form of the task, one sentence per line.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyText {
    pub out_src: Vec<String>,
    pub out_tgt: Vec<String>,
    pub dev_src: Vec<String>,
    pub dev_tgt: Vec<String>,
    pub in_mono: Vec<String>,
    pub in_dev_src: Vec<String>,
    pub in_dev_tgt: Vec<String>,
    pub in_test_src: Vec<String>,
    pub in_test_tgt: Vec<String>,
    pub out_test_src: Vec<String>,
    pub out_test_tgt: Vec<String>,
}

/// Encoded form, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub vocab: Vocabulary,
    pub out_parallel: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub in_mono: MonolingualCorpus,
    /// In-domain pairs for model comparison; never used in training.
    pub in_dev: ParallelCorpus,
    pub in_test: ParallelCorpus,
    pub out_test: ParallelCorpus,
}

fn sentence(rng: &mut ChaCha8Rng, c: &ToyConfig, in_domain: bool) -> (String, String) {
    let len = rng.gen_range(c.min_len..=c.max_len);
    let groups = if len >= 4 && rng.gen_bool(c.second_group) { 2 } else { 1 };
    // slot starts for the two-token trigger + ambiguous spans
    let mut starts: Vec<usize> = Vec::new();
    while starts.len() < groups {
        let s = rng.gen_range(0..len - 1);
        if starts.iter().all(|&o: &usize| o.abs_diff(s) >= 2) {
            starts.push(s);
        }
    }
    let mut src = Vec::with_capacity(len);
    let mut tgt = Vec::with_capacity(len);
    let mut i = 0;
    while i < len {
        if starts.contains(&i) {
            let j = rng.gen_range(0..AMBIGUOUS_WORDS);
            src.push(format!("su{j}"));
            src.push(format!("sx{j}"));
            tgt.push(format!("tu{j}"));
            tgt.push(if in_domain { format!("tb{j}") } else { format!("ta{j}") });
            i += 2;
        } else {
            let w = rng.gen_range(0..GENERAL_WORDS);
            src.push(format!("s{w:02}"));
            tgt.push(format!("t{w:02}"));
            i += 1;
        }
    }
    (src.join(" "), tgt.join(" "))
}

fn pairs(rng: &mut ChaCha8Rng, c: &ToyConfig, n: usize, in_domain: bool) -> (Vec<String>, Vec<String>) {
    (0..n).map(|_| sentence(rng, c, in_domain)).unzip()
}

pub fn toy_text(c: &ToyConfig) -> ToyText {
    let rng = |label: &str| seed::rng(c.seed, label, 0);
    let (out_src, out_tgt) = pairs(&mut rng("toy-out"), c, c.out_pairs, false);
    let (dev_src, dev_tgt) = pairs(&mut rng("toy-dev"), c, c.dev_pairs, false);
    let (_, in_mono) = pairs(&mut rng("toy-in"), c, c.in_mono, true);
    let (in_dev_src, in_dev_tgt) = pairs(&mut rng("toy-in-dev"), c, c.dev_pairs, true);
    let (in_test_src, in_test_tgt) = pairs(&mut rng("toy-in-test"), c, c.test_pairs, true);
    let (out_test_src, out_test_tgt) = pairs(&mut rng("toy-out-test"), c, c.test_pairs, false);
    ToyText {
        out_src,
        out_tgt,
        dev_src,
        dev_tgt,
        in_mono,
        in_dev_src,
        in_dev_tgt,
        in_test_src,
        in_test_tgt,
        out_test_src,
        out_test_tgt,
    }
}

fn encode_pairs(v: &Vocabulary, src: &[String], tgt: &[String], domain: DomainId) -> ParallelCorpus {
    ParallelCorpus::new(
        src.iter().zip(tgt).map(|(s, t)| (v.encode(s), v.encode(t))).collect(),
        domain,
        Provenance::Natural,
    )
}

/// Builds the vocabulary from the training text and encodes every split.
pub fn toy_task(c: &ToyConfig) -> Result<ToyTask> {
    let t = toy_text(c);
    let vocab = build_vocab(&[&t.out_src, &t.out_tgt, &t.in_mono], VOCAB_SIZE)?;
    Ok(ToyTask {
        out_parallel: encode_pairs(&vocab, &t.out_src, &t.out_tgt, DomainId::Out),
        dev: encode_pairs(&vocab, &t.dev_src, &t.dev_tgt, DomainId::Out),
        in_mono: MonolingualCorpus::new(t.in_mono.iter().map(|s| vocab.encode(s)).collect(), DomainId::In),
        in_dev: encode_pairs(&vocab, &t.in_dev_src, &t.in_dev_tgt, DomainId::In),
        in_test: encode_pairs(&vocab, &t.in_test_src, &t.in_test_tgt, DomainId::In),
        out_test: encode_pairs(&vocab, &t.out_test_src, &t.out_test_tgt, DomainId::Out),
        vocab,
    })
}

/// Writes the splits as `out.src/out.tgt`, `dev.src/dev.tgt`, `in.mono`,
/// `in_dev.src/in_dev.tgt`, `in_test.src/in_test.tgt` and `out_test.src/out_test.tgt`.
pub fn write_toy(dir: &Path, c: &ToyConfig) -> Result<()> {
    let t = toy_text(c);
    let files: [(&str, &Vec<String>); 11] = [
        ("out.src", &t.out_src),
        ("out.tgt", &t.out_tgt),
        ("dev.src", &t.dev_src),
        ("dev.tgt", &t.dev_tgt),
        ("in.mono", &t.in_mono),
        ("in_dev.src", &t.in_dev_src),
        ("in_dev.tgt", &t.in_dev_tgt),
        ("in_test.src", &t.in_test_src),
        ("in_test.tgt", &t.in_test_tgt),
        ("out_test.src", &t.out_test_src),
        ("out_test.tgt", &t.out_test_tgt),
    ];
    for (name, lines) in files {
        write_lines(&dir.join(name), lines)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_has_sixty_entries() {
        let task = toy_task(&ToyConfig::default()).unwrap();
        assert_eq!(VOCAB_SIZE, 60);
        assert_eq!(task.vocab.len(), 60);
    }

    #[test]
    fn ambiguous_words_take_the_domain_sense() {
        let t = toy_text(&ToyConfig {
            out_pairs: 50,
            test_pairs: 50,
            ..ToyConfig::default()
        });
        for (s, tg) in t.in_test_src.iter().zip(&t.in_test_tgt) {
            let (s, tg): (Vec<&str>, Vec<&str>) = (s.split(' ').collect(), tg.split(' ').collect());
            assert_eq!(s.len(), tg.len());
            for (a, b) in s.iter().zip(&tg) {
                if let Some(j) = a.strip_prefix("sx") {
                    assert_eq!(*b, format!("tb{j}"));
                }
            }
        }
        assert!(t.out_tgt.iter().all(|l| !l.contains("tb")));
        assert!(t.in_mono.iter().all(|l| !l.contains("ta")));
    }
}
