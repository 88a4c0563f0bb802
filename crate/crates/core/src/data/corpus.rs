use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rand::seq::index::sample;

use crate::dafe::DomainId;
use crate::data::vocab::{Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::model::{Direction, Seq2Seq};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Natural,
    Copied,
    BackTranslated,
    /// Concatenation of corpora with different provenance.
    Mixed,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Natural => "natural",
            Provenance::Copied => "copied",
            Provenance::BackTranslated => "back_translated",
            Provenance::Mixed => "mixed",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(Provenance::Natural),
            "copied" => Ok(Provenance::Copied),
            "back_translated" => Ok(Provenance::BackTranslated),
            "mixed" => Ok(Provenance::Mixed),
            other => Err(Error::Format(format!("unknown provenance `{other}`"))),
        }
    }
}

pub type Sentence = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Sentence, Sentence)>,
    pub domain: DomainId,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonolingualCorpus {
    pub sentences: Vec<Sentence>,
    pub domain: DomainId,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<(Sentence, Sentence)>, domain: DomainId, provenance: Provenance) -> Self {
        ParallelCorpus {
            pairs,
            domain,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|(s, _)| s)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|(_, t)| t)
    }

    /// Target side as a monolingual corpus of the same domain.
    pub fn target_corpus(&self) -> MonolingualCorpus {
        MonolingualCorpus {
            sentences: self.targets().cloned().collect(),
            domain: self.domain.clone(),
        }
    }

    /// Same pairs with source and target swapped.
    pub fn reversed(&self) -> ParallelCorpus {
        ParallelCorpus {
            pairs: self.pairs.iter().map(|(s, t)| (t.clone(), s.clone())).collect(),
            domain: self.domain.clone(),
            provenance: self.provenance,
        }
    }

    /// Appends `other`; keeps this corpus's domain.
    pub fn concat(&self, other: &ParallelCorpus) -> ParallelCorpus {
        let mut pairs = self.pairs.clone();
        pairs.extend(other.pairs.iter().cloned());
        let provenance = if self.provenance == other.provenance {
            self.provenance
        } else {
            Provenance::Mixed
        };
        ParallelCorpus {
            pairs,
            domain: self.domain.clone(),
            provenance,
        }
    }

    /// Seeded subsample of `⌊fraction·N⌋` pairs in original order.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<ParallelCorpus> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
        }
        let n = (fraction * self.len() as f64).floor() as usize;
        if n == self.len() {
            return Ok(self.clone());
        }
        let mut rng = seed::rng(seed, "subsample", 0);
        let mut idx = sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        Ok(ParallelCorpus {
            pairs: idx.into_iter().map(|i| self.pairs[i].clone()).collect(),
            domain: self.domain.clone(),
            provenance: self.provenance,
        })
    }

    pub fn check_ids(&self, vocab_size: usize) -> Result<()> {
        check_ids(self.pairs.iter().flat_map(|(s, t)| [s, t]), vocab_size)
    }
}

impl MonolingualCorpus {
    pub fn new(sentences: Vec<Sentence>, domain: DomainId) -> Self {
        MonolingualCorpus { sentences, domain }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn check_ids(&self, vocab_size: usize) -> Result<()> {
        check_ids(self.sentences.iter(), vocab_size)
    }
}

fn check_ids<'a>(sentences: impl Iterator<Item = &'a Sentence>, vocab_size: usize) -> Result<()> {
    for s in sentences {
        if let Some(&bad) = s.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::Config(format!(
                "token id {bad} outside vocabulary of {vocab_size}"
            )));
        }
    }
    Ok(())
}

/// Pairs every in-domain target sentence with itself.
pub fn copy_corpus(mono: &MonolingualCorpus) -> Result<ParallelCorpus> {
    if mono.is_empty() {
        return Err(Error::EmptyInput("copy of an empty monolingual corpus".into()));
    }
    Ok(ParallelCorpus {
        pairs: mono.sentences.iter().map(|y| (y.clone(), y.clone())).collect(),
        domain: mono.domain.clone(),
        provenance: Provenance::Copied,
    })
}

/// Sentences decoded together by [`back_translate`].
pub const BACK_TRANSLATE_BATCH: usize = 32;

/// Synthesises sources for `mono` with a target→source model. Targets are
/// copied untouched. An empty synthetic source is replaced by a single UNK
/// so every pair stays trainable.
pub fn back_translate<T: Scalar>(mono: &MonolingualCorpus, reverse_model: &Seq2Seq<T>) -> Result<ParallelCorpus> {
    if !reverse_model.meta.trained {
        warn!("refusing to back-translate with an untrained model");
        return Err(Error::Refused("reverse model is flagged as untrained".into()));
    }
    if reverse_model.meta.direction != Direction::Reverse {
        warn!("refusing to back-translate with a forward-direction model");
        return Err(Error::Refused(
            "back-translation needs a target→source (reverse) model".into(),
        ));
    }
    let max_steps = reverse_model.config().max_len;
    let mut pairs = Vec::with_capacity(mono.len());
    let mut empty = 0;
    for chunk in mono.sentences.chunks(BACK_TRANSLATE_BATCH) {
        let decoded = reverse_model.greedy_decode_batch(chunk, &DomainId::In, max_steps)?;
        for (y, d) in chunk.iter().zip(decoded) {
            let src = if d.tokens.is_empty() {
                empty += 1;
                vec![UNK]
            } else {
                d.tokens
            };
            pairs.push((src, y.clone()));
        }
    }
    if empty > 0 {
        info!("back-translation produced {empty} empty sources, replaced by <unk>");
    }
    Ok(ParallelCorpus {
        pairs,
        domain: mono.domain.clone(),
        provenance: Provenance::BackTranslated,
    })
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads aligned `src`/`tgt` files. Pairs with an empty side are skipped.
pub fn read_parallel(src: &Path, tgt: &Path, vocab: &Vocabulary, domain: DomainId) -> Result<ParallelCorpus> {
    let s = read_lines(src)?;
    let t = read_lines(tgt)?;
    if s.len() != t.len() {
        return Err(Error::Config(format!(
            "{} has {} lines but {} has {}",
            src.display(),
            s.len(),
            tgt.display(),
            t.len()
        )));
    }
    let mut pairs = Vec::with_capacity(s.len());
    let mut skipped = 0;
    for (a, b) in s.iter().zip(&t) {
        let (x, y) = (vocab.encode(a), vocab.encode(b));
        if x.is_empty() || y.is_empty() {
            skipped += 1;
        } else {
            pairs.push((x, y));
        }
    }
    if skipped > 0 {
        warn!("skipped {skipped} pairs with an empty side in {}", src.display());
    }
    Ok(ParallelCorpus::new(pairs, domain, Provenance::Natural))
}

/// Reads one sentence per line; blank lines are skipped.
pub fn read_mono(path: &Path, vocab: &Vocabulary, domain: DomainId) -> Result<MonolingualCorpus> {
    let sentences = read_lines(path)?
        .iter()
        .map(|l| vocab.encode(l))
        .filter(|s| !s.is_empty())
        .collect();
    Ok(MonolingualCorpus::new(sentences, domain))
}

/// Output paths of [`write_parallel`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPaths {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub meta: PathBuf,
}

impl ParallelPaths {
    pub fn for_prefix(prefix: &Path) -> Self {
        let with = |ext: &str| {
            let mut p = prefix.as_os_str().to_owned();
            p.push(ext);
            PathBuf::from(p)
        };
        ParallelPaths {
            src: with(".src"),
            tgt: with(".tgt"),
            meta: with(".meta"),
        }
    }
}

fn write_text(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<prefix>.src`, `<prefix>.tgt` and a one-line `<prefix>.meta`
/// sidecar: `provenance=<p> domain=<d> generator=<checkpoint id or ->`.
pub fn write_parallel(
    prefix: &Path,
    corpus: &ParallelCorpus,
    vocab: &Vocabulary,
    generator: Option<&str>,
) -> Result<ParallelPaths> {
    let paths = ParallelPaths::for_prefix(prefix);
    if let Some(dir) = paths.src.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let src: Vec<String> = corpus.sources().map(|s| vocab.decode(s)).collect();
    let tgt: Vec<String> = corpus.targets().map(|s| vocab.decode(s)).collect();
    write_text(&paths.src, &src)?;
    write_text(&paths.tgt, &tgt)?;
    let meta = format!(
        "provenance={} domain={} generator={}",
        corpus.provenance,
        corpus.domain,
        generator.unwrap_or("-")
    );
    write_text(&paths.meta, &[meta])?;
    Ok(paths)
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_text(path, lines)
}
