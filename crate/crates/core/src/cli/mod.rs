//! Command-line interface. [`run`] parses arguments, executes one command
//! and returns the process exit code: 0 success, 2 usage, 3 configuration
//! or data, 4 numerical failure.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use crate::dafe::{probe_swap, DomainId};
use crate::data::{
    back_translate, build_vocab, read_lines, write_lines, write_parallel, MonolingualCorpus,
    ParallelCorpus, Provenance, Vocabulary,
};
use crate::error::{Error, Result};
use crate::evaluation::{bleu, bleu_smoothed, low_resource_sweep, translate_all, BleuReport};
use crate::model::{load_model, save_model, Checkpoint};
use crate::toy::{write_toy, ToyConfig};
use crate::training::{run_pipeline, Corpora, PipelineConfig, Strategy};

pub use config::{RawConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "dafe", version, about = "Domain-aware feature embeddings for NMT domain adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one strategy and write checkpoint(s) and metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// baseline, copy, back, dafe_wo_embed, dafe, back_plus_dafe,
        /// back_dafe or back_dafe_plus_dafe
        #[arg(long)]
        strategy: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// `section.key=value` override; repeatable, wins over the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Translate a file line by line.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "in")]
        domain: String,
    },
    /// Build synthetic parallel data from target-language text with a
    /// reverse-direction checkpoint.
    Backtranslate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Writes `<prefix>.src`, `<prefix>.tgt` and `<prefix>.meta`.
        #[arg(long)]
        output_prefix: PathBuf,
    },
    /// Corpus BLEU per domain embedding.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// Comma-separated domains; defaults to every registered domain.
        #[arg(long)]
        domains: Option<String>,
        #[arg(long)]
        smoothed: bool,
        /// Also write the table as tab-separated records.
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
    /// Decode each input under several domain embeddings.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        domains: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Low-resource sweep over fractions of the out-of-domain parallel data.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated fractions in (0, 1].
        #[arg(long)]
        fractions: String,
        #[arg(long, default_value = "back,dafe")]
        strategies: String,
        /// Comma-separated training seeds; defaults to `train.seed`.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the synthetic lexical-ambiguity task as text files.
    SynthToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
    },
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            strategy,
            out,
            overrides,
            seed,
        } => {
            let strategy: Strategy = strategy.parse()?;
            let cfg = load_config(&config, &overrides, seed)?;
            train(strategy, &cfg, &out)
        }
        Command::Translate {
            checkpoint,
            input,
            output,
            domain,
        } => translate(&checkpoint, &input, &output, &domain),
        Command::Backtranslate {
            checkpoint,
            input,
            output_prefix,
        } => backtranslate(&checkpoint, &input, &output_prefix),
        Command::Evaluate {
            checkpoint,
            src,
            tgt,
            domains,
            smoothed,
            tsv,
        } => evaluate(&checkpoint, &src, &tgt, domains.as_deref(), smoothed, tsv.as_deref()),
        Command::Probe {
            checkpoint,
            input,
            domains,
            output,
        } => probe(&checkpoint, &input, domains.as_deref(), output.as_deref()),
        Command::Sweep {
            config,
            fractions,
            strategies,
            seeds,
            overrides,
            output,
        } => sweep(&config, &fractions, &strategies, seeds.as_deref(), &overrides, output.as_deref()),
        Command::SynthToy { out, seed, pairs } => {
            write_toy(
                &out,
                &ToyConfig {
                    out_pairs: pairs,
                    seed,
                    ..ToyConfig::default()
                },
            )?;
            println!("wrote toy task to {}", out.display());
            Ok(())
        }
    }
}

fn load_config(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut raw = RawConfig::load(path)?;
    for o in overrides {
        raw.set(o)?;
    }
    if let Some(s) = seed {
        raw.set(&format!("train.seed={s}"))?;
    }
    RunConfig::from_raw(&raw)
}

/// Text corpora read for one run, the vocabulary built from the training
/// streams and their encoded form.
struct LoadedData {
    vocab: Vocabulary,
    corpora: Corpora,
}

fn load_data(cfg: &RunConfig) -> Result<LoadedData> {
    let d = &cfg.data;
    let out_src = read_lines(&d.out_src)?;
    let out_tgt = read_lines(&d.out_tgt)?;
    if out_src.len() != out_tgt.len() {
        return Err(Error::Config(format!(
            "{} and {} differ in line count",
            d.out_src.display(),
            d.out_tgt.display()
        )));
    }
    let in_mono = d.in_mono.as_deref().map(read_lines).transpose()?;
    let out_mono = d.out_mono.as_deref().map(read_lines).transpose()?;
    let mut streams: Vec<&[String]> = vec![&out_src, &out_tgt];
    streams.extend(in_mono.as_deref());
    streams.extend(out_mono.as_deref());
    let vocab = build_vocab(&streams, d.vocab_size)?;
    let pairs = |s: &[String], t: &[String], domain: DomainId| {
        ParallelCorpus::new(
            s.iter()
                .zip(t)
                .map(|(a, b)| (vocab.encode(a), vocab.encode(b)))
                .filter(|(a, b)| !a.is_empty() && !b.is_empty())
                .collect(),
            domain,
            Provenance::Natural,
        )
    };
    let mono = |lines: &[String], domain: DomainId| {
        MonolingualCorpus::new(
            lines
                .iter()
                .map(|l| vocab.encode(l))
                .filter(|s| !s.is_empty())
                .collect(),
            domain,
        )
    };
    let dev = match &d.dev {
        Some((s, t)) => {
            let (s, t) = (read_lines(s)?, read_lines(t)?);
            Some(pairs(&s, &t, DomainId::Out))
        }
        None => None,
    };
    let corpora = Corpora {
        out_parallel: pairs(&out_src, &out_tgt, DomainId::Out),
        in_mono: in_mono.as_deref().map(|l| mono(l, DomainId::In)),
        out_mono: out_mono.as_deref().map(|l| mono(l, DomainId::Out)),
        dev,
    };
    Ok(LoadedData { vocab, corpora })
}

fn pipeline_config(cfg: &RunConfig, vocab: &Vocabulary, out: Option<&Path>) -> PipelineConfig {
    let mut model = cfg.model.clone();
    model.vocab_size = vocab.len();
    PipelineConfig {
        model,
        train: cfg.train.clone(),
        ckpt_dir: out
            .filter(|_| cfg.train.ckpt_every > 0)
            .map(|o| o.join("checkpoints")),
    }
}

fn train(strategy: Strategy, cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg)?;
    let pc = pipeline_config(cfg, &data.vocab, Some(out));
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    info!("training {strategy} on {} parallel pairs", data.corpora.out_parallel.len());
    let result = run_pipeline::<f64>(strategy, &data.corpora, &pc)?;
    let id = save_model(&out.join("model.ckpt"), &result.model, Some(&data.vocab))?;
    result.log.write(&out.join("metrics.tsv"))?;
    if let Some(reverse) = &result.reverse {
        let rid = save_model(&out.join("reverse.ckpt"), reverse, Some(&data.vocab))?;
        if let Some(s) = &result.synthetic {
            write_parallel(&out.join("synthetic"), s, &data.vocab, Some(&rid))?;
        }
    }
    println!("{strategy}: checkpoint {id} written to {}", out.join("model.ckpt").display());
    if let Some((src, tgt)) = &cfg.eval.test {
        let report = score_files(&result.model, &data.vocab, src, tgt, &cfg.eval.domain, false)?;
        println!("{}: {report}", cfg.eval.domain);
    }
    Ok(())
}

fn load_with_vocab(path: &Path) -> Result<(Checkpoint<f64>, Vocabulary)> {
    let ck = load_model::<f64>(path)?;
    let vocab = ck
        .vocab
        .clone()
        .ok_or_else(|| Error::Format(format!("{} carries no vocabulary", path.display())))?;
    Ok((ck, vocab))
}

fn check_domain(ck: &Checkpoint<f64>, domain: &DomainId) -> Result<()> {
    match ck.model.dafe() {
        Some(t) if t.domain_vector(domain, 0).is_err() => {
            let known: Vec<String> = t.domains().map(ToString::to_string).collect();
            Err(Error::Usage(format!(
                "unknown domain `{domain}`; checkpoint has: {}",
                known.join(", ")
            )))
        }
        _ => Ok(()),
    }
}

fn parse_domains(ck: &Checkpoint<f64>, list: Option<&str>) -> Result<Vec<DomainId>> {
    let domains: Vec<DomainId> = match list {
        Some(l) => l.split(',').map(|d| d.trim().parse()).collect::<Result<_>>()?,
        None => match ck.model.dafe() {
            Some(t) => t.domains().cloned().collect(),
            None => vec![DomainId::In],
        },
    };
    for d in &domains {
        check_domain(ck, d)?;
    }
    Ok(domains)
}

fn decode_lines(
    model: &crate::model::Seq2Seq<f64>,
    vocab: &Vocabulary,
    lines: &[String],
    domain: &DomainId,
) -> Result<Vec<String>> {
    let sources: Vec<Vec<usize>> = lines.iter().map(|l| vocab.encode(l)).collect();
    Ok(translate_all(model, &sources, domain)?
        .iter()
        .map(|h| vocab.decode(h))
        .collect())
}

fn score_files(
    model: &crate::model::Seq2Seq<f64>,
    vocab: &Vocabulary,
    src: &Path,
    tgt: &Path,
    domain: &DomainId,
    smoothed: bool,
) -> Result<BleuReport> {
    let s = read_lines(src)?;
    let t = read_lines(tgt)?;
    if s.len() != t.len() {
        return Err(Error::Config(format!(
            "{} and {} differ in line count",
            src.display(),
            tgt.display()
        )));
    }
    let hyps = decode_lines(model, vocab, &s, domain)?;
    let h: Vec<Vec<&str>> = hyps.iter().map(|l| l.split_whitespace().collect()).collect();
    let r: Vec<Vec<&str>> = t.iter().map(|l| l.split_whitespace().collect()).collect();
    if smoothed {
        bleu_smoothed(&h, &r)
    } else {
        bleu(&h, &r)
    }
}

fn translate(checkpoint: &Path, input: &Path, output: &Path, domain: &str) -> Result<()> {
    let (ck, vocab) = load_with_vocab(checkpoint)?;
    let domain: DomainId = domain.parse()?;
    check_domain(&ck, &domain)?;
    let lines = read_lines(input)?;
    let out = decode_lines(&ck.model, &vocab, &lines, &domain)?;
    write_lines(output, &out)?;
    info!("translated {} lines with domain {domain}", out.len());
    Ok(())
}

fn backtranslate(checkpoint: &Path, input: &Path, prefix: &Path) -> Result<()> {
    let (ck, vocab) = load_with_vocab(checkpoint)?;
    let mono = MonolingualCorpus::new(
        read_lines(input)?.iter().map(|l| vocab.encode(l)).collect(),
        DomainId::In,
    );
    if mono.sentences.iter().any(Vec::is_empty) {
        return Err(Error::EmptyInput(format!("{} contains blank lines", input.display())));
    }
    let synthetic = back_translate(&mono, &ck.model)?;
    let paths = write_parallel(prefix, &synthetic, &vocab, Some(&ck.id))?;
    println!(
        "wrote {} pairs to {} / {}",
        synthetic.len(),
        paths.src.display(),
        paths.tgt.display()
    );
    Ok(())
}

fn evaluate(
    checkpoint: &Path,
    src: &Path,
    tgt: &Path,
    domains: Option<&str>,
    smoothed: bool,
    tsv: Option<&Path>,
) -> Result<()> {
    let (ck, vocab) = load_with_vocab(checkpoint)?;
    let domains = parse_domains(&ck, domains)?;
    let mut table = format!("domain\t{}\n", BleuReport::tsv_header());
    for d in &domains {
        let report = score_files(&ck.model, &vocab, src, tgt, d, smoothed)?;
        println!("{d}\t{report}");
        let _ = writeln!(table, "{d}\t{}", report.tsv_row());
    }
    if let Some(p) = tsv {
        fs::write(p, table).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn probe(checkpoint: &Path, input: &Path, domains: Option<&str>, output: Option<&Path>) -> Result<()> {
    let (ck, vocab) = load_with_vocab(checkpoint)?;
    let domains = parse_domains(&ck, domains)?;
    let max_steps = ck.model.config().max_len;
    let mut text = String::new();
    for (i, line) in read_lines(input)?.iter().enumerate() {
        if i > 0 {
            text.push('\n');
        }
        let src = vocab.encode(line);
        if src.is_empty() {
            for d in &domains {
                let _ = writeln!(text, "{d}\t");
            }
            continue;
        }
        for (d, decoded) in probe_swap(&ck.model, &src, &domains, max_steps)? {
            let _ = writeln!(text, "{d}\t{}", vocab.decode(&decoded.tokens));
        }
    }
    match output {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_list<V: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<V>>
where
    V::Err: std::fmt::Display,
{
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::Usage(format!("bad {what} `{s}`: {e}")))
        })
        .collect()
}

fn sweep(
    config: &Path,
    fractions: &str,
    strategies: &str,
    seeds: Option<&str>,
    overrides: &[String],
    output: Option<&Path>,
) -> Result<()> {
    let fractions: Vec<f64> = parse_list(fractions, "fraction")?;
    let strategies: Vec<Strategy> = strategies
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_>>()?;
    let cfg = load_config(config, overrides, None)?;
    let seeds: Vec<u64> = match seeds {
        Some(s) => parse_list(s, "seed")?,
        None => vec![cfg.train.seed],
    };
    let (src, tgt) = cfg
        .eval
        .test
        .clone()
        .ok_or_else(|| Error::Config("sweep needs `eval.src` and `eval.tgt`".into()))?;
    let data = load_data(&cfg)?;
    let eval = {
        let (s, t) = (read_lines(&src)?, read_lines(&tgt)?);
        ParallelCorpus::new(
            s.iter()
                .zip(&t)
                .map(|(a, b)| (data.vocab.encode(a), data.vocab.encode(b)))
                .filter(|(a, _)| !a.is_empty())
                .collect(),
            cfg.eval.domain.clone(),
            Provenance::Natural,
        )
    };
    let pc = pipeline_config(&cfg, &data.vocab, None);
    let table = low_resource_sweep::<f64>(&fractions, &strategies, &seeds, &data.corpora, &pc, &eval)?;
    match output {
        Some(p) => fs::write(p, table.to_tsv()).map_err(|e| Error::io(p, e)),
        None => {
            print!("{}", table.to_tsv());
            Ok(())
        }
    }
}
