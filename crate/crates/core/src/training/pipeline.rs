use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use log::info;

use crate::dafe::{DomainId, TaskId};
use crate::data::{back_translate, copy_corpus, MonolingualCorpus, ParallelCorpus};
use crate::error::{Error, Result};
use crate::model::{Direction, ModelConfig, Seq2Seq};
use crate::numerics::ParamGroup;
use crate::scalar::Scalar;
use crate::seed;
use crate::training::metrics::MetricsLog;
use crate::training::schedule::{StepKind, TrainingSchedule};
use crate::training::trainer::{TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Baseline,
    Copy,
    Back,
    DafeWoEmbed,
    Dafe,
    BackPlusDafe,
    BackDafe,
    BackDafePlusDafe,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Baseline,
        Strategy::Copy,
        Strategy::Back,
        Strategy::DafeWoEmbed,
        Strategy::Dafe,
        Strategy::BackPlusDafe,
        Strategy::BackDafe,
        Strategy::BackDafePlusDafe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Copy => "copy",
            Strategy::Back => "back",
            Strategy::DafeWoEmbed => "dafe_wo_embed",
            Strategy::Dafe => "dafe",
            Strategy::BackPlusDafe => "back_plus_dafe",
            Strategy::BackDafe => "back_dafe",
            Strategy::BackDafePlusDafe => "back_dafe_plus_dafe",
        }
    }

    pub fn names() -> String {
        Strategy::ALL.map(Strategy::name).join(", ")
    }

    /// Whether the forward model carries feature embeddings.
    pub fn forward_has_dafe(self) -> bool {
        matches!(
            self,
            Strategy::DafeWoEmbed | Strategy::Dafe | Strategy::BackPlusDafe | Strategy::BackDafePlusDafe
        )
    }

    pub fn needs_in_domain(self) -> bool {
        self != Strategy::Baseline
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown strategy `{s}`; expected one of: {}", Strategy::names())))
    }
}

/// Corpora by role.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpora {
    /// `(X^out, Y^out)`.
    pub out_parallel: ParallelCorpus,
    /// `Y^in`, target-language in-domain text.
    pub in_mono: Option<MonolingualCorpus>,
    /// `Y^out`; defaults to the target side of `out_parallel`.
    pub out_mono: Option<MonolingualCorpus>,
    /// Held-out pairs for early stopping; scored with their own domain.
    pub dev: Option<ParallelCorpus>,
}

impl Corpora {
    fn in_mono(&self, strategy: Strategy) -> Result<&MonolingualCorpus> {
        match &self.in_mono {
            Some(m) if !m.is_empty() => Ok(m),
            _ => Err(Error::Config(format!(
                "strategy {strategy} needs in-domain monolingual data"
            ))),
        }
    }

    fn out_mono(&self) -> MonolingualCorpus {
        self.out_mono
            .clone()
            .unwrap_or_else(|| self.out_parallel.target_corpus())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ckpt_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub model: Seq2Seq<T>,
    pub reverse: Option<Seq2Seq<T>>,
    pub synthetic: Option<ParallelCorpus>,
    pub log: MetricsLog,
    /// Parallel pairs seen by the forward model's translation steps.
    pub training_pairs: usize,
}

const DOMAINS: [DomainId; 2] = [DomainId::In, DomainId::Out];

fn stage_config(config: &PipelineConfig, stage: &str) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(config.train.seed, stage, 0),
        ..config.train.clone()
    }
}

fn fresh_model<T: Scalar>(config: &PipelineConfig, stage: &str, dafe: bool) -> Result<Seq2Seq<T>> {
    let s = seed::derive(config.train.seed, stage, 1);
    if dafe {
        Seq2Seq::with_dafe(config.model.clone(), s, &DOMAINS, &TaskId::ALL)
    } else {
        Seq2Seq::new(config.model.clone(), s)
    }
}

/// Supervised translation on `parallel` with the given direction.
pub fn train_translation<T: Scalar>(
    model: Seq2Seq<T>,
    parallel: &ParallelCorpus,
    dev: Option<&ParallelCorpus>,
    config: &PipelineConfig,
    stage: &str,
) -> Result<(Seq2Seq<T>, MetricsLog)> {
    let tc = stage_config(config, stage);
    let mut trainer = Trainer::new(model, &tc, stage);
    trainer.set_parallel(StepKind::OutMt, parallel)?;
    let schedule = TrainingSchedule::translation_only(tc.mix);
    trainer.fit(&schedule, &tc, dev, config.ckpt_dir.as_deref())?;
    let log = std::mem::take(&mut trainer.log);
    Ok((trainer.into_model(), log))
}

/// Alternating LM/MT training: in-domain LM, out-of-domain LM and
/// out-of-domain MT each round, plus in-domain MT on `synthetic` if given.
#[allow(clippy::too_many_arguments)]
pub fn train_alternating<T: Scalar>(
    model: Seq2Seq<T>,
    parallel: &ParallelCorpus,
    in_mono: &MonolingualCorpus,
    out_mono: &MonolingualCorpus,
    synthetic: Option<&ParallelCorpus>,
    dev: Option<&ParallelCorpus>,
    freeze_embeddings: bool,
    config: &PipelineConfig,
    stage: &str,
) -> Result<(Seq2Seq<T>, MetricsLog)> {
    let tc = stage_config(config, stage);
    let mut trainer = Trainer::new(model, &tc, stage);
    if freeze_embeddings {
        trainer.freeze(|g| !matches!(g, ParamGroup::Base));
    }
    trainer.set_mono(StepKind::InLm, in_mono)?;
    trainer.set_mono(StepKind::OutLm, out_mono)?;
    trainer.set_parallel(StepKind::OutMt, parallel)?;
    if let Some(s) = synthetic {
        trainer.set_parallel(StepKind::InMt, s)?;
    }
    let schedule = TrainingSchedule::alternating(tc.mix, synthetic.is_some());
    trainer.fit(&schedule, &tc, dev, config.ckpt_dir.as_deref())?;
    let log = std::mem::take(&mut trainer.log);
    Ok((trainer.into_model(), log))
}

/// Trains a target→source model, plain or with feature embeddings, and
/// back-translates `Y^in` with it.
fn synthesise<T: Scalar>(
    corpora: &Corpora,
    in_mono: &MonolingualCorpus,
    config: &PipelineConfig,
    dafe: bool,
    log: &mut MetricsLog,
) -> Result<(Seq2Seq<T>, ParallelCorpus)> {
    let reversed = corpora.out_parallel.reversed();
    let dev = corpora.dev.as_ref().map(ParallelCorpus::reversed);
    let mut model = fresh_model::<T>(config, "reverse", dafe)?;
    model.meta.direction = Direction::Reverse;
    let (model, l) = if dafe {
        // The reverse model reads target-language text, so its LM steps
        // denoise in-domain and out-of-domain target sentences.
        train_alternating(
            model,
            &reversed,
            in_mono,
            &corpora.out_mono(),
            None,
            dev.as_ref(),
            false,
            config,
            "reverse",
        )?
    } else {
        train_translation(model, &reversed, dev.as_ref(), config, "reverse")?
    };
    log.extend(l);
    let synthetic = back_translate(in_mono, &model)?;
    info!("back-translated {} in-domain sentences", synthetic.len());
    Ok((model, synthetic))
}

/// Runs one training strategy end to end.
pub fn run_pipeline<T: Scalar>(
    strategy: Strategy,
    corpora: &Corpora,
    config: &PipelineConfig,
) -> Result<PipelineOutput<T>> {
    config.model.validate()?;
    config.train.validate()?;
    if corpora.out_parallel.is_empty() {
        return Err(Error::Config("out-of-domain parallel corpus is empty".into()));
    }
    let in_mono = if strategy.needs_in_domain() {
        Some(corpora.in_mono(strategy)?)
    } else {
        None
    };
    let dev = corpora.dev.as_ref();
    let mut log = MetricsLog::default();
    let mut reverse = None;
    let mut synthetic = None;

    let (model, training_pairs) = match strategy {
        Strategy::Baseline => {
            let m = fresh_model(config, "forward", false)?;
            let (m, l) = train_translation(m, &corpora.out_parallel, dev, config, "forward")?;
            log.extend(l);
            (m, corpora.out_parallel.len())
        }
        Strategy::Copy => {
            let data = corpora
                .out_parallel
                .concat(&copy_corpus(in_mono.expect("checked above"))?);
            let m = fresh_model(config, "forward", false)?;
            let (m, l) = train_translation(m, &data, dev, config, "forward")?;
            log.extend(l);
            (m, data.len())
        }
        Strategy::Back | Strategy::BackDafe => {
            let (r, s) = synthesise::<T>(
                corpora,
                in_mono.expect("checked above"),
                config,
                strategy == Strategy::BackDafe,
                &mut log,
            )?;
            let data = corpora.out_parallel.concat(&s);
            let m = fresh_model(config, "forward", false)?;
            let (m, l) = train_translation(m, &data, dev, config, "forward")?;
            log.extend(l);
            reverse = Some(r);
            synthetic = Some(s);
            (m, data.len())
        }
        Strategy::DafeWoEmbed | Strategy::Dafe => {
            let m = fresh_model(config, "forward", true)?;
            let (m, l) = train_alternating(
                m,
                &corpora.out_parallel,
                in_mono.expect("checked above"),
                &corpora.out_mono(),
                None,
                dev,
                strategy == Strategy::DafeWoEmbed,
                config,
                "forward",
            )?;
            log.extend(l);
            (m, corpora.out_parallel.len())
        }
        Strategy::BackPlusDafe | Strategy::BackDafePlusDafe => {
            let mono = in_mono.expect("checked above");
            let (r, s) = synthesise::<T>(
                corpora,
                mono,
                config,
                strategy == Strategy::BackDafePlusDafe,
                &mut log,
            )?;
            let m = fresh_model(config, "forward", true)?;
            let (m, l) = train_alternating(
                m,
                &corpora.out_parallel,
                mono,
                &corpora.out_mono(),
                Some(&s),
                dev,
                false,
                config,
                "forward",
            )?;
            log.extend(l);
            let n = corpora.out_parallel.len() + s.len();
            reverse = Some(r);
            synthetic = Some(s);
            (m, n)
        }
    };
    Ok(PipelineOutput {
        model,
        reverse,
        synthetic,
        log,
        training_pairs,
    })
}
