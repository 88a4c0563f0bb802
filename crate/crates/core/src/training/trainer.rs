use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use rand_chacha::ChaCha8Rng;

use crate::corruption::{corrupt_with, NoiseSpec};
use crate::dafe::{DomainId, ParameterPartition, TaskId};
use crate::data::{make_batches, Batch, EpochSampler, MonolingualCorpus, ParallelCorpus, Sentence};
use crate::error::{Error, Result};
use crate::model::{save_model, Seq2Seq};
use crate::numerics::{Graph, ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::seed;
use crate::training::metrics::MetricsLog;
use crate::training::optimizer::{Adam, AdamConfig};
use crate::training::schedule::{StepKind, TrainingSchedule};

/// Everything that shapes one training run apart from the model shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub rounds: usize,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub mix: crate::training::schedule::Mix,
    pub seed: u64,
    /// Write a checkpoint every this many rounds; 0 disables.
    pub ckpt_every: usize,
    /// Rounds between dev-loss evaluations when a dev set exists.
    pub eval_every: usize,
    /// Stop after this many rounds without dev-loss improvement; 0 disables.
    pub patience: usize,
    pub noise: NoiseSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 2000,
            adam: AdamConfig::default(),
            batch_size: 16,
            mix: Default::default(),
            seed: 0,
            ckpt_every: 0,
            eval_every: 50,
            patience: 200,
            noise: NoiseSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(Error::Config(format!("train.lr must be non-negative, got {}", self.adam.lr)));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("train.eval_every must be at least 1".into()));
        }
        self.noise.validate()
    }
}

enum StepData {
    Parallel {
        pairs: Vec<(Sentence, Sentence)>,
        sampler: EpochSampler,
    },
    Mono {
        sentences: Vec<Sentence>,
        sampler: EpochSampler,
    },
}

/// Losses of one round, in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub losses: Vec<(StepKind, f64)>,
}

/// Outcome of [`Trainer::fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub rounds_run: usize,
    pub best_dev_loss: Option<f64>,
    pub best_round: Option<usize>,
    pub stopped_early: bool,
}

/// Drives gated updates of one model.
///
/// Each step updates exactly the base network plus the feature vectors of the
/// step's domain and task, minus any frozen groups.
pub struct Trainer<T> {
    pub model: Seq2Seq<T>,
    optimizer: Adam<T>,
    partition: ParameterPartition,
    frozen: BTreeSet<ParamGroup>,
    data: BTreeMap<StepKind, StepData>,
    noise: NoiseSpec,
    noise_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    batch_size: usize,
    seed: u64,
    stage: String,
    pub log: MetricsLog,
    /// Every executed sub-step, for auditing the schedule.
    pub step_log: Vec<StepKind>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Seq2Seq<T>, config: &TrainConfig, stage: &str) -> Self {
        let partition = ParameterPartition::new(model.store());
        Trainer {
            model,
            optimizer: Adam::new(config.adam),
            partition,
            frozen: BTreeSet::new(),
            data: BTreeMap::new(),
            noise: config.noise,
            noise_rng: seed::rng(config.seed, "noise", 0),
            dropout_rng: seed::rng(config.seed, "dropout", 0),
            batch_size: config.batch_size,
            seed: config.seed,
            stage: stage.to_string(),
            log: MetricsLog::default(),
            step_log: Vec::new(),
        }
    }

    /// Excludes every group for which `pred` holds from all updates.
    pub fn freeze(&mut self, pred: impl Fn(&ParamGroup) -> bool) {
        for g in self.model.store().groups() {
            if pred(&g) {
                self.frozen.insert(g);
            }
        }
    }

    fn sampler(&self, kind: StepKind, lengths: Vec<usize>) -> Result<EpochSampler> {
        if lengths.is_empty() {
            return Err(Error::Config(format!("no data for {kind} steps")));
        }
        EpochSampler::new(
            lengths,
            self.batch_size,
            seed::derive(self.seed, "batches", kind as u64),
        )
    }

    pub fn set_parallel(&mut self, kind: StepKind, corpus: &ParallelCorpus) -> Result<()> {
        corpus.check_ids(self.model.config().vocab_size)?;
        let sampler = self.sampler(kind, corpus.targets().map(Vec::len).collect())?;
        self.data.insert(
            kind,
            StepData::Parallel {
                pairs: corpus.pairs.clone(),
                sampler,
            },
        );
        Ok(())
    }

    pub fn set_mono(&mut self, kind: StepKind, corpus: &MonolingualCorpus) -> Result<()> {
        corpus.check_ids(self.model.config().vocab_size)?;
        let sampler = self.sampler(kind, corpus.sentences.iter().map(Vec::len).collect())?;
        self.data.insert(
            kind,
            StepData::Mono {
                sentences: corpus.sentences.clone(),
                sampler,
            },
        );
        Ok(())
    }

    /// Parameters updated by a `(domain, task)` step.
    pub fn active_parameters(&self, domain: &DomainId, task: TaskId) -> Vec<crate::numerics::ParamId> {
        self.partition
            .active_parameters(domain, task)
            .into_iter()
            .filter(|&p| !self.frozen.contains(self.model.store().get(p).group()))
            .collect()
    }

    fn update(&mut self, batch: &Batch, domain: &DomainId, task: TaskId) -> Result<f64> {
        let mut g = Graph::new();
        let dropout = (self.model.config().dropout > 0.0).then_some(&mut self.dropout_rng);
        let loss = self.model.loss(&mut g, batch, domain, task, dropout)?;
        let value = g.value(loss).values()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("{task} loss is {value}")));
        }
        let grads = g.backward(loss)?;
        let active = self.active_parameters(domain, task);
        let store: &mut ParamStore<T> = self.model.store_mut();
        for &pid in &active {
            if let Some(g) = grads.of_param(pid) {
                store.accumulate(pid, g);
            }
        }
        self.optimizer.step(store, &active)?;
        Ok(value)
    }

    /// Translation step on a prepared batch.
    pub fn mt_step(&mut self, batch: &Batch, domain: &DomainId) -> Result<f64> {
        self.update(batch, domain, TaskId::Mt)
    }

    /// Denoising step: the encoder reads `C(y)`, the decoder rebuilds `y`.
    pub fn lm_step(&mut self, sentences: &[&[usize]], domain: &DomainId) -> Result<f64> {
        let mut pairs = Vec::with_capacity(sentences.len());
        for &y in sentences {
            let noisy = corrupt_with(y, self.noise.p_drop, self.noise.k, &mut self.noise_rng)?;
            pairs.push((noisy.tokens, y.to_vec()));
        }
        let (batch, _) = Batch::from_pairs(&pairs, self.model.config().max_len)?;
        self.update(&batch, domain, TaskId::Lm)
    }

    /// Draws the next batch for `kind` and runs the matching step.
    pub fn run_step(&mut self, kind: StepKind) -> Result<f64> {
        let max_len = self.model.config().max_len;
        let data = self
            .data
            .get_mut(&kind)
            .ok_or_else(|| Error::Config(format!("no data for {kind} steps")))?;
        self.step_log.push(kind);
        enum Drawn {
            Mt(Batch),
            Lm(Vec<Sentence>),
        }
        let drawn = match data {
            StepData::Parallel { pairs, sampler } => {
                let idx = sampler.next_indices();
                let chosen: Vec<(&Sentence, &Sentence)> =
                    idx.iter().map(|&i| (&pairs[i].0, &pairs[i].1)).collect();
                Drawn::Mt(Batch::from_pairs(&chosen, max_len)?.0)
            }
            StepData::Mono { sentences, sampler } => {
                let idx = sampler.next_indices();
                Drawn::Lm(idx.iter().map(|&i| sentences[i].clone()).collect())
            }
        };
        match drawn {
            Drawn::Mt(batch) => self.mt_step(&batch, &kind.domain()),
            Drawn::Lm(chosen) => {
                let refs: Vec<&[usize]> = chosen.iter().map(Vec::as_slice).collect();
                self.lm_step(&refs, &kind.domain())
            }
        }
    }

    /// Checks that every step kind in `schedule` has data.
    pub fn check_schedule(&self, schedule: &TrainingSchedule) -> Result<()> {
        for k in schedule.kinds() {
            if !self.data.contains_key(&k) {
                return Err(Error::Config(format!("no corpus configured for {k} steps")));
            }
        }
        Ok(())
    }

    /// One pass over the schedule's sub-steps.
    pub fn train_round(&mut self, schedule: &TrainingSchedule, round: usize) -> Result<RoundMetrics> {
        self.check_schedule(schedule)?;
        let mut losses = Vec::with_capacity(schedule.steps.len());
        for &kind in &schedule.steps {
            let start = Instant::now();
            let loss = self.run_step(kind)?;
            let stage = self.stage.clone();
            self.log
                .push(&stage, round, &kind.to_string(), loss, start.elapsed().as_secs_f64());
            losses.push((kind, loss));
        }
        Ok(RoundMetrics { round, losses })
    }

    /// Token-weighted mean translation loss over `dev` with its own domain.
    pub fn dev_loss(&self, dev: &ParallelCorpus) -> Result<f64> {
        dev_loss(&self.model, dev, self.batch_size)
    }

    /// Runs up to `rounds` rounds. With a dev set, tracks dev loss every
    /// `eval_every` rounds, stops after `patience` rounds without
    /// improvement and restores the best parameters.
    pub fn fit(
        &mut self,
        schedule: &TrainingSchedule,
        config: &TrainConfig,
        dev: Option<&ParallelCorpus>,
        ckpt_dir: Option<&Path>,
    ) -> Result<FitReport> {
        self.check_schedule(schedule)?;
        let mut best: Option<(f64, usize, ParamStore<T>)> = None;
        let mut rounds_run = 0;
        let mut stopped_early = false;
        for round in 1..=config.rounds {
            let m = self.train_round(schedule, round)?;
            rounds_run = round;
            if round % 100 == 0 {
                debug!("{} round {round}: {:?}", self.stage, m.losses);
            }
            if config.ckpt_every > 0 && round % config.ckpt_every == 0 {
                if let Some(dir) = ckpt_dir {
                    let path: PathBuf = dir.join(format!("{}-round-{round:06}.ckpt", self.stage));
                    save_model(&path, &self.model, None)?;
                }
            }
            if let Some(dev) = dev {
                if round % config.eval_every == 0 || round == config.rounds {
                    let loss = self.dev_loss(dev)?;
                    let stage = self.stage.clone();
                    self.log.push(&stage, round, "dev", loss, 0.0);
                    let improved = best.as_ref().is_none_or(|(b, _, _)| loss < *b);
                    if improved {
                        best = Some((loss, round, self.model.store().clone()));
                    } else if config.patience > 0 {
                        let since = round - best.as_ref().map_or(0, |b| b.1);
                        if since >= config.patience {
                            info!("{}: dev loss plateaued, stopping at round {round}", self.stage);
                            stopped_early = true;
                            break;
                        }
                    }
                }
            }
        }
        let (best_dev_loss, best_round) = match best {
            Some((loss, round, store)) => {
                *self.model.store_mut() = store;
                (Some(loss), Some(round))
            }
            None => (None, None),
        };
        self.model.meta.trained = true;
        Ok(FitReport {
            rounds_run,
            best_dev_loss,
            best_round,
            stopped_early,
        })
    }

    pub fn into_model(self) -> Seq2Seq<T> {
        self.model
    }

    pub fn optimizer(&self) -> &Adam<T> {
        &self.optimizer
    }
}

/// Token-weighted mean translation loss of `model` over `corpus`, using the
/// corpus domain.
pub fn dev_loss<T: Scalar>(model: &Seq2Seq<T>, corpus: &ParallelCorpus, batch_size: usize) -> Result<f64> {
    let batches = make_batches(corpus, batch_size, 0, model.config().max_len)?;
    let (mut total, mut tokens) = (0.0, 0usize);
    for b in &batches {
        let mut g = Graph::new();
        let loss = model.loss(&mut g, b, &corpus.domain, TaskId::Mt, None)?;
        let n = b.target_tokens();
        total += g.value(loss).values()[0].as_f64() * n as f64;
        tokens += n;
    }
    if tokens == 0 {
        return Err(Error::EmptyInput("dev corpus has no target tokens".into()));
    }
    Ok(total / tokens as f64)
}
