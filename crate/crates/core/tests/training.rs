use dafe::dafe::{DomainId, TaskId};
use dafe::data::{Batch, MonolingualCorpus, ParallelCorpus, Provenance};
use dafe::model::{ModelConfig, Seq2Seq};
use dafe::numerics::{Graph, ParamGroup};
use dafe::seed;
use dafe::toy::{toy_task, ToyConfig, ToyTask};
use dafe::training::{
    run_pipeline, train_alternating, Corpora, MetricsLog, Mix, PipelineConfig, StepKind, Strategy, TrainConfig,
    Trainer, TrainingSchedule,
};
use dafe::Error;

fn small_task() -> ToyTask {
    toy_task(&ToyConfig {
        out_pairs: 120,
        dev_pairs: 20,
        in_mono: 120,
        test_pairs: 20,
        ..ToyConfig::default()
    })
    .unwrap()
}

fn model_config() -> ModelConfig {
    ModelConfig {
        num_layers: 1,
        hidden_size: 16,
        num_heads: 2,
        ff_size: 32,
        vocab_size: 60,
        max_len: 12,
        dropout: 0.0,
    }
}

fn pipeline_config(rounds: usize, seed: u64) -> PipelineConfig {
    PipelineConfig {
        model: model_config(),
        train: TrainConfig {
            rounds,
            batch_size: 8,
            seed,
            eval_every: 5,
            patience: 0,
            ..TrainConfig::default()
        },
        ckpt_dir: None,
    }
}

fn corpora(task: &ToyTask) -> Corpora {
    Corpora {
        out_parallel: task.out_parallel.clone(),
        in_mono: Some(task.in_mono.clone()),
        out_mono: None,
        dev: Some(task.dev.clone()),
    }
}

fn full_trainer(task: &ToyTask, lr: f64) -> Trainer<f64> {
    let m = Seq2Seq::with_dafe(model_config(), 1, &[DomainId::In, DomainId::Out], &TaskId::ALL).unwrap();
    let mut tc = TrainConfig {
        batch_size: 8,
        seed: 2,
        ..TrainConfig::default()
    };
    tc.adam.lr = lr;
    let mut t = Trainer::new(m, &tc, "forward");
    let synthetic = ParallelCorpus::new(task.in_dev.pairs.clone(), DomainId::In, Provenance::BackTranslated);
    t.set_mono(StepKind::InLm, &task.in_mono).unwrap();
    t.set_mono(StepKind::OutLm, &task.out_parallel.target_corpus()).unwrap();
    t.set_parallel(StepKind::OutMt, &task.out_parallel).unwrap();
    t.set_parallel(StepKind::InMt, &synthetic).unwrap();
    t
}

fn changed(before: &[u64], after: &[u64]) -> bool {
    before != after
}

#[test]
fn each_step_kind_updates_exactly_its_parameter_set() {
    let task = small_task();
    for kind in [StepKind::InLm, StepKind::OutLm, StepKind::OutMt, StepKind::InMt] {
        let mut t = full_trainer(&task, 1e-3);
        let groups = t.model.store().groups();
        let before: Vec<Vec<u64>> = groups.iter().map(|g| t.model.store().snapshot(g)).collect();
        t.run_step(kind).unwrap();
        for (g, b) in groups.iter().zip(&before) {
            let moved = changed(b, &t.model.store().snapshot(g));
            let expected = match g {
                ParamGroup::Base => true,
                ParamGroup::Domain(d) => *d == kind.domain(),
                ParamGroup::Task(task) => *task == kind.task(),
            };
            assert_eq!(moved, expected, "{kind} moved {g}: {moved}");
        }
    }
}

#[test]
fn translation_parameter_moves_only_during_translation_steps() {
    let task = small_task();
    let mut t = full_trainer(&task, 1e-3);
    let schedule = TrainingSchedule::alternating(Mix::default(), true);
    let mt = ParamGroup::Task(TaskId::Mt);
    for kind in schedule.steps {
        let before = t.model.store().snapshot(&mt);
        t.run_step(kind).unwrap();
        let moved = changed(&before, &t.model.store().snapshot(&mt));
        assert_eq!(moved, kind.task() == TaskId::Mt, "{kind}");
    }
}

#[test]
fn zero_learning_rate_leaves_every_parameter_unchanged() {
    let task = small_task();
    let mut t = full_trainer(&task, 0.0);
    let before = t.model.store().clone();
    let schedule = TrainingSchedule::alternating(Mix::default(), true);
    t.train_round(&schedule, 1).unwrap();
    for (pid, p) in before.iter() {
        let now = t.model.store().get(pid).values();
        assert!(p.values().iter().zip(now).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn three_rounds_execute_nine_steps_in_order() {
    let task = small_task();
    let mut t = full_trainer(&task, 1e-3);
    let schedule = TrainingSchedule::alternating(Mix::default(), false);
    for r in 1..=3 {
        let m = t.train_round(&schedule, r).unwrap();
        assert_eq!(m.losses.len(), 3);
    }
    let expected: Vec<StepKind> = [StepKind::InLm, StepKind::OutLm, StepKind::OutMt].repeat(3);
    assert_eq!(t.step_log, expected);
    assert_eq!(t.log.records.len(), 9);
}

#[test]
fn uniform_output_gives_log_v_loss() {
    let task = small_task();
    let mut m = Seq2Seq::<f64>::with_dafe(model_config(), 3, &[DomainId::In, DomainId::Out], &TaskId::ALL).unwrap();
    let out = m.output_projection();
    for p in [out.weight, out.bias] {
        m.store_mut().get_mut(p).values_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let (batch, _) = Batch::from_pairs(&task.out_parallel.pairs[..8], 12).unwrap();
    let mut g = Graph::new();
    let loss = m.loss(&mut g, &batch, &DomainId::Out, TaskId::Mt, None).unwrap();
    assert!((g.value(loss).values()[0] - 60f64.ln()).abs() < 1e-12);
}

#[test]
fn missing_step_data_is_a_configuration_error() {
    let m = Seq2Seq::<f64>::new(model_config(), 1).unwrap();
    let mut t = Trainer::new(m, &TrainConfig::default(), "x");
    let schedule = TrainingSchedule::alternating(Mix::default(), false);
    let err = t.train_round(&schedule, 1).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let empty = MonolingualCorpus::new(Vec::new(), DomainId::In);
    assert!(t.set_mono(StepKind::InLm, &empty).is_err());
}

#[test]
fn baseline_has_no_feature_embeddings_and_copy_adds_in_domain_pairs() {
    let task = small_task();
    let c = corpora(&task);
    let cfg = pipeline_config(3, 1);
    let base = run_pipeline::<f64>(Strategy::Baseline, &c, &cfg).unwrap();
    assert!(base.model.dafe().is_none());
    assert!(base
        .model
        .store()
        .iter()
        .all(|(_, p)| p.group() == &ParamGroup::Base));
    assert_eq!(base.training_pairs, task.out_parallel.len());
    let copy = run_pipeline::<f64>(Strategy::Copy, &c, &cfg).unwrap();
    assert_eq!(copy.training_pairs, task.out_parallel.len() + task.in_mono.len());
    assert!(copy.model.meta.trained);
}

#[test]
fn back_translation_strategies_keep_the_reverse_model() {
    let task = small_task();
    let c = corpora(&task);
    let cfg = pipeline_config(2, 1);
    for s in [Strategy::Back, Strategy::BackDafe, Strategy::BackPlusDafe, Strategy::BackDafePlusDafe] {
        let out = run_pipeline::<f64>(s, &c, &cfg).unwrap();
        let reverse = out.reverse.expect("reverse model");
        assert_eq!(reverse.dafe().is_some(), matches!(s, Strategy::BackDafe | Strategy::BackDafePlusDafe));
        let synthetic = out.synthetic.expect("synthetic corpus");
        assert_eq!(synthetic.len(), task.in_mono.len());
        assert_eq!(synthetic.targets().cloned().collect::<Vec<_>>(), task.in_mono.sentences);
        assert_eq!(out.model.dafe().is_some(), s.forward_has_dafe());
        assert_eq!(out.training_pairs, task.out_parallel.len() + task.in_mono.len());
    }
}

#[test]
fn strategies_needing_in_domain_text_fail_without_it() {
    let task = small_task();
    let mut c = corpora(&task);
    c.in_mono = None;
    let err = run_pipeline::<f64>(Strategy::Dafe, &c, &pipeline_config(1, 1)).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(run_pipeline::<f64>(Strategy::Baseline, &c, &pipeline_config(1, 1)).is_ok());
}

#[test]
fn frozen_embeddings_match_a_model_without_them() {
    let task = small_task();
    let mut c = corpora(&task);
    c.dev = None;
    let cfg = pipeline_config(15, 4);
    let wo = run_pipeline::<f64>(Strategy::DafeWoEmbed, &c, &cfg).unwrap();
    let plain = Seq2Seq::<f64>::new(cfg.model.clone(), seed::derive(4, "forward", 1)).unwrap();
    let (plain, log) = train_alternating(
        plain,
        &c.out_parallel,
        &task.in_mono,
        &c.out_parallel.target_corpus(),
        None,
        None,
        false,
        &cfg,
        "forward",
    )
    .unwrap();
    assert_eq!(wo.log.to_text(), log.to_text());
    for (pid, p) in plain.store().iter() {
        assert_eq!(p.values(), wo.model.store().get(pid).values());
    }
    let table = wo.model.dafe().unwrap();
    for (_, ids) in dafe::dafe::ParameterPartition::new(wo.model.store()).groups() {
        for &pid in ids {
            if wo.model.store().get(pid).group() != &ParamGroup::Base {
                assert!(wo.model.store().get(pid).values().iter().all(|&v| v == 0.0));
            }
        }
    }
    assert_eq!(table.slots(), 2);
}

#[test]
fn losses_fall_over_toy_training() {
    let task = small_task();
    let mut c = corpora(&task);
    c.dev = None;
    let out = run_pipeline::<f64>(Strategy::Dafe, &c, &pipeline_config(60, 5)).unwrap();
    let median = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        (v[v.len() / 2 - 1] + v[v.len() / 2]) / 2.0
    };
    for step in ["in-lm", "out-lm", "out-mt"] {
        let l = out.log.losses("forward", step);
        assert_eq!(l.len(), 60);
        let (first, last) = (median(&l[..10]), median(&l[l.len() - 10..]));
        assert!(last < first, "{step}: {first} -> {last}");
    }
}

#[test]
fn pipelines_are_pure_functions_of_their_inputs() {
    let task = small_task();
    let c = corpora(&task);
    let cfg = pipeline_config(6, 8);
    let a = run_pipeline::<f64>(Strategy::BackPlusDafe, &c, &cfg).unwrap();
    let b = run_pipeline::<f64>(Strategy::BackPlusDafe, &c, &cfg).unwrap();
    assert_eq!(a.log.to_text(), b.log.to_text());
    assert_eq!(a.model, b.model);
    let other = run_pipeline::<f64>(Strategy::BackPlusDafe, &c, &pipeline_config(6, 9)).unwrap();
    assert_ne!(a.log.to_text(), other.log.to_text());
}

#[test]
fn early_stopping_triggers_when_dev_loss_stalls() {
    let task = small_task();
    let mut cfg = pipeline_config(100, 1);
    cfg.train.adam.lr = 0.0;
    cfg.train.patience = 10;
    let m = Seq2Seq::<f64>::new(cfg.model.clone(), 1).unwrap();
    let mut t = Trainer::new(m, &cfg.train, "forward");
    t.set_parallel(StepKind::OutMt, &task.out_parallel).unwrap();
    let report = t
        .fit(&TrainingSchedule::translation_only(Mix::default()), &cfg.train, Some(&task.dev), None)
        .unwrap();
    assert!(report.stopped_early);
    assert_eq!(report.best_round, Some(5));
    assert_eq!(report.rounds_run, 15);
    assert!(t.model.meta.trained);
}

#[test]
fn periodic_checkpoints_are_written() {
    let task = small_task();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = pipeline_config(4, 1);
    cfg.train.ckpt_every = 2;
    cfg.ckpt_dir = Some(dir.path().to_path_buf());
    run_pipeline::<f64>(Strategy::Baseline, &corpora(&task), &cfg).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["forward-round-000002.ckpt", "forward-round-000004.ckpt"]);
}

#[test]
fn strategy_names_parse_and_unknown_names_are_usage_errors() {
    for name in Strategy::names().split(", ") {
        let s: Strategy = name.parse().unwrap();
        assert_eq!(s.name(), name);
    }
    let err = "nonsense".parse::<Strategy>().unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("back_dafe_plus_dafe"));
}

#[test]
fn mix_and_schedule_parsing() {
    let m: Mix = "2:1:3".parse().unwrap();
    assert_eq!((m.in_lm, m.out_lm, m.out_mt, m.in_mt), (2, 1, 3, 1));
    assert!("1:1:0".parse::<Mix>().is_err());
    assert!("1:1".parse::<Mix>().is_err());
    let s = TrainingSchedule::alternating(m, true);
    assert_eq!(s.steps.len(), 7);
    assert_eq!(s.steps.last(), Some(&StepKind::InMt));
    for k in [StepKind::InLm, StepKind::OutLm, StepKind::OutMt, StepKind::InMt] {
        assert_eq!(k.to_string().parse::<StepKind>().unwrap(), k);
    }
}

#[test]
fn metrics_log_round_trips_through_text() {
    let mut log = MetricsLog::default();
    log.push("forward", 1, "in-lm", 4.25, 0.5);
    log.push("forward", 1, "dev", 0.1 + 0.2, 0.0);
    let text = log.to_text();
    assert!(text.starts_with("stage\tround\tstep\tloss\n"));
    let back = MetricsLog::parse(&text).unwrap();
    assert_eq!(back.to_text(), text);
    assert_eq!(back.losses("forward", "dev"), vec![0.1 + 0.2]);
    assert!(!text.contains("0.5"));
}
