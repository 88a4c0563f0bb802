//! Gated optimisation, the alternating LM/MT schedule and the end-to-end
//! training strategies.

pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod schedule;
pub mod trainer;

pub use metrics::MetricsLog;
pub use optimizer::{Adam, AdamConfig, UpdateStats};
pub use pipeline::{run_pipeline, train_alternating, train_translation, Corpora, PipelineConfig, PipelineOutput, Strategy};
pub use schedule::{Mix, StepKind, TrainingSchedule};
pub use trainer::{dev_loss, FitReport, RoundMetrics, TrainConfig, Trainer};
