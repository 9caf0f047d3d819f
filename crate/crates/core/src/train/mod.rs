//! Cosine-annealed SGD training, the binary metric suite and the
//! cross-validation driver.

mod config;
mod crossval;
mod metrics;
mod report;
mod schedule;
mod sgd;
mod trainer;

pub use config::{Precision, TrainingConfig};
pub use crossval::{
    cross_validate, fit_and_evaluate, fold_seed, stats_from_metadata, stats_to_metadata, CvOptions, CvReport,
    FoldOutcome,
};
pub use metrics::{f1_from_counts, ConfusionMatrix, Metric, MetricsReport, Summary};
pub use report::{epoch_log_csv, format_metric, metrics_csv, text_table};
pub use schedule::cosine_lr;
pub use sgd::Sgd;
pub use trainer::{evaluate, predict_label, train_network, EpochLog, Evaluation};
