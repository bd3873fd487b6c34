//! Experiment plumbing: datasets, training stages, the comparison schemes,
//! configuration files and CSV output.

mod config;
mod dataset;
mod record;
mod runner;
mod scheme;
mod train;

pub use config::{Config, DistillSection, DEFAULT_CONFIG, GridSection, PruneSection, SchemeSection, ScheduleChoice};
pub use dataset::{
    load_dataset, parse_cifar10_bin, parse_idx_images, parse_idx_labels, synthetic, DataConfig, DataSource,
    Dataset, Split, SyntheticParams, DATA_ROOT_ENV,
};
pub use record::{emit_results, read_results, summarize, EpochRow, RunRecord, SummaryRow};
pub use scheme::{
    run_comparison, run_scheme, verify_controlled, HandoffCheck, SchemeFamily, SchemeKind, SchemeOutcome, SchemeSpec,
};
pub use train::{evaluate, train_stage, AugSpec, LossSpec, StageContext, StageOutput, TrainSpec};
pub use runner::{grid_optima, mean_final_accuracy, run_and_write, run_config, write_outcomes};
