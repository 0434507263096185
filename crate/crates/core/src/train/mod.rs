//! Experiment harness: configuration, batched training with Adam and early
//! stopping, evaluation, run records and seed aggregation.

mod aggregate;
mod config;
mod run;

pub use aggregate::{aggregate_seeds, collect_records, comparison_table, mean_std, CellSummary};
pub use config::{AcquirerChoice, ExperimentConfig};
pub use run::{
    evaluate, mask_frequency, read_record, split_tag, stratified_split, trace_episodes,
    train_run, write_run, EpochLog, EvalResult, RunOutcome, RunRecord, TrainedModel,
    CHECKPOINT_FILE, CONFIG_FILE, CURVES_CSV, RECORD_CSV, RECORD_JSON,
};
