//! Experiment orchestration: datasets, configuration, checkpoints, reports
//! and the command-line front end.

mod checkpoint;
mod cli;
mod config;
mod dataset;
mod report;
mod run;

pub use checkpoint::{
    checkpoint_json, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint, RunningStats,
    CHECKPOINT_VERSION,
};
pub use cli::cli_main;
pub use config::{
    AttackSection, AuditConfig, DatasetConfig, DefenseConfig, ExperimentConfig, ModelConfig,
    PRESETS,
};
pub use dataset::{
    fmt_f64, gen_blobs, load_csv, load_split_tags, parse_csv, samples_to_csv, save_csv, BlobParams,
    CsvSplit, Dataset, Provenance,
};
pub use report::{apply_baseline, emit_report, roc_csv, roc_file_name, write_report, RunRecord};
pub use run::{shadow_audit, train_experiment, training_defense, ShadowOutcome};
