//! Dataset ingestion, run configuration and report files.

mod config;
mod dataset;
mod report;

pub use config::{ModeSelection, RunConfig, TargetSpec};
pub use dataset::{
    jitter_cross_cause_ties, read_dataset, read_dataset_path, write_cohort, Ingested,
    JITTER_STREAM,
};
pub use report::{write_estimates, write_influence, ESTIMATES_HEADER, INFLUENCE_HEADER};
