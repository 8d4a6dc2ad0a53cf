//! Dataset ingestion, evaluation metrics and the experiment runner.

mod dataset;
mod experiment;
mod metrics;

pub use dataset::{
    blob_centers, load_mnist_idx, parse_idx_images, parse_idx_labels, sample_targets, synth_blobs, write_idx, Dataset,
};
pub use experiment::{
    resolve_seed, resolve_threads, run_attacks, run_experiment, write_csv, write_json, AdvTrainSpec, AttackEnv,
    AttackRow, AttackSpec, DataSource, ExperimentConfig, ExperimentReport, ModelSource, OracleSpec, OutputPaths,
    ReductionSpec, RunOptions, SampleRecord, TrainSpec, DEFAULT_SPSA_STEPS,
};
pub use metrics::{avg_distortion, conditioned_success_rate, success_rate};
