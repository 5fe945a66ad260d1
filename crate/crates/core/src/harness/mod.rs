//! Procedural datasets, evaluation metrics, experiment runners and their
//! configuration.

pub mod config;
pub mod dataset;
pub mod experiments;
pub mod init;
pub mod metrics;
pub mod report;

pub use config::ExperimentConfig;
pub use dataset::{generate_dataset, Category, CategorySpec, Dataset, SceneEntry, Split, TRAIN_FRACTION};
pub use experiments::{
    manip_scene, perturbation_for, run_experiment, run_experiment_with, ExperimentKind, ExperimentOutput, Manifest,
    ManipScene, RateRow, TrialRow,
};
pub use init::{initial_params, perceive_params, InitError};
pub use report::{aggregate, MetricRow, SummaryRow};

use crate::scene::SceneError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("config: {0}")]
    Config(String),
    #[error("experiment failed: {0}")]
    Experiment(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl HarnessError {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// Derive an independent seed from a base seed and two indices.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
