//! Configuration, checkpoints, ingestion, training loops and the steps behind
//! each command-line subcommand.

mod checkpoint;
mod config;
mod ingest;
mod run;
mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DataConfig, EvalConfig, GenerateSection, PredictorSection, RunConfig, ScheduleConfig};
pub use ingest::{atom_count_histogram, ingest, sha256_hex, Manifest, ManifestEntry, SkippedFile, Split, MANIFEST_FORMAT};
pub use run::{
    evaluate, generate_for, train_diff, train_shape, ConditionReport, DiffusionBundle, EvalReport, GenerateOutput,
    GenerateRequest, GeometryDivergence, ShapeBundle, KIND_DIFFUSION, KIND_SHAPE,
};
pub use train::{prepare_samples, restore, train_diffusion, validation_loss, DiffEval, DiffSample, DiffTrainConfig, TrainState};

use crate::chem::ChemError;
use crate::metrics::MetricsError;
use crate::nn::NnError;
use crate::predictor::PredictorError;
use crate::sampler::SamplerError;
use crate::shape::ShapeError;

pub const THREADS_ENV: &str = "SHAPEDIFF_THREADS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for missing or malformed data, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) | PipelineError::Io { .. } | PipelineError::Chem(_) | PipelineError::Checkpoint(_) => 3,
            PipelineError::Sampler(SamplerError::Format(_)) => 3,
            _ => 1,
        }
    }
}

/// Sizes the global worker pool from `SHAPEDIFF_THREADS` when set; returns the pool size.
pub fn configure_threads() -> Result<usize, PipelineError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| PipelineError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        // A pool that already exists keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}
