//! Retrieval-augmented text-to-SQL over embedded SQLite datasets.
//!
//! The pure pieces (embedding, retrieval, prompts, the SQL guard, scoring)
//! live in `insight-core`. This crate adds the database engine, HTTP model
//! clients, the query pipeline, the REST service and the benchmark runner.

// query errors carry the rejected SQL and partial timings by value
#![allow(clippy::result_large_err)]

pub mod bench;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod generation;
pub mod pipeline;
pub mod remote;
pub mod service;

use std::path::Path;
use std::sync::Arc;

pub use insight_core as core;

use insight_core::embedding::ReferenceEmbedder;
use insight_core::gateway::Generator;
use insight_core::sql::Guard;

use crate::dataset::{read_jsonl, DatasetDir};
use crate::engine::{ExecOptions, QueryEngine};
use crate::pipeline::{OnboardError, OnboardRequest, OnboardSummary, Pipeline, QueryDefaults};

/// Pipeline with the reference embedder, the default guard and engine limits.
pub fn local_pipeline(generator: Arc<dyn Generator>, defaults: QueryDefaults) -> Pipeline {
    Pipeline::new(
        Arc::new(ReferenceEmbedder::default()),
        generator,
        QueryEngine::new(Guard::default(), ExecOptions::default()),
        defaults,
    )
}

#[derive(Debug, thiserror::Error)]
pub enum OnboardDirError {
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Onboard(#[from] OnboardError),
}

/// Loads a dataset directory, optionally swapping its example pool for the
/// one in `pool`, and onboards it.
pub fn onboard_dir(pipeline: &Pipeline, dir: &Path, pool: Option<&Path>) -> Result<OnboardSummary, OnboardDirError> {
    let mut d = DatasetDir::load(dir)?;
    if let Some(p) = pool {
        d.examples = read_jsonl(p)?;
    }
    Ok(pipeline.onboard(OnboardRequest::from(d))?)
}
