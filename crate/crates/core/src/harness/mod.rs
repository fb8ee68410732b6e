//! Synthetic scenes, map and dataset files, and the end-to-end pipeline.

mod dataset;
mod pgm;
mod pipeline;
mod scene;

pub use dataset::{
    load_dataset_dir, load_record, save_scene, split, DatasetRecord, SceneMeta, SplitProportions,
    BUILDINGS_FILE, DEFAULT_DYNAMIC_RANGE, META_FILE, RADIOMAP_FILE,
};
pub use pgm::{decode_pgm, encode_pgm, load_map, save_map};
pub use pipeline::{
    compress_buildings, decompress_buildings, evaluate, fit_scene, receiver_features, run_pipeline,
    scene_sample, side_info, train_scene_codebook, transmit, truth_at, PipelineConfig, PipelineError,
    PipelineOutput, FEATURE_CHANNELS,
};
pub use scene::{
    corpus_seeds, generate_corpus, generate_scene, ground_truth_radiomap, normalize_truth, place_buildings,
    received_power_dbm, sample_observations, Combine, Scene, SceneConfig,
};

use crate::depthmap::DepthError;
use crate::grid::GridError;
use crate::semcomp::SemCompError;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(&'static str),
    #[error("placement failed: {0}")]
    PlacementFailure(&'static str),
    #[error("scene has no dynamic range (constant field or no open pixels)")]
    DegenerateScene,
    #[error("value {0} cannot be stored as an 8-bit image")]
    OutOfRange(f64),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("malformed file{}: {reason}", path.as_ref().map(|p| format!(" {}", p.display())).unwrap_or_default())]
    MalformedFile { path: Option<PathBuf>, reason: &'static str },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("scene {scene}: {detail}")]
    InconsistentDims { scene: String, detail: String },
    #[error("{}: {message}", path.display())]
    Json { path: PathBuf, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    SemComp(#[from] SemCompError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), message: e.to_string() }
    }

    /// Attaches a file path to a malformed-file error.
    pub(crate) fn at(self, p: &Path) -> Self {
        match self {
            HarnessError::MalformedFile { reason, .. } => {
                HarnessError::MalformedFile { path: Some(p.to_path_buf()), reason }
            }
            other => other,
        }
    }
}
