//! Datasets on disk, descriptor extraction, training, cross-validation and
//! reporting.

mod config;
mod dataset;
mod features;
mod report;
mod synth;
mod training;

use std::path::Path;

use thiserror::Error;

use crate::neural::NeuralError;
use crate::spectral::SpectralError;
use crate::temporal_graph::GraphError;
use crate::topology::TopologyError;

pub use config::{FeatureMode, RunConfig};
pub use dataset::{load_dataset, write_dataset, Dataset};
pub use features::{
    extract_descriptors, extract_with_cache, feature_grid, read_descriptor_cache, write_descriptor_cache, DescriptorCache,
    GraphFeatures,
};
pub use report::{AttentionReport, Metrics};
pub use synth::{synth_generate, SynthSpec};
pub use training::{
    evaluate, fit, fold_assignment, grid_search, kfold_cv, kfold_cv_features, sweep_windows, train, Evaluation, ModelBundle,
    SweepResult, TrainedModel,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}: label {label} outside 0..{num_classes}")]
    LabelOutOfRange { file: String, label: usize, num_classes: usize },
    #[error("no manifest.txt in {0}")]
    MissingManifest(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("{graphs} graphs cannot fill {folds} folds")]
    TooFewGraphs { graphs: usize, folds: usize },
    #[error("non-finite loss at epoch {epoch}, graph {graph}: {detail}")]
    NonFiniteLoss { epoch: usize, graph: usize, detail: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

impl PipelineError {
    /// True for failures of the numerics rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Self::NonFiniteLoss { .. }
                | Self::Spectral(SpectralError::NonConvergence(_))
                | Self::Neural(NeuralError::NonFiniteValue(_))
        )
    }
}

pub(crate) fn io_error(path: &Path, err: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: err.to_string(),
    }
}
