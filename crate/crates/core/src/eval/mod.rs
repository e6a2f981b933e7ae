//! Embedding-space evaluation: classifiers, the multi-run protocol, PCA and
//! plot/report emitters.

pub mod classify;
pub mod pca;
pub mod plot;
pub mod protocol;
pub mod report;

use thiserror::Error;

use crate::embed::EmbedError;

pub use classify::{evaluate, fit_centroids, Algorithm, CentroidModel, Classifier, KnnModel, LabeledSet};
pub use pca::{pca_project, PcaProjection};
pub use plot::{pair_plot, AnnotatedPoint, PairPlot, PlotRow, Role};
pub use protocol::{embedding_text, multi_run, EvalReport, Protocol, RunOutcome, TrainSource};
pub use report::{comparison_table, manifest_table};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("label `{0}` has no training members")]
    EmptyClass(String),
    #[error("label `{0}` has a zero-mean centroid")]
    DegenerateCentroid(String),
    #[error("label `{0}` is not in the label set")]
    UnknownLabel(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("k={k} is invalid for {train} training points")]
    InvalidK { k: usize, train: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("training on generations requires a generation run")]
    MissingGenerations,
    #[error("PCA needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("eigensolver residual {residual:e} exceeds tolerance")]
    EigenResidual { residual: f64 },
    #[error("malformed report: {0}")]
    Report(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}
