//! Agreement, revision, calibration and correlation metrics.
//!
//! Everything in this module is a pure function of its inputs. All
//! arithmetic is done in `f64`.

mod consensus;
mod kappa;
mod matrix;
mod pearson;
mod report;
mod resolution;
mod revision;

use thiserror::Error;

use crate::domain::AnnotatorId;

pub use consensus::{brier_score, consensus_labels, Consensus};
pub use kappa::{mean_pairwise_kappa, pairwise_kappa, AgreementSummary, PairKappa};
pub use matrix::LabelMatrix;
pub use pearson::pearson_r;
pub use report::{
    build_report, render_table, BrierSummary, MetricsReport, PairResolution, PairwiseKappas,
    ReportInput, TABLE_HEADER,
};
pub use resolution::{disagreement_resolution, resolution_counts, ResolutionCounts};
pub use revision::{aep, revision_matrix, Aep, AnnotatorAep, RevisionMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no items left after masking")]
    Empty,
    #[error("sequence lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("label matrices do not cover the same annotators, instances and categories")]
    ShapeMismatch,
    #[error("at least two annotators are required, got {0}")]
    TooFewAnnotators(usize),
    #[error("no annotator pair shares any labeled item")]
    NoCoverage,
    #[error("zero denominator: no jointly present cells")]
    ZeroDenominator,
    #[error("at least {min} values are required, got {got}")]
    TooShort { min: usize, got: usize },
    #[error("correlation undefined: zero variance in {0} sequence")]
    UndefinedCorrelation(&'static str),
    #[error("probability vector {index} is not normalized (sum {sum})")]
    NotNormalized { index: usize, sum: f64 },
    #[error("category index {index} out of range for {count} categories")]
    CategoryOutOfRange { index: usize, count: usize },
    #[error("unknown annotator '{0}'")]
    UnknownAnnotator(AnnotatorId),
    #[error("unknown instance '{0}'")]
    UnknownInstance(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;
