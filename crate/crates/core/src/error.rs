use thiserror::Error;

use crate::data::SiteId;

/// Errors raised across data validation, nuisance fitting, estimation and
/// heterogeneity summaries.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no records supplied")]
    EmptyInput,

    #[error("record {row}: {detail}")]
    MixedMissingness { row: usize, detail: String },

    #[error("site {0} has no records")]
    EmptySite(SiteId),

    #[error("record {row}: field `{field}` must be 0 or 1, found {value}")]
    NonBinaryField {
        row: usize,
        field: &'static str,
        value: f64,
    },

    #[error("record {row}: expected {expected} covariates, found {found}")]
    CovariateLength {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid estimand: {0}")]
    InvalidEstimand(String),

    #[error("site {0} is absent from the dataset")]
    SiteAbsent(SiteId),

    #[error("invalid learner specification: {0}")]
    InvalidLearner(String),

    #[error("logistic fit did not converge (separation suspected)")]
    SeparationDetected,

    #[error("fold count {q} is invalid for {n} records")]
    InvalidFoldCount { n: usize, q: usize },

    #[error("the target site has no records to standardize over")]
    NoTargetRecords,

    #[error("no records with X={x} in site {site}")]
    NoExposedRecordsInSite { x: u8, site: SiteId },

    #[error("non-positive theta ({value}) for x={x}; cannot take logs")]
    NonPositiveTheta { x: u8, value: f64 },

    #[error("transport grid is incomplete: {0} absent cell(s)")]
    IncompleteGrid(usize),

    #[error("negative variance component: {0}")]
    NegativeVariance(f64),

    #[error("anchor site {0} is not part of the grid")]
    UnknownAnchorSite(SiteId),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
