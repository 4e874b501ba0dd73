//! Transporting mediated exposure effects across sites, and decomposing
//! the resulting grid of transported effects into variance components.
//!
//! The pipeline is: validate a multi-site [`Dataset`], fit a
//! [`NuisanceSet`], estimate the `(outcome site, mediator site)`
//! [`TransportGrid`] of log relative risks, then summarise it with
//! [`heterogeneity`].

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod heterogeneity;
pub mod learners;
pub mod nuisance;
pub mod simulation;

pub use data::{Dataset, EstimandSpec, ObservationRecord, RawRecord, Sample, SiteId};
pub use error::{Error, Result};
pub use estimators::{GridOptions, LambdaEstimate, Method, ThetaEstimate, TransportGrid};
pub use learners::LearnerSpec;
pub use nuisance::{fit_nuisance_set, make_folds, FoldAssignment, Nuisance, NuisanceSet};
