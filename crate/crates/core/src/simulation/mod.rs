//! Five-site synthetic data-generating process, its exact enumeration
//! oracle, and the replication harness built on top of them.
//!
//! All variables except `S` are Bernoulli. Site 1 is the target: its
//! records are emitted with covariates only.

mod dgp;
pub mod oracle;
pub mod robustness;
pub mod study;

pub use dgp::{dgp_sample, dgp_sample_with, DgpConfig, OutcomeCoefficients, COVARIATE_NAMES, N_SITES};
pub use oracle::{oracle_lambda, oracle_lambda_grid, oracle_theta, OracleNuisance, PopulationSample};
pub use study::{run_study, McmcSettings, MetricsSummary, StudyConfig};
