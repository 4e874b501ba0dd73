//! Run configuration files (TOML) and their merge with command-line flags.
//! Flags win over file values; unknown keys in a file are rejected.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use transhet_core::heterogeneity::McmcConfig;
use transhet_core::{LearnerSpec, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub input: Option<PathBuf>,
    pub target: Option<u32>,
    /// Grid columns; defaults to every non-target site.
    pub mediator_sources: Option<Vec<u32>>,
    /// Grid rows; defaults to every non-target site.
    pub outcome_sources: Option<Vec<u32>>,
    pub estimator: Method,
    pub learner: LearnerSpec,
    pub truncation: f64,
    pub crossfit: Option<usize>,
    pub clamp_theta: bool,
    pub seed: u64,
    pub positivity_bound: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            input: None,
            target: None,
            mediator_sources: None,
            outcome_sources: None,
            estimator: Method::Onestep,
            learner: LearnerSpec::default(),
            truncation: transhet_core::nuisance::DEFAULT_TRUNCATION,
            crossfit: None,
            clamp_theta: false,
            seed: 1,
            positivity_bound: transhet_core::diagnostics::DEFAULT_POSITIVITY_BOUND,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// Proportional to each site's record count.
    Size,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    pub grid: Option<PathBuf>,
    pub weights: Weighting,
    pub re_model: bool,
    pub mcmc: McmcConfig,
    pub anchor_outcome: Option<u32>,
    pub anchor_mediator: Option<u32>,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self {
            grid: None,
            weights: Weighting::Uniform,
            re_model: false,
            mcmc: McmcConfig::default(),
            anchor_outcome: None,
            anchor_mediator: None,
        }
    }
}

/// Parses a config file, or returns the defaults when no path is given.
/// The raw text is returned so it can be echoed unchanged.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<(T, Option<String>)> {
    let Some(path) = path else {
        return Ok((T::default(), None));
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let cfg = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    Ok((cfg, Some(text)))
}

pub fn learner_from_name(name: &str) -> Result<LearnerSpec> {
    Ok(match name {
        "super-learner" => LearnerSpec::default(),
        "main-terms" => LearnerSpec::LogisticMainTerms,
        "interactions" => LearnerSpec::LogisticWithInteractions,
        "intercept" => LearnerSpec::InterceptOnly,
        other => anyhow::bail!("unknown learner `{other}` (expected super-learner, main-terms, interactions or intercept)"),
    })
}
