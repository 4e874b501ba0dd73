//! Mis-specification harness: true nuisances with selected components
//! replaced by deterministic distortions.

use serde::{Deserialize, Serialize};

use crate::data::{EstimandSpec, Sample, SiteId};
use crate::error::Result;
use crate::estimators::{transport_grid, GridOptions, Method};
use crate::learners::{expit, logit};
use crate::nuisance::Nuisance;

use super::oracle::{oracle_lambda, OracleNuisance};

/// Which nuisance components are replaced by distorted versions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrongNuisances {
    pub a: bool,
    pub b: bool,
    pub g: bool,
    pub e: bool,
    pub r: bool,
    pub t: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// `a`, `b` correct; every weighting nuisance wrong.
    RegressionsCorrect,
    /// `g`, `e`, `r`, `t` correct; `a`, `b` wrong.
    WeightsCorrect,
    /// `a`, `r`, `t` correct; `b`, `g`, `e` wrong.
    OutcomeAndSiteCorrect,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::RegressionsCorrect,
        Scenario::WeightsCorrect,
        Scenario::OutcomeAndSiteCorrect,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::RegressionsCorrect => "i",
            Scenario::WeightsCorrect => "ii-a",
            Scenario::OutcomeAndSiteCorrect => "ii-b",
        }
    }

    pub fn wrong(self) -> WrongNuisances {
        match self {
            Scenario::RegressionsCorrect => WrongNuisances {
                g: true,
                e: true,
                r: true,
                t: true,
                ..Default::default()
            },
            Scenario::WeightsCorrect => WrongNuisances {
                a: true,
                b: true,
                ..Default::default()
            },
            Scenario::OutcomeAndSiteCorrect => WrongNuisances {
                b: true,
                g: true,
                e: true,
                ..Default::default()
            },
        }
    }
}

/// Logit-scale shift that depends on the covariates.
pub fn distort(q: f64, l: &[f64]) -> f64 {
    expit(logit(q) + 0.4 * (2.0 * l[0] - 1.0) + 0.3 * l[1])
}

/// Wraps a nuisance and distorts the components flagged in `wrong`.
pub struct Distorted<'a, N: Nuisance> {
    base: &'a N,
    wrong: WrongNuisances,
}

impl<'a, N: Nuisance> Distorted<'a, N> {
    pub fn new(base: &'a N, wrong: WrongNuisances) -> Self {
        Self { base, wrong }
    }
}

fn pick(flag: bool, q: f64, l: &[f64]) -> f64 {
    if flag {
        distort(q, l)
    } else {
        q
    }
}

impl<N: Nuisance> Nuisance for Distorted<'_, N> {
    fn outcome_mean(&self, i: usize, x: u8, m: u8, l: &[f64], k: SiteId) -> f64 {
        pick(self.wrong.a, self.base.outcome_mean(i, x, m, l, k), l)
    }

    fn bridged_outcome(&self, i: usize, x: u8, l: &[f64], k: SiteId, p: SiteId) -> f64 {
        pick(self.wrong.b, self.base.bridged_outcome(i, x, l, k, p), l)
    }

    fn exposure_given_mediator(&self, i: usize, x: u8, m: u8, l: &[f64], p: SiteId) -> f64 {
        pick(self.wrong.g, self.base.exposure_given_mediator(i, x, m, l, p), l)
    }

    fn site_given_mediator(&self, i: usize, s: SiteId, m: u8, l: &[f64]) -> f64 {
        pick(self.wrong.e, self.base.site_given_mediator(i, s, m, l), l)
    }

    fn site_given_covariates(&self, i: usize, s: SiteId, l: &[f64]) -> f64 {
        pick(self.wrong.r, self.base.site_given_covariates(i, s, l), l)
    }

    fn exposure_propensity(&self, i: usize, x: u8, l: &[f64], p: SiteId) -> f64 {
        pick(self.wrong.t, self.base.exposure_propensity(i, x, l, p), l)
    }

    fn site_share(&self, s: SiteId) -> f64 {
        self.base.site_share(s)
    }
}

/// `λ̂ − λ` for every cell of the source grid, using the true nuisances
/// distorted as `scenario` prescribes.
pub fn scenario_errors<S: Sample + ?Sized>(
    sample: &S,
    oracle: &OracleNuisance,
    scenario: Scenario,
    method: Method,
) -> Result<Vec<f64>> {
    let cfg = oracle.config();
    let sources = cfg.source_sites();
    let target = SiteId(cfg.target);
    let spec = EstimandSpec::new(target, sources.clone(), sources.clone())?;
    let nuis = Distorted::new(oracle, scenario.wrong());
    let grid = transport_grid(sample, &spec, &nuis, method, &GridOptions::default());
    let values = grid.values()?;
    let mut out = Vec::with_capacity(sources.len() * sources.len());
    for (r, &k) in sources.iter().enumerate() {
        for (c, &p) in sources.iter().enumerate() {
            out.push(values[r][c] - oracle_lambda(cfg, target, k, p));
        }
    }
    Ok(out)
}
