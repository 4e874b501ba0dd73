//! Exact quantities of the synthetic process, computed by enumerating
//! `(L1, L2, X, M, Y)` cells.

use crate::data::{ObservationRecord, Sample, SiteId};
use crate::nuisance::Nuisance;

use super::dgp::DgpConfig;

const CELLS: [(f64, f64); 4] = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];

fn site_index(s: SiteId) -> usize {
    assert!((1..=5).contains(&s.0), "site {s} is not part of the synthetic process");
    s.0 as usize - 1
}

fn site_given_l(cfg: &DgpConfig, s: SiteId, l1: f64, l2: f64) -> f64 {
    cfg.site_probabilities(l1, l2)[site_index(s)]
}

/// `P(S = s)`.
pub fn site_marginal(cfg: &DgpConfig, s: SiteId) -> f64 {
    CELLS
        .iter()
        .map(|&(l1, l2)| cfg.covariate_probability(l1, l2) * site_given_l(cfg, s, l1, l2))
        .sum()
}

fn mediator_law(cfg: &DgpConfig, m: u8, x: u8, l1: f64, l2: f64, p: SiteId) -> f64 {
    let q = cfg.mediator_probability(f64::from(x), l1, l2, p);
    if m == 1 {
        q
    } else {
        1.0 - q
    }
}

/// `θ(x, j, k, p) = Σ_l P(l|S=j) Σ_m P(Y=1|x,m,l,S=k) P(m|x,l,S=p)`.
pub fn oracle_theta(cfg: &DgpConfig, x: u8, j: SiteId, k: SiteId, p: SiteId) -> f64 {
    let hj = site_marginal(cfg, j);
    CELLS
        .iter()
        .map(|&(l1, l2)| {
            let pl = cfg.covariate_probability(l1, l2) * site_given_l(cfg, j, l1, l2) / hj;
            let inner: f64 = [0u8, 1]
                .iter()
                .map(|&m| {
                    cfg.outcome_probability(f64::from(x), f64::from(m), l1, l2, k) * mediator_law(cfg, m, x, l1, l2, p)
                })
                .sum();
            pl * inner
        })
        .sum()
}

pub fn oracle_lambda(cfg: &DgpConfig, j: SiteId, k: SiteId, p: SiteId) -> f64 {
    oracle_theta(cfg, 1, j, k, p).ln() - oracle_theta(cfg, 0, j, k, p).ln()
}

/// Oracle `λ(j, k, p)` with rows `k ∈ outcome_sites`, columns
/// `p ∈ mediator_sites`.
pub fn oracle_lambda_grid(cfg: &DgpConfig, j: SiteId, outcome_sites: &[SiteId], mediator_sites: &[SiteId]) -> Vec<Vec<f64>> {
    outcome_sites
        .iter()
        .map(|&k| mediator_sites.iter().map(|&p| oracle_lambda(cfg, j, k, p)).collect())
        .collect()
}

/// True nuisance functions. `e` is the site law given `(M, L)` among the
/// source sites, matching how the fitted version is trained.
#[derive(Debug, Clone)]
pub struct OracleNuisance {
    cfg: DgpConfig,
    sources: Vec<SiteId>,
}

impl OracleNuisance {
    pub fn new(cfg: &DgpConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            sources: cfg.source_sites(),
        }
    }

    pub fn config(&self) -> &DgpConfig {
        &self.cfg
    }

    /// `P(M = m | L, S = s)`, marginal over `X`.
    fn mediator_given_l(&self, m: u8, l1: f64, l2: f64, s: SiteId) -> f64 {
        [0u8, 1]
            .iter()
            .map(|&x| self.cfg.exposure_probability(x) * mediator_law(&self.cfg, m, x, l1, l2, s))
            .sum()
    }
}

impl Nuisance for OracleNuisance {
    fn outcome_mean(&self, _: usize, x: u8, m: u8, l: &[f64], k: SiteId) -> f64 {
        self.cfg.outcome_probability(f64::from(x), f64::from(m), l[0], l[1], k)
    }

    fn bridged_outcome(&self, i: usize, x: u8, l: &[f64], k: SiteId, p: SiteId) -> f64 {
        [0u8, 1]
            .iter()
            .map(|&m| self.outcome_mean(i, x, m, l, k) * mediator_law(&self.cfg, m, x, l[0], l[1], p))
            .sum()
    }

    fn exposure_given_mediator(&self, _: usize, x: u8, m: u8, l: &[f64], p: SiteId) -> f64 {
        let joint = |x: u8| self.cfg.exposure_probability(x) * mediator_law(&self.cfg, m, x, l[0], l[1], p);
        joint(x) / (joint(0) + joint(1))
    }

    fn site_given_mediator(&self, _: usize, s: SiteId, m: u8, l: &[f64]) -> f64 {
        let joint = |s: SiteId| site_given_l(&self.cfg, s, l[0], l[1]) * self.mediator_given_l(m, l[0], l[1], s);
        if !self.sources.contains(&s) {
            return 0.0;
        }
        joint(s) / self.sources.iter().map(|&t| joint(t)).sum::<f64>()
    }

    fn site_given_covariates(&self, _: usize, s: SiteId, l: &[f64]) -> f64 {
        site_given_l(&self.cfg, s, l[0], l[1])
    }

    fn exposure_propensity(&self, _: usize, x: u8, _: &[f64], _: SiteId) -> f64 {
        self.cfg.exposure_probability(x)
    }

    fn site_share(&self, s: SiteId) -> f64 {
        site_marginal(&self.cfg, s)
    }
}

/// The exact observed-data law as a weighted record list: one record per
/// `(S, L)` cell for the target, one per `(S, L, X, M, Y)` cell otherwise.
#[derive(Debug, Clone)]
pub struct PopulationSample {
    records: Vec<ObservationRecord>,
    weights: Vec<f64>,
    nominal_size: f64,
}

impl PopulationSample {
    pub fn new(cfg: &DgpConfig) -> Self {
        let mut records = Vec::new();
        let mut weights = Vec::new();
        for s in cfg.sites() {
            for &(l1, l2) in &CELLS {
                let ps = cfg.covariate_probability(l1, l2) * site_given_l(cfg, s, l1, l2);
                if s.0 == cfg.target {
                    records.push(ObservationRecord::target(s, vec![l1, l2]));
                    weights.push(ps);
                    continue;
                }
                for x in [0u8, 1] {
                    for m in [0u8, 1] {
                        let py = cfg.outcome_probability(f64::from(x), f64::from(m), l1, l2, s);
                        for y in [false, true] {
                            let w = ps
                                * cfg.exposure_probability(x)
                                * mediator_law(cfg, m, x, l1, l2, s)
                                * if y { py } else { 1.0 - py };
                            records.push(ObservationRecord::source(s, vec![l1, l2], x == 1, m == 1, y));
                            weights.push(w);
                        }
                    }
                }
            }
        }
        Self {
            records,
            weights,
            nominal_size: f64::INFINITY,
        }
    }

    /// Sample size used to scale influence-function variances.
    pub fn with_nominal_size(mut self, n: f64) -> Self {
        self.nominal_size = n;
        self
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

impl Sample for PopulationSample {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn record(&self, i: usize) -> &ObservationRecord {
        &self.records[i]
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    fn sample_size(&self) -> f64 {
        self.nominal_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_weights_sum_to_one() {
        let pop = PopulationSample::new(&DgpConfig::default());
        assert_eq!(pop.len(), 4 + 4 * 4 * 8);
        assert!((pop.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_outcome_collapses_grid() {
        let cfg = DgpConfig { site_dependent_outcome: false, ..Default::default() };
        let sites: Vec<SiteId> = (2..=5).map(SiteId).collect();
        let g = oracle_lambda_grid(&cfg, SiteId(1), &sites, &sites);
        for row in &g {
            for v in row {
                assert!((v - g[0][0]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn oracle_nuisance_distributions_normalize() {
        let cfg = DgpConfig::default();
        let o = OracleNuisance::new(&cfg);
        for &(l1, l2) in &CELLS {
            let l = [l1, l2];
            let r: f64 = cfg.sites().map(|s| o.site_given_covariates(0, s, &l)).sum();
            assert!((r - 1.0).abs() < 1e-12);
            for m in [0, 1] {
                let e: f64 = cfg.sites().map(|s| o.site_given_mediator(0, s, m, &l)).sum();
                assert!((e - 1.0).abs() < 1e-12);
                let g: f64 = [0, 1].iter().map(|&x| o.exposure_given_mediator(0, x, m, &l, SiteId(3))).sum();
                assert!((g - 1.0).abs() < 1e-12);
            }
        }
    }
}
