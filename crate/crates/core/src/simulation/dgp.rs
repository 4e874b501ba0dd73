use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, Dataset, RawRecord, SiteId};
use crate::learners::expit;

pub const N_SITES: usize = 5;
pub const COVARIATE_NAMES: [&str; 2] = ["l1", "l2"];

/// Coefficients of `P(Y=1 | X, M, L, S)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeCoefficients {
    pub intercept: f64,
    pub x: f64,
    /// Added when `S` is one of `shift_sites`.
    pub site_shift: f64,
    pub m: f64,
    /// `X·M` term, active when `S` is one of `xm_sites`.
    pub xm: f64,
    pub l1: f64,
    pub m_l1: f64,
    pub l2: f64,
    pub x_l1: f64,
    pub shift_sites: Vec<u32>,
    pub xm_sites: Vec<u32>,
}

impl Default for OutcomeCoefficients {
    fn default() -> Self {
        Self {
            intercept: -1.0,
            x: -1.0,
            site_shift: 0.5,
            m: 0.75,
            xm: 0.65,
            l1: 0.5,
            m_l1: 0.5,
            l2: -0.5,
            x_l1: 1.0,
            shift_sites: vec![2, 4],
            xm_sites: vec![1, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub n: usize,
    pub seed: u64,
    pub p_l1: f64,
    pub p_l2: f64,
    pub p_x: f64,
    /// Log-odds of `S = s` against `S = 1` for `s = 2..5`, as
    /// `(intercept, L1, L2, L1·L2)`.
    pub site_coefficients: [[f64; 4]; 4],
    /// `P(M=1 | X, L)` as `(intercept, X, L1, X·L1, L2)`; shared by all sites.
    pub mediator_coefficients: [f64; 5],
    pub outcome: OutcomeCoefficients,
    /// When false the outcome law no longer depends on `S`.
    pub site_dependent_outcome: bool,
    pub target: u32,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 5000,
            seed: 1,
            p_l1: 0.5,
            p_l2: 0.5,
            p_x: 0.5,
            site_coefficients: [
                [0.01, 0.45, 0.3, 0.5],
                [0.01, -0.2, 0.2, -1.0],
                [0.01, 0.45, 0.1, 0.0],
                [-0.25, 0.55, -0.25, -1.0],
            ],
            mediator_coefficients: [1.37, -0.5, -0.5, 1.0, -0.5],
            outcome: OutcomeCoefficients::default(),
            site_dependent_outcome: true,
            target: 1,
        }
    }
}

impl DgpConfig {
    pub fn sites(&self) -> impl Iterator<Item = SiteId> {
        (1..=N_SITES as u32).map(SiteId)
    }

    pub fn source_sites(&self) -> Vec<SiteId> {
        self.sites().filter(|s| s.0 != self.target).collect()
    }

    /// `P(S = s | L)` for `s = 1..5`.
    pub fn site_probabilities(&self, l1: f64, l2: f64) -> [f64; N_SITES] {
        let mut w = [1.0; N_SITES];
        for (s, c) in self.site_coefficients.iter().enumerate() {
            w[s + 1] = (c[0] + c[1] * l1 + c[2] * l2 + c[3] * l1 * l2).exp();
        }
        let total: f64 = w.iter().sum();
        w.map(|v| v / total)
    }

    pub fn covariate_probability(&self, l1: f64, l2: f64) -> f64 {
        let p1 = if l1 == 1.0 { self.p_l1 } else { 1.0 - self.p_l1 };
        let p2 = if l2 == 1.0 { self.p_l2 } else { 1.0 - self.p_l2 };
        p1 * p2
    }

    pub fn exposure_probability(&self, x: u8) -> f64 {
        if x == 1 {
            self.p_x
        } else {
            1.0 - self.p_x
        }
    }

    /// `P(M = 1 | X = x, L, S = site)`.
    pub fn mediator_probability(&self, x: f64, l1: f64, l2: f64, _site: SiteId) -> f64 {
        let c = &self.mediator_coefficients;
        expit(c[0] + c[1] * x + c[2] * l1 + c[3] * x * l1 + c[4] * l2)
    }

    /// `P(Y = 1 | X = x, M = m, L, S = site)`.
    pub fn outcome_probability(&self, x: f64, m: f64, l1: f64, l2: f64, site: SiteId) -> f64 {
        let o = &self.outcome;
        let (shift, xm) = if self.site_dependent_outcome {
            (
                f64::from(o.shift_sites.contains(&site.0) as u8),
                f64::from(o.xm_sites.contains(&site.0) as u8),
            )
        } else {
            (0.0, 0.0)
        };
        expit(
            o.intercept
                + o.x * x
                + o.site_shift * shift
                + o.m * m
                + o.xm * x * m * xm
                + o.l1 * l1
                + o.m_l1 * m * l1
                + o.l2 * l2
                + o.x_l1 * x * l1,
        )
    }
}

fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> bool {
    rng.gen::<f64>() < p
}

/// Draws `n` records with a caller-supplied generator; target rows are
/// masked to covariates only.
pub fn dgp_sample_with<R: Rng>(config: &DgpConfig, n: usize, rng: &mut R) -> Dataset {
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let l1 = f64::from(bernoulli(rng, config.p_l1) as u8);
        let l2 = f64::from(bernoulli(rng, config.p_l2) as u8);
        let probs = config.site_probabilities(l1, l2);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut s = N_SITES;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                s = i + 1;
                break;
            }
        }
        let site = SiteId(s as u32);
        let x = f64::from(bernoulli(rng, config.p_x) as u8);
        let m = f64::from(bernoulli(rng, config.mediator_probability(x, l1, l2, site)) as u8);
        let y = f64::from(bernoulli(rng, config.outcome_probability(x, m, l1, l2, site)) as u8);
        let masked = site.0 == config.target;
        rows.push(RawRecord {
            site,
            covariates: vec![l1, l2],
            exposure: (!masked).then_some(x),
            mediator: (!masked).then_some(m),
            outcome: (!masked).then_some(y),
        });
    }
    let names = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    // every site has positive probability, so an empty site only happens
    // for tiny n; the caller sees that as a validation error upstream
    validate_dataset(rows, names, SiteId(config.target)).unwrap_or_else(|e| {
        panic!("simulated data failed validation ({e}); increase n")
    })
}

/// Draws `config.n` records from a generator seeded with `config.seed`.
pub fn dgp_sample(config: &DgpConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    dgp_sample_with(config, config.n, &mut rng)
}
