//! Nuisance functions `η = (a, b, g, e, r, t, h)` and their estimation.
//!
//! | symbol | quantity                          | method                     |
//! |--------|-----------------------------------|----------------------------|
//! | a      | `E(Y | x, m, l, S=k)`              | [`Nuisance::outcome_mean`] |
//! | b      | `E{a(x,M,L,k) | x, l, S=p}`        | [`Nuisance::bridged_outcome`] |
//! | g      | `P(X=x | m, l, S=p)`              | [`Nuisance::exposure_given_mediator`] |
//! | e      | `P(S=p | m, l)`                   | [`Nuisance::site_given_mediator`] |
//! | r      | `P(S=p | l)`                      | [`Nuisance::site_given_covariates`] |
//! | t      | `P(X=x | l, S=p)`                 | [`Nuisance::exposure_propensity`] |
//! | h      | `P(S=p)`                          | [`Nuisance::site_share`] |
//!
//! Every method takes the index of the record being evaluated so that a
//! cross-fitted set can route the prediction to the models trained
//! without that record's fold.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, EstimandSpec, SiteId};
use crate::error::{Error, Result};
use crate::learners::{fit_binary_regressor, FeatureMatrix, FittedModel, LearnerSpec};

pub const DEFAULT_TRUNCATION: f64 = 0.01;
pub const DEFAULT_CROSSFIT_FOLDS: usize = 5;

/// Evaluation interface shared by fitted, oracle and deliberately
/// mis-specified nuisance sets.
pub trait Nuisance: Sync {
    fn outcome_mean(&self, i: usize, x: u8, m: u8, l: &[f64], k: SiteId) -> f64;
    /// Outcome regression for site `k` averaged over the mediator law of
    /// site `p`.
    fn bridged_outcome(&self, i: usize, x: u8, l: &[f64], k: SiteId, p: SiteId) -> f64;
    fn exposure_given_mediator(&self, i: usize, x: u8, m: u8, l: &[f64], p: SiteId) -> f64;
    fn site_given_mediator(&self, i: usize, s: SiteId, m: u8, l: &[f64]) -> f64;
    fn site_given_covariates(&self, i: usize, s: SiteId, l: &[f64]) -> f64;
    fn exposure_propensity(&self, i: usize, x: u8, l: &[f64], p: SiteId) -> f64;
    fn site_share(&self, s: SiteId) -> f64;
}

/// Partition of record indices into `Q` folds (labels `0..Q`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    q: usize,
}

impl FoldAssignment {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.q];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    /// `(training, validation)` indices for fold `q`.
    pub fn split(&self, q: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold_of.len()).partition(|&i| self.fold_of[i] != q)
    }
}

/// Deterministic random partition of `0..n` into `q` folds whose sizes
/// differ by at most one.
pub fn make_folds(n: usize, q: usize, seed: u64) -> Result<FoldAssignment> {
    if q < 2 || q > n {
        return Err(Error::InvalidFoldCount { n, q });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % q;
    }
    Ok(FoldAssignment { fold_of, q })
}

#[inline]
fn pick(p1: f64, x: u8) -> f64 {
    if x == 1 {
        p1
    } else {
        1.0 - p1
    }
}

fn with_prefix(prefix: &[f64], l: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(prefix.len() + l.len());
    v.extend_from_slice(prefix);
    v.extend_from_slice(l);
    v
}

/// Models trained on one training split.
#[derive(Debug, Clone)]
struct FoldModels {
    outcome: BTreeMap<SiteId, FittedModel>,
    bridge: BTreeMap<(SiteId, SiteId, u8), FittedModel>,
    exposure_mediator: BTreeMap<SiteId, FittedModel>,
    exposure: BTreeMap<SiteId, FittedModel>,
    site_covariates: BTreeMap<SiteId, FittedModel>,
    site_mediator: BTreeMap<SiteId, FittedModel>,
}

/// Fitted nuisance set, optionally cross-fitted.
#[derive(Debug, Clone)]
pub struct NuisanceSet {
    folds: Vec<FoldModels>,
    fold_of: Option<Vec<usize>>,
    site_share: BTreeMap<SiteId, f64>,
    truncation: f64,
}

impl NuisanceSet {
    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    /// Returns a copy clipping `g, e, r, t` to `[δ, 1-δ]` at prediction time.
    pub fn with_truncation(mut self, delta: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&delta) {
            return Err(Error::InvalidConfig(format!("truncation {delta} outside [0, 0.5)")));
        }
        self.truncation = delta;
        Ok(self)
    }

    pub fn is_cross_fitted(&self) -> bool {
        self.fold_of.is_some()
    }

    #[inline]
    fn models(&self, i: usize) -> &FoldModels {
        match &self.fold_of {
            Some(f) => &self.folds[f[i]],
            None => &self.folds[0],
        }
    }

    #[inline]
    fn clip(&self, p: f64, truncate: bool) -> f64 {
        if truncate {
            p.clamp(self.truncation, 1.0 - self.truncation)
        } else {
            p
        }
    }

    /// Renormalized `P(S=s | l)` over all sites, before truncation.
    pub fn covariate_site_distribution(&self, i: usize, l: &[f64]) -> Vec<(SiteId, f64)> {
        normalize(
            self.models(i)
                .site_covariates
                .iter()
                .map(|(s, m)| (*s, m.predict(l)))
                .collect(),
        )
    }

    /// Renormalized `P(S=s | m, l)` over source sites, before truncation.
    pub fn mediator_site_distribution(&self, i: usize, m: u8, l: &[f64]) -> Vec<(SiteId, f64)> {
        let f = with_prefix(&[m as f64], l);
        normalize(
            self.models(i)
                .site_mediator
                .iter()
                .map(|(s, model)| (*s, model.predict(&f)))
                .collect(),
        )
    }

    pub(crate) fn raw_site_given_covariates(&self, i: usize, s: SiteId, l: &[f64]) -> f64 {
        lookup(&self.covariate_site_distribution(i, l), s)
    }

    pub(crate) fn raw_site_given_mediator(&self, i: usize, s: SiteId, m: u8, l: &[f64]) -> f64 {
        lookup(&self.mediator_site_distribution(i, m, l), s)
    }

    pub(crate) fn raw_exposure_propensity(&self, i: usize, x: u8, l: &[f64], p: SiteId) -> f64 {
        self.models(i)
            .exposure
            .get(&p)
            .map_or(f64::NAN, |m| pick(m.predict(l), x))
    }

    pub(crate) fn raw_exposure_given_mediator(&self, i: usize, x: u8, m: u8, l: &[f64], p: SiteId) -> f64 {
        self.models(i)
            .exposure_mediator
            .get(&p)
            .map_or(f64::NAN, |model| pick(model.predict(&with_prefix(&[m as f64], l)), x))
    }

    /// Number of logistic fits that needed the ridge fallback.
    pub fn stabilized_fits(&self) -> usize {
        self.folds
            .iter()
            .map(|f| {
                f.outcome
                    .values()
                    .chain(f.bridge.values())
                    .chain(f.exposure_mediator.values())
                    .chain(f.exposure.values())
                    .chain(f.site_covariates.values())
                    .chain(f.site_mediator.values())
                    .filter(|m| m.is_stabilized())
                    .count()
            })
            .sum()
    }
}

fn normalize(mut v: Vec<(SiteId, f64)>) -> Vec<(SiteId, f64)> {
    let total: f64 = v.iter().map(|(_, p)| p).sum();
    if total > 0.0 {
        for (_, p) in &mut v {
            *p /= total;
        }
    }
    v
}

fn lookup(v: &[(SiteId, f64)], s: SiteId) -> f64 {
    v.iter().find(|(t, _)| *t == s).map_or(0.0, |(_, p)| *p)
}

impl Nuisance for NuisanceSet {
    fn outcome_mean(&self, i: usize, x: u8, m: u8, l: &[f64], k: SiteId) -> f64 {
        self.models(i)
            .outcome
            .get(&k)
            .map_or(f64::NAN, |model| model.predict(&with_prefix(&[x as f64, m as f64], l)))
    }

    fn bridged_outcome(&self, i: usize, x: u8, l: &[f64], k: SiteId, p: SiteId) -> f64 {
        self.models(i)
            .bridge
            .get(&(k, p, x))
            .map_or(f64::NAN, |model| model.predict(l))
    }

    fn exposure_given_mediator(&self, i: usize, x: u8, m: u8, l: &[f64], p: SiteId) -> f64 {
        self.clip(self.raw_exposure_given_mediator(i, x, m, l, p), true)
    }

    fn site_given_mediator(&self, i: usize, s: SiteId, m: u8, l: &[f64]) -> f64 {
        self.clip(self.raw_site_given_mediator(i, s, m, l), true)
    }

    fn site_given_covariates(&self, i: usize, s: SiteId, l: &[f64]) -> f64 {
        self.clip(self.raw_site_given_covariates(i, s, l), true)
    }

    fn exposure_propensity(&self, i: usize, x: u8, l: &[f64], p: SiteId) -> f64 {
        self.clip(self.raw_exposure_propensity(i, x, l, p), true)
    }

    fn site_share(&self, s: SiteId) -> f64 {
        self.site_share.get(&s).copied().unwrap_or(0.0)
    }
}

/// Fits every nuisance needed for the `(k, p)` grid of `spec`.
///
/// Outcome, bridge and exposure models are fitted separately per site,
/// which equals a pooled fit with full site-indicator interactions. The
/// site-membership models are one-vs-rest logistic fits renormalized to
/// sum to one; `e` is fitted on source records only (the mediator is not
/// observed in the target), which leaves every ratio `e(p,·)/e(k,·)` the
/// estimators use unchanged.
///
/// With `folds`, the models for fold `q` see only records outside `q`,
/// and every prediction for a record in `q` uses them.
pub fn fit_nuisance_set(
    ds: &Dataset,
    spec: &EstimandSpec,
    learner: &LearnerSpec,
    folds: Option<&FoldAssignment>,
) -> Result<NuisanceSet> {
    learner.validate()?;
    spec.check_against(ds)?;
    let n = ds.n();
    let site_share = ds
        .site_counts()
        .iter()
        .map(|(s, c)| (*s, *c as f64 / n as f64))
        .collect();

    let (fits, fold_of) = match folds {
        None => {
            let all: Vec<usize> = (0..n).collect();
            (vec![fit_fold(ds, spec, learner, &all)?], None)
        }
        Some(f) => {
            if f.len() != n {
                return Err(Error::InvalidFoldCount { n, q: f.q() });
            }
            let fits = (0..f.q())
                .into_par_iter()
                .map(|q| fit_fold(ds, spec, learner, &f.split(q).0))
                .collect::<Result<Vec<_>>>()?;
            (fits, Some(f.fold_of.clone()))
        }
    };
    Ok(NuisanceSet {
        folds: fits,
        fold_of,
        site_share,
        truncation: DEFAULT_TRUNCATION,
    })
}

fn fit_fold(ds: &Dataset, spec: &EstimandSpec, learner: &LearnerSpec, train: &[usize]) -> Result<FoldModels> {
    let recs = ds.records();
    let d = ds.n_covariates();
    let sources = spec.all_sources();

    // a: per outcome site, Y on (x, m, l)
    let mut outcome = BTreeMap::new();
    for &k in spec.outcome_sources() {
        let mut xs = FeatureMatrix::new(2 + d);
        let mut ys = Vec::new();
        for &i in train.iter().filter(|&&i| recs[i].site == k) {
            let r = &recs[i];
            xs.push_row(&with_prefix(&[r.x().unwrap() as f64, r.m().unwrap() as f64], &r.covariates));
            ys.push(r.y().unwrap());
        }
        if ys.is_empty() {
            return Err(Error::SiteAbsent(k));
        }
        outcome.insert(k, fit_binary_regressor(&xs, &ys, learner)?);
    }

    // b: per (k, p, x), a-hat(x, M, L, k) on l among S=p, X=x
    let mut bridge = BTreeMap::new();
    for (&k, a_model) in &outcome {
        for &p in spec.mediator_sources() {
            for x in [0u8, 1] {
                let mut xs = FeatureMatrix::new(d);
                let mut ys = Vec::new();
                for &i in train.iter().filter(|&&i| recs[i].site == p && recs[i].x() == Some(x)) {
                    let r = &recs[i];
                    xs.push_row(&r.covariates);
                    ys.push(a_model.predict(&with_prefix(&[x as f64, r.m().unwrap() as f64], &r.covariates)));
                }
                if !ys.is_empty() {
                    bridge.insert((k, p, x), fit_binary_regressor(&xs, &ys, learner)?);
                }
            }
        }
    }

    // g and t: per source site
    let mut exposure_mediator = BTreeMap::new();
    let mut exposure = BTreeMap::new();
    for &p in &sources {
        let mut xm = FeatureMatrix::new(1 + d);
        let mut xl = FeatureMatrix::new(d);
        let mut labels = Vec::new();
        for &i in train.iter().filter(|&&i| recs[i].site == p) {
            let r = &recs[i];
            xm.push_row(&with_prefix(&[r.m().unwrap() as f64], &r.covariates));
            xl.push_row(&r.covariates);
            labels.push(r.x().unwrap() as f64);
        }
        if labels.is_empty() {
            return Err(Error::SiteAbsent(p));
        }
        exposure_mediator.insert(p, fit_binary_regressor(&xm, &labels, learner)?);
        exposure.insert(p, fit_binary_regressor(&xl, &labels, learner)?);
    }

    // r: one-vs-rest over every site on l
    let mut xl = FeatureMatrix::new(d);
    for &i in train {
        xl.push_row(&recs[i].covariates);
    }
    let all_sites: BTreeSet<SiteId> = ds.sites().collect();
    let site_covariates = all_sites
        .iter()
        .map(|&s| {
            let labels: Vec<f64> = train.iter().map(|&i| f64::from(u8::from(recs[i].site == s))).collect();
            fit_binary_regressor(&xl, &labels, learner).map(|m| (s, m))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    // e: one-vs-rest over source sites on (m, l)
    let src_rows: Vec<usize> = train.iter().copied().filter(|&i| recs[i].mediator.is_some()).collect();
    let mut xml = FeatureMatrix::new(1 + d);
    for &i in &src_rows {
        xml.push_row(&with_prefix(&[recs[i].m().unwrap() as f64], &recs[i].covariates));
    }
    let site_mediator = ds
        .source_sites()
        .into_iter()
        .map(|s| {
            let labels: Vec<f64> = src_rows.iter().map(|&i| f64::from(u8::from(recs[i].site == s))).collect();
            fit_binary_regressor(&xml, &labels, learner).map(|m| (s, m))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    Ok(FoldModels {
        outcome,
        bridge,
        exposure_mediator,
        exposure,
        site_covariates,
        site_mediator,
    })
}
