//! Estimators of `θ(x, j, k, p)` and the transported log relative risk
//! `λ(j, k, p) = log θ(1, j, k, p) − log θ(0, j, k, p)`.
//!
//! `θ(x, j, k, p)` standardizes the site-`k` outcome regression over the
//! site-`p` mediator law and the covariate law of the target `j`. All four
//! estimators are weighted averages over a [`Sample`], so the same code
//! evaluates empirical estimates (weights `1/N`) and exact population
//! expectations (cell probabilities).

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EstimandSpec, Sample, SiteId};
use crate::error::{Error, Result};
use crate::nuisance::Nuisance;

/// Normal quantile for two-sided 95% intervals.
pub const Z_95: f64 = 1.959_963_984_540_054;
/// Bounds applied by the optional theta clamp before taking logs.
pub const THETA_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gcomp,
    Weighting,
    #[serde(rename = "wreg", alias = "weighting_regression")]
    WeightingRegression,
    Onestep,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Gcomp,
        Method::Weighting,
        Method::WeightingRegression,
        Method::Onestep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gcomp => "gcomp",
            Method::Weighting => "weighting",
            Method::WeightingRegression => "wreg",
            Method::Onestep => "onestep",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcomp" => Ok(Method::Gcomp),
            "weighting" => Ok(Method::Weighting),
            "wreg" | "weighting_regression" => Ok(Method::WeightingRegression),
            "onestep" => Ok(Method::Onestep),
            other => Err(Error::InvalidConfig(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    pub value: f64,
    pub x: u8,
    pub target: SiteId,
    pub outcome_site: SiteId,
    pub mediator_site: SiteId,
    pub method: Method,
    /// Plug-in value the one-step correction starts from.
    pub plugin: Option<f64>,
    pub eif_values: Option<Vec<f64>>,
    pub se: Option<f64>,
    pub sample_size: f64,
}

impl ThetaEstimate {
    pub fn outside_unit_interval(&self) -> bool {
        !(0.0..=1.0).contains(&self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub value: f64,
    pub se: Option<f64>,
    pub outcome_site: SiteId,
    pub mediator_site: SiteId,
    /// `θ̂(1)` and `θ̂(0)`; absent for grids built from external values.
    pub theta1: Option<f64>,
    pub theta0: Option<f64>,
    #[serde(skip)]
    pub eif_values: Option<Vec<f64>>,
}

impl LambdaEstimate {
    pub fn ci95(&self) -> Option<(f64, f64)> {
        self.se.map(|se| (self.value - Z_95 * se, self.value + Z_95 * se))
    }
}

fn weighted_sum<S: Sample + ?Sized>(sample: &S, mut f: impl FnMut(usize) -> f64) -> f64 {
    (0..sample.len()).map(|i| sample.weight(i) * f(i)).sum()
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} is not finite (nuisance unavailable?)")))
    }
}

fn require_cell<S: Sample + ?Sized>(sample: &S, x: u8, site: SiteId) -> Result<()> {
    let found = (0..sample.len()).any(|i| {
        let r = sample.record(i);
        r.site == site && r.x() == Some(x) && sample.weight(i) > 0.0
    });
    if found {
        Ok(())
    } else {
        Err(Error::NoExposedRecordsInSite { x, site })
    }
}

struct Cell {
    x: u8,
    j: SiteId,
    k: SiteId,
    p: SiteId,
}

impl Cell {
    fn new(spec: &EstimandSpec, x: u8, k: SiteId, p: SiteId) -> Result<Self> {
        if x > 1 {
            return Err(Error::InvalidEstimand(format!("exposure level {x} is not binary")));
        }
        if !spec.outcome_sources().contains(&k) {
            return Err(Error::InvalidEstimand(format!("{k} is not an outcome source")));
        }
        if !spec.mediator_sources().contains(&p) {
            return Err(Error::InvalidEstimand(format!("{p} is not a mediator source")));
        }
        Ok(Self {
            x,
            j: spec.target(),
            k,
            p,
        })
    }

    fn theta(&self, sample_size: f64, method: Method, value: f64) -> ThetaEstimate {
        ThetaEstimate {
            value,
            x: self.x,
            target: self.j,
            outcome_site: self.k,
            mediator_site: self.p,
            method,
            plugin: None,
            eif_values: None,
            se: None,
            sample_size,
        }
    }
}

/// G-computation: average of `b̂(x, L, k, p)` over target records.
pub fn gcomp_theta<S: Sample + ?Sized>(
    sample: &S,
    spec: &EstimandSpec,
    nuis: &dyn Nuisance,
    x: u8,
    k: SiteId,
    p: SiteId,
) -> Result<ThetaEstimate> {
    let c = Cell::new(spec, x, k, p)?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..sample.len() {
        let r = sample.record(i);
        if r.site == c.j {
            let w = sample.weight(i);
            num += w * nuis.bridged_outcome(i, x, &r.covariates, k, p);
            den += w;
        }
    }
    if den <= 0.0 {
        return Err(Error::NoTargetRecords);
    }
    let value = check_finite(num / den, "g-computation estimate")?;
    Ok(c.theta(sample.sample_size(), Method::Gcomp, value))
}

/// Inverse-weighting estimator built on records with `(X=x, S=k)`.
///
/// The weight `ĝ(x,M,L,p)/ĝ(x,M,L,k) · ê(p,M,L)/ê(k,M,L) · r̂(j,L)/r̂(p,L)`
/// is divided by `t̂(x,L,p)·ĥ(j)`. This is the written identity with
/// `t̂(x,L,k)·ĥ(k)` cancelled between the indicator normalization and the
/// exposure ratio.
pub fn weighting_theta<S: Sample + ?Sized>(
    sample: &S,
    spec: &EstimandSpec,
    nuis: &dyn Nuisance,
    x: u8,
    k: SiteId,
    p: SiteId,
) -> Result<ThetaEstimate> {
    let c = Cell::new(spec, x, k, p)?;
    require_cell(sample, x, k)?;
    let hj = nuis.site_share(c.j);
    let value = weighted_sum(sample, |i| {
        let r = sample.record(i);
        if r.site != k || r.x() != Some(x) {
            return 0.0;
        }
        let (l, m) = (&r.covariates[..], r.m().unwrap_or(0));
        let y = r.y().unwrap_or(0.0);
        y * outcome_residual_weight(nuis, i, x, m, l, c.j, k, p) / hj
    });
    let value = check_finite(value, "weighting estimate")?;
    Ok(c.theta(sample.sample_size(), Method::Weighting, value))
}

/// Weighting-regression estimator built on records with `(X=x, S=p)`.
pub fn weighting_regression_theta<S: Sample + ?Sized>(
    sample: &S,
    spec: &EstimandSpec,
    nuis: &dyn Nuisance,
    x: u8,
    k: SiteId,
    p: SiteId,
) -> Result<ThetaEstimate> {
    let c = Cell::new(spec, x, k, p)?;
    require_cell(sample, x, p)?;
    let hj = nuis.site_share(c.j);
    let value = weighted_sum(sample, |i| {
        let r = sample.record(i);
        if r.site != p || r.x() != Some(x) {
            return 0.0;
        }
        let (l, m) = (&r.covariates[..], r.m().unwrap_or(0));
        nuis.outcome_mean(i, x, m, l, k) * mediator_site_weight(nuis, i, x, l, c.j, p) / hj
    });
    let value = check_finite(value, "weighting-regression estimate")?;
    Ok(c.theta(sample.sample_size(), Method::WeightingRegression, value))
}

/// `g(x,m,l,p)/g(x,m,l,k) · e(p,m,l)/e(k,m,l) · r(j,l)/r(p,l) / t(x,l,p)`
#[allow(clippy::too_many_arguments)]
#[inline]
fn outcome_residual_weight(
    nuis: &dyn Nuisance,
    i: usize,
    x: u8,
    m: u8,
    l: &[f64],
    j: SiteId,
    k: SiteId,
    p: SiteId,
) -> f64 {
    let g_ratio = nuis.exposure_given_mediator(i, x, m, l, p) / nuis.exposure_given_mediator(i, x, m, l, k);
    let e_ratio = nuis.site_given_mediator(i, p, m, l) / nuis.site_given_mediator(i, k, m, l);
    g_ratio * e_ratio * mediator_site_weight(nuis, i, x, l, j, p)
}

/// `r(j,l)/r(p,l) / t(x,l,p)`
#[inline]
fn mediator_site_weight(nuis: &dyn Nuisance, i: usize, x: u8, l: &[f64], j: SiteId, p: SiteId) -> f64 {
    nuis.site_given_covariates(i, j, l) / nuis.site_given_covariates(i, p, l) / nuis.exposure_propensity(i, x, l, p)
}

/// Per-record efficient influence function of `θ(x, j, k, p)` at `theta`.
///
/// Three terms: the outcome residual on `(X=x, S=k)` records, the bridge
/// residual `â − b̂` on `(X=x, S=p)` records, and the centred bridge
/// `b̂ − θ` on target records. Records from other sites contribute zero.
pub fn eif_evaluate<S: Sample + ?Sized>(
    sample: &S,
    spec: &EstimandSpec,
    nuis: &dyn Nuisance,
    x: u8,
    k: SiteId,
    p: SiteId,
    theta: f64,
) -> Result<Vec<f64>> {
    let c = Cell::new(spec, x, k, p)?;
    let hj = nuis.site_share(c.j);
    if hj <= 0.0 {
        return Err(Error::NoTargetRecords);
    }
    let values: Vec<f64> = (0..sample.len())
        .map(|i| {
            let r = sample.record(i);
            let l = &r.covariates[..];
            if r.site == c.j {
                return (nuis.bridged_outcome(i, x, l, k, p) - theta) / hj;
            }
            if r.x() != Some(x) {
                return 0.0;
            }
            let m = r.m().unwrap_or(0);
            let mut v = 0.0;
            if r.site == k {
                let a = nuis.outcome_mean(i, x, m, l, k);
                let y = r.y().unwrap_or(0.0);
                v += outcome_residual_weight(nuis, i, x, m, l, c.j, k, p) / hj * (y - a);
            }
            if r.site == p {
                let a = nuis.outcome_mean(i, x, m, l, k);
                let b = nuis.bridged_outcome(i, x, l, k, p);
                v += mediator_site_weight(nuis, i, x, l, c.j, p) / hj * (a - b);
            }
            v
        })
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite influence function value".into()));
    }
    Ok(values)
}

/// Mean and `1/n` variance of a vector.
pub(crate) fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// One-step estimator: g-computation plug-in plus the weighted mean of
/// the influence function evaluated at that plug-in.
pub fn onestep_theta<S: Sample + ?Sized>(
    sample: &S,
    spec: &EstimandSpec,
    nuis: &dyn Nuisance,
    x: u8,
    k: SiteId,
    p: SiteId,
) -> Result<ThetaEstimate> {
    let plugin = gcomp_theta(sample, spec, nuis, x, k, p)?;
    let eif = eif_evaluate(sample, spec, nuis, x, k, p, plugin.value)?;
    let correction = weighted_sum(sample, |i| eif[i]);
    let (_, var) = mean_var(&eif);
    let n = sample.sample_size();
    Ok(ThetaEstimate {
        value: plugin.value + correction,
        method: Method::Onestep,
        plugin: Some(plugin.value),
        se: Some((var / n).sqrt()),
        eif_values: Some(eif),
        ..plugin
    })
}

pub fn estimate_theta<S: Sample + ?Sized>(
    sample: &S,
    spec: &EstimandSpec,
    nuis: &dyn Nuisance,
    method: Method,
    x: u8,
    k: SiteId,
    p: SiteId,
) -> Result<ThetaEstimate> {
    match method {
        Method::Gcomp => gcomp_theta(sample, spec, nuis, x, k, p),
        Method::Weighting => weighting_theta(sample, spec, nuis, x, k, p),
        Method::WeightingRegression => weighting_regression_theta(sample, spec, nuis, x, k, p),
        Method::Onestep => onestep_theta(sample, spec, nuis, x, k, p),
    }
}

/// Log relative risk with a delta-method influence function
/// `IF₁/θ₁ − IF₀/θ₀`.
pub fn log_rr(theta1: &ThetaEstimate, theta0: &ThetaEstimate, clamp: bool) -> Result<LambdaEstimate> {
    if theta1.x != 1 || theta0.x != 0 {
        return Err(Error::InvalidEstimand("log_rr expects the x=1 and x=0 estimates".into()));
    }
    if (theta1.target, theta1.outcome_site, theta1.mediator_site, theta1.method)
        != (theta0.target, theta0.outcome_site, theta0.mediator_site, theta0.method)
    {
        return Err(Error::InvalidEstimand("log_rr arguments refer to different estimands".into()));
    }
    let prepare = |t: &ThetaEstimate| {
        let v = if clamp {
            t.value.clamp(THETA_CLAMP, 1.0 - THETA_CLAMP)
        } else {
            t.value
        };
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonPositiveTheta { x: t.x, value: t.value })
        }
    };
    let (v1, v0) = (prepare(theta1)?, prepare(theta0)?);
    let eif_values = match (&theta1.eif_values, &theta0.eif_values) {
        (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(a, b)| a / v1 - b / v0).collect::<Vec<_>>()),
        _ => None,
    };
    let se = eif_values.as_ref().map(|e| (mean_var(e).1 / theta1.sample_size).sqrt());
    Ok(LambdaEstimate {
        value: v1.ln() - v0.ln(),
        se,
        outcome_site: theta1.outcome_site,
        mediator_site: theta1.mediator_site,
        theta1: Some(theta1.value),
        theta0: Some(theta0.value),
        eif_values,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Clamp θ̂ into `[1e-6, 1 − 1e-6]` before the log.
    pub clamp_theta: bool,
}

/// One `(k, p)` cell: an estimate, or the reason it could not be formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub outcome_site: SiteId,
    pub mediator_site: SiteId,
    pub estimate: Option<LambdaEstimate>,
    pub absent_reason: Option<String>,
}

/// `|𝒮₃| × |𝒮₂|` matrix of `λ̂(j, k, p)`; rows are outcome sites `k`,
/// columns mediator sites `p`. `covariance` is indexed row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportGrid {
    pub target: SiteId,
    pub method: Method,
    pub outcome_sites: Vec<SiteId>,
    pub mediator_sites: Vec<SiteId>,
    pub cells: Vec<GridCell>,
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Per-site record counts, kept so size weights can be formed later.
    #[serde(default)]
    pub site_counts: Vec<(SiteId, usize)>,
}

impl TransportGrid {
    pub fn rows(&self) -> usize {
        self.outcome_sites.len()
    }

    pub fn cols(&self) -> usize {
        self.mediator_sites.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> &GridCell {
        &self.cells[row * self.cols() + col]
    }

    pub fn absent_count(&self) -> usize {
        self.cells.iter().filter(|c| c.estimate.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.absent_count() == 0
    }

    /// Point estimates as a `rows × cols` matrix.
    pub fn values(&self) -> Result<Vec<Vec<f64>>> {
        if !self.is_complete() {
            return Err(Error::IncompleteGrid(self.absent_count()));
        }
        Ok((0..self.rows())
            .map(|r| (0..self.cols()).map(|c| self.cell(r, c).estimate.as_ref().unwrap().value).collect())
            .collect())
    }

    /// Builds a complete grid from raw values, e.g. for tests or for
    /// externally computed estimates.
    pub fn from_values(
        target: SiteId,
        outcome_sites: Vec<SiteId>,
        mediator_sites: Vec<SiteId>,
        values: &[Vec<f64>],
        covariance: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let (rows, cols) = (outcome_sites.len(), mediator_sites.len());
        if values.len() != rows || values.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidConfig("grid values do not match site lists".into()));
        }
        if let Some(c) = &covariance {
            if c.len() != rows * cols || c.iter().any(|r| r.len() != rows * cols) {
                return Err(Error::InvalidConfig("covariance has the wrong shape".into()));
            }
        }
        let mut cells = Vec::with_capacity(rows * cols);
        for (r, &k) in outcome_sites.iter().enumerate() {
            for (c, &p) in mediator_sites.iter().enumerate() {
                let se = covariance.as_ref().map(|cov| cov[r * cols + c][r * cols + c].max(0.0).sqrt());
                cells.push(GridCell {
                    outcome_site: k,
                    mediator_site: p,
                    estimate: Some(LambdaEstimate {
                        value: values[r][c],
                        se,
                        outcome_site: k,
                        mediator_site: p,
                        theta1: None,
                        theta0: None,
                        eif_values: None,
                    }),
                    absent_reason: None,
                });
            }
        }
        Ok(Self {
            target,
            method: Method::Onestep,
            outcome_sites,
            mediator_sites,
            cells,
            covariance,
            site_counts: Vec::new(),
        })
    }

    /// Covariance as a matrix, or a diagonal built from standard errors
    /// when no joint covariance is available.
    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        let d = self.cells.len();
        if let Some(c) = &self.covariance {
            return Some(DMatrix::from_fn(d, d, |a, b| c[a][b]));
        }
        let ses: Option<Vec<f64>> = self
            .cells
            .iter()
            .map(|c| c.estimate.as_ref().and_then(|e| e.se))
            .collect();
        ses.map(|s| DMatrix::from_fn(d, d, |a, b| if a == b { s[a] * s[a] } else { 0.0 }))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Delimited table, one row per `(outcome site, mediator site)` pair.
    pub fn write_table<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["outcome_site", "mediator_site", "lambda", "se", "ci_lower", "ci_upper", "status"])?;
        for c in &self.cells {
            let mut row = vec![c.outcome_site.to_string(), c.mediator_site.to_string()];
            match &c.estimate {
                Some(e) => {
                    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
                    let ci = e.ci95();
                    row.extend([
                        e.value.to_string(),
                        fmt(e.se),
                        fmt(ci.map(|c| c.0)),
                        fmt(ci.map(|c| c.1)),
                        "ok".to_string(),
                    ]);
                }
                None => {
                    row.extend(["NA", "NA", "NA", "NA"].map(String::from));
                    row.push(c.absent_reason.clone().unwrap_or_default());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fills the `(k, p)` grid with `method`. Cells that fail keep their
/// error message; the covariance is formed (one-step only) when every
/// cell carries an influence function.
pub fn transport_grid<S: Sample + ?Sized>(
    sample: &S,
    spec: &EstimandSpec,
    nuis: &dyn Nuisance,
    method: Method,
    options: &GridOptions,
) -> TransportGrid {
    let outcome_sites: Vec<SiteId> = spec.outcome_sources().iter().copied().collect();
    let mediator_sites: Vec<SiteId> = spec.mediator_sources().iter().copied().collect();
    let pairs: Vec<(SiteId, SiteId)> = outcome_sites
        .iter()
        .flat_map(|&k| mediator_sites.iter().map(move |&p| (k, p)))
        .collect();
    let cells: Vec<GridCell> = pairs
        .par_iter()
        .map(|&(k, p)| {
            let res = estimate_theta(sample, spec, nuis, method, 1, k, p).and_then(|t1| {
                let t0 = estimate_theta(sample, spec, nuis, method, 0, k, p)?;
                log_rr(&t1, &t0, options.clamp_theta)
            });
            match res {
                Ok(e) => GridCell {
                    outcome_site: k,
                    mediator_site: p,
                    estimate: Some(e),
                    absent_reason: None,
                },
                Err(err) => GridCell {
                    outcome_site: k,
                    mediator_site: p,
                    estimate: None,
                    absent_reason: Some(err.to_string()),
                },
            }
        })
        .collect();

    let covariance = if method == Method::Onestep {
        let eifs: Option<Vec<&Vec<f64>>> = cells
            .iter()
            .map(|c| c.estimate.as_ref().and_then(|e| e.eif_values.as_ref()))
            .collect();
        eifs.map(|e| eif_covariance(&e, sample.sample_size()))
    } else {
        None
    };

    TransportGrid {
        target: spec.target(),
        method,
        outcome_sites,
        mediator_sites,
        cells,
        covariance,
        site_counts: Vec::new(),
    }
}

/// `cov[a][b] = (1/n)Σ(eᵃ − ēᵃ)(eᵇ − ēᵇ) / N`
pub fn eif_covariance(eifs: &[&Vec<f64>], sample_size: f64) -> Vec<Vec<f64>> {
    let d = eifs.len();
    let centred: Vec<Vec<f64>> = eifs
        .iter()
        .map(|e| {
            let (m, _) = mean_var(e);
            e.iter().map(|v| v - m).collect()
        })
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in a..d {
            let n = centred[a].len() as f64;
            let s = centred[a].iter().zip(&centred[b]).map(|(u, v)| u * v).sum::<f64>() / n / sample_size;
            cov[a][b] = s;
            cov[b][a] = s;
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_dataset, Dataset, RawRecord};

    /// Nuisance with constant outputs, for algebraic checks.
    struct Constant {
        a: f64,
        b: f64,
        t: f64,
        shares: Vec<(SiteId, f64)>,
    }

    impl Nuisance for Constant {
        fn outcome_mean(&self, _: usize, _: u8, _: u8, _: &[f64], _: SiteId) -> f64 {
            self.a
        }
        fn bridged_outcome(&self, _: usize, _: u8, _: &[f64], _: SiteId, _: SiteId) -> f64 {
            self.b
        }
        fn exposure_given_mediator(&self, _: usize, _: u8, _: u8, _: &[f64], _: SiteId) -> f64 {
            0.5
        }
        fn site_given_mediator(&self, _: usize, _: SiteId, _: u8, _: &[f64]) -> f64 {
            0.5
        }
        fn site_given_covariates(&self, _: usize, _: SiteId, _: &[f64]) -> f64 {
            0.3
        }
        fn exposure_propensity(&self, _: usize, _: u8, _: &[f64], _: SiteId) -> f64 {
            self.t
        }
        fn site_share(&self, s: SiteId) -> f64 {
            self.shares.iter().find(|(t, _)| *t == s).map_or(0.0, |(_, h)| *h)
        }
    }

    fn small() -> Dataset {
        // target 0 (2 rows), site 1 (4 rows)
        let mut rows = vec![
            RawRecord { site: SiteId(0), covariates: vec![0.0], exposure: None, mediator: None, outcome: None },
            RawRecord { site: SiteId(0), covariates: vec![1.0], exposure: None, mediator: None, outcome: None },
        ];
        for (x, m, y) in [(1.0, 1.0, 1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 1.0), (0.0, 0.0, 1.0)] {
            rows.push(RawRecord {
                site: SiteId(1),
                covariates: vec![0.5],
                exposure: Some(x),
                mediator: Some(m),
                outcome: Some(y),
            });
        }
        validate_dataset(rows, vec!["l".into()], SiteId(0)).unwrap()
    }

    fn spec() -> EstimandSpec {
        EstimandSpec::new(SiteId(0), [SiteId(1)], [SiteId(1)]).unwrap()
    }

    fn shares(ds: &Dataset) -> Vec<(SiteId, f64)> {
        ds.site_counts().iter().map(|(s, c)| (*s, *c as f64 / ds.n() as f64)).collect()
    }

    #[test]
    fn gcomp_of_constant_bridge() {
        let ds = small();
        let nuis = Constant { a: 0.4, b: 0.37, t: 0.5, shares: shares(&ds) };
        let t = gcomp_theta(&ds, &spec(), &nuis, 1, SiteId(1), SiteId(1)).unwrap();
        assert!((t.value - 0.37).abs() < 1e-15);
    }

    #[test]
    fn weighting_with_unit_ratios() {
        // g, e, r ratios are one; weight reduces to I(x,k)·Y / (t·h(j)).
        let ds = small();
        let nuis = Constant { a: 0.4, b: 0.4, t: 0.5, shares: shares(&ds) };
        let t = weighting_theta(&ds, &spec(), &nuis, 1, SiteId(1), SiteId(1)).unwrap();
        let hj = 2.0 / 6.0;
        let expected = (1.0 / 6.0) * 1.0 / (0.5 * hj);
        assert!((t.value - expected).abs() < 1e-12);
    }

    #[test]
    fn weighting_regression_of_constant_outcome() {
        let ds = small();
        let nuis = Constant { a: 0.25, b: 0.4, t: 0.5, shares: shares(&ds) };
        let t = weighting_regression_theta(&ds, &spec(), &nuis, 0, SiteId(1), SiteId(1)).unwrap();
        let empirical = (2.0 / 6.0) / (0.5 * (2.0 / 6.0));
        assert!((t.value - 0.25 * empirical).abs() < 1e-12);
    }

    #[test]
    fn eif_vanishes_when_residuals_vanish() {
        let rows = vec![
            RawRecord { site: SiteId(0), covariates: vec![0.0], exposure: None, mediator: None, outcome: None },
            RawRecord { site: SiteId(1), covariates: vec![0.0], exposure: Some(1.0), mediator: Some(1.0), outcome: Some(1.0) },
            RawRecord { site: SiteId(2), covariates: vec![0.0], exposure: Some(1.0), mediator: Some(0.0), outcome: Some(1.0) },
        ];
        let ds = validate_dataset(rows, vec!["l".into()], SiteId(0)).unwrap();
        let spec = EstimandSpec::new(SiteId(0), [SiteId(1)], [SiteId(1)]).unwrap();
        let nuis = Constant { a: 1.0, b: 1.0, t: 0.5, shares: shares(&ds) };
        let eif = eif_evaluate(&ds, &spec, &nuis, 1, SiteId(1), SiteId(1), 1.0).unwrap();
        assert!(eif.iter().all(|v| *v == 0.0));
        // site 2 is neither target, k nor p
        let nuis = Constant { a: 0.3, b: 0.6, t: 0.5, shares: shares(&ds) };
        let eif = eif_evaluate(&ds, &spec, &nuis, 1, SiteId(1), SiteId(1), 0.2).unwrap();
        assert_eq!(eif[2], 0.0);
    }

    fn theta(x: u8, value: f64, eif: Option<Vec<f64>>) -> ThetaEstimate {
        ThetaEstimate {
            value,
            x,
            target: SiteId(0),
            outcome_site: SiteId(1),
            mediator_site: SiteId(2),
            method: Method::Onestep,
            plugin: None,
            eif_values: eif,
            se: None,
            sample_size: 4.0,
        }
    }

    #[test]
    fn log_rr_examples() {
        let l = log_rr(&theta(1, 0.3, None), &theta(0, 0.3, None), false).unwrap();
        assert_eq!(l.value, 0.0);
        let l = log_rr(&theta(1, 0.4, Some(vec![0.0; 4])), &theta(0, 0.2, Some(vec![0.0; 4])), false).unwrap();
        assert!((l.value - 2f64.ln()).abs() < 1e-15);
        assert_eq!(l.se, Some(0.0));
        let l = log_rr(&theta(1, 0.4, Some(vec![0.4, -0.4, 0.4, -0.4])), &theta(0, 0.2, Some(vec![0.0; 4])), false)
            .unwrap();
        // eif = ±1, var = 1, se = sqrt(1/4)
        assert!((l.se.unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            log_rr(&theta(1, -0.01, None), &theta(0, 0.2, None), false),
            Err(Error::NonPositiveTheta { x: 1, .. })
        ));
        assert!(log_rr(&theta(1, -0.01, None), &theta(0, 0.2, None), true).is_ok());
        assert!(log_rr(&theta(0, 0.2, None), &theta(1, 0.2, None), false).is_err());
    }

    #[test]
    fn single_cell_grid_covariance_is_se_squared() {
        let ds = small();
        let nuis = Constant { a: 0.4, b: 0.35, t: 0.5, shares: shares(&ds) };
        let grid = transport_grid(&ds, &spec(), &nuis, Method::Onestep, &GridOptions::default());
        assert_eq!((grid.rows(), grid.cols()), (1, 1));
        let cov = grid.covariance.as_ref().unwrap();
        let se = grid.cells[0].estimate.as_ref().unwrap().se.unwrap();
        assert!((cov[0][0] - se * se).abs() < 1e-15);
    }

    #[test]
    fn failed_cells_are_recorded() {
        let ds = small();
        let nuis = Constant { a: 0.4, b: 0.0, t: 0.5, shares: shares(&ds) };
        let grid = transport_grid(&ds, &spec(), &nuis, Method::Gcomp, &GridOptions::default());
        assert_eq!(grid.absent_count(), 1);
        assert!(grid.cells[0].absent_reason.as_ref().unwrap().contains("non-positive"));
        assert_eq!(grid.values(), Err(Error::IncompleteGrid(1)));
    }

    #[test]
    fn grid_json_round_trip() {
        let g = TransportGrid::from_values(
            SiteId(1),
            vec![SiteId(2), SiteId(3)],
            vec![SiteId(4)],
            &[vec![0.1], vec![-0.2]],
            Some(vec![vec![0.01, 0.002], vec![0.002, 0.02]]),
        )
        .unwrap();
        let g2 = TransportGrid::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(g2, g);
        let mut buf = Vec::new();
        g.write_table(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().count() == 3);
    }
}
