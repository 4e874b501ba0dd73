//! Replication harness: sample, fit, estimate the grid, score it against
//! the oracle, and summarise heterogeneity, for each sample size.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{dgp_sample_with, DgpConfig};
use super::oracle::oracle_lambda_grid;
use crate::data::{Dataset, EstimandSpec, SiteId};
use crate::error::{Error, Result};
use crate::estimators::{transport_grid, GridOptions, Method, TransportGrid};
use crate::heterogeneity::{np_decompose, quantile_sorted, re_model_fit, McmcConfig};
use crate::learners::LearnerSpec;
use crate::nuisance::{fit_nuisance_set, make_folds, DEFAULT_TRUNCATION};

pub type McmcSettings = McmcConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub method: Method,
    pub learner: LearnerSpec,
    pub truncation: f64,
    /// Number of cross-fitting folds; `None` fits on the full sample.
    pub crossfit: Option<usize>,
    /// Fit the random-effects model in every replication.
    pub re_model: Option<McmcConfig>,
    pub clamp_theta: bool,
    pub dgp: DgpConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1000, 5000, 10000],
            replications: 500,
            seed: 20240101,
            method: Method::Onestep,
            learner: LearnerSpec::default(),
            truncation: DEFAULT_TRUNCATION,
            crossfit: None,
            re_model: Some(McmcConfig::default()),
            clamp_theta: false,
            dgp: DgpConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig("sizes must be non-empty and positive".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be positive".into()));
        }
        self.learner.validate()?;
        if let Some(m) = &self.re_model {
            m.validate()?;
        }
        Ok(())
    }

    fn spec(&self) -> Result<EstimandSpec> {
        let sources = self.dgp.source_sites();
        EstimandSpec::new(SiteId(self.dgp.target), sources.clone(), sources)
    }
}

/// Generator for replication `rep` at size index `size_idx`.
pub fn replication_rng(master: u64, size_idx: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((size_idx as u64) << 32) | rep as u64);
    rng
}

/// Dataset drawn for one replication; used by the study and by callers
/// that want to reproduce a replication outside it.
pub fn replication_dataset(cfg: &StudyConfig, size_idx: usize, rep: usize) -> Dataset {
    let mut rng = replication_rng(cfg.seed, size_idx, rep);
    dgp_sample_with(&cfg.dgp, cfg.sizes[size_idx], &mut rng)
}

/// Grid for one replication's dataset.
pub fn replication_grid(cfg: &StudyConfig, ds: &Dataset, rep_seed: u64) -> Result<TransportGrid> {
    let spec = cfg.spec()?;
    let folds = match cfg.crossfit {
        Some(q) => Some(make_folds(ds.n(), q, rep_seed)?),
        None => None,
    };
    let nuis = fit_nuisance_set(ds, &spec, &cfg.learner, folds.as_ref())?.with_truncation(cfg.truncation)?;
    let mut grid = transport_grid(
        ds,
        &spec,
        &nuis,
        cfg.method,
        &GridOptions {
            clamp_theta: cfg.clamp_theta,
        },
    );
    grid.site_counts = ds.site_counts().iter().map(|(s, c)| (*s, *c)).collect();
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub n: usize,
    pub replication: usize,
    /// Row-major `λ̂` over the source grid.
    pub lambdas: Vec<f64>,
    pub ses: Vec<Option<f64>>,
    pub np_omega2: f64,
    pub np_zeta2: f64,
    pub noise: Option<f64>,
    pub re_omega2: Option<f64>,
    pub re_zeta2: Option<f64>,
    pub re_converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub outcome_site: SiteId,
    pub mediator_site: SiteId,
    pub truth: f64,
    pub root_n_bias: f64,
    pub scaled_mse: f64,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub mean: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            median: quantile_sorted(&v, 0.5),
            lower: quantile_sorted(&v, 0.025),
            upper: quantile_sorted(&v, 0.975),
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub n: usize,
    pub completed: usize,
    pub failed: usize,
    pub failures: Vec<String>,
    pub cells: Vec<CellMetrics>,
    pub mean_root_n_bias: f64,
    pub mean_scaled_mse: f64,
    pub mean_coverage: Option<f64>,
    pub np_omega2: Option<Spread>,
    pub np_zeta2: Option<Spread>,
    pub re_omega2: Option<Spread>,
    pub re_zeta2: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub config: StudyConfig,
    pub outcome_sites: Vec<SiteId>,
    pub mediator_sites: Vec<SiteId>,
    pub truth: Vec<Vec<f64>>,
    pub truth_omega2: f64,
    pub truth_zeta2: f64,
    pub sizes: Vec<SizeSummary>,
    pub replications: Vec<ReplicationResult>,
}

impl MetricsSummary {
    /// One row per replication and grid cell.
    pub fn write_replications<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "n",
            "replication",
            "outcome_site",
            "mediator_site",
            "lambda",
            "se",
            "truth",
            "np_omega2",
            "np_zeta2",
            "re_omega2",
            "re_zeta2",
        ])?;
        let cols = self.mediator_sites.len();
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        for r in &self.replications {
            for (i, l) in r.lambdas.iter().enumerate() {
                let (row, col) = (i / cols, i % cols);
                w.write_record([
                    r.n.to_string(),
                    r.replication.to_string(),
                    self.outcome_sites[row].to_string(),
                    self.mediator_sites[col].to_string(),
                    l.to_string(),
                    fmt(r.ses[i]),
                    self.truth[row][col].to_string(),
                    r.np_omega2.to_string(),
                    r.np_zeta2.to_string(),
                    fmt(r.re_omega2),
                    fmt(r.re_zeta2),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Plot data: one row per size and cell with the three metrics.
    pub fn write_metrics_table<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "outcome_site", "mediator_site", "truth", "root_n_bias", "scaled_mse", "coverage"])?;
        for s in &self.sizes {
            for c in &s.cells {
                w.write_record([
                    s.n.to_string(),
                    c.outcome_site.to_string(),
                    c.mediator_site.to_string(),
                    c.truth.to_string(),
                    c.root_n_bias.to_string(),
                    c.scaled_mse.to_string(),
                    c.coverage.map_or_else(|| "NA".to_string(), |v| v.to_string()),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Heterogeneity table: medians with 2.5%/97.5% replication quantiles.
    pub fn heterogeneity_table(&self) -> String {
        let mut out = format!(
            "{:<14} {:>10} {:>8} {:>26} {:>26}\n",
            "heterogeneity", "truth", "n", "random-effect model", "non-parametric"
        );
        let fmt = |s: &Option<Spread>| {
            s.as_ref().map_or_else(
                || "-".to_string(),
                |s| format!("{:.2} ({:.2}, {:.2})", 1e3 * s.median, 1e3 * s.lower, 1e3 * s.upper),
            )
        };
        for s in &self.sizes {
            out.push_str(&format!(
                "{:<14} {:>10.2} {:>8} {:>26} {:>26}\n",
                "M-related",
                1e3 * self.truth_zeta2,
                s.n,
                fmt(&s.re_zeta2),
                fmt(&s.np_zeta2)
            ));
        }
        for s in &self.sizes {
            out.push_str(&format!(
                "{:<14} {:>10.2} {:>8} {:>26} {:>26}\n",
                "Y-related",
                1e3 * self.truth_omega2,
                s.n,
                fmt(&s.re_omega2),
                fmt(&s.np_omega2)
            ));
        }
        out.push_str("values x1e-3; intervals are 2.5%/97.5% quantiles across replications\n");
        out
    }
}

fn run_replication(cfg: &StudyConfig, size_idx: usize, rep: usize) -> Result<ReplicationResult> {
    let ds = replication_dataset(cfg, size_idx, rep);
    let rep_seed = cfg.seed ^ ((size_idx as u64) << 32 | rep as u64);
    let grid = replication_grid(cfg, &ds, rep_seed)?;
    let values = grid.values()?;
    let np = np_decompose(&grid, None)?;
    let (re_omega2, re_zeta2, re_converged) = match &cfg.re_model {
        Some(m) => {
            let m = McmcConfig {
                seed: rep_seed,
                ..m.clone()
            };
            let post = re_model_fit(&grid, &m)?;
            (Some(post.omega2.median), Some(post.zeta2.median), Some(post.diagnostics.converged))
        }
        None => (None, None, None),
    };
    Ok(ReplicationResult {
        n: ds.n(),
        replication: rep,
        lambdas: values.into_iter().flatten().collect(),
        ses: grid.cells.iter().map(|c| c.estimate.as_ref().and_then(|e| e.se)).collect(),
        np_omega2: np.omega2,
        np_zeta2: np.zeta2,
        noise: np.noise,
        re_omega2,
        re_zeta2,
        re_converged,
    })
}

/// Runs every replication for every size. Replications run in parallel;
/// each owns a generator derived from the master seed, so results do not
/// depend on scheduling. Failed replications are counted and excluded.
pub fn run_study(cfg: &StudyConfig) -> Result<MetricsSummary> {
    cfg.validate()?;
    let spec = cfg.spec()?;
    let outcome_sites: Vec<SiteId> = spec.outcome_sources().iter().copied().collect();
    let mediator_sites: Vec<SiteId> = spec.mediator_sources().iter().copied().collect();
    let truth = oracle_lambda_grid(&cfg.dgp, spec.target(), &outcome_sites, &mediator_sites);
    let truth_np = crate::heterogeneity::np_decompose_values(
        &truth,
        &crate::heterogeneity::uniform_weights(outcome_sites.len()),
        &crate::heterogeneity::uniform_weights(mediator_sites.len()),
    )?;
    let truth_flat: Vec<f64> = truth.iter().flatten().copied().collect();

    let mut sizes = Vec::new();
    let mut all = Vec::new();
    for (size_idx, &n) in cfg.sizes.iter().enumerate() {
        let results: Vec<Result<ReplicationResult>> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| run_replication(cfg, size_idx, rep))
            .collect();
        let mut ok = Vec::new();
        let mut failures = Vec::new();
        for (rep, r) in results.into_iter().enumerate() {
            match r {
                Ok(r) => ok.push(r),
                Err(e) => {
                    log::warn!("n={n} replication {rep} failed: {e}");
                    failures.push(format!("replication {rep}: {e}"));
                }
            }
        }
        sizes.push(summarise(n, &ok, failures, &truth_flat, &outcome_sites, &mediator_sites));
        all.extend(ok);
    }
    Ok(MetricsSummary {
        config: cfg.clone(),
        outcome_sites,
        mediator_sites,
        truth,
        truth_omega2: truth_np.4,
        truth_zeta2: truth_np.5,
        sizes,
        replications: all,
    })
}

fn summarise(
    n: usize,
    reps: &[ReplicationResult],
    failures: Vec<String>,
    truth: &[f64],
    outcome_sites: &[SiteId],
    mediator_sites: &[SiteId],
) -> SizeSummary {
    let nf = n as f64;
    let cols = mediator_sites.len();
    let cells: Vec<CellMetrics> = truth
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let r = reps.len() as f64;
            let mean = reps.iter().map(|x| x.lambdas[i]).sum::<f64>() / r;
            let mse = reps.iter().map(|x| (x.lambdas[i] - t).powi(2)).sum::<f64>() / r;
            let coverage = reps
                .iter()
                .map(|x| {
                    x.ses[i].map(|se| {
                        let half = crate::estimators::Z_95 * se;
                        f64::from(((x.lambdas[i] - t).abs() <= half) as u8)
                    })
                })
                .sum::<Option<f64>>()
                .map(|c| c / r);
            CellMetrics {
                outcome_site: outcome_sites[i / cols],
                mediator_site: mediator_sites[i % cols],
                truth: t,
                root_n_bias: nf.sqrt() * (mean - t),
                scaled_mse: nf * mse,
                coverage,
            }
        })
        .collect();
    let m = cells.len() as f64;
    let collect = |f: fn(&ReplicationResult) -> Option<f64>| -> Option<Spread> {
        let v: Vec<f64> = reps.iter().filter_map(f).collect();
        Spread::of(&v)
    };
    SizeSummary {
        n,
        completed: reps.len(),
        failed: failures.len(),
        failures,
        mean_root_n_bias: cells.iter().map(|c| c.root_n_bias).sum::<f64>() / m,
        mean_scaled_mse: cells.iter().map(|c| c.scaled_mse).sum::<f64>() / m,
        mean_coverage: cells.iter().map(|c| c.coverage).sum::<Option<f64>>().map(|c| c / m),
        np_omega2: collect(|r| Some(r.np_omega2)),
        np_zeta2: collect(|r| Some(r.np_zeta2)),
        re_omega2: collect(|r| r.re_omega2),
        re_zeta2: collect(|r| r.re_zeta2),
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> StudyConfig {
        StudyConfig {
            sizes: vec![1500],
            replications: 2,
            seed: 7,
            learner: LearnerSpec::LogisticMainTerms,
            re_model: Some(McmcConfig { iterations: 400, burn_in: 100, ..Default::default() }),
            ..Default::default()
        }
    }

    #[test]
    fn study_is_deterministic() {
        let a = run_study(&small()).unwrap();
        let b = run_study(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sizes[0].completed, 2);
        assert_eq!(a.replications[0].lambdas.len(), 16);
        let cov = a.sizes[0].mean_coverage.unwrap();
        assert!((0.0..=1.0).contains(&cov));
        assert!(a.heterogeneity_table().contains("Y-related"));
    }

    #[test]
    fn invalid_study_configs() {
        assert!(run_study(&StudyConfig { sizes: vec![], ..small() }).is_err());
        assert!(run_study(&StudyConfig { replications: 0, ..small() }).is_err());
    }
}
