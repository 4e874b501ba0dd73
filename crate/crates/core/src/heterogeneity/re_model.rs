//! Crossed random-effects model `λ̂_kp = Λ + γ_k + δ_p + ε_kp`,
//! `ε ~ N(0, Σ)` with `Σ` fixed, sampled by blocked Gibbs for
//! `(Λ, γ, δ)` and slice updates for the two variance components.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::slice::SliceSampler;
use crate::data::SiteId;
use crate::error::{Error, Result};
use crate::estimators::TransportGrid;

pub const PRIOR_LAMBDA_VARIANCE: f64 = 1000.0;
pub const PRIOR_VARIANCE_UPPER: f64 = 100.0;
pub const RHAT_THRESHOLD: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub seed: u64,
    pub slice_width: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 2_000,
            chains: 2,
            seed: 1,
            slice_width: 1.0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.iterations <= self.burn_in + 1 {
            return Err(Error::InvalidConfig(format!(
                "mcmc needs chains ≥ 1 and iterations > burn-in + 1 (got {} chains, {} iterations, {} burn-in)",
                self.chains, self.iterations, self.burn_in
            )));
        }
        if !(self.slice_width > 0.0) {
            return Err(Error::InvalidConfig("slice width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawSummary {
    pub median: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl DrawSummary {
    pub fn from_draws(draws: &[f64]) -> Self {
        let mut v = draws.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            median: quantile_sorted(&v, 0.5),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            lower: quantile_sorted(&v, 0.025),
            upper: quantile_sorted(&v, 0.975),
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub rhat_lambda: f64,
    pub rhat_omega2: f64,
    pub rhat_zeta2: f64,
    /// Mean density evaluations per slice update.
    pub slice_evaluations: f64,
    pub converged: bool,
}

/// Post-burn-in draws, pooled across chains. Effects are centred within
/// each factor and the offsets folded into `lambda`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Draws {
    pub lambda: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub omega2: Vec<f64>,
    pub zeta2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RePosterior {
    pub lambda: DrawSummary,
    pub omega2: DrawSummary,
    pub zeta2: DrawSummary,
    pub gamma: Vec<(SiteId, f64)>,
    pub delta: Vec<(SiteId, f64)>,
    pub diagnostics: McmcDiagnostics,
    /// Mean residual variance, the yardstick for judging the components.
    pub noise: f64,
    #[serde(skip)]
    pub draws: Draws,
    #[serde(skip)]
    outcome_sites: Vec<SiteId>,
    #[serde(skip)]
    mediator_sites: Vec<SiteId>,
}

impl RePosterior {
    pub fn outcome_index(&self, k: SiteId) -> Option<usize> {
        self.outcome_sites.iter().position(|s| *s == k)
    }

    pub fn mediator_index(&self, p: SiteId) -> Option<usize> {
        self.mediator_sites.iter().position(|s| *s == p)
    }
}

struct Model {
    rows: usize,
    cols: usize,
    /// `Z'Σ⁻¹Z`
    zsz: DMatrix<f64>,
    /// `Z'Σ⁻¹y`
    zsy: DVector<f64>,
}

fn invert_spd(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    let scale = (sigma.trace() / d as f64).max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for _ in 0..12 {
        let m = sigma + DMatrix::identity(d, d) * jitter;
        if let Some(ch) = m.cholesky() {
            if jitter > 0.0 {
                log::warn!("residual covariance needed jitter {jitter:e} to factorize");
            }
            return Ok(ch.inverse());
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
    }
    Err(Error::Numerical("residual covariance is not positive definite".into()))
}

impl Model {
    fn new(values: &[Vec<f64>], sigma: &DMatrix<f64>) -> Result<Self> {
        let rows = values.len();
        let cols = values[0].len();
        let d = rows * cols;
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::InvalidConfig("residual covariance has the wrong shape".into()));
        }
        let sinv = invert_spd(sigma)?;
        let dim = 1 + rows + cols;
        let z = DMatrix::from_fn(d, dim, |cell, j| {
            let (r, c) = (cell / cols, cell % cols);
            if j == 0 || j == 1 + r || j == 1 + rows + c {
                1.0
            } else {
                0.0
            }
        });
        let y = DVector::from_iterator(d, values.iter().flatten().copied());
        let zt_sinv = z.transpose() * &sinv;
        Ok(Self {
            rows,
            cols,
            zsz: &zt_sinv * &z,
            zsy: zt_sinv * y,
        })
    }

    fn draw_effects<R: rand::Rng>(&self, omega2: f64, zeta2: f64, rng: &mut R) -> Result<DVector<f64>> {
        let mut q = self.zsz.clone();
        q[(0, 0)] += 1.0 / PRIOR_LAMBDA_VARIANCE;
        for r in 0..self.rows {
            q[(1 + r, 1 + r)] += 1.0 / omega2;
        }
        for c in 0..self.cols {
            q[(1 + self.rows + c, 1 + self.rows + c)] += 1.0 / zeta2;
        }
        let ch = q
            .cholesky()
            .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?;
        let mean = ch.solve(&self.zsy);
        let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
        // Q = LLᵀ, so Lᵀx = z gives x ~ N(0, Q⁻¹)
        let noise = ch
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        Ok(mean + noise)
    }
}

/// Log conditional density of a variance component given `n` effects
/// with sum of squares `ss`, under a `U(0, 100)` prior.
fn log_variance_density(v: f64, n: usize, ss: f64) -> f64 {
    if v <= 0.0 || v >= PRIOR_VARIANCE_UPPER {
        return f64::NEG_INFINITY;
    }
    -0.5 * n as f64 * v.ln() - ss / (2.0 * v)
}

struct Chain {
    lambda: Vec<f64>,
    gamma: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    omega2: Vec<f64>,
    zeta2: Vec<f64>,
    evals: usize,
    updates: usize,
}

fn run_chain(model: &Model, cfg: &McmcConfig, chain: usize) -> Result<Chain> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let slice = SliceSampler {
        width: cfg.slice_width,
        ..Default::default()
    };
    let (k, p) = (model.rows, model.cols);
    let mut omega2 = 0.01 * (1.0 + chain as f64);
    let mut zeta2 = 0.01 * (1.0 + chain as f64);
    let kept = cfg.iterations - cfg.burn_in;
    let mut out = Chain {
        lambda: Vec::with_capacity(kept),
        gamma: Vec::with_capacity(kept),
        delta: Vec::with_capacity(kept),
        omega2: Vec::with_capacity(kept),
        zeta2: Vec::with_capacity(kept),
        evals: 0,
        updates: 0,
    };
    for it in 0..cfg.iterations {
        let beta = model.draw_effects(omega2, zeta2, &mut rng)?;
        let gamma = beta.rows(1, k);
        let delta = beta.rows(1 + k, p);
        let ss_g = gamma.norm_squared();
        let ss_d = delta.norm_squared();
        let (v, e1) = slice.step(omega2, |v| log_variance_density(v, k, ss_g), &mut rng);
        let (w, e2) = slice.step(zeta2, |v| log_variance_density(v, p, ss_d), &mut rng);
        omega2 = v;
        zeta2 = w;
        out.evals += e1 + e2;
        out.updates += 2;
        if it >= cfg.burn_in {
            let gm = gamma.mean();
            let dm = delta.mean();
            out.lambda.push(beta[0] + gm + dm);
            out.gamma.push(gamma.iter().map(|g| g - gm).collect());
            out.delta.push(delta.iter().map(|d| d - dm).collect());
            out.omega2.push(omega2);
            out.zeta2.push(zeta2);
        }
    }
    Ok(out)
}

/// Split-chain potential scale reduction factor.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    if half < 2 {
        return f64::NAN;
    }
    let seqs: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[c.len() - half..]])
        .collect();
    let n = half as f64;
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let m = seqs.len() as f64;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Fits the model to raw values with a known residual covariance.
pub fn re_model_fit_values(
    values: &[Vec<f64>],
    sigma: &DMatrix<f64>,
    outcome_sites: Vec<SiteId>,
    mediator_sites: Vec<SiteId>,
    cfg: &McmcConfig,
) -> Result<RePosterior> {
    cfg.validate()?;
    if values.is_empty() || values[0].is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    let model = Model::new(values, sigma)?;
    let chains: Vec<Chain> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(&model, cfg, c))
        .collect::<Result<_>>()?;

    let mut draws = Draws::default();
    for c in &chains {
        draws.lambda.extend(&c.lambda);
        draws.gamma.extend(c.gamma.iter().cloned());
        draws.delta.extend(c.delta.iter().cloned());
        draws.omega2.extend(&c.omega2);
        draws.zeta2.extend(&c.zeta2);
    }
    let rhat = |f: fn(&Chain) -> &[f64]| {
        let v: Vec<&[f64]> = chains.iter().map(f).collect();
        split_rhat(&v)
    };
    let rhat_lambda = rhat(|c| &c.lambda);
    let rhat_omega2 = rhat(|c| &c.omega2);
    let rhat_zeta2 = rhat(|c| &c.zeta2);
    let converged = [rhat_lambda, rhat_omega2, rhat_zeta2]
        .iter()
        .all(|r| r.is_nan() || *r <= RHAT_THRESHOLD);
    if !converged {
        log::warn!(
            "chains have not converged: split R-hat (lambda, omega2, zeta2) = ({rhat_lambda:.3}, {rhat_omega2:.3}, {rhat_zeta2:.3})"
        );
    }
    let evals: usize = chains.iter().map(|c| c.evals).sum();
    let updates: usize = chains.iter().map(|c| c.updates).sum();
    let mean_effect = |rows: &[Vec<f64>], j: usize| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
    let d = sigma.nrows();
    Ok(RePosterior {
        lambda: DrawSummary::from_draws(&draws.lambda),
        omega2: DrawSummary::from_draws(&draws.omega2),
        zeta2: DrawSummary::from_draws(&draws.zeta2),
        gamma: outcome_sites
            .iter()
            .enumerate()
            .map(|(j, s)| (*s, mean_effect(&draws.gamma, j)))
            .collect(),
        delta: mediator_sites
            .iter()
            .enumerate()
            .map(|(j, s)| (*s, mean_effect(&draws.delta, j)))
            .collect(),
        diagnostics: McmcDiagnostics {
            iterations: cfg.iterations,
            burn_in: cfg.burn_in,
            chains: cfg.chains,
            rhat_lambda,
            rhat_omega2,
            rhat_zeta2,
            slice_evaluations: evals as f64 / updates.max(1) as f64,
            converged,
        },
        noise: sigma.trace() / d as f64,
        draws,
        outcome_sites,
        mediator_sites,
    })
}

/// Fits the model to a complete grid, using its covariance (or squared
/// standard errors) as the known residual covariance.
pub fn re_model_fit(grid: &TransportGrid, cfg: &McmcConfig) -> Result<RePosterior> {
    let values = grid.values()?;
    let sigma = grid
        .covariance_matrix()
        .ok_or_else(|| Error::InvalidConfig("grid carries no covariance or standard errors".into()))?;
    re_model_fit_values(&values, &sigma, grid.outcome_sites.clone(), grid.mediator_sites.clone(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sites(n: u32, offset: u32) -> Vec<SiteId> {
        (0..n).map(|i| SiteId(i + offset)).collect()
    }

    #[test]
    fn rhat_of_identical_chains_is_about_one() {
        let a: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64).collect();
        let r = split_rhat(&[&a, &a]);
        assert!((r - 1.0).abs() < 0.01, "{r}");
        let b: Vec<f64> = a.iter().map(|v| v + 5000.0).collect();
        assert!(split_rhat(&[&a, &b]) > 1.1);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let values = vec![vec![0.1, 0.3], vec![0.5, 0.2]];
        let sigma = DMatrix::identity(4, 4) * 0.01;
        let cfg = McmcConfig { iterations: 600, burn_in: 100, ..Default::default() };
        let a = re_model_fit_values(&values, &sigma, sites(2, 1), sites(2, 5), &cfg).unwrap();
        let b = re_model_fit_values(&values, &sigma, sites(2, 1), sites(2, 5), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.draws.lambda.len(), 1000);
        assert!(a.draws.omega2.iter().chain(&a.draws.zeta2).all(|v| *v > 0.0 && *v < 100.0));
        for g in &a.draws.gamma {
            assert!(g.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn constant_grid_gives_small_components() {
        let values = vec![vec![0.2; 5]; 5];
        let resid = 0.01;
        let sigma = DMatrix::identity(25, 25) * resid;
        let cfg = McmcConfig { iterations: 4000, burn_in: 1000, ..Default::default() };
        let post = re_model_fit_values(&values, &sigma, sites(5, 1), sites(5, 10), &cfg).unwrap();
        assert!(post.omega2.median < 5.0 * resid, "{:?}", post.omega2);
        assert!(post.zeta2.median < 5.0 * resid, "{:?}", post.zeta2);
        assert!((post.lambda.median - 0.2).abs() < 0.05);
    }

    #[test]
    fn invalid_settings() {
        let values = vec![vec![0.1]];
        let sigma = DMatrix::identity(1, 1);
        let cfg = McmcConfig { iterations: 10, burn_in: 10, ..Default::default() };
        assert!(re_model_fit_values(&values, &sigma, sites(1, 1), sites(1, 2), &cfg).is_err());
        let cfg = McmcConfig::default();
        assert!(re_model_fit_values(&values, &DMatrix::identity(2, 2), sites(1, 1), sites(1, 2), &cfg).is_err());
    }
}
