use serde::{Deserialize, Serialize};

use crate::data::SiteId;
use crate::error::{Error, Result};
use crate::estimators::TransportGrid;

/// Relative shares of outcome-related and mediator-related heterogeneity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum I2Shares {
    Shares { i2_y: f64, i2_m: f64 },
    /// Both components are zero, so neither share is defined.
    NoHeterogeneity,
}

pub fn i2_shares(omega2: f64, zeta2: f64) -> Result<I2Shares> {
    for v in [omega2, zeta2] {
        if v < 0.0 || v.is_nan() {
            return Err(Error::NegativeVariance(v));
        }
    }
    let total = omega2 + zeta2;
    if total == 0.0 {
        return Ok(I2Shares::NoHeterogeneity);
    }
    Ok(I2Shares::Shares {
        i2_y: omega2 / total,
        i2_m: zeta2 / total,
    })
}

/// Law-of-total-variance split of the grid spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpDecomposition {
    pub grand_mean: f64,
    pub row_means: Vec<(SiteId, f64)>,
    pub col_means: Vec<(SiteId, f64)>,
    pub tau2: f64,
    /// Spread of the outcome-site means.
    pub omega2: f64,
    /// Average spread across mediator sites within an outcome site.
    pub zeta2: f64,
    pub shares: I2Shares,
    pub weights_k: Vec<f64>,
    pub weights_p: Vec<f64>,
    /// Weighted mean of the cell sampling variances, when available.
    pub noise: Option<f64>,
}

fn check_weights(w: &[f64], len: usize, what: &str) -> Result<()> {
    if w.len() != len {
        return Err(Error::InvalidWeights(format!("{what}: expected {len} weights, found {}", w.len())));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidWeights(format!("{what}: weights must be finite and non-negative")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!("{what}: weights sum to {s}, not 1")));
    }
    Ok(())
}

/// Weighted mean computed around an anchor value so that identical inputs
/// give back that value exactly.
fn shifted_mean(values: impl Iterator<Item = f64> + Clone, weights: &[f64]) -> f64 {
    let c = values.clone().next().unwrap_or(0.0);
    c + values.zip(weights).map(|(v, w)| w * (v - c)).sum::<f64>()
}

/// Decomposition of a raw `rows × cols` matrix with weights over rows
/// (`k`) and columns (`p`).
pub fn np_decompose_values(values: &[Vec<f64>], weights_k: &[f64], weights_p: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>, f64, f64, f64)> {
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || values.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidConfig("grid must be a non-empty rectangle".into()));
    }
    check_weights(weights_k, rows, "outcome-site weights")?;
    check_weights(weights_p, cols, "mediator-site weights")?;

    let row_means: Vec<f64> = values.iter().map(|r| shifted_mean(r.iter().copied(), weights_p)).collect();
    let col_means: Vec<f64> = (0..cols)
        .map(|c| shifted_mean(values.iter().map(|r| r[c]), weights_k))
        .collect();
    let grand = shifted_mean(row_means.iter().copied(), weights_k);

    let mut tau2 = 0.0;
    let mut zeta2 = 0.0;
    for (r, row) in values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let w = weights_k[r] * weights_p[c];
            tau2 += w * (v - grand).powi(2);
            zeta2 += w * (v - row_means[r]).powi(2);
        }
    }
    let omega2: f64 = row_means
        .iter()
        .zip(weights_k)
        .map(|(m, w)| w * (m - grand).powi(2))
        .sum();
    Ok((grand, row_means, col_means, tau2, omega2, zeta2))
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Weights proportional to site sizes: `p`-weights over the mediator
/// sources, `k`-weights over the outcome sources. Returns `(w_k, w_p)`.
pub fn size_weights(grid: &TransportGrid, counts: &[(SiteId, usize)]) -> Result<(Vec<f64>, Vec<f64>)> {
    let over = |sites: &[SiteId]| -> Result<Vec<f64>> {
        let n: Vec<f64> = sites
            .iter()
            .map(|s| {
                counts
                    .iter()
                    .find(|(t, _)| t == s)
                    .map(|(_, c)| *c as f64)
                    .ok_or(Error::InvalidWeights(format!("no size recorded for site {s}")))
            })
            .collect::<Result<_>>()?;
        let total: f64 = n.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidWeights("site sizes sum to zero".into()));
        }
        Ok(n.iter().map(|v| v / total).collect())
    };
    Ok((over(&grid.outcome_sites)?, over(&grid.mediator_sites)?))
}

/// Nonparametric decomposition of a complete grid. `weights` is
/// `(w_k, w_p)`; `None` means uniform weights.
pub fn np_decompose(grid: &TransportGrid, weights: Option<(&[f64], &[f64])>) -> Result<NpDecomposition> {
    let values = grid.values()?;
    let (wk, wp) = match weights {
        Some((k, p)) => (k.to_vec(), p.to_vec()),
        None => (uniform_weights(grid.rows()), uniform_weights(grid.cols())),
    };
    let (grand_mean, rows, cols, tau2, omega2, zeta2) = np_decompose_values(&values, &wk, &wp)?;
    let noise = grid
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let w = wk[i / grid.cols()] * wp[i % grid.cols()];
            c.estimate.as_ref().and_then(|e| e.se).map(|se| w * se * se)
        })
        .sum::<Option<f64>>();
    Ok(NpDecomposition {
        grand_mean,
        row_means: grid.outcome_sites.iter().copied().zip(rows).collect(),
        col_means: grid.mediator_sites.iter().copied().zip(cols).collect(),
        tau2,
        omega2,
        zeta2,
        shares: i2_shares(omega2, zeta2)?,
        weights_k: wk,
        weights_p: wp,
        noise,
    })
}
