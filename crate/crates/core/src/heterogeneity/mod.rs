//! Summaries of a transport grid: a nonparametric variance decomposition
//! and a crossed random-effects model with outcome-site effects `γ_k`
//! and mediator-site effects `δ_p`.

mod np;
mod re_model;
pub mod slice;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use np::{i2_shares, np_decompose, np_decompose_values, size_weights, uniform_weights, I2Shares, NpDecomposition};
pub use re_model::{
    quantile_sorted, re_model_fit, re_model_fit_values, split_rhat, DrawSummary, Draws, McmcConfig, McmcDiagnostics,
    RePosterior, PRIOR_LAMBDA_VARIANCE, PRIOR_VARIANCE_UPPER, RHAT_THRESHOLD,
};

use crate::data::SiteId;
use crate::error::{Error, Result};

/// Optional outcome-site and mediator-site anchors for a summary effect.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchors {
    pub outcome_site: Option<SiteId>,
    pub mediator_site: Option<SiteId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEffect {
    pub anchors: Anchors,
    pub estimate: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub caveat: String,
}

fn magnitude(v: f64, noise: f64) -> &'static str {
    if v > noise {
        "larger than"
    } else if v * 2.0 < noise {
        "smaller than"
    } else {
        "comparable to"
    }
}

/// Sentence comparing the heterogeneity components with sampling noise.
pub fn noise_caveat(omega2: f64, zeta2: f64, noise: Option<f64>) -> String {
    match noise {
        Some(n) => format!(
            "outcome-related heterogeneity {omega2:.4} is {} the noise ({n:.4}); mediator-related heterogeneity {zeta2:.4} is {} it",
            magnitude(omega2, n),
            magnitude(zeta2, n)
        ),
        None => format!(
            "outcome-related heterogeneity {omega2:.4}, mediator-related heterogeneity {zeta2:.4}; no sampling variances available for comparison"
        ),
    }
}

/// Summary effect `Λ̂`, optionally shifted by `γ̂_k₀` and/or `δ̂_p₀`.
///
/// Without a posterior only the unanchored nonparametric grand mean is
/// available. With a posterior the shift is applied draw by draw and the
/// median and 95% interval of the shifted draws are reported.
pub fn summary_effect(np: Option<&NpDecomposition>, posterior: Option<&RePosterior>, anchors: Anchors) -> Result<SummaryEffect> {
    if let Some(post) = posterior {
        let k = anchors
            .outcome_site
            .map(|k| post.outcome_index(k).ok_or(Error::UnknownAnchorSite(k)))
            .transpose()?;
        let p = anchors
            .mediator_site
            .map(|p| post.mediator_index(p).ok_or(Error::UnknownAnchorSite(p)))
            .transpose()?;
        let d = &post.draws;
        let shifted: Vec<f64> = (0..d.lambda.len())
            .map(|i| d.lambda[i] + k.map_or(0.0, |k| d.gamma[i][k]) + p.map_or(0.0, |p| d.delta[i][p]))
            .collect();
        let s = DrawSummary::from_draws(&shifted);
        return Ok(SummaryEffect {
            anchors,
            estimate: s.median,
            lower: Some(s.lower),
            upper: Some(s.upper),
            caveat: noise_caveat(post.omega2.median, post.zeta2.median, Some(post.noise)),
        });
    }
    if anchors.outcome_site.is_some() || anchors.mediator_site.is_some() {
        return Err(Error::InvalidConfig("anchored summaries need the random-effects posterior".into()));
    }
    let np = np.ok_or_else(|| Error::InvalidConfig("no decomposition or posterior supplied".into()))?;
    Ok(SummaryEffect {
        anchors,
        estimate: np.grand_mean,
        lower: None,
        upper: None,
        caveat: noise_caveat(np.omega2, np.zeta2, np.noise),
    })
}

/// Everything `decompose` produces for one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub nonparametric: NpDecomposition,
    pub random_effects: Option<RePosterior>,
    pub summaries: Vec<SummaryEffect>,
}

impl HeterogeneityReport {
    /// Method × heterogeneity-type table, values scaled by 1000.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<26} {:>28} {:>16}", "heterogeneity (x1e-3)", "random-effect model", "non-parametric");
        let row = |label: &str, re: Option<&DrawSummary>, np: f64| {
            let re = re.map_or_else(
                || "-".to_string(),
                |s| format!("{:.2} ({:.2}, {:.2})", 1e3 * s.median, 1e3 * s.lower, 1e3 * s.upper),
            );
            format!("{label:<26} {re:>28} {:>16.2}\n", 1e3 * np)
        };
        let re = self.random_effects.as_ref();
        out.push_str(&row("M-related", re.map(|r| &r.zeta2), self.nonparametric.zeta2));
        out.push_str(&row("Y-related", re.map(|r| &r.omega2), self.nonparametric.omega2));
        if let Some(n) = self.nonparametric.noise {
            let _ = writeln!(out, "{:<26} {:>28} {:>16.2}", "noise", "", 1e3 * n);
        }
        for s in &self.summaries {
            let label = match (s.anchors.outcome_site, s.anchors.mediator_site) {
                (None, None) => "summary".to_string(),
                (Some(k), None) => format!("summary, k0={k}"),
                (None, Some(p)) => format!("summary, p0={p}"),
                (Some(k), Some(p)) => format!("summary, k0={k}, p0={p}"),
            };
            match (s.lower, s.upper) {
                (Some(l), Some(u)) => {
                    let _ = writeln!(out, "{label}: {:.4} ({:.4}, {:.4})", s.estimate, l, u);
                }
                _ => {
                    let _ = writeln!(out, "{label}: {:.4}", s.estimate);
                }
            }
            let _ = writeln!(out, "  {}", s.caveat);
        }
        out
    }
}
