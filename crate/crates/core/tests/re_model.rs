use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Gamma};

use transhet_core::heterogeneity::{re_model_fit_values, summary_effect, Anchors, McmcConfig};
use transhet_core::simulation::{oracle_lambda_grid, DgpConfig};
use transhet_core::SiteId;

fn centred(rng: &mut ChaCha8Rng, n: usize, var: f64) -> Vec<f64> {
    let d = Normal::new(0.0, var.sqrt()).unwrap();
    let v: Vec<f64> = (0..n).map(|_| d.sample(rng)).collect();
    let m = v.iter().sum::<f64>() / n as f64;
    v.iter().map(|e| e - m).collect()
}

/// With negligible residual noise the effects are known up to a common
/// shift, so `ω² | y` is inverse-gamma with shape `(K−1)/2 − 1` and scale
/// `Σ(γ − γ̄)²/2` under the flat prior on the variance.
fn exact_median(effects: &[f64]) -> f64 {
    let k = effects.len() as f64;
    let m = effects.iter().sum::<f64>() / k;
    let ss: f64 = effects.iter().map(|e| (e - m).powi(2)).sum();
    let shape = (k - 1.0) / 2.0 - 1.0;
    let g = Gamma::new(shape, 1.0).unwrap();
    ss / 2.0 / g.inverse_cdf(0.5)
}

#[test]
fn variance_posteriors_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for (rows, cols) in [(10usize, 10usize), (6, 8)] {
        let gamma = centred(&mut rng, rows, 0.04);
        let delta = centred(&mut rng, cols, 0.01);
        let values: Vec<Vec<f64>> = gamma.iter().map(|g| delta.iter().map(|d| 0.5 + g + d).collect()).collect();
        let sigma = DMatrix::identity(rows * cols, rows * cols) * 1e-8;
        let ks: Vec<SiteId> = (0..rows as u32).map(SiteId).collect();
        let ps: Vec<SiteId> = (0..cols as u32).map(SiteId).collect();
        let cfg = McmcConfig { iterations: 20_000, burn_in: 2_000, seed: 5, ..Default::default() };
        let post = re_model_fit_values(&values, &sigma, ks, ps, &cfg).unwrap();
        let (eo, ez) = (exact_median(&gamma), exact_median(&delta));
        assert!((post.omega2.median / eo - 1.0).abs() < 0.05, "{rows}x{cols}: ω² {} vs {eo}", post.omega2.median);
        assert!((post.zeta2.median / ez - 1.0).abs() < 0.05, "{rows}x{cols}: ζ² {} vs {ez}", post.zeta2.median);
        assert!(post.diagnostics.converged);
    }
}

#[test]
fn fixed_seed_gives_identical_posteriors() {
    let values = vec![vec![0.1, 0.2, 0.15], vec![0.4, 0.5, 0.45], vec![0.3, 0.2, 0.35]];
    let sigma = DMatrix::identity(9, 9) * 1e-3;
    let sites: Vec<SiteId> = (1..=3).map(SiteId).collect();
    let cfg = McmcConfig { iterations: 3000, burn_in: 500, seed: 9, ..Default::default() };
    let a = re_model_fit_values(&values, &sigma, sites.clone(), sites.clone(), &cfg).unwrap();
    let b = re_model_fit_values(&values, &sigma, sites.clone(), sites.clone(), &cfg).unwrap();
    assert_eq!(a, b);
    let c = re_model_fit_values(&values, &sigma, sites.clone(), sites, &McmcConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.omega2.median, c.omega2.median);
}

#[test]
fn outcome_anchor_at_the_target_like_site_is_closest_to_the_target_effect() {
    // site 3 shares the target's outcome model
    let cfg = DgpConfig::default();
    let sources: Vec<SiteId> = (2..=5).map(SiteId).collect();
    let grid = oracle_lambda_grid(&cfg, SiteId(1), &sources, &sources);
    let truth = oracle_lambda_grid(&cfg, SiteId(1), &[SiteId(1)], &[SiteId(1)])[0][0];
    let sigma = DMatrix::identity(16, 16) * 1e-6;
    let mcmc = McmcConfig { iterations: 6000, burn_in: 1000, ..Default::default() };
    let post = re_model_fit_values(&grid, &sigma, sources.clone(), sources.clone(), &mcmc).unwrap();
    let errors: Vec<(SiteId, f64)> = sources
        .iter()
        .map(|&k| {
            let s = summary_effect(None, Some(&post), Anchors { outcome_site: Some(k), mediator_site: None }).unwrap();
            (k, (s.estimate - truth).abs())
        })
        .collect();
    let best = errors.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(best.0, SiteId(3), "{errors:?} (truth {truth})");
    assert!(best.1 < 1e-3, "{errors:?}");
}
