mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use transhet_core::diagnostics::positivity_diagnostics;
use transhet_core::simulation::{dgp_sample_with, DgpConfig};
use transhet_core::{fit_nuisance_set, make_folds, Dataset, EstimandSpec, LearnerSpec, Nuisance, SiteId};

fn spec() -> EstimandSpec {
    let sources: Vec<SiteId> = (2..=5).map(SiteId).collect();
    EstimandSpec::new(SiteId(1), sources.clone(), sources).unwrap()
}

fn sample(n: usize, seed: u64) -> Dataset {
    dgp_sample_with(&DgpConfig::default(), n, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn fitted_regressions_approach_the_generating_law() {
    // sparse (k, x, m, l) cells hold under a hundred records at this size,
    // so each cell is judged against its own binomial standard error
    let ds = sample(50_000, 1);
    let nuis = fit_nuisance_set(&ds, &spec(), &LearnerSpec::default(), None).unwrap();
    let mut abs_err = Vec::new();
    let mut worst_t: f64 = 0.0;
    for &(l1, l2) in &common::CELLS {
        let l = [l1, l2];
        for k in 2..=5u32 {
            for x in [0u8, 1] {
                for m in [0u8, 1] {
                    let truth = common::p_y(f64::from(x), f64::from(m), l1, l2, k);
                    let fit = nuis.outcome_mean(0, x, m, &l, SiteId(k));
                    let count = ds
                        .records()
                        .iter()
                        .filter(|r| r.site == SiteId(k) && r.x() == Some(x) && r.m() == Some(m) && r.covariates == l)
                        .count();
                    let se = (truth * (1.0 - truth) / count as f64).sqrt();
                    assert!((fit - truth).abs() < 4.0 * se, "k={k} x={x} m={m} l={l:?}: {fit} vs {truth} ({count} records)");
                    abs_err.push((fit - truth).abs());
                }
            }
            worst_t = worst_t.max((nuis.exposure_propensity(0, 1, &l, SiteId(k)) - 0.5).abs());
        }
    }
    let mean_err = abs_err.iter().sum::<f64>() / abs_err.len() as f64;
    assert_eq!(abs_err.len(), 64);
    assert!(mean_err < 0.02, "mean absolute error {mean_err}");
    assert!(worst_t < 0.02, "exposure propensity off by {worst_t}");
}

#[test]
fn site_regressions_approach_the_generating_law() {
    let ds = sample(50_000, 2);
    let nuis = fit_nuisance_set(&ds, &spec(), &LearnerSpec::default(), None).unwrap();
    for &(l1, l2) in &common::CELLS {
        let truth = common::site_probs(l1, l2);
        for s in 1..=5u32 {
            let r = nuis.site_given_covariates(0, SiteId(s), &[l1, l2]);
            assert!((r - truth[s as usize - 1]).abs() < 0.02, "r({s}|{l1},{l2}) = {r} vs {}", truth[s as usize - 1]);
        }
    }
}

#[test]
fn positivity_holds_on_simulated_data() {
    let ds = sample(5000, 3);
    let spec = spec();
    let nuis = fit_nuisance_set(&ds, &spec, &LearnerSpec::default(), None).unwrap();
    let report = positivity_diagnostics(&ds, &spec, &nuis, 0.01, 0.01);
    assert_eq!(report.pairs.len(), 16);
    for pair in &report.pairs {
        for q in &pair.quantities {
            assert!(q.fraction_outside < 0.01, "{}", report.table());
        }
    }
    assert!(!report.any_flagged());
}

#[test]
fn cross_fitted_predictions_ignore_their_own_fold() {
    let ds = sample(3000, 4);
    let spec = spec();
    let learner = LearnerSpec::LogisticMainTerms;
    let folds = make_folds(ds.n(), 3, 11).unwrap();
    let before = fit_nuisance_set(&ds, &spec, &learner, Some(&folds)).unwrap();
    let (_, held_out) = folds.split(0);
    let flips: Vec<(usize, bool)> = held_out
        .iter()
        .filter_map(|&i| ds.records()[i].y().map(|y| (i, y == 0.0)))
        .collect();
    let changed = ds.with_outcomes(&flips);
    let after = fit_nuisance_set(&changed, &spec, &learner, Some(&folds)).unwrap();

    let l = [1.0, 0.0];
    let k = SiteId(2);
    for &i in &held_out {
        assert_eq!(before.outcome_mean(i, 1, 1, &l, k), after.outcome_mean(i, 1, 1, &l, k));
        assert_eq!(before.bridged_outcome(i, 1, &l, k, SiteId(3)), after.bridged_outcome(i, 1, &l, k, SiteId(3)));
    }
    let (_, other) = folds.split(1);
    let i = other[0];
    assert_ne!(before.outcome_mean(i, 1, 1, &l, k), after.outcome_mean(i, 1, 1, &l, k));
}
