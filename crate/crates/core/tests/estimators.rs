mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use transhet_core::data::{validate_dataset, RawRecord};
use transhet_core::estimators::{estimate_theta, transport_grid};
use transhet_core::simulation::{dgp_sample_with, DgpConfig, OracleNuisance, PopulationSample, COVARIATE_NAMES};
use transhet_core::{fit_nuisance_set, Dataset, EstimandSpec, GridOptions, LearnerSpec, Method, SiteId};

fn spec() -> EstimandSpec {
    let sources: Vec<SiteId> = (2..=5).map(SiteId).collect();
    EstimandSpec::new(SiteId(1), sources.clone(), sources).unwrap()
}

fn sample(n: usize, seed: u64, stream: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    dgp_sample_with(&DgpConfig::default(), n, &mut rng)
}

#[test]
fn population_estimates_equal_the_closed_form_law() {
    let cfg = DgpConfig::default();
    let pop = PopulationSample::new(&cfg);
    let oracle = OracleNuisance::new(&cfg);
    for m in Method::ALL {
        for x in [0u8, 1] {
            for k in 2..=5 {
                for p in 2..=5 {
                    let est = estimate_theta(&pop, &spec(), &oracle, m, x, SiteId(k), SiteId(p)).unwrap();
                    let truth = common::theta(x, 1, k, p);
                    assert!((est.value - truth).abs() < 1e-12, "{} x={x} k={k} p={p}: {} vs {truth}", m.name(), est.value);
                }
            }
        }
    }
}

#[test]
fn oracle_nuisances_give_unbiased_sample_estimates() {
    // average error over cells, across replicated datasets
    let cfg = DgpConfig::default();
    let oracle = OracleNuisance::new(&cfg);
    let reps = 20;
    for m in Method::ALL {
        let errs: Vec<f64> = (0..reps)
            .map(|r| {
                let ds = sample(20_000, 31, r);
                let mut e = 0.0;
                for k in 2..=5 {
                    for p in 2..=5 {
                        let est = estimate_theta(&ds, &spec(), &oracle, m, 1, SiteId(k), SiteId(p)).unwrap();
                        e += est.value - common::theta(1, 1, k, p);
                    }
                }
                e / 16.0
            })
            .collect();
        let mean = errs.iter().sum::<f64>() / reps as f64;
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd / (reps as f64).sqrt(), "{}: mean error {mean}, sd {sd}", m.name());
    }
}

#[test]
fn onestep_with_oracle_nuisances_covers_the_truth() {
    let cfg = DgpConfig::default();
    let oracle = OracleNuisance::new(&cfg);
    let ds = sample(10_000, 32, 0);
    for k in 2..=5 {
        for p in 2..=5 {
            let est = estimate_theta(&ds, &spec(), &oracle, Method::Onestep, 1, SiteId(k), SiteId(p)).unwrap();
            let truth = common::theta(1, 1, k, p);
            assert!((est.value - truth).abs() < 3.0 * est.se.unwrap(), "k={k} p={p}: {} ± {:?} vs {truth}", est.value, est.se);
        }
    }
}

#[test]
fn grid_covariance_is_symmetric_and_positive_semidefinite() {
    let ds = sample(4000, 33, 0);
    let spec = spec();
    let nuis = fit_nuisance_set(&ds, &spec, &LearnerSpec::LogisticMainTerms, None).unwrap();
    let grid = transport_grid(&ds, &spec, &nuis, Method::Onestep, &GridOptions::default());
    let cov = grid.covariance_matrix().unwrap();
    assert_eq!(cov.shape(), (16, 16));
    assert!((&cov - cov.transpose()).amax() == 0.0);
    let eig = cov.symmetric_eigenvalues();
    assert!(eig.iter().all(|&v| v > -1e-12 * cov.amax()), "{eig}");
    for (i, c) in grid.cells.iter().enumerate() {
        let se = c.estimate.as_ref().unwrap().se.unwrap();
        assert!((cov[(i, i)].sqrt() - se).abs() < 1e-12);
    }
}

#[test]
fn duplicated_mediator_site_gives_highly_correlated_cells() {
    // site 3 is an exact copy of site 2; the cells (k=4, p=2) and
    // (k=4, p=3) share the outcome-site and target terms of the influence
    // function and differ only in which copy carries the mediator term
    let ds = sample(4000, 34, 0);
    let mut raw: Vec<RawRecord> = Vec::new();
    for r in ds.records() {
        if r.site == SiteId(3) {
            continue;
        }
        let row = RawRecord {
            site: r.site,
            covariates: r.covariates.clone(),
            exposure: r.x().map(f64::from),
            mediator: r.m().map(f64::from),
            outcome: r.y(),
        };
        if r.site == SiteId(2) {
            raw.push(RawRecord { site: SiteId(3), ..row.clone() });
        }
        raw.push(row);
    }
    let names = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    let dup = validate_dataset(raw, names, SiteId(1)).unwrap();
    let spec = EstimandSpec::new(SiteId(1), [SiteId(2), SiteId(3)], [SiteId(4)]).unwrap();
    let nuis = fit_nuisance_set(&dup, &spec, &LearnerSpec::LogisticMainTerms, None).unwrap();
    let grid = transport_grid(&dup, &spec, &nuis, Method::Onestep, &GridOptions::default());
    let (a, b) = (grid.cell(0, 0).estimate.as_ref().unwrap(), grid.cell(0, 1).estimate.as_ref().unwrap());
    assert!((a.value - b.value).abs() < 1e-9, "{} vs {}", a.value, b.value);
    let cov = grid.covariance_matrix().unwrap();
    let corr = cov[(0, 1)] / (cov[(0, 0)] * cov[(1, 1)]).sqrt();
    println!("correlation of duplicated cells: {corr}");
    assert!(corr > 0.9, "{corr}");
}
