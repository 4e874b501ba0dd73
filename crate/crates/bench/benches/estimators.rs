use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;

use transhet_core::estimators::transport_grid;
use transhet_core::heterogeneity::{np_decompose_values, re_model_fit_values, uniform_weights, McmcConfig};
use transhet_core::simulation::{dgp_sample, DgpConfig};
use transhet_core::{fit_nuisance_set, EstimandSpec, GridOptions, LearnerSpec, Method, SiteId};

fn spec() -> EstimandSpec {
    let sources: Vec<SiteId> = (2..=5).map(SiteId).collect();
    EstimandSpec::new(SiteId(1), sources.clone(), sources).unwrap()
}

fn nuisance_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("nuisance_fit");
    group.sample_size(10);
    for n in [1000usize, 5000] {
        let ds = dgp_sample(&DgpConfig { n, seed: 3, ..Default::default() });
        let spec = spec();
        for (name, learner) in [("main_terms", LearnerSpec::LogisticMainTerms), ("super_learner", LearnerSpec::default())] {
            group.bench_with_input(BenchmarkId::new(name, n), &ds, |b, ds| {
                b.iter(|| fit_nuisance_set(ds, &spec, &learner, None).unwrap())
            });
        }
    }
    group.finish();
}

fn grid(c: &mut Criterion) {
    let mut group = c.benchmark_group("transport_grid");
    let ds = dgp_sample(&DgpConfig { n: 5000, seed: 4, ..Default::default() });
    let spec = spec();
    let nuis = fit_nuisance_set(&ds, &spec, &LearnerSpec::LogisticMainTerms, None).unwrap();
    for m in Method::ALL {
        group.bench_function(m.name(), |b| {
            b.iter(|| transport_grid(&ds, &spec, &nuis, m, &GridOptions::default()))
        });
    }
    group.finish();
}

fn heterogeneity(c: &mut Criterion) {
    let values: Vec<Vec<f64>> = (0..10)
        .map(|k| (0..10).map(|p| 0.5 + 0.1 * (k as f64 - 4.5) + 0.03 * (p as f64 - 4.5)).collect())
        .collect();
    let w = uniform_weights(10);
    c.bench_function("np_decompose_10x10", |b| b.iter(|| np_decompose_values(black_box(&values), &w, &w).unwrap()));

    let sites: Vec<SiteId> = (0..10).map(SiteId).collect();
    let sigma = DMatrix::identity(100, 100) * 1e-4;
    let cfg = McmcConfig { iterations: 2000, burn_in: 500, ..Default::default() };
    let mut group = c.benchmark_group("re_model");
    group.sample_size(10);
    group.bench_function("10x10_2000_iterations", |b| {
        b.iter(|| re_model_fit_values(&values, &sigma, sites.clone(), sites.clone(), &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, nuisance_fit, grid, heterogeneity);
criterion_main!(benches);
