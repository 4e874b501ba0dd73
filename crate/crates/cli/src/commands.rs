use std::fmt::Write as _;
use std::fs::File;

use anyhow::{bail, Context, Result};

use transhet_core::data::{read_raw_csv, validate_dataset};
use transhet_core::diagnostics::{positivity_diagnostics, DEFAULT_ALARM_FRACTION};
use transhet_core::estimators::transport_grid;
use transhet_core::heterogeneity::{
    np_decompose, re_model_fit, size_weights, summary_effect, Anchors, HeterogeneityReport, SummaryEffect,
};
use transhet_core::simulation::study::replication_dataset;
use transhet_core::simulation::{run_study, StudyConfig};
use transhet_core::{fit_nuisance_set, make_folds, EstimandSpec, Error, GridOptions, Method, SiteId, TransportGrid};

use crate::config::{self, learner_from_name, DecomposeConfig, EstimateConfig, Weighting};
use crate::output::OutputDir;
use crate::{DecomposeArgs, EstimateArgs, SimulateArgs};

fn parse_method(s: &str) -> Result<Method> {
    Ok(s.parse::<Method>()?)
}

fn sites(v: &[u32]) -> Vec<SiteId> {
    v.iter().copied().map(SiteId).collect()
}

/// One line per cell: outcome site, mediator site, estimate and interval.
pub fn grid_listing(grid: &TransportGrid) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>12} {:>13} {:>10} {:>22}",
        "outcome site", "mediator site", "lambda", "95% CI"
    );
    for c in &grid.cells {
        let (k, p) = (c.outcome_site, c.mediator_site);
        match (&c.estimate, &c.absent_reason) {
            (Some(e), _) => {
                let ci = e
                    .ci95()
                    .map_or_else(|| "-".to_string(), |(l, u)| format!("({l:.4}, {u:.4})"));
                let _ = writeln!(out, "{:>12} {:>13} {:>10.4} {:>22}", k.to_string(), p.to_string(), e.value, ci);
            }
            (None, reason) => {
                let _ = writeln!(
                    out,
                    "{:>12} {:>13} {:>10} absent: {}",
                    k.to_string(),
                    p.to_string(),
                    "-",
                    reason.as_deref().unwrap_or("unknown")
                );
            }
        }
    }
    out
}

pub fn estimate(a: EstimateArgs) -> Result<()> {
    let (mut cfg, raw) = config::load::<EstimateConfig>(a.config.as_deref())?;
    if let Some(v) = a.input {
        cfg.input = Some(v);
    }
    if let Some(v) = a.target {
        cfg.target = Some(v);
    }
    if let Some(v) = a.mediator_sources {
        cfg.mediator_sources = Some(v);
    }
    if let Some(v) = a.outcome_sources {
        cfg.outcome_sources = Some(v);
    }
    if let Some(v) = a.estimator {
        cfg.estimator = parse_method(&v)?;
    }
    if let Some(v) = a.learner {
        cfg.learner = learner_from_name(&v)?;
    }
    if let Some(v) = a.truncation {
        cfg.truncation = v;
    }
    if let Some(v) = a.crossfit {
        cfg.crossfit = Some(v);
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.clamp_theta |= a.clamp_theta;

    let input = cfg.input.clone().context("no input file (use --input or `input` in the config)")?;
    let target = SiteId(cfg.target.context("no target site (use --target or `target` in the config)")?);
    let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
    let (names, rows) = read_raw_csv(file)?;
    if !rows.iter().any(|r| r.site == target) {
        return Err(Error::SiteAbsent(target).into());
    }
    let ds = validate_dataset(rows, names, target)?;
    let defaults = ds.source_sites();
    let mediator = cfg.mediator_sources.as_deref().map_or_else(|| defaults.clone(), sites);
    let outcome = cfg.outcome_sources.as_deref().map_or_else(|| defaults.clone(), sites);
    let spec = EstimandSpec::new(target, mediator, outcome)?;
    spec.check_against(&ds)?;

    let folds = cfg.crossfit.map(|q| make_folds(ds.n(), q, cfg.seed)).transpose()?;
    let nuis = fit_nuisance_set(&ds, &spec, &cfg.learner, folds.as_ref())?.with_truncation(cfg.truncation)?;
    if nuis.stabilized_fits() > 0 {
        log::warn!("{} nuisance fit(s) needed ridge stabilisation", nuis.stabilized_fits());
    }
    let mut grid = transport_grid(
        &ds,
        &spec,
        &nuis,
        cfg.estimator,
        &GridOptions {
            clamp_theta: cfg.clamp_theta,
        },
    );
    grid.site_counts = ds.site_counts().iter().map(|(s, c)| (*s, *c)).collect();
    let positivity = positivity_diagnostics(&ds, &spec, &nuis, cfg.positivity_bound, DEFAULT_ALARM_FRACTION);

    let mut out = OutputDir::create(&a.out)?;
    out.write("grid.json", grid.to_json()?)?;
    out.write_with("grid.csv", |w| grid.write_table(w))?;
    out.write_json("positivity.json", &positivity)?;
    out.write_config(raw.as_deref(), &cfg)?;
    out.finish("estimate", cfg.seed, &cfg)?;

    print!("{}", grid_listing(&grid));
    if positivity.any_flagged() {
        eprintln!("warning: near-violations of positivity\n{}", positivity.table());
    }
    if !grid.is_complete() {
        for c in grid.cells.iter().filter(|c| c.estimate.is_none()) {
            eprintln!(
                "cell (k={}, p={}): {}",
                c.outcome_site,
                c.mediator_site,
                c.absent_reason.as_deref().unwrap_or("unknown")
            );
        }
        return Err(Error::IncompleteGrid(grid.absent_count()).into());
    }
    Ok(())
}

pub fn decompose(a: DecomposeArgs) -> Result<()> {
    let (mut cfg, raw) = config::load::<DecomposeConfig>(a.config.as_deref())?;
    if let Some(v) = a.grid {
        cfg.grid = Some(v);
    }
    if let Some(v) = a.weights {
        cfg.weights = v;
    }
    cfg.re_model |= a.re_model;
    if let Some(v) = a.iterations {
        cfg.mcmc.iterations = v;
    }
    if let Some(v) = a.burn_in {
        cfg.mcmc.burn_in = v;
    }
    if let Some(v) = a.seed {
        cfg.mcmc.seed = v;
    }
    if let Some(v) = a.anchor_outcome {
        cfg.anchor_outcome = Some(v);
    }
    if let Some(v) = a.anchor_mediator {
        cfg.anchor_mediator = Some(v);
    }

    let path = cfg.grid.clone().context("no grid file (use --grid or `grid` in the config)")?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let grid = TransportGrid::from_json(&text)?;
    if !grid.is_complete() {
        return Err(Error::IncompleteGrid(grid.absent_count()).into());
    }
    let np = match cfg.weights {
        Weighting::Uniform => np_decompose(&grid, None)?,
        Weighting::Size => {
            let (wk, wp) = size_weights(&grid, &grid.site_counts)?;
            np_decompose(&grid, Some((&wk, &wp)))?
        }
    };
    let posterior = if cfg.re_model {
        let post = re_model_fit(&grid, &cfg.mcmc)?;
        if !post.diagnostics.converged {
            eprintln!(
                "warning: chains have not converged (split R-hat: lambda {:.3}, omega2 {:.3}, zeta2 {:.3})",
                post.diagnostics.rhat_lambda, post.diagnostics.rhat_omega2, post.diagnostics.rhat_zeta2
            );
        }
        Some(post)
    } else {
        None
    };

    let k0 = cfg.anchor_outcome.map(SiteId);
    let p0 = cfg.anchor_mediator.map(SiteId);
    let mut anchors = vec![Anchors::default()];
    if k0.is_some() {
        anchors.push(Anchors { outcome_site: k0, mediator_site: None });
    }
    if p0.is_some() {
        anchors.push(Anchors { outcome_site: None, mediator_site: p0 });
    }
    if k0.is_some() && p0.is_some() {
        anchors.push(Anchors { outcome_site: k0, mediator_site: p0 });
    }
    let summaries = anchors
        .into_iter()
        .map(|an| summary_effect(Some(&np), posterior.as_ref(), an))
        .collect::<transhet_core::Result<Vec<SummaryEffect>>>()?;
    let report = HeterogeneityReport {
        nonparametric: np,
        random_effects: posterior,
        summaries,
    };

    let mut out = OutputDir::create(&a.out)?;
    out.write_json("decomposition.json", &report)?;
    out.write("heterogeneity.txt", report.table())?;
    out.write_config(raw.as_deref(), &cfg)?;
    out.finish("decompose", cfg.mcmc.seed, &cfg)?;

    let np = &report.nonparametric;
    println!("grand mean {:.6}", np.grand_mean);
    println!("tau2 {:.6}  omega2 {:.6}  zeta2 {:.6}", np.tau2, np.omega2, np.zeta2);
    print!("{}", report.table());
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let (mut cfg, raw) = config::load::<StudyConfig>(a.config.as_deref())?;
    if let Some(v) = a.sizes {
        cfg.sizes = v;
    }
    if let Some(v) = a.reps {
        cfg.replications = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.estimator {
        cfg.method = parse_method(&v)?;
    }
    if let Some(v) = a.learner {
        cfg.learner = learner_from_name(&v)?;
    }
    if let Some(v) = a.crossfit {
        cfg.crossfit = Some(v);
    }
    cfg.clamp_theta |= a.clamp_theta;
    if a.no_re_model {
        cfg.re_model = None;
    } else if a.re_model && cfg.re_model.is_none() {
        cfg.re_model = Some(Default::default());
    }
    if let Some(m) = cfg.re_model.as_mut() {
        if let Some(v) = a.iterations {
            m.iterations = v;
        }
        if let Some(v) = a.burn_in {
            m.burn_in = v;
        }
    }

    let mut out = OutputDir::create(&a.out)?;
    if a.emit_data {
        if a.n == 0 {
            bail!("--n must be positive");
        }
        let emit = StudyConfig {
            sizes: vec![a.n],
            ..cfg.clone()
        };
        let ds = replication_dataset(&emit, 0, a.replication);
        out.write_with("data.csv", |w| ds.write_csv(w))?;
        let path = out.path("data.csv");
        out.finish("simulate --emit-data", emit.seed, &emit)?;
        println!("wrote {} records to {}", ds.n(), path.display());
        return Ok(());
    }

    let summary = run_study(&cfg)?;
    out.write_json("metrics.json", &summary)?;
    out.write_with("replications.csv", |w| summary.write_replications(w))?;
    out.write_with("metrics.csv", |w| summary.write_metrics_table(w))?;
    out.write("heterogeneity.txt", summary.heterogeneity_table())?;
    out.write_config(raw.as_deref(), &cfg)?;
    out.finish("simulate", cfg.seed, &cfg)?;

    for s in &summary.sizes {
        println!(
            "n={:>6}  completed {:>4}  failed {:>3}  root-n bias {:+.4}  scaled mse {:.4}  coverage {}",
            s.n,
            s.completed,
            s.failed,
            s.mean_root_n_bias,
            s.mean_scaled_mse,
            s.mean_coverage.map_or_else(|| "-".to_string(), |c| format!("{c:.3}"))
        );
    }
    print!("{}", summary.heterogeneity_table());
    Ok(())
}
