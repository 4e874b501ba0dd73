//! Positivity diagnostics on the untruncated nuisance predictions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EstimandSpec, SiteId};
use crate::nuisance::NuisanceSet;

pub const DEFAULT_POSITIVITY_BOUND: f64 = 0.01;
pub const DEFAULT_ALARM_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityDiagnostic {
    pub quantity: String,
    pub min: f64,
    pub max: f64,
    pub evaluated: usize,
    pub fraction_outside: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostic {
    pub outcome_site: SiteId,
    pub mediator_site: SiteId,
    pub quantities: Vec<QuantityDiagnostic>,
}

impl PairDiagnostic {
    pub fn flagged(&self) -> bool {
        self.quantities.iter().any(|q| q.flagged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub bound: f64,
    pub alarm_fraction: f64,
    pub pairs: Vec<PairDiagnostic>,
}

impl PositivityReport {
    pub fn any_flagged(&self) -> bool {
        self.pairs.iter().any(PairDiagnostic::flagged)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>4} {:>4}  {:<16} {:>9} {:>9} {:>9}", "k", "p", "quantity", "min", "max", "outside");
        for pair in &self.pairs {
            for q in &pair.quantities {
                let _ = writeln!(
                    out,
                    "{:>4} {:>4}  {:<16} {:>9.4} {:>9.4} {:>8.2}%{}",
                    pair.outcome_site.0,
                    pair.mediator_site.0,
                    q.quantity,
                    q.min,
                    q.max,
                    100.0 * q.fraction_outside,
                    if q.flagged { "  !" } else { "" }
                );
            }
        }
        out
    }
}

struct Acc {
    min: f64,
    max: f64,
    n: usize,
    outside: usize,
}

impl Acc {
    fn new() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            n: 0,
            outside: 0,
        }
    }

    fn push(&mut self, v: f64, bound: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        self.n += 1;
        if !(bound..=1.0 - bound).contains(&v) {
            self.outside += 1;
        }
    }

    fn finish(self, quantity: String, alarm: f64) -> QuantityDiagnostic {
        let fraction_outside = if self.n == 0 { 0.0 } else { self.outside as f64 / self.n as f64 };
        QuantityDiagnostic {
            quantity,
            min: self.min,
            max: self.max,
            evaluated: self.n,
            fraction_outside,
            flagged: fraction_outside > alarm,
        }
    }
}

/// For every `(k, p)` pair, the share of records whose predicted
/// `r(j,L), r(p,L), t(x,L,·), e(·,M,L), g(x,M,L,·)` fall outside
/// `[bound, 1 − bound]`. Quantities involving `M` are evaluated on records
/// with an observed mediator.
pub fn positivity_diagnostics(
    ds: &Dataset,
    spec: &EstimandSpec,
    nuis: &NuisanceSet,
    bound: f64,
    alarm_fraction: f64,
) -> PositivityReport {
    let j = spec.target();
    let mut pairs = Vec::new();
    for &k in spec.outcome_sources() {
        for &p in spec.mediator_sources() {
            let names = [
                format!("r(j={j})"),
                format!("r(p={p})"),
                format!("t(x=1,p={p})"),
                format!("t(x=1,k={k})"),
                format!("e(p={p})"),
                format!("e(k={k})"),
                format!("g(x=1,p={p})"),
                format!("g(x=1,k={k})"),
            ];
            let mut acc: Vec<Acc> = names.iter().map(|_| Acc::new()).collect();
            for (i, r) in ds.records().iter().enumerate() {
                let l = &r.covariates[..];
                acc[0].push(nuis.raw_site_given_covariates(i, j, l), bound);
                acc[1].push(nuis.raw_site_given_covariates(i, p, l), bound);
                // t(0,·) = 1 − t(1,·), so one level suffices for the bounds
                acc[2].push(nuis.raw_exposure_propensity(i, 1, l, p), bound);
                acc[3].push(nuis.raw_exposure_propensity(i, 1, l, k), bound);
                if let Some(m) = r.m() {
                    acc[4].push(nuis.raw_site_given_mediator(i, p, m, l), bound);
                    acc[5].push(nuis.raw_site_given_mediator(i, k, m, l), bound);
                    acc[6].push(nuis.raw_exposure_given_mediator(i, 1, m, l, p), bound);
                    acc[7].push(nuis.raw_exposure_given_mediator(i, 1, m, l, k), bound);
                }
            }
            pairs.push(PairDiagnostic {
                outcome_site: k,
                mediator_site: p,
                quantities: acc
                    .into_iter()
                    .zip(names)
                    .map(|(a, n)| a.finish(n, alarm_fraction))
                    .collect(),
            });
        }
    }
    PositivityReport {
        bound,
        alarm_fraction,
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RawRecord;
    use crate::learners::LearnerSpec;
    use crate::nuisance::fit_nuisance_set;

    fn dataset(rare_site: bool) -> Dataset {
        let mut rows = Vec::new();
        for i in 0..400 {
            let l = (i % 2) as f64;
            let site = if i < 100 {
                0
            } else if rare_site && l == 1.0 && i % 50 != 1 {
                // site 2 almost never has l = 1
                1
            } else {
                1 + ((i / 2) % 2) as u32
            };
            if site == 0 {
                rows.push(RawRecord { site: SiteId(0), covariates: vec![l], exposure: None, mediator: None, outcome: None });
            } else {
                let x = ((i / 3) % 2) as f64;
                let m = ((i / 5) % 2) as f64;
                let y = ((i / 7) % 2) as f64;
                rows.push(RawRecord { site: SiteId(site), covariates: vec![l], exposure: Some(x), mediator: Some(m), outcome: Some(y) });
            }
        }
        crate::data::validate_dataset(rows, vec!["l".into()], SiteId(0)).unwrap()
    }

    #[test]
    fn balanced_sites_are_not_flagged() {
        let ds = dataset(false);
        let spec = EstimandSpec::new(SiteId(0), [SiteId(1), SiteId(2)], [SiteId(1), SiteId(2)]).unwrap();
        let nuis = fit_nuisance_set(&ds, &spec, &LearnerSpec::LogisticMainTerms, None).unwrap();
        let rep = positivity_diagnostics(&ds, &spec, &nuis, DEFAULT_POSITIVITY_BOUND, DEFAULT_ALARM_FRACTION);
        assert_eq!(rep.pairs.len(), 4);
        assert!(!rep.any_flagged(), "{}", rep.table());
    }

    #[test]
    fn near_violation_is_flagged() {
        let ds = dataset(true);
        let spec = EstimandSpec::new(SiteId(0), [SiteId(2)], [SiteId(1)]).unwrap();
        let nuis = fit_nuisance_set(&ds, &spec, &LearnerSpec::LogisticMainTerms, None).unwrap();
        let rep = positivity_diagnostics(&ds, &spec, &nuis, 0.05, DEFAULT_ALARM_FRACTION);
        let pair = &rep.pairs[0];
        let r_p = pair.quantities.iter().find(|q| q.quantity.starts_with("r(p=")).unwrap();
        assert!(r_p.flagged, "{}", rep.table());
        assert!(serde_json::to_string(&rep).is_ok());
    }
}
