//! Observed-data records, dataset validation and delimited-text I/O.
//!
//! Each record is one unit `(S, L, X, M, Y)`. Units from the target site
//! carry covariates only; units from every source site carry the full
//! exposure, mediator and outcome triple. Records are assumed i.i.d.; that
//! is documented here and never checked.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token used for structurally missing fields in delimited files.
pub const MISSING_TOKEN: &str = "NA";

/// Population label `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub u32);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for SiteId {
    fn from(v: u32) -> Self {
        SiteId(v)
    }
}

/// A record as read from a file, before the missingness pattern is checked.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub site: SiteId,
    pub covariates: Vec<f64>,
    pub exposure: Option<f64>,
    pub mediator: Option<f64>,
    pub outcome: Option<f64>,
}

/// One validated observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub site: SiteId,
    pub covariates: Vec<f64>,
    pub exposure: Option<bool>,
    pub mediator: Option<bool>,
    pub outcome: Option<bool>,
}

impl ObservationRecord {
    pub fn target(site: SiteId, covariates: Vec<f64>) -> Self {
        Self {
            site,
            covariates,
            exposure: None,
            mediator: None,
            outcome: None,
        }
    }

    pub fn source(site: SiteId, covariates: Vec<f64>, x: bool, m: bool, y: bool) -> Self {
        Self {
            site,
            covariates,
            exposure: Some(x),
            mediator: Some(m),
            outcome: Some(y),
        }
    }

    #[inline]
    pub fn x(&self) -> Option<u8> {
        self.exposure.map(u8::from)
    }

    #[inline]
    pub fn m(&self) -> Option<u8> {
        self.mediator.map(u8::from)
    }

    #[inline]
    pub fn y(&self) -> Option<f64> {
        self.outcome.map(|v| if v { 1.0 } else { 0.0 })
    }
}

/// Anything the estimators can average over: a record list plus weights
/// summing to one. A [`Dataset`] uses uniform weights `1/N`; the
/// simulation module builds exact population laws with cell probabilities.
pub trait Sample: Sync {
    fn len(&self) -> usize;
    fn record(&self, i: usize) -> &ObservationRecord;
    fn weight(&self, i: usize) -> f64;
    /// Number of units used to turn influence-function variances into
    /// standard errors.
    fn sample_size(&self) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Immutable, validated collection of records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ObservationRecord>,
    covariate_names: Vec<String>,
    site_counts: BTreeMap<SiteId, usize>,
    target: SiteId,
}

impl Dataset {
    pub fn records(&self) -> &[ObservationRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn site_counts(&self) -> &BTreeMap<SiteId, usize> {
        &self.site_counts
    }

    pub fn target(&self) -> SiteId {
        self.target
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn count(&self, site: SiteId) -> usize {
        self.site_counts.get(&site).copied().unwrap_or(0)
    }

    pub fn sites(&self) -> impl Iterator<Item = SiteId> + '_ {
        self.site_counts.keys().copied()
    }

    /// Source sites, i.e. every site other than the target.
    pub fn source_sites(&self) -> Vec<SiteId> {
        self.sites().filter(|s| *s != self.target).collect()
    }

    pub fn contains_site(&self, site: SiteId) -> bool {
        self.site_counts.contains_key(&site)
    }

    /// Rebuilds the dataset with the outcome of every listed record
    /// replaced. Used to probe cross-fitting honesty.
    pub fn with_outcomes(&self, replacements: &[(usize, bool)]) -> Dataset {
        let mut out = self.clone();
        for &(i, y) in replacements {
            if out.records[i].outcome.is_some() {
                out.records[i].outcome = Some(y);
            }
        }
        out
    }

    pub fn read_csv<R: Read>(reader: R, target: SiteId) -> Result<Dataset> {
        let (names, raw) = read_raw_csv(reader)?;
        validate_dataset(raw, names, target)
    }

    pub fn from_csv_path(path: &std::path::Path, target: SiteId) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), target)
    }

    /// Writes the dataset with the column layout `site, l_<name>…, x, m, y`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["site".to_string()];
        header.extend(self.covariate_names.iter().map(|n| format!("l_{n}")));
        header.extend(["x", "m", "y"].map(String::from));
        w.write_record(&header)?;
        let fmt_bin = |v: Option<bool>| match v {
            Some(true) => "1".to_string(),
            Some(false) => "0".to_string(),
            None => MISSING_TOKEN.to_string(),
        };
        for rec in &self.records {
            let mut row = Vec::with_capacity(header.len());
            row.push(rec.site.to_string());
            row.extend(rec.covariates.iter().map(|v| v.to_string()));
            row.push(fmt_bin(rec.exposure));
            row.push(fmt_bin(rec.mediator));
            row.push(fmt_bin(rec.outcome));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Sample for Dataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    #[inline]
    fn record(&self, i: usize) -> &ObservationRecord {
        &self.records[i]
    }

    #[inline]
    fn weight(&self, _i: usize) -> f64 {
        1.0 / self.records.len() as f64
    }

    fn sample_size(&self) -> f64 {
        self.records.len() as f64
    }
}

fn check_binary(row: usize, field: &'static str, v: Option<f64>) -> Result<Option<bool>> {
    match v {
        None => Ok(None),
        Some(x) if x == 0.0 => Ok(Some(false)),
        Some(x) if x == 1.0 => Ok(Some(true)),
        Some(x) => Err(Error::NonBinaryField {
            row,
            field,
            value: x,
        }),
    }
}

/// Checks the structural-missingness pattern and builds a [`Dataset`].
///
/// Target rows must carry covariates only; every other row must carry
/// `x`, `m` and `y`, all coded 0/1.
pub fn validate_dataset(
    raw: Vec<RawRecord>,
    covariate_names: Vec<String>,
    target: SiteId,
) -> Result<Dataset> {
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    let width = covariate_names.len();
    let mut records = Vec::with_capacity(raw.len());
    let mut site_counts: BTreeMap<SiteId, usize> = BTreeMap::new();
    for (row, r) in raw.into_iter().enumerate() {
        if r.covariates.len() != width {
            return Err(Error::CovariateLength {
                row,
                expected: width,
                found: r.covariates.len(),
            });
        }
        let fields = [r.exposure, r.mediator, r.outcome];
        if r.site == target {
            if fields.iter().any(Option::is_some) {
                return Err(Error::MixedMissingness {
                    row,
                    detail: format!("target site {target} row carries exposure/mediator/outcome data"),
                });
            }
        } else if fields.iter().any(Option::is_none) {
            return Err(Error::MixedMissingness {
                row,
                detail: format!("source site {} row is missing exposure, mediator or outcome", r.site),
            });
        }
        let exposure = check_binary(row, "x", r.exposure)?;
        let mediator = check_binary(row, "m", r.mediator)?;
        let outcome = check_binary(row, "y", r.outcome)?;
        *site_counts.entry(r.site).or_default() += 1;
        records.push(ObservationRecord {
            site: r.site,
            covariates: r.covariates,
            exposure,
            mediator,
            outcome,
        });
    }
    if !site_counts.contains_key(&target) {
        return Err(Error::EmptySite(target));
    }
    Ok(Dataset {
        records,
        covariate_names,
        site_counts,
        target,
    })
}

fn parse_cell(row: usize, col: &str, s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s == MISSING_TOKEN {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse(format!("row {row}, column `{col}`: cannot parse `{s}`")))
}

/// Reads the raw rows of a delimited file without checking missingness.
pub fn read_raw_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<RawRecord>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
    };
    let site_col = find("site")?;
    let x_col = find("x")?;
    let m_col = find("m")?;
    let y_col = find("y")?;
    let cov_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("l_").map(|n| (i, n.to_string())))
        .collect();
    let names = cov_cols.iter().map(|(_, n)| n.clone()).collect();

    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let site_str = rec.get(site_col).unwrap_or("").trim();
        let site = site_str
            .parse::<u32>()
            .map_err(|_| Error::Parse(format!("row {row}: invalid site label `{site_str}`")))?;
        let mut covariates = Vec::with_capacity(cov_cols.len());
        for (c, name) in &cov_cols {
            let v = parse_cell(row, name, rec.get(*c).unwrap_or(""))?
                .ok_or_else(|| Error::Parse(format!("row {row}: covariate `{name}` is missing")))?;
            covariates.push(v);
        }
        out.push(RawRecord {
            site: SiteId(site),
            covariates,
            exposure: parse_cell(row, "x", rec.get(x_col).unwrap_or(""))?,
            mediator: parse_cell(row, "m", rec.get(m_col).unwrap_or(""))?,
            outcome: parse_cell(row, "y", rec.get(y_col).unwrap_or(""))?,
        });
    }
    Ok((names, out))
}

/// Target site `j`, mediator sources and outcome sources for one analysis.
///
/// Both exposure levels `x ∈ {0, 1}` are always estimated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimandSpec {
    target: SiteId,
    mediator_sources: BTreeSet<SiteId>,
    outcome_sources: BTreeSet<SiteId>,
}

impl EstimandSpec {
    pub fn new(
        target: SiteId,
        mediator_sources: impl IntoIterator<Item = SiteId>,
        outcome_sources: impl IntoIterator<Item = SiteId>,
    ) -> Result<Self> {
        let mediator_sources: BTreeSet<_> = mediator_sources.into_iter().collect();
        let outcome_sources: BTreeSet<_> = outcome_sources.into_iter().collect();
        if mediator_sources.is_empty() || outcome_sources.is_empty() {
            return Err(Error::InvalidEstimand("source sets must be non-empty".into()));
        }
        if mediator_sources.contains(&target) || outcome_sources.contains(&target) {
            return Err(Error::InvalidEstimand(format!(
                "target site {target} cannot also be a source"
            )));
        }
        Ok(Self {
            target,
            mediator_sources,
            outcome_sources,
        })
    }

    pub fn target(&self) -> SiteId {
        self.target
    }

    /// Sites `p` supplying the mediator law (grid columns).
    pub fn mediator_sources(&self) -> &BTreeSet<SiteId> {
        &self.mediator_sources
    }

    /// Sites `k` supplying the outcome law (grid rows).
    pub fn outcome_sources(&self) -> &BTreeSet<SiteId> {
        &self.outcome_sources
    }

    /// Union of both source sets.
    pub fn all_sources(&self) -> BTreeSet<SiteId> {
        self.mediator_sources
            .union(&self.outcome_sources)
            .copied()
            .collect()
    }

    /// Checks that every site named here exists in `ds` and that the
    /// dataset's target matches.
    pub fn check_against(&self, ds: &Dataset) -> Result<()> {
        if ds.target() != self.target {
            return Err(Error::InvalidEstimand(format!(
                "dataset target {} differs from estimand target {}",
                ds.target(),
                self.target
            )));
        }
        for s in self.all_sources() {
            if !ds.contains_site(s) {
                return Err(Error::SiteAbsent(s));
            }
        }
        Ok(())
    }
}
