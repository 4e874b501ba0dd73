//! Binary-regression learners used for every nuisance function.
//!
//! Logistic learners are fitted by Newton/IRLS. Labels may be fractional in
//! `[0, 1]` (quasi-binomial), which the two-stage outcome bridge needs when
//! it regresses fitted probabilities on covariates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::make_folds;

pub const IRLS_TOLERANCE: f64 = 1e-8;
pub const IRLS_MAX_ITER: usize = 100;
pub const RIDGE_PENALTY: f64 = 1e-6;
/// Coefficient magnitude beyond which an unpenalized fit is treated as
/// diverging.
const DIVERGENCE_BOUND: f64 = 30.0;
const SUPER_LEARNER_SEED: u64 = 0x5eed_1ea2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerSpec {
    InterceptOnly,
    LogisticMainTerms,
    /// Main terms plus all pairwise products of the features.
    LogisticWithInteractions,
    DiscreteSuperLearner {
        candidates: Vec<LearnerSpec>,
        cv_folds: usize,
    },
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::DiscreteSuperLearner {
            candidates: vec![
                LearnerSpec::InterceptOnly,
                LearnerSpec::LogisticMainTerms,
                LearnerSpec::LogisticWithInteractions,
            ],
            cv_folds: 5,
        }
    }
}

impl LearnerSpec {
    pub fn validate(&self) -> Result<()> {
        if let LearnerSpec::DiscreteSuperLearner {
            candidates,
            cv_folds,
        } = self
        {
            if candidates.is_empty() {
                return Err(Error::InvalidLearner("super learner needs at least one candidate".into()));
            }
            if *cv_folds < 2 {
                return Err(Error::InvalidLearner("super learner needs cv_folds >= 2".into()));
            }
            for c in candidates {
                c.validate()?;
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match self {
            LearnerSpec::InterceptOnly => "intercept_only".into(),
            LearnerSpec::LogisticMainTerms => "logistic_main_terms".into(),
            LearnerSpec::LogisticWithInteractions => "logistic_with_interactions".into(),
            LearnerSpec::DiscreteSuperLearner { candidates, .. } => format!(
                "discrete_super_learner({})",
                candidates.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    MainTerms,
    Interactions,
}

impl Basis {
    fn width(self, d: usize) -> usize {
        match self {
            Basis::MainTerms => 1 + d,
            Basis::Interactions => 1 + d + d * d.saturating_sub(1) / 2,
        }
    }

    fn expand_into(self, features: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        out.extend_from_slice(features);
        if self == Basis::Interactions {
            for i in 0..features.len() {
                for j in (i + 1)..features.len() {
                    out.push(features[i] * features[j]);
                }
            }
        }
    }
}

/// A fitted binary regression: features row → probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Constant(f64),
    Logistic {
        basis: Basis,
        coefficients: Vec<f64>,
        /// Set when the plain Newton iteration diverged and the
        /// ridge-penalized solve was used instead.
        stabilized: bool,
    },
}

impl FittedModel {
    pub fn predict(&self, features: &[f64]) -> f64 {
        match self {
            FittedModel::Constant(c) => *c,
            FittedModel::Logistic {
                basis,
                coefficients,
                ..
            } => {
                let mut eta = coefficients[0];
                let d = features.len();
                eta += features
                    .iter()
                    .zip(&coefficients[1..=d])
                    .map(|(f, b)| f * b)
                    .sum::<f64>();
                if *basis == Basis::Interactions {
                    let mut c = 1 + d;
                    for i in 0..d {
                        for j in (i + 1)..d {
                            eta += coefficients[c] * features[i] * features[j];
                            c += 1;
                        }
                    }
                }
                expit(eta)
            }
        }
    }

    pub fn is_stabilized(&self) -> bool {
        matches!(self, FittedModel::Logistic { stabilized: true, .. })
    }
}

#[inline]
pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    cols: usize,
    rows: usize,
}

impl FeatureMatrix {
    pub fn new(cols: usize) -> Self {
        Self {
            data: Vec::new(),
            cols,
            rows: 0,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::new(cols);
        for r in rows {
            m.push_row(r);
        }
        m
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn subset(&self, idx: &[usize]) -> FeatureMatrix {
        let mut m = FeatureMatrix::new(self.cols);
        for &i in idx {
            m.push_row(self.row(i));
        }
        m
    }
}

/// Fits one learner on `features` (one row per label).
pub fn fit_binary_regressor(
    features: &FeatureMatrix,
    labels: &[f64],
    spec: &LearnerSpec,
) -> Result<FittedModel> {
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    if features.rows() != labels.len() {
        return Err(Error::Numerical(format!(
            "{} feature rows for {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|y| !(0.0..=1.0).contains(*y)) {
        return Err(Error::Numerical(format!("label {bad} outside [0, 1]")));
    }
    match spec {
        LearnerSpec::InterceptOnly => Ok(FittedModel::Constant(mean(labels))),
        LearnerSpec::LogisticMainTerms => fit_logistic(features, labels, Basis::MainTerms),
        LearnerSpec::LogisticWithInteractions => fit_logistic(features, labels, Basis::Interactions),
        LearnerSpec::DiscreteSuperLearner {
            candidates,
            cv_folds,
        } => fit_super_learner(features, labels, candidates, *cv_folds),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fit_logistic(features: &FeatureMatrix, labels: &[f64], basis: Basis) -> Result<FittedModel> {
    let n = labels.len();
    let p = basis.width(features.cols());
    let mut design = Vec::with_capacity(n * p);
    let mut buf = Vec::with_capacity(p);
    for i in 0..n {
        basis.expand_into(features.row(i), &mut buf);
        design.extend_from_slice(&buf);
    }
    match irls(&design, labels, p, 0.0) {
        Ok(coefficients) => Ok(FittedModel::Logistic {
            basis,
            coefficients,
            stabilized: false,
        }),
        Err(Error::SeparationDetected) => {
            log::debug!("logistic fit diverged; refitting with ridge penalty {RIDGE_PENALTY}");
            let coefficients = irls(&design, labels, p, RIDGE_PENALTY)
                .or_else(|_| irls_last_iterate(&design, labels, p, RIDGE_PENALTY))?;
            Ok(FittedModel::Logistic {
                basis,
                coefficients,
                stabilized: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// Newton-Raphson on the (optionally ridge-penalized) binomial
/// log-likelihood. Returns `SeparationDetected` on divergence or a
/// singular Hessian.
fn irls(design: &[f64], y: &[f64], p: usize, ridge: f64) -> Result<Vec<f64>> {
    irls_inner(design, y, p, ridge, false)
}

fn irls_last_iterate(design: &[f64], y: &[f64], p: usize, ridge: f64) -> Result<Vec<f64>> {
    irls_inner(design, y, p, ridge, true)
}

fn irls_inner(design: &[f64], y: &[f64], p: usize, ridge: f64, accept_last: bool) -> Result<Vec<f64>> {
    let n = y.len();
    let mut beta = DVector::<f64>::zeros(p);
    let mut hess = DMatrix::<f64>::zeros(p, p);
    let mut grad = DVector::<f64>::zeros(p);
    for _ in 0..IRLS_MAX_ITER {
        hess.fill(0.0);
        grad.fill(0.0);
        for i in 0..n {
            let row = &design[i * p..(i + 1) * p];
            let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let mu = expit(eta);
            let w = mu * (1.0 - mu);
            let r = y[i] - mu;
            for a in 0..p {
                grad[a] += row[a] * r;
                let wa = w * row[a];
                if wa != 0.0 {
                    for b in a..p {
                        hess[(a, b)] += wa * row[b];
                    }
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
            hess[(a, a)] += ridge;
            grad[a] -= ridge * beta[a];
        }
        let Some(chol) = hess.clone().cholesky() else {
            return Err(Error::SeparationDetected);
        };
        let step = chol.solve(&grad);
        beta += &step;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::SeparationDetected);
        }
        if ridge == 0.0 && beta.amax() > DIVERGENCE_BOUND {
            return Err(Error::SeparationDetected);
        }
        if step.amax() < IRLS_TOLERANCE {
            return Ok(beta.iter().copied().collect());
        }
    }
    if accept_last {
        Ok(beta.iter().copied().collect())
    } else {
        Err(Error::SeparationDetected)
    }
}

fn neg_log_lik(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn fit_super_learner(
    features: &FeatureMatrix,
    labels: &[f64],
    candidates: &[LearnerSpec],
    cv_folds: usize,
) -> Result<FittedModel> {
    if candidates.is_empty() || cv_folds < 2 {
        return Err(Error::InvalidLearner("invalid super learner".into()));
    }
    let n = labels.len();
    let winner = if n < cv_folds || candidates.len() == 1 {
        &candidates[0]
    } else {
        let folds = make_folds(n, cv_folds, SUPER_LEARNER_SEED)?;
        let mut best: Option<(f64, &LearnerSpec)> = None;
        for cand in candidates {
            let mut risk = 0.0;
            for q in 0..cv_folds {
                let (train, valid) = folds.split(q);
                let train_x = features.subset(&train);
                let train_y: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
                let model = fit_binary_regressor(&train_x, &train_y, cand)?;
                for &i in &valid {
                    risk += neg_log_lik(model.predict(features.row(i)), labels[i]);
                }
            }
            if best.map_or(true, |(b, _)| risk < b) {
                best = Some((risk, cand));
            }
        }
        best.expect("non-empty candidate list").1
    };
    fit_binary_regressor(features, labels, winner)
}
