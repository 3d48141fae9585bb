//! Pooled logistic regression for the daily exposure probability.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::PersonDayRecords;
use crate::cohort::{CovariateValue, Covariates};
use crate::error::{DataError, EstimationError, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const SCORE_TOLERANCE: f64 = 1e-8;
/// Coefficients beyond this magnitude are taken as evidence of separation.
pub const DIVERGENCE_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Term {
    Intercept,
    Numeric(String),
    /// Indicator of `covariate == level`; the first level seen is the reference.
    Level { covariate: String, level: String },
}

impl Term {
    pub fn label(&self) -> String {
        match self {
            Term::Intercept => "(intercept)".to_string(),
            Term::Numeric(name) => name.clone(),
            Term::Level { covariate, level } => format!("{covariate}={level}"),
        }
    }

    fn covariate(&self) -> Option<&str> {
        match self {
            Term::Intercept => None,
            Term::Numeric(c) | Term::Level { covariate: c, .. } => Some(c),
        }
    }
}

/// Design-matrix encoding of baseline covariates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Design {
    pub terms: Vec<Term>,
}

impl Design {
    /// Intercept plus one column per numeric covariate and one indicator per
    /// non-reference level of each categorical covariate.
    pub fn new<'a>(names: &[String], subjects: impl IntoIterator<Item = &'a Covariates> + Clone) -> Result<Self, DataError> {
        let mut terms = vec![Term::Intercept];
        for name in names {
            let mut levels: Vec<String> = Vec::new();
            let mut numeric = None;
            for cov in subjects.clone() {
                match cov.get(name) {
                    None => return Err(DataError::UnknownCovariate { name: name.clone() }),
                    Some(CovariateValue::Real(_)) => numeric = Some(true),
                    Some(CovariateValue::Category(l)) => {
                        numeric = Some(false);
                        if !levels.contains(l) {
                            levels.push(l.clone());
                        }
                    }
                }
            }
            match numeric {
                Some(true) | None => terms.push(Term::Numeric(name.clone())),
                Some(false) => {
                    terms.extend(levels.into_iter().skip(1).map(|level| Term::Level { covariate: name.clone(), level }))
                }
            }
        }
        Ok(Self { terms })
    }

    pub fn intercept_only() -> Self {
        Self { terms: vec![Term::Intercept] }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn encode(&self, covariates: &Covariates) -> Vec<f64> {
        self.terms
            .iter()
            .map(|term| match term {
                Term::Intercept => 1.0,
                Term::Numeric(name) => match covariates.get(name) {
                    Some(CovariateValue::Real(v)) => *v,
                    _ => f64::NAN,
                },
                Term::Level { covariate, level } => match covariates.get(covariate) {
                    Some(CovariateValue::Category(l)) if l == level => 1.0,
                    _ => 0.0,
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticFit {
    pub design: Design,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

impl LogisticFit {
    pub fn probability(&self, covariates: &Covariates) -> f64 {
        let eta: f64 = self.design.encode(covariates).iter().zip(&self.coefficients).map(|(x, b)| x * b).sum();
        logistic(eta)
    }
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli log-likelihood; uses `log(1 + e^eta)` in a stable form.
fn log_likelihood(x: &[Vec<f64>], y: &[bool], beta: &DVector<f64>) -> f64 {
    x.iter()
        .zip(y)
        .map(|(row, &yi)| {
            let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let log1p_exp = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            if yi { eta - log1p_exp } else { -log1p_exp }
        })
        .sum()
}

fn score_and_information(x: &[Vec<f64>], y: &[bool], beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let p = beta.len();
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    for (row, &yi) in x.iter().zip(y) {
        let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        let mu = logistic(eta);
        let resid = f64::from(u8::from(yi)) - mu;
        let w = mu * (1.0 - mu);
        for j in 0..p {
            score[j] += resid * row[j];
            for k in 0..=j {
                info[(j, k)] += w * row[j] * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            info[(k, j)] = info[(j, k)];
        }
    }
    (score, info)
}

/// Maximum-likelihood fit of `P(exposed today | at risk) = logistic(beta . x)`
/// over the at-risk person-days, by damped Newton iterations.
pub fn fit_logistic(records: &PersonDayRecords, design: Design) -> Result<LogisticFit> {
    let encoded: Vec<Vec<f64>> = records.subject_covariates().iter().map(|c| design.encode(c)).collect();
    if let Some((j, _)) = encoded.iter().flatten().enumerate().find(|(_, v)| !v.is_finite()) {
        let term = &design.terms[j % design.len()];
        return Err(EstimationError::Invalid(format!("covariate {} is not numeric", term.label())));
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for row in records.rows().iter().filter(|r| r.at_risk) {
        x.push(encoded[row.subject].clone());
        y.push(row.infected_today);
    }
    let events = y.iter().filter(|&&v| v).count();
    if events == 0 {
        return Err(EstimationError::NoEvents("exposure".into()));
    }
    if events == y.len() {
        return Err(EstimationError::NoEvents("non-exposure".into()));
    }

    let p = design.len();
    let mut beta = DVector::zeros(p);
    let rate = events as f64 / y.len() as f64;
    beta[0] = (rate / (1.0 - rate)).ln();
    let mut ll = log_likelihood(&x, &y, &beta);
    let mut trace = Vec::new();

    for iteration in 0..=MAX_ITERATIONS {
        let (score, info) = score_and_information(&x, &y, &beta);
        let max_score = score.amax();
        trace.push(max_score);
        if max_score < SCORE_TOLERANCE {
            let cov = info.clone().try_inverse().ok_or(EstimationError::Singular)?;
            return Ok(LogisticFit {
                std_errors: (0..p).map(|j| cov[(j, j)].sqrt()).collect(),
                coefficients: beta.iter().copied().collect(),
                design,
                log_likelihood: ll,
                iterations: iteration,
            });
        }
        if iteration == MAX_ITERATIONS {
            break;
        }
        let step = info.cholesky().ok_or(EstimationError::Singular)?.solve(&score);
        let mut scale = 1.0;
        loop {
            let candidate = &beta + &step * scale;
            let cand_ll = log_likelihood(&x, &y, &candidate);
            if cand_ll >= ll - crate::cox::rounding_slack(ll) || scale < 1e-10 {
                beta = candidate;
                ll = cand_ll;
                break;
            }
            scale *= 0.5;
        }
        if let Some(j) = beta.iter().position(|b| b.abs() > DIVERGENCE_LIMIT) {
            let term = &design.terms[j];
            return Err(EstimationError::Separation {
                term: term.covariate().map(str::to_string).unwrap_or_else(|| term.label()),
                limit: DIVERGENCE_LIMIT,
            });
        }
    }
    Err(EstimationError::NoConvergence { iterations: MAX_ITERATIONS, trace })
}
