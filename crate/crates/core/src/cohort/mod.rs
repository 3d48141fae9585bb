//! Per-subject event histories and the views derived from them.
//!
//! A [`Cohort`] holds one [`Subject`] per patient: an optional exposure time,
//! the end of follow-up, and how follow-up ended. It is immutable once built
//! and every invariant is checked at construction. Estimators consume one of
//! two derived views: the counting-process rows of the six-state model
//! ([`TransitionRecords`]) or the integer-day panel ([`DailyPanel`]).

mod panel;
mod parse;
mod transitions;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::DataError;

pub use panel::{discretize, DailyPanel, PanelSubject};
pub use parse::{parse_cohort, write_cohort_csv};
pub use transitions::{to_transitions, State, SubjectMeta, TransitionRecords, TransitionRow};

/// Default shift applied to an exposure recorded at the terminal time.
pub const DEFAULT_TIE_SHIFT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndStatus {
    Death,
    Discharge,
    Censored,
}

impl EndStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EndStatus::Death => "death",
            EndStatus::Discharge => "discharge",
            EndStatus::Censored => "censored",
        }
    }
}

impl fmt::Display for EndStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EndStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "death" => Ok(EndStatus::Death),
            "discharge" => Ok(EndStatus::Discharge),
            "censored" => Ok(EndStatus::Censored),
            other => Err(format!("unknown end_status {other:?} (expected death, discharge or censored)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Real(f64),
    Category(String),
}

impl fmt::Display for CovariateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateValue::Real(v) => write!(f, "{v}"),
            CovariateValue::Category(s) => f.write_str(s),
        }
    }
}

/// Baseline covariates in column order.
pub type Covariates = IndexMap<String, CovariateValue>;

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// Days since admission; `None` if never exposed while under observation.
    pub inf_time: Option<f64>,
    pub end_time: f64,
    pub end_status: EndStatus,
    pub covariates: Covariates,
}

impl Subject {
    pub fn new(id: impl Into<String>, inf_time: Option<f64>, end_time: f64, end_status: EndStatus) -> Self {
        Self { id: id.into(), inf_time, end_time, end_status, covariates: Covariates::new() }
    }

    pub fn with_covariate(mut self, name: impl Into<String>, value: CovariateValue) -> Self {
        self.covariates.insert(name.into(), value);
        self
    }

    pub fn is_exposed(&self) -> bool {
        self.inf_time.is_some()
    }

    fn validate(&self) -> Result<(), String> {
        if !self.end_time.is_finite() || self.end_time <= 0.0 {
            return Err(format!("end_time must be positive (got {})", self.end_time));
        }
        if let Some(inf) = self.inf_time {
            if !inf.is_finite() || inf <= 0.0 {
                return Err(format!("inf_time must be positive (got {inf})"));
            }
            if inf > self.end_time {
                return Err(format!("inf_time {inf} is after end_time {}", self.end_time));
            }
            if inf == self.end_time {
                return Err(format!("inf_time equals end_time ({inf})"));
            }
        }
        Ok(())
    }
}

/// How an exposure recorded at the terminal time is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    Reject,
    /// Move the exposure back by this many days.
    Shift(f64),
}

impl Default for TiePolicy {
    fn default() -> Self {
        TiePolicy::Shift(DEFAULT_TIE_SHIFT)
    }
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TiePolicy::Reject => f.write_str("reject"),
            TiePolicy::Shift(eps) => write!(f, "shift:{eps}"),
        }
    }
}

impl FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reject" => Ok(TiePolicy::Reject),
            "shift" => Ok(TiePolicy::default()),
            _ => {
                let eps = s
                    .strip_prefix("shift:")
                    .ok_or_else(|| format!("tie policy must be reject or shift:<eps> (got {s:?})"))?;
                let eps: f64 = eps.parse().map_err(|_| format!("invalid shift {eps:?}"))?;
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(format!("shift must be positive (got {eps})"));
                }
                Ok(TiePolicy::Shift(eps))
            }
        }
    }
}

/// A structured warning attached to a cohort, one per adjusted or dropped row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// 1-based data row in the source file, if the subject came from one.
    pub row: Option<usize>,
    pub id: String,
    pub kind: DiagnosticKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    TieShifted,
    CensoredDropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    subjects: Vec<Subject>,
    tie_policy: TiePolicy,
    tau: f64,
    diagnostics: Vec<Diagnostic>,
}

impl Cohort {
    /// Validates the subjects. The horizon defaults to the largest end time.
    pub fn new(subjects: Vec<Subject>, tie_policy: TiePolicy, tau: Option<f64>) -> Result<Self, DataError> {
        let mut seen: HashMap<&str, usize> = HashMap::with_capacity(subjects.len());
        for (i, s) in subjects.iter().enumerate() {
            s.validate().map_err(|message| DataError::Row { row: i + 1, message: format!("subject {:?}: {message}", s.id) })?;
            if let Some(first) = seen.insert(s.id.as_str(), i + 1) {
                return Err(DataError::DuplicateId { id: s.id.clone(), first, second: i + 1 });
            }
        }
        let max_end = subjects.iter().map(|s| s.end_time).fold(0.0, f64::max);
        let tau = match tau {
            Some(tau) if tau < max_end || !(tau > 0.0) => return Err(DataError::Horizon { tau, max_end }),
            Some(tau) => tau,
            None => max_end,
        };
        Ok(Self { subjects, tie_policy, tau, diagnostics: Vec::new() })
    }

    pub(crate) fn with_diagnostics(mut self, diagnostics: Vec<Diagnostic>) -> Self {
        self.diagnostics = diagnostics;
        self
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn tie_policy(&self) -> TiePolicy {
        self.tie_policy
    }

    /// Horizon of follow-up.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn has_censoring(&self) -> bool {
        self.subjects.iter().any(|s| s.end_status == EndStatus::Censored)
    }

    /// True when every recorded time is a whole number of days.
    pub fn has_integer_times(&self) -> bool {
        self.subjects
            .iter()
            .all(|s| s.end_time.fract() == 0.0 && s.inf_time.is_none_or(|t| t.fract() == 0.0))
    }

    /// Covariate names in column order (taken from the first subject).
    pub fn covariate_names(&self) -> Vec<String> {
        self.subjects.first().map(|s| s.covariates.keys().cloned().collect()).unwrap_or_default()
    }

    /// Same horizon and tie policy, different subjects. Ids must stay unique.
    pub fn with_subjects(&self, subjects: Vec<Subject>) -> Result<Self, DataError> {
        Cohort::new(subjects, self.tie_policy, Some(self.tau))
    }

    /// Levels of a categorical covariate in first-seen order.
    pub fn levels(&self, covariate: &str) -> Result<Vec<String>, DataError> {
        let mut levels: Vec<String> = Vec::new();
        for s in &self.subjects {
            match s.covariates.get(covariate) {
                None => return Err(DataError::UnknownCovariate { name: covariate.to_string() }),
                Some(CovariateValue::Real(_)) => return Err(DataError::NotCategorical { name: covariate.to_string() }),
                Some(CovariateValue::Category(level)) => {
                    if !levels.contains(level) {
                        levels.push(level.clone());
                    }
                }
            }
        }
        Ok(levels)
    }

    /// Sub-cohort of subjects whose categorical covariate equals `level`.
    pub fn stratum(&self, covariate: &str, level: &str) -> Result<Self, DataError> {
        let subjects = self
            .subjects
            .iter()
            .filter(|s| matches!(s.covariates.get(covariate), Some(CovariateValue::Category(l)) if l == level))
            .cloned()
            .collect();
        self.with_subjects(subjects)
    }
}

/// Counts by exposure status and outcome.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n: usize,
    pub exposed: usize,
    pub unexposed_deaths: usize,
    pub unexposed_discharges: usize,
    pub unexposed_censored: usize,
    pub exposed_deaths: usize,
    pub exposed_discharges: usize,
    pub exposed_censored: usize,
    /// Total follow-up, sum of end times.
    pub person_days: f64,
}

pub fn summarize(cohort: &Cohort) -> CohortSummary {
    let mut out = CohortSummary { n: cohort.len(), ..Default::default() };
    for s in cohort.subjects() {
        out.person_days += s.end_time;
        let exposed = s.is_exposed();
        if exposed {
            out.exposed += 1;
        }
        let slot = match (exposed, s.end_status) {
            (false, EndStatus::Death) => &mut out.unexposed_deaths,
            (false, EndStatus::Discharge) => &mut out.unexposed_discharges,
            (false, EndStatus::Censored) => &mut out.unexposed_censored,
            (true, EndStatus::Death) => &mut out.exposed_deaths,
            (true, EndStatus::Discharge) => &mut out.exposed_discharges,
            (true, EndStatus::Censored) => &mut out.exposed_censored,
        };
        *slot += 1;
    }
    out
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// A: unexposed death on day 1. B: exposed on day 1, dies on day 2.
    pub fn two_subjects() -> Cohort {
        Cohort::new(
            vec![
                Subject::new("A", None, 1.0, EndStatus::Death),
                Subject::new("B", Some(1.0), 2.0, EndStatus::Death),
            ],
            TiePolicy::default(),
            None,
        )
        .unwrap()
    }
}
