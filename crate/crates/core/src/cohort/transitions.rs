use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Cohort, Covariates, EndStatus, Subject, TiePolicy};
use crate::error::DataError;

/// States of the extended illness-death model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum State {
    Admission = 0,
    Exposed = 1,
    DischargeUnexposed = 2,
    DeathUnexposed = 3,
    DischargeExposed = 4,
    DeathExposed = 5,
}

impl State {
    pub const ALL: [State; 6] = [
        State::Admission,
        State::Exposed,
        State::DischargeUnexposed,
        State::DeathUnexposed,
        State::DischargeExposed,
        State::DeathExposed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_death(self) -> bool {
        matches!(self, State::DeathUnexposed | State::DeathExposed)
    }

    pub fn is_discharge(self) -> bool {
        matches!(self, State::DischargeUnexposed | State::DischargeExposed)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// One at-risk interval `(start, stop]` in state `from`, ending in a
/// transition to `to` or, when `to` is `None`, in censoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    /// Index into [`TransitionRecords::subjects`].
    pub subject: usize,
    pub from: State,
    pub to: Option<State>,
    pub start: f64,
    pub stop: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMeta {
    pub id: String,
    pub covariates: Covariates,
}

/// Long-format counting-process view of a cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecords {
    rows: Vec<TransitionRow>,
    subjects: Vec<Arc<SubjectMeta>>,
    tau: f64,
    tie_policy: TiePolicy,
}

impl TransitionRecords {
    pub fn rows(&self) -> &[TransitionRow] {
        &self.rows
    }

    pub fn subjects(&self) -> &[Arc<SubjectMeta>] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn id(&self, row: &TransitionRow) -> &str {
        &self.subjects[row.subject].id
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Number of observed transitions matching `pred`.
    pub fn count(&self, pred: impl Fn(&TransitionRow) -> bool) -> usize {
        self.rows.iter().filter(|r| pred(r)).count()
    }

    /// Bootstrap resample: subject `k` of the result is subject `indices[k]`.
    pub fn resample(&self, indices: &[usize]) -> Self {
        let mut first = vec![usize::MAX; self.subjects.len()];
        for (i, r) in self.rows.iter().enumerate().rev() {
            first[r.subject] = i;
        }
        let mut rows = Vec::with_capacity(indices.len() * 2);
        for (k, &i) in indices.iter().enumerate() {
            let start = first[i];
            rows.extend(self.rows[start..].iter().take_while(|r| r.subject == i).map(|r| TransitionRow { subject: k, ..*r }));
        }
        Self {
            rows,
            subjects: indices.iter().map(|&i| Arc::clone(&self.subjects[i])).collect(),
            tau: self.tau,
            tie_policy: self.tie_policy,
        }
    }

    /// Rebuilds the cohort the rows were derived from.
    pub fn to_cohort(&self) -> Result<Cohort, DataError> {
        let mut subjects: Vec<Subject> = self
            .subjects
            .iter()
            .map(|m| Subject {
                id: m.id.clone(),
                inf_time: None,
                end_time: f64::NAN,
                end_status: EndStatus::Censored,
                covariates: m.covariates.clone(),
            })
            .collect();
        for row in &self.rows {
            let s = &mut subjects[row.subject];
            match (row.from, row.to) {
                (State::Admission, Some(State::Exposed)) => s.inf_time = Some(row.stop),
                (_, to) => {
                    s.end_time = row.stop;
                    s.end_status = match to {
                        None => EndStatus::Censored,
                        Some(st) if st.is_death() => EndStatus::Death,
                        Some(_) => EndStatus::Discharge,
                    };
                }
            }
        }
        Cohort::new(subjects, self.tie_policy, Some(self.tau))
    }
}

/// Expands each subject into one row (never exposed) or two chained rows
/// (`0 -> 1` at the exposure time, then out of state 1 at the end time).
pub fn to_transitions(cohort: &Cohort) -> TransitionRecords {
    let mut rows = Vec::with_capacity(cohort.len() * 2);
    let mut subjects = Vec::with_capacity(cohort.len());
    for (i, s) in cohort.subjects().iter().enumerate() {
        subjects.push(Arc::new(SubjectMeta { id: s.id.clone(), covariates: s.covariates.clone() }));
        match s.inf_time {
            None => {
                let to = match s.end_status {
                    EndStatus::Death => Some(State::DeathUnexposed),
                    EndStatus::Discharge => Some(State::DischargeUnexposed),
                    EndStatus::Censored => None,
                };
                rows.push(TransitionRow { subject: i, from: State::Admission, to, start: 0.0, stop: s.end_time });
            }
            Some(inf) => {
                let to = match s.end_status {
                    EndStatus::Death => Some(State::DeathExposed),
                    EndStatus::Discharge => Some(State::DischargeExposed),
                    EndStatus::Censored => None,
                };
                rows.push(TransitionRow {
                    subject: i,
                    from: State::Admission,
                    to: Some(State::Exposed),
                    start: 0.0,
                    stop: inf,
                });
                rows.push(TransitionRow { subject: i, from: State::Exposed, to, start: inf, stop: s.end_time });
            }
        }
    }
    TransitionRecords { rows, subjects, tau: cohort.tau(), tie_policy: cohort.tie_policy() }
}
