use log::warn;

use super::{Cohort, Covariates, Diagnostic, DiagnosticKind, EndStatus};
use crate::error::DataError;

/// One subject of a [`DailyPanel`], stored by the days on which the exposure
/// and the terminal indicators switch on.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSubject {
    pub id: String,
    /// First day `s` with `A(s) = 1`.
    pub exposure_day: Option<u32>,
    /// First day `s` with `ε(s) != 0`.
    pub end_day: u32,
    pub death: bool,
    pub covariates: Covariates,
}

impl PanelSubject {
    /// Exposure indicator `A(s)`.
    pub fn a(&self, day: u32) -> u8 {
        u8::from(self.exposure_day.is_some_and(|d| d <= day))
    }

    /// Outcome indicator `ε(s)`: 1 death, 2 discharge, 0 still in the unit.
    pub fn eps(&self, day: u32) -> u8 {
        match (day >= self.end_day, self.death) {
            (false, _) => 0,
            (true, true) => 1,
            (true, false) => 2,
        }
    }

    /// True if the subject has not been exposed by `day`.
    pub fn unexposed_through(&self, day: u32) -> bool {
        self.a(day) == 0
    }

    /// Died without exposure by `day`.
    pub fn died_unexposed_by(&self, day: u32) -> bool {
        self.death && self.end_day <= day && self.exposure_day.is_none()
    }

    pub fn died_by(&self, day: u32) -> bool {
        self.death && self.end_day <= day
    }

    /// Whether the subject can still acquire a new exposure on `day`.
    ///
    /// Within a day, a terminal event without exposure is resolved before
    /// exposures; a subject leaving unexposed on `day` is not at risk that day.
    pub fn at_risk_of_exposure(&self, day: u32) -> bool {
        let entered = self.a(day - 1) == 0 && self.eps(day - 1) == 0;
        entered && (self.eps(day) == 0 || self.a(day) == 1)
    }

    /// Whether the subject contributes a person-day row on `day`.
    pub fn has_row(&self, day: u32) -> bool {
        self.a(day - 1) == 0 && self.eps(day - 1) == 0
    }
}

/// Integer-day discretisation of a cohort with complete follow-up.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPanel {
    subjects: Vec<PanelSubject>,
    days: u32,
    dropped: Vec<Diagnostic>,
}

impl DailyPanel {
    pub fn subjects(&self) -> &[PanelSubject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Last day of the grid, `ceil(tau)`.
    pub fn days(&self) -> u32 {
        self.days
    }

    /// Warnings for subjects excluded because they were censored.
    pub fn dropped(&self) -> &[Diagnostic] {
        &self.dropped
    }

    /// Bootstrap resample: subject `k` of the result is subject `indices[k]`.
    pub fn resample(&self, indices: &[usize]) -> Self {
        Self { subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(), days: self.days, dropped: Vec::new() }
    }

    /// Day grid `1..=days` as times.
    pub fn grid(&self) -> Vec<f64> {
        (1..=self.days).map(f64::from).collect()
    }
}

/// Builds the daily panel: `A(s) = 1` iff `inf_time <= s`; `ε(s)` is 1 (2)
/// iff the subject died (was discharged) with `end_time <= s`.
///
/// The discrete estimators assume complete follow-up, so censored subjects
/// are an error unless `allow_drop` is set, in which case they are removed
/// and reported.
pub fn discretize(cohort: &Cohort, allow_drop: bool) -> Result<DailyPanel, DataError> {
    let censored: Vec<String> = cohort
        .subjects()
        .iter()
        .filter(|s| s.end_status == EndStatus::Censored)
        .map(|s| s.id.clone())
        .collect();
    if !censored.is_empty() && !allow_drop {
        return Err(DataError::CensoredSubjects { ids: censored });
    }
    let dropped = censored
        .into_iter()
        .map(|id| {
            let message = format!("censored subject {id} excluded from the daily panel");
            warn!("{message}");
            Diagnostic { row: None, id, kind: DiagnosticKind::CensoredDropped, message }
        })
        .collect();

    let subjects = cohort
        .subjects()
        .iter()
        .filter(|s| s.end_status != EndStatus::Censored)
        .map(|s| PanelSubject {
            id: s.id.clone(),
            exposure_day: s.inf_time.map(|t| t.ceil() as u32),
            end_day: s.end_time.ceil() as u32,
            death: s.end_status == EndStatus::Death,
            covariates: s.covariates.clone(),
        })
        .collect();
    Ok(DailyPanel { subjects, days: cohort.tau().ceil() as u32, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Subject, TiePolicy};
    use proptest::prelude::*;

    #[test]
    fn exposed_death_indicators() {
        let c = Cohort::new(vec![Subject::new("1", Some(2.0), 4.0, EndStatus::Death)], TiePolicy::Reject, Some(5.0)).unwrap();
        let p = discretize(&c, false).unwrap();
        let s = &p.subjects()[0];
        let a: Vec<u8> = (1..=5).map(|d| s.a(d)).collect();
        let e: Vec<u8> = (1..=5).map(|d| s.eps(d)).collect();
        assert_eq!(a, vec![0, 1, 1, 1, 1]);
        assert_eq!(e, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn unexposed_discharge_indicators() {
        let c = Cohort::new(vec![Subject::new("1", None, 1.0, EndStatus::Discharge)], TiePolicy::Reject, Some(4.0)).unwrap();
        let p = discretize(&c, false).unwrap();
        let s = &p.subjects()[0];
        assert!((1..=4).all(|d| s.a(d) == 0 && s.eps(d) == 2));
    }

    #[test]
    fn censored_requires_allow_drop() {
        let c = Cohort::new(
            vec![
                Subject::new("a", None, 3.0, EndStatus::Censored),
                Subject::new("b", None, 2.0, EndStatus::Death),
                Subject::new("c", Some(1.0), 3.0, EndStatus::Censored),
            ],
            TiePolicy::Reject,
            None,
        )
        .unwrap();
        match discretize(&c, false) {
            Err(DataError::CensoredSubjects { ids }) => assert_eq!(ids, vec!["a", "c"]),
            other => panic!("unexpected {other:?}"),
        }
        let p = discretize(&c, true).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.dropped().len(), 2);
    }

    proptest! {
        #[test]
        fn panel_is_monotone(raw in proptest::collection::vec((proptest::option::of(0.01f64..0.99), 0.1f64..30.0, any::<bool>()), 1..30)) {
            let subjects = raw.iter().enumerate().map(|(i, &(f, end, death))| {
                let status = if death { EndStatus::Death } else { EndStatus::Discharge };
                Subject::new(i.to_string(), f.map(|f| f * end), end, status)
            }).collect();
            let c = Cohort::new(subjects, TiePolicy::Reject, Some(31.0)).unwrap();
            let p = discretize(&c, false).unwrap();
            for s in p.subjects() {
                for d in 1..p.days() {
                    prop_assert!(s.a(d) <= s.a(d + 1));
                    prop_assert!(s.eps(d) == 0 || s.eps(d + 1) == s.eps(d));
                    if s.eps(d) != 0 {
                        prop_assert_eq!(s.a(d + 1), s.a(d));
                    }
                }
            }
        }
    }
}
