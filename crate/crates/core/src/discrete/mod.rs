//! Discrete-time estimators on the integer-day panel.
//!
//! The naive estimator is the proportion of subjects who died unexposed by
//! day `t` among those still unexposed at `t`. The IPW estimator reweights
//! each subject on the no-exposure path by the inverse of its estimated
//! probability of having stayed unexposed,
//! `W_it = 1(A_i(t) = 0) / prod_{s <= t} (1 - p_i(s))`, with the product over
//! days on which the subject could still be exposed.
//!
//! Within one day a terminal event without exposure is resolved before new
//! exposures, so a subject leaving unexposed on day `s` contributes no factor
//! for day `s`. With the nonparametric daily hazard this makes the IPW
//! estimator coincide with the censor-at-exposure Aalen-Johansen CIF at
//! integer times.

mod logistic;

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

pub use logistic::{fit_logistic, logistic, Design, LogisticFit, Term, DIVERGENCE_LIMIT, MAX_ITERATIONS, SCORE_TOLERANCE};

use crate::cohort::{Covariates, DailyPanel, PanelSubject};
use crate::curve::{format_num, StepCurve};
use crate::error::{DataError, EstimationError, Result};

/// One subject-day on which the subject entered the day unexposed and in the unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PersonDay {
    pub subject: usize,
    pub day: u32,
    /// The subject could acquire the exposure on this day.
    pub at_risk: bool,
    pub infected_today: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonDayRecords {
    rows: Vec<PersonDay>,
    ids: Vec<String>,
    covariate_names: Vec<String>,
    covariates: Vec<Covariates>,
    days: u32,
}

impl PersonDayRecords {
    pub fn rows(&self) -> &[PersonDay] {
        &self.rows
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn subject_covariates(&self) -> &[Covariates] {
        &self.covariates
    }

    pub fn days(&self) -> u32 {
        self.days
    }

    /// `(exposures, at-risk subjects)` per day `1..=days`.
    pub fn daily_counts(&self) -> Vec<(usize, usize)> {
        let mut counts = vec![(0, 0); self.days as usize];
        for r in self.rows.iter().filter(|r| r.at_risk) {
            let c = &mut counts[r.day as usize - 1];
            c.1 += 1;
            if r.infected_today {
                c.0 += 1;
            }
        }
        counts
    }

    /// Writes `id,day,at_risk,infected_today,<covariates>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id", "day", "at_risk", "infected_today"];
        header.extend(self.covariate_names.iter().map(String::as_str));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                self.ids[r.subject].clone(),
                r.day.to_string(),
                u8::from(r.at_risk).to_string(),
                u8::from(r.infected_today).to_string(),
            ];
            for name in &self.covariate_names {
                rec.push(self.covariates[r.subject].get(name).map(ToString::to_string).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Person-day rows for every subject-day with `ε(s-1) = 0` and `A(s-1) = 0`.
pub fn expand_person_days(panel: &DailyPanel, covariates: &[String]) -> Result<PersonDayRecords, DataError> {
    let mut rows = Vec::new();
    let mut kept = Vec::with_capacity(panel.len());
    for (i, s) in panel.subjects().iter().enumerate() {
        let mut cov = Covariates::with_capacity(covariates.len());
        for name in covariates {
            let v = s.covariates.get(name).ok_or_else(|| DataError::UnknownCovariate { name: name.clone() })?;
            cov.insert(name.clone(), v.clone());
        }
        kept.push(cov);
        for day in (1..=panel.days()).take_while(|&d| s.has_row(d)) {
            rows.push(PersonDay {
                subject: i,
                day,
                at_risk: s.at_risk_of_exposure(day),
                infected_today: s.a(day) == 1,
            });
        }
    }
    Ok(PersonDayRecords {
        rows,
        ids: panel.subjects().iter().map(|s| s.id.clone()).collect(),
        covariate_names: covariates.to_vec(),
        covariates: kept,
        days: panel.days(),
    })
}

/// Daily exposure probabilities used in the weight denominators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ExposureModel {
    Logistic(LogisticFit),
    /// Empirical hazard per day `1..=days`: exposures over subjects at risk.
    DailyHazard(Vec<f64>),
}

impl ExposureModel {
    /// The nonparametric daily hazard `dN01(s) / Y(s)` over at-risk person-days.
    pub fn nonparametric(records: &PersonDayRecords) -> Self {
        let hazard = records
            .daily_counts()
            .into_iter()
            .map(|(d, y)| if y == 0 { 0.0 } else { d as f64 / y as f64 })
            .collect();
        ExposureModel::DailyHazard(hazard)
    }

    pub fn probability(&self, subject: &PanelSubject, day: u32) -> f64 {
        match self {
            ExposureModel::Logistic(fit) => fit.probability(&subject.covariates),
            ExposureModel::DailyHazard(h) => h.get(day as usize - 1).copied().unwrap_or(0.0),
        }
    }
}

/// Pooled logistic model with intercept and the named baseline covariates.
pub fn fit_pooled_logistic(records: &PersonDayRecords, covariate_names: &[String]) -> Result<ExposureModel> {
    let design = Design::new(covariate_names, records.subject_covariates().iter())?;
    Ok(ExposureModel::Logistic(fit_logistic(records, design)?))
}

/// Inverse-probability weights `W_it` for every subject and day.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    /// Running weight per subject for days `1..=len`; constant afterwards.
    cumulative: Vec<Vec<f64>>,
    exposure_day: Vec<Option<u32>>,
    days: u32,
    positivity_lost_from: Option<u32>,
}

impl WeightTable {
    pub fn weight(&self, subject: usize, day: u32) -> f64 {
        if self.exposure_day[subject].is_some_and(|d| d <= day) {
            return 0.0;
        }
        let cum = &self.cumulative[subject];
        match (day as usize).min(cum.len()) {
            0 => 1.0,
            k => cum[k - 1],
        }
    }

    pub fn days(&self) -> u32 {
        self.days
    }

    pub fn n_subjects(&self) -> usize {
        self.cumulative.len()
    }

    /// First day on which the model gave probability one of exposure to a
    /// subject at risk, leaving no estimated mass on the no-exposure path.
    pub fn positivity_lost_from(&self) -> Option<u32> {
        self.positivity_lost_from
    }

    /// Writes `id,day,weight` for every subject and day.
    pub fn write_csv<W: Write>(&self, panel: &DailyPanel, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "day", "weight"])?;
        for (i, s) in panel.subjects().iter().enumerate() {
            for day in 1..=self.days {
                w.write_record([s.id.clone(), day.to_string(), format_num(self.weight(i, day))])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn compute_weights(panel: &DailyPanel, model: &ExposureModel) -> Result<WeightTable> {
    let per_subject: Vec<(Vec<f64>, Option<u32>)> = panel
        .subjects()
        .par_iter()
        .map(|s| {
            let mut cum = Vec::new();
            let mut w = 1.0;
            let mut lost = None;
            for day in (1..=panel.days()).take_while(|&d| s.has_row(d)) {
                if s.at_risk_of_exposure(day) {
                    let p = model.probability(s, day);
                    let stay = 1.0 - p;
                    let exposed_today = s.a(day) == 1;
                    if stay <= 0.0 {
                        if !exposed_today {
                            return Err(EstimationError::DegenerateProbability { day, p });
                        }
                        lost = Some(day);
                    } else if !exposed_today {
                        w /= stay;
                    }
                }
                cum.push(w);
            }
            Ok((cum, lost))
        })
        .collect::<Result<_>>()?;

    let positivity_lost_from = per_subject.iter().filter_map(|(_, l)| *l).min();
    let (cumulative, _): (Vec<_>, Vec<_>) = per_subject.into_iter().unzip();
    Ok(WeightTable {
        cumulative,
        exposure_day: panel.subjects().iter().map(|s| s.exposure_day).collect(),
        days: panel.days(),
        positivity_lost_from,
    })
}

fn day_curve(panel: &DailyPanel, initial: f64, f: impl Fn(u32) -> f64 + Sync + Send) -> StepCurve {
    let values: Vec<f64> = (1..=panel.days()).into_par_iter().map(f).collect();
    StepCurve::from_parts(panel.grid(), values, initial)
}

/// `F_naive(t)`: deaths without exposure by `t` over subjects unexposed through `t`.
pub fn naive_f01(panel: &DailyPanel) -> StepCurve {
    day_curve(panel, 0.0, |t| {
        let (mut num, mut den) = (0usize, 0usize);
        for s in panel.subjects() {
            if s.unexposed_through(t) {
                den += 1;
                if s.died_unexposed_by(t) {
                    num += 1;
                }
            }
        }
        if den == 0 {
            f64::NAN
        } else {
            num as f64 / den as f64
        }
    })
}

/// Observed death proportion by day `t`.
pub fn death_proportion(panel: &DailyPanel) -> StepCurve {
    let n = panel.len();
    day_curve(panel, 0.0, |t| {
        if n == 0 {
            return f64::NAN;
        }
        panel.subjects().iter().filter(|s| s.died_by(t)).count() as f64 / n as f64
    })
}

/// `F_IPW(t) = sum_i 1(ε_i(t) = 1) W_it / sum_i W_it`.
pub fn ipw_f01(panel: &DailyPanel, weights: &WeightTable) -> Result<StepCurve> {
    if weights.n_subjects() != panel.len() || weights.days() != panel.days() {
        return Err(EstimationError::Invalid("weights were computed on a different panel".into()));
    }
    let lost = weights.positivity_lost_from();
    Ok(day_curve(panel, 0.0, |t| {
        if lost.is_some_and(|d| t >= d) {
            return f64::NAN;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (i, s) in panel.subjects().iter().enumerate() {
            let w = weights.weight(i, t);
            den += w;
            if s.died_by(t) {
                num += w;
            }
        }
        if den > 0.0 {
            num / den
        } else {
            f64::NAN
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{discretize, Cohort, CovariateValue, EndStatus, Subject, TiePolicy};

    fn panel(subjects: Vec<Subject>, tau: f64) -> DailyPanel {
        discretize(&Cohort::new(subjects, TiePolicy::Reject, Some(tau)).unwrap(), false).unwrap()
    }

    #[test]
    fn person_days_stop_at_exposure() {
        let p = panel(vec![Subject::new("1", Some(2.0), 4.0, EndStatus::Death)], 5.0);
        let rec = expand_person_days(&p, &[]).unwrap();
        let days: Vec<(u32, bool, bool)> = rec.rows().iter().map(|r| (r.day, r.at_risk, r.infected_today)).collect();
        assert_eq!(days, vec![(1, true, false), (2, true, true)]);
    }

    #[test]
    fn person_days_until_discharge() {
        let p = panel(vec![Subject::new("1", None, 3.0, EndStatus::Discharge)], 5.0);
        let rec = expand_person_days(&p, &[]).unwrap();
        let days: Vec<(u32, bool)> = rec.rows().iter().map(|r| (r.day, r.at_risk)).collect();
        assert_eq!(days, vec![(1, true), (2, true), (3, false)]);
    }

    #[test]
    fn person_day_count() {
        let subjects = (0..10).map(|i| Subject::new(i.to_string(), None, 10.0, EndStatus::Discharge)).collect();
        let rec = expand_person_days(&panel(subjects, 12.0), &[]).unwrap();
        assert_eq!(rec.rows().len(), 100);
        assert!(rec.rows().iter().all(|r| !r.infected_today));
    }

    #[test]
    fn person_day_csv() {
        let p = panel(
            vec![Subject::new("a", Some(1.0), 2.0, EndStatus::Death).with_covariate("age", CovariateValue::Real(60.0))],
            2.0,
        );
        let rec = expand_person_days(&p, &["age".to_string()]).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "id,day,at_risk,infected_today,age\na,1,1,1,60\n");
        assert!(expand_person_days(&p, &["sex".to_string()]).is_err());
    }

    /// Ten exposures over one hundred at-risk days.
    fn ten_percent_panel() -> DailyPanel {
        let mut subjects = Vec::new();
        for i in 0..10 {
            // exposed on day 5 after four unexposed at-risk days: 5 at-risk rows each
            subjects.push(Subject::new(format!("e{i}"), Some(5.0), 8.0, EndStatus::Discharge));
        }
        for i in 0..10 {
            // five at-risk days, discharged on day 6
            subjects.push(Subject::new(format!("u{i}"), None, 6.0, EndStatus::Discharge));
        }
        panel(subjects, 8.0)
    }

    #[test]
    fn intercept_only_mle_is_daily_rate() {
        let rec = expand_person_days(&ten_percent_panel(), &[]).unwrap();
        assert_eq!(rec.rows().iter().filter(|r| r.at_risk).count(), 100);
        let ExposureModel::Logistic(fit) = fit_pooled_logistic(&rec, &[]).unwrap() else { unreachable!() };
        let p = logistic(fit.coefficients[0]);
        assert!((p - 0.1).abs() < 1e-12, "{p}");
    }

    #[test]
    fn logistic_recovers_daily_exposure_model() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut subjects = Vec::new();
        for i in 0..3000 {
            let x = f64::from(rng.random_range(-1i8..=1));
            let p = logistic(-3.0 + x);
            let mut s = Subject::new(i.to_string(), None, 30.0, EndStatus::Discharge);
            for day in 1..30 {
                if rng.random_bool(0.08) {
                    s = Subject::new(i.to_string(), None, f64::from(day), EndStatus::Discharge);
                    break;
                }
                if rng.random_bool(p) {
                    s = Subject::new(i.to_string(), Some(f64::from(day)), f64::from(day + 1), EndStatus::Discharge);
                    break;
                }
            }
            subjects.push(s.with_covariate("x", CovariateValue::Real(x)));
        }
        let rec = expand_person_days(&panel(subjects, 30.0), &["x".to_string()]).unwrap();
        assert!(rec.rows().iter().filter(|r| r.at_risk).count() > 20_000);
        let ExposureModel::Logistic(fit) = fit_pooled_logistic(&rec, &["x".to_string()]).unwrap() else { unreachable!() };
        for (b, (est, se)) in [-3.0, 1.0].iter().zip(fit.coefficients.iter().zip(&fit.std_errors)) {
            assert!((est - b).abs() < 3.0 * se, "{est} vs {b} (se {se})");
        }
    }

    #[test]
    fn no_exposures_has_no_mle() {
        let p = panel(vec![Subject::new("1", None, 3.0, EndStatus::Discharge)], 3.0);
        let rec = expand_person_days(&p, &[]).unwrap();
        assert!(matches!(fit_pooled_logistic(&rec, &[]), Err(EstimationError::NoEvents(_))));
    }

    #[test]
    fn separation_names_covariate() {
        let mut subjects = Vec::new();
        for i in 0..6 {
            let x = if i < 3 { "a" } else { "b" };
            let inf = (i < 3).then_some(1.0);
            subjects.push(Subject::new(i.to_string(), inf, 3.0, EndStatus::Discharge).with_covariate("g", CovariateValue::Category(x.into())));
        }
        let rec = expand_person_days(&panel(subjects, 3.0), &["g".to_string()]).unwrap();
        match fit_pooled_logistic(&rec, &["g".to_string()]) {
            Err(EstimationError::Separation { term, .. }) => assert_eq!(term, "g"),
            other => panic!("expected separation, got {other:?}"),
        }
    }

    #[test]
    fn exposed_subject_has_zero_weight() {
        let p = ten_percent_panel();
        let w = compute_weights(&p, &ExposureModel::DailyHazard(vec![0.1; 8])).unwrap();
        for day in 5..=8 {
            assert_eq!(w.weight(0, day), 0.0);
        }
        assert!(w.weight(0, 4) > 1.0);
    }

    #[test]
    fn constant_probability_weight_product() {
        let p = panel(vec![Subject::new("1", None, 6.0, EndStatus::Death)], 6.0);
        let w = compute_weights(&p, &ExposureModel::DailyHazard(vec![0.1; 6])).unwrap();
        let mut oracle = 1.0;
        for _ in 0..3 {
            oracle /= 0.9;
        }
        assert!((w.weight(0, 3) - oracle).abs() < 1e-12);
        assert!((w.weight(0, 3) - 1.3717421124828533).abs() < 1e-12);
        // the discharge day adds no factor; constant afterwards
        assert_eq!(w.weight(0, 6), w.weight(0, 5));
        assert_eq!(w.weight(0, 60), w.weight(0, 5));
    }

    #[test]
    fn zero_exposure_cohort_has_unit_weights() {
        let p = panel(
            vec![
                Subject::new("1", None, 2.0, EndStatus::Death),
                Subject::new("2", None, 4.0, EndStatus::Discharge),
                Subject::new("3", None, 3.0, EndStatus::Death),
            ],
            4.0,
        );
        let rec = expand_person_days(&p, &[]).unwrap();
        let w = compute_weights(&p, &ExposureModel::nonparametric(&rec)).unwrap();
        for i in 0..3 {
            for d in 1..=4 {
                assert_eq!(w.weight(i, d), 1.0);
            }
        }
        let ipw = ipw_f01(&p, &w).unwrap();
        let naive = naive_f01(&p);
        let deaths = death_proportion(&p);
        for t in 1..=4 {
            let t = f64::from(t);
            assert_eq!(ipw.value(t), naive.value(t));
            assert_eq!(naive.value(t), deaths.value(t));
        }
        assert_eq!(naive.value(3.0), 2.0 / 3.0);
    }

    #[test]
    fn two_subject_discrete_values() {
        let p = panel(
            vec![Subject::new("A", None, 1.0, EndStatus::Death), Subject::new("B", Some(1.0), 2.0, EndStatus::Death)],
            2.0,
        );
        let naive = naive_f01(&p);
        assert_eq!(naive.value(1.0), 1.0);
        assert_eq!(naive.value(2.0), 1.0);
        let rec = expand_person_days(&p, &[]).unwrap();
        let model = ExposureModel::nonparametric(&rec);
        assert_eq!(model, ExposureModel::DailyHazard(vec![1.0, 0.0]));
        let w = compute_weights(&p, &model).unwrap();
        assert_eq!(w.positivity_lost_from(), Some(1));
        let ipw = ipw_f01(&p, &w).unwrap();
        assert_eq!(ipw.get(1.0), None);
        assert_eq!(ipw.get(2.0), None);
    }

    #[test]
    fn degenerate_probability_on_unexposed_path_is_error() {
        let p = panel(vec![Subject::new("1", None, 3.0, EndStatus::Death)], 3.0);
        let err = compute_weights(&p, &ExposureModel::DailyHazard(vec![0.0, 1.0, 0.0])).unwrap_err();
        assert!(matches!(err, EstimationError::DegenerateProbability { day: 2, .. }));
    }

    #[test]
    fn weights_nondecreasing_while_at_risk() {
        let p = ten_percent_panel();
        let rec = expand_person_days(&p, &[]).unwrap();
        let w = compute_weights(&p, &ExposureModel::nonparametric(&rec)).unwrap();
        for i in 0..p.len() {
            let s = &p.subjects()[i];
            let last = s.exposure_day.map_or(s.end_day, |d| d - 1);
            for d in 1..last {
                assert!(w.weight(i, d + 1) >= w.weight(i, d));
            }
        }
    }
}
