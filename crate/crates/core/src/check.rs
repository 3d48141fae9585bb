//! Exact agreements between the multi-state and the daily-panel estimators.
//!
//! On an uncensored cohort with integer times the naive daily estimator
//! equals the conditional death risk among the unexposed, and the weighted
//! estimator with the empirical daily exposure hazard equals the
//! censor-at-exposure death CIF (and its Horvitz-Thompson form).

use serde::Serialize;

use crate::cohort::{discretize, to_transitions, Cohort, State};
use crate::curve::StepCurve;
use crate::discrete::{compute_weights, death_proportion, expand_person_days, ipw_f01, naive_f01, ExposureModel};
use crate::error::{DataError, Result};
use crate::multistate::{aalen_johansen_extended, cif_counterfactual, cpf_unexposed, ht_cif, overall_death_risk};
use crate::simulate::{brute_force_estimates, BRUTE_FORCE_MAX_N};

pub const CHECK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    /// Largest absolute difference; infinite when one side is undefined and the other is not.
    pub max_deviation: f64,
    pub points: usize,
    pub passed: bool,
}

#[derive(Default)]
struct Deviation {
    max: f64,
    points: usize,
}

impl Deviation {
    fn add(&mut self, a: f64, b: f64) {
        self.points += 1;
        let d = match (a.is_nan(), b.is_nan()) {
            (true, true) => 0.0,
            (false, false) => (a - b).abs(),
            _ => f64::INFINITY,
        };
        self.max = self.max.max(d);
    }

    fn result(self, name: &'static str) -> CheckResult {
        CheckResult { name, max_deviation: self.max, points: self.points, passed: self.max < CHECK_TOLERANCE }
    }
}

fn compare(name: &'static str, a: &StepCurve, b: &StepCurve, times: &[f64], skip: impl Fn(f64) -> bool) -> CheckResult {
    let mut d = Deviation::default();
    for &t in times.iter().filter(|&&t| !skip(t)) {
        d.add(a.value(t), b.value(t));
    }
    d.result(name)
}

/// Runs every equivalence on `cohort`. The weighted estimator is compared only
/// on days before the empirical exposure hazard first reaches one.
pub fn equivalence_suite(cohort: &Cohort) -> Result<Vec<CheckResult>> {
    if cohort.has_censoring() || !cohort.has_integer_times() {
        return Err(DataError::Invalid("equivalence checks need an uncensored cohort with integer times".into()).into());
    }
    let records = to_transitions(cohort);
    let panel = discretize(cohort, false)?;
    let days = panel.grid();
    let mut out = Vec::new();

    let occ = aalen_johansen_extended(&records)?;
    let mut sums = Deviation::default();
    for &t in occ.times() {
        sums.add(occ.total(t), 1.0);
    }
    out.push(sums.result("occupation probabilities sum to one"));

    let overall = overall_death_risk(&records)?;
    let deaths = death_proportion(&panel);
    out.push(compare("death proportion = overall death risk", &deaths, &overall, &days, |_| false));

    let naive = naive_f01(&panel);
    let cpf = cpf_unexposed(&records)?;
    out.push(compare("naive = conditional risk among unexposed", &naive, &cpf, &days, |_| false));

    let model = ExposureModel::nonparametric(&expand_person_days(&panel, &[])?);
    let weights = compute_weights(&panel, &model)?;
    let lost = weights.positivity_lost_from();
    let ipw = ipw_f01(&panel, &weights)?;
    let counterfactual = cif_counterfactual(&records)?;
    let positive = |t: f64| lost.is_some_and(|d| t >= f64::from(d));
    out.push(compare("ipw = counterfactual CIF", &ipw, &counterfactual, &days, positive));
    let inside = match (lost, counterfactual.truncated_at()) {
        (None, _) => true,
        (Some(d), Some(t)) => t <= f64::from(d),
        (Some(_), None) => false,
    };
    out.push(CheckResult {
        name: "ipw undefined only where counterfactual CIF is truncated",
        max_deviation: if inside { 0.0 } else { f64::INFINITY },
        points: usize::from(lost.is_some()),
        passed: inside,
    });

    let ht = ht_cif(&records)?;
    out.push(compare("horvitz-thompson = counterfactual CIF", &ht, &counterfactual, &days, |_| false));

    let ratio = |d: f64, r: f64| if d > 0.0 { (d - r) / d } else { f64::NAN };
    let paf_o_ms = overall.combine(&cpf, ratio);
    let paf_o_naive = deaths.combine(&naive, ratio);
    out.push(compare("paf_o multistate = paf_o naive", &paf_o_ms, &paf_o_naive, &days, |_| false));
    let paf_c_ms = overall.combine(&counterfactual, ratio);
    let paf_c_ipw = deaths.combine(&ipw, ratio);
    out.push(compare("paf_c multistate = paf_c ipw", &paf_c_ms, &paf_c_ipw, &days, positive));

    if cohort.len() <= BRUTE_FORCE_MAX_N {
        let brute = brute_force_estimates(cohort)?;
        let times = brute.death.times().to_vec();
        let mut d = Deviation::default();
        for &t in &times {
            for s in State::ALL {
                d.add(occ.get(s).value(t), brute.occupation[s.index()].value(t));
            }
            d.add(overall.value(t), brute.death.value(t));
            d.add(cpf.value(t), brute.cpf.value(t));
            d.add(counterfactual.value(t), brute.counterfactual.value(t));
        }
        out.push(d.result("product-integral = direct proportions"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::fixtures::two_subjects;
    use crate::cohort::{EndStatus, Subject, TiePolicy};
    use crate::simulate::{presets, simulate_cohort};

    #[test]
    fn two_subject_cohort_passes() {
        let results = equivalence_suite(&two_subjects()).unwrap();
        assert!(results.iter().all(|r| r.passed), "{results:?}");
    }

    #[test]
    fn simulated_cohorts_pass() {
        for (k, (_, mut spec)) in presets().into_iter().enumerate() {
            spec.round_days = true;
            spec.tau = 1500.0;
            let c = simulate_cohort(&spec, 150, k as u64).unwrap();
            let results = equivalence_suite(&c).unwrap();
            assert!(results.iter().all(|r| r.passed), "{results:?}");
        }
    }

    #[test]
    fn rejects_censored_or_fractional() {
        let c = Cohort::new(vec![Subject::new("1", None, 2.5, EndStatus::Death)], TiePolicy::Reject, None).unwrap();
        assert!(equivalence_suite(&c).is_err());
        let c = Cohort::new(vec![Subject::new("1", None, 2.0, EndStatus::Censored)], TiePolicy::Reject, None).unwrap();
        assert!(equivalence_suite(&c).is_err());
    }
}
